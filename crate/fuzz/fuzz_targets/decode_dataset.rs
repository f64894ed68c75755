#![no_main]

use celo::tasks::{decode_dataset, encode_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = decode_dataset(data) {
        let again = decode_dataset(&encode_dataset(&ds)).expect("own output decodes");
        assert_eq!((again.len(), again.feature_dim(), again.classes()), (ds.len(), ds.feature_dim(), ds.classes()));
        assert_eq!(again.labels(), ds.labels());
    }
});
