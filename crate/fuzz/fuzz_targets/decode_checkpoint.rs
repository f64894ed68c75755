#![no_main]

use celo::metatrain::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&tensors), data);
    }
});
