#![no_main]

use celo::eval::RunRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(record) = RunRecord::from_csv("task", "opt", 0, text) {
            let again = RunRecord::from_csv("task", "opt", 0, &record.to_csv()).expect("own output parses");
            assert_eq!(again.losses.len(), record.losses.len());
        }
    }
});
