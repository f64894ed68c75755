use std::fs;
use std::path::PathBuf;

use celo::eval::RunRecord;
use celo::metatrain::decode_checkpoint;
use celo::tasks::decode_dataset;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed_"))
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn checked_in_seeds_are_valid_inputs() {
    for (p, b) in seeds("decode_dataset") {
        decode_dataset(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("decode_checkpoint") {
        decode_checkpoint(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("parse_config") {
        let c = celo_cli::parse_config(std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        c.validate().unwrap();
    }
    for (p, b) in seeds("parse_run_record") {
        RunRecord::from_csv("t", "o", 0, std::str::from_utf8(&b).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
