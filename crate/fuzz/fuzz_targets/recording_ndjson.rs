#![no_main]

use libfuzzer_sys::fuzz_target;
use pairact_core::skeleton::recording::{parse_recording_bytes, write_recording};

fuzz_target!(|data: &[u8]| {
    // anything that parses must survive a write and reparse
    if let Ok(rec) = parse_recording_bytes(data) {
        let mut out = Vec::new();
        write_recording(&mut out, &rec).expect("parsed recordings serialize");
        assert_eq!(parse_recording_bytes(&out).expect("written recordings parse"), rec);
    }
});
