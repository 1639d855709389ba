#![no_main]

use libfuzzer_sys::fuzz_target;
use pairact_core::dataset::load_dataset_from_parts;

// Input is the manifest JSON, a NUL byte, then the tensor bytes.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let tensor = data.get(split + 1..).unwrap_or(&[]);
    let _ = load_dataset_from_parts(&data[..split], tensor);
});
