#![no_main]

use libfuzzer_sys::fuzz_target;
use pairact_core::models::TrainedModel;
use pairact_core::nn::decode_checkpoint;

fuzz_target!(|data: &[u8]| {
    if decode_checkpoint(data).is_ok() {
        if let Ok(model) = TrainedModel::from_checkpoint_bytes(data) {
            let _ = model.to_checkpoint_bytes();
        }
    }
});
