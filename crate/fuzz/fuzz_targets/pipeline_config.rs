#![no_main]

use libfuzzer_sys::fuzz_target;
use pairact_core::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_json(text) {
            let _ = cfg.validate();
            let _ = cfg.config_hash();
        }
    }
});
