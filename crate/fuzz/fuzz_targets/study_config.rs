#![no_main]

use libfuzzer_sys::fuzz_target;
use volrank_harness::StudyConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = StudyConfig::from_json(text) {
        let _ = cfg.k_n();
        let _ = cfg.hash();
    }
});
