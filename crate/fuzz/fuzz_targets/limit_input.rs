#![no_main]

use libfuzzer_sys::fuzz_target;
use volrank::limitlaw::LimitInput;

fuzz_target!(|data: &[u8]| {
    if let Ok(input) = serde_json::from_slice::<LimitInput>(data) {
        if let Ok(pt) = input.point() {
            assert!(pt.alpha_rank() <= pt.dim());
        }
    }
});
