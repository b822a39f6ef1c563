#![no_main]

use libfuzzer_sys::fuzz_target;
use volrank::ranktest::Hypothesis;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = text.parse::<Hypothesis>() {
        let shown = h.to_string();
        assert_eq!(shown.parse::<Hypothesis>().unwrap(), h);
    }
});
