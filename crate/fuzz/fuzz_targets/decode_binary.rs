#![no_main]

use libfuzzer_sys::fuzz_target;
use volrank::itosim::{decode_binary, encode_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(path) = decode_binary(data, None) {
        let (bytes, meta) = encode_binary(&path);
        let back = decode_binary(&bytes, Some(&meta)).expect("re-encoded path decodes");
        assert_eq!(back.obs, path.obs);
    }
});
