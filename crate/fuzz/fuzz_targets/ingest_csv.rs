#![no_main]

use libfuzzer_sys::fuzz_target;
use volrank::itosim::ingest_reader;

fuzz_target!(|data: &[u8]| {
    if let Ok(path) = ingest_reader(data, None) {
        assert!(path.rows() >= 2);
        assert_eq!(path.obs.len(), path.rows() * path.d);
        // A stated step must agree with the inferred one.
        let again = ingest_reader(data, Some(path.delta_n));
        assert!(again.is_ok());
    }
});
