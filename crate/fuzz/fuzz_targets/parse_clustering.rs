#![no_main]

use libfuzzer_sys::fuzz_target;
use multireg::formats::{parse_clustering, write_clustering};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_clustering(text) {
        assert_eq!(parse_clustering(&write_clustering(&c)).expect("round trip"), c);
    }
});
