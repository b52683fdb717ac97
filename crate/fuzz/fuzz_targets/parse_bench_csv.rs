#![no_main]

use libfuzzer_sys::fuzz_target;
use multireg::formats::{parse_bench_csv, write_bench_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_bench_csv(text) {
        let rendered = write_bench_csv(&rows);
        assert_eq!(write_bench_csv(&parse_bench_csv(&rendered).expect("round trip")), rendered);
    }
});
