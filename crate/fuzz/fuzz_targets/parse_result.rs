#![no_main]

use libfuzzer_sys::fuzz_target;
use multireg_cli::ResultRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rec) = ResultRecord::parse(text) {
        let _ = ResultRecord::parse(&rec.render()).expect("rendered record parses");
    }
});
