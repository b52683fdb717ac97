#![no_main]

use libfuzzer_sys::fuzz_target;
use multireg::formats::KvDocument;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = KvDocument::parse(text) {
        assert_eq!(KvDocument::parse(&doc.render()).expect("round trip"), doc);
    }
});
