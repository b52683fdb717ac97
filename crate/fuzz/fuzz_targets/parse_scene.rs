#![no_main]

use libfuzzer_sys::fuzz_target;
use multireg::formats::{parse_scene, write_scene};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scene) = parse_scene(text) {
        let again = parse_scene(&write_scene(&scene)).expect("rendered scene parses");
        assert_eq!(write_scene(&again), write_scene(&scene));
    }
});
