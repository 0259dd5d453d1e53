#![no_main]
use crowdlab::dataset::LabelFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(l) = LabelFile::from_json(data) {
        assert_eq!(l.count, l.dots.len());
    }
});
