#![no_main]
use crowdlab::labels::Split;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(s) = Split::from_json(data) {
        assert_eq!(Split::from_json(&s.to_json()).unwrap(), s);
    }
});
