#![no_main]
use crowdlab::dataset::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = Manifest::from_json(data) {
        let again = Manifest::from_json(&m.to_json()).expect("own output parses");
        assert_eq!(again, m);
    }
});
