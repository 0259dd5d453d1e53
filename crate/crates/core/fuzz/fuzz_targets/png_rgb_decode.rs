#![no_main]
use crowdlab::dataset::decode_rgb;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_rgb(data) {
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
