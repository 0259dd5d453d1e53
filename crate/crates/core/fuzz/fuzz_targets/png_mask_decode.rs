#![no_main]
use crowdlab::dataset::{decode_mask, encode_mask};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_mask(data) {
        assert_eq!(decode_mask(&encode_mask(&m).unwrap()).unwrap(), m);
    }
});
