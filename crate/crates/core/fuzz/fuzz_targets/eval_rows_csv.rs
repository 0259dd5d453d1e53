#![no_main]
use crowdlab::metrics::read_rows_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_rows_csv(data);
});
