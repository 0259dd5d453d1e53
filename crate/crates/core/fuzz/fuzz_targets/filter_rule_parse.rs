#![no_main]
use crowdlab::regularizers::FilterRule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = FilterRule::from_json(data);
});
