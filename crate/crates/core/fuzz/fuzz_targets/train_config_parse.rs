#![no_main]
use crowdlab::config::TrainConfig;
use libfuzzer_sys::fuzz_target;

// First line: overrides separated by ';'. Rest: the config text.
fuzz_target!(|data: &str| {
    let (head, body) = data.split_once('\n').unwrap_or(("", data));
    let overrides: Vec<String> = head.split(';').filter(|s| !s.is_empty()).map(String::from).collect();
    if let Ok(c) = TrainConfig::from_json_with(body, &overrides) {
        let echo = TrainConfig::from_json(&c.to_json()).expect("echo parses");
        assert_eq!(echo.hash(), c.hash());
    }
});
