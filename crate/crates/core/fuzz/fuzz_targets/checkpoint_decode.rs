#![no_main]
use crowdlab::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        // anything accepted must survive a round trip unchanged
        let again = Checkpoint::decode(&c.encode().expect("decoded checkpoints re-encode")).unwrap();
        assert_eq!(again.state.arch, c.state.arch);
        assert_eq!(again.step, c.step);
        assert_eq!(again.state.params.len(), c.state.params.len());
    }
});
