#![no_main]
use exo2ego_core::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        let back = Checkpoint::decode(&c.encode()).expect("re-decode");
        assert_eq!(back.kind, c.kind);
        assert_eq!(back.arrays().count(), c.arrays().count());
    }
});
