#![no_main]
use exo2ego_core::data::FlowField;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = FlowField::decode(data, 0) {
        let back = FlowField::decode(&f.encode(), 0).expect("re-decode");
        assert_eq!(back.height(), f.height());
        assert_eq!(back.width(), f.width());
    }
});
