#![no_main]
use exo2ego_core::retrieval::Gallery;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = Gallery::decode(data) {
        let back = Gallery::decode(&g.encode()).expect("re-decode");
        assert_eq!(back.len(), g.len());
        assert_eq!(back.dim(), g.dim());
    }
});
