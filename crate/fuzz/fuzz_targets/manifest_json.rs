#![no_main]
use exo2ego_core::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(s, "/nonexistent") {
            let _ = m.validate();
            let _ = m.recompute_counts();
            // Serialization must round-trip whatever parsing accepted.
            let again = Manifest::parse(&m.to_json(), "/nonexistent").expect("re-parse");
            assert_eq!(again.sequences.len(), m.sequences.len());
        }
    }
});
