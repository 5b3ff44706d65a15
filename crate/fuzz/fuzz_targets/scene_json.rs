#![no_main]
use exo2ego_core::toygen::SceneSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(scene) = SceneSpec::from_json(s) {
            let _ = scene.walkable();
        }
    }
});
