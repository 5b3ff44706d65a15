#![no_main]
use exo2ego_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(c) = RunConfig::parse(s) {
            let back = RunConfig::parse(&c.to_toml()).expect("echo re-parses");
            assert_eq!(back.seed, c.seed);
        }
    }
});
