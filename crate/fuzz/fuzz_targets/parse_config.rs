#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ibcem::config::parse_config(text) {
        let echo = config.to_toml();
        assert_eq!(ibcem::config::parse_config(&echo).expect("echo parses"), config);
    }
});
