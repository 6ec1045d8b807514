#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(u) = ibcem::io::parse_measurements(text) {
        let back = ibcem::io::parse_measurements(&ibcem::io::format_measurements(&u)).expect("round trip");
        assert_eq!(back, u);
    }
});
