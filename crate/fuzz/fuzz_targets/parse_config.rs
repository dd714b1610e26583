#![no_main]

use libfuzzer_sys::fuzz_target;
use tcode::config::{format_config, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        assert_eq!(
            parse_config(&format_config(&cfg)).expect("formatted config parses"),
            cfg
        );
    }
});
