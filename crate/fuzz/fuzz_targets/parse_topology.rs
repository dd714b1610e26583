#![no_main]

use libfuzzer_sys::fuzz_target;
use tcode::network::{format_topology, parse_topology};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(topo) = parse_topology(text) {
        let again = parse_topology(&format_topology(&topo)).expect("formatted topology parses");
        assert_eq!(again.edges(), topo.edges());
    }
});
