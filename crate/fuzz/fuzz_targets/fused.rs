#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::fusion::{format_fused, parse_fused};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_fused(text) {
        assert_eq!(parse_fused(&format_fused(&records)).expect("formatted predictions parse"), records);
    }
});
