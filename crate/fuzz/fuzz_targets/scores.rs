#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::fusion::{format_scores, pair_scores, parse_scores};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_scores(text) {
        assert_eq!(parse_scores(&format_scores(&records)).expect("formatted scores parse"), records);
        let _ = pair_scores(&records);
    }
});
