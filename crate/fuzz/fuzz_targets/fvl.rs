#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::video::{decode_fvl, encode_fvl};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_fvl(data) {
        assert_eq!(encode_fvl(&v), data);
    }
});
