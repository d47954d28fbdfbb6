#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::audio::{decode_pcm, encode_pcm};

fuzz_target!(|data: &[u8]| {
    // The first byte picks the fallback rate for headerless input.
    let Some((&sel, body)) = data.split_first() else { return };
    let rate = match sel % 3 {
        0 => None,
        1 => Some(16_000),
        _ => Some(sel as u32 * 100),
    };
    if let Ok(sig) = decode_pcm(body, rate) {
        let again = decode_pcm(&encode_pcm(&sig), None).expect("encoded audio decodes");
        assert_eq!(again.samples.len(), sig.samples.len());
        assert_eq!(again.sample_rate, sig.sample_rate);
    }
});
