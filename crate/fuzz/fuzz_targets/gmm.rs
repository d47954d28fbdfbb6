#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::codebook::GmmCodebook;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = GmmCodebook::from_bytes(data) {
        assert_eq!(g.to_bytes(), data);
        // Posteriors of an accepted codebook are always defined.
        let x = vec![0.0; g.dim];
        let p = g.posteriors(&x).expect("dimension matches");
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
});
