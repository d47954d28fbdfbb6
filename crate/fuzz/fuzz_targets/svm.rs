#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::classifier::LinearSvmModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = LinearSvmModel::from_bytes(data) {
        assert_eq!(m.to_bytes(), data);
    }
});
