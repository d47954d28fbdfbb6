#![no_main]

use libfuzzer_sys::fuzz_target;
use sentibof::descriptor::DescriptorSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = DescriptorSet::from_bytes(data) {
        assert_eq!(set.to_bytes(), data);
    }
});
