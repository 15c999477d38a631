#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else { return };
    if let Ok(size) = input.parse::<genperf_core::archspec::ImageSize>() {
        assert!(size.height >= 1 && size.width >= 1);
    }
});
