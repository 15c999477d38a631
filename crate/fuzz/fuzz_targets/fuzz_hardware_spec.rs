#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else { return };
    if let Ok(hw) = genperf_core::archspec::HardwareSpec::from_json_str(input) {
        // from_json_str validates; a loaded spec must satisfy its invariants.
        hw.validate().expect("loaded hardware spec is valid");
        let _ = hw.ridge_point();
    }
});
