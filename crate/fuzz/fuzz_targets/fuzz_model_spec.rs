//! Model spec documents are untrusted input: parsing must never panic, and
//! any document that loads must survive a write/load round trip unchanged.

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = genperf_core::archspec::load_spec_str(input) {
        let rewritten = spec.to_json_pretty();
        let reloaded = genperf_core::archspec::load_spec_str(&rewritten)
            .expect("validated spec reloads");
        assert_eq!(spec, reloaded, "spec round trip must be identity");
    }
});
