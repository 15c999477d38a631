#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else { return };
    if let Ok(rules) = genperf_core::traceparse::CategoryRules::from_json_str(input) {
        for label in ["ampere_gemm", "conv2d", "softmax", "group_norm", ""] {
            let _ = rules.match_category(label);
        }
    }
});
