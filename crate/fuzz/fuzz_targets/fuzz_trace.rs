//! Chrome trace documents are untrusted input: parsing must never panic,
//! parse∘write must be identity on the retained field set, and attribution
//! must conserve kernel time.

#![no_main]
use genperf_core::traceparse::{link_kernels, parse_trace_str, write_events_json, CategoryRules};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else { return };
    let Ok(events) = parse_trace_str(input) else { return };
    let reparsed = parse_trace_str(&write_events_json(&events))
        .expect("serialized events reparse");
    assert_eq!(events, reparsed, "trace round trip on retained fields");

    let breakdown = link_kernels(&events, &CategoryRules::default());
    let sum: f64 = breakdown.times_us.values().sum();
    assert_eq!(sum, breakdown.total_us, "attributed time is conserved");
});
