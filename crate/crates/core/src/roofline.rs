//! Roofline placement, prefill/decode classification, and Amdahl speedup
//! projection.
//!
//! Two intensity metrics are emitted. `arithmetic_intensity` is the headline
//! number: total inference FLOPs over model capacity bytes
//! (`total_params * bytes_per_param`), which grows with denoising steps as
//! parameter re-use grows. `operating_intensity` divides instead by the bytes
//! of parameters actually streamed from memory (capacity times the number of
//! sequential weight passes: denoising steps for diffusion, token steps for
//! autoregressive decoding, refinement steps for parallel decoding). Bound
//! classification uses operating intensity, since batch-1 inference traffic
//! is weight-dominated: a diffusion UNet does one inference's worth of work
//! per weight pass while an autoregressive decoder does one token's worth.

use crate::archspec::{HardwareSpec, ImageSize, ModelSpec, Variant};
use crate::costmodel::{attn_bytes, attn_flops, model_cost, AttnMode, OpCost};
use crate::error::{Error, Result};
use crate::seqprofile::AttentionCall;
use serde::Serialize;
use std::fmt;
use std::io::Write;

/// Which roofline region a workload lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Compute,
    Memory,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Compute => "compute",
            Bound::Memory => "memory",
        })
    }
}

/// A point on the roofline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RooflinePoint {
    pub arithmetic_intensity: f64,
    pub attainable_flops: f64,
    pub bound: Bound,
}

/// Places an intensity on the roofline. Ties at the ridge point classify as
/// compute-bound.
pub fn classify_bound(arithmetic_intensity: f64, hw: &HardwareSpec) -> RooflinePoint {
    let bound = if arithmetic_intensity >= hw.ridge_point() {
        Bound::Compute
    } else {
        Bound::Memory
    };
    RooflinePoint {
        arithmetic_intensity,
        attainable_flops: hw.peak_flops.min(arithmetic_intensity * hw.mem_bandwidth),
        bound,
    }
}

/// Roofline time bound: the slower of the compute and memory roofs.
pub fn estimate_time(cost: &OpCost, hw: &HardwareSpec) -> f64 {
    let compute = cost.flops as f64 / hw.peak_flops;
    let memory = cost.bytes_moved as f64 / hw.mem_bandwidth;
    compute.max(memory)
}

/// Intensity of `total_flops` against a fixed parameter capacity.
pub fn capacity_intensity(total_flops: u128, total_params: u64, bytes_per_param: u8) -> Result<f64> {
    if total_params == 0 {
        return Err(Error::Domain("zero-parameter spec".into()));
    }
    Ok(total_flops as f64 / (total_params as f64 * bytes_per_param as f64))
}

/// Headline arithmetic intensity: total inference FLOPs over capacity bytes.
pub fn arithmetic_intensity(spec: &ModelSpec, image: Option<ImageSize>) -> Result<f64> {
    let flops = model_cost(spec, image, AttnMode::Baseline)?.total().flops;
    capacity_intensity(flops, spec.total_params, spec.bytes_per_param)
}

/// Sequential weight passes of one inference for a single component.
fn weight_streams(variant: &Variant) -> u128 {
    match variant {
        Variant::Diffusion(d) => d.denoising_steps as u128 * d.guidance_multiplier as u128,
        Variant::Video(v) => {
            v.base.denoising_steps as u128 * v.base.guidance_multiplier as u128
        }
        Variant::Transformer(t) => match t.decode_mode {
            crate::archspec::DecodeMode::Autoregressive => t.gen_tokens as u128,
            crate::archspec::DecodeMode::Parallel => t.parallel_steps as u128,
        },
    }
}

/// Parameter bytes streamed from memory over one inference.
pub fn param_stream_bytes(spec: &ModelSpec) -> u128 {
    if spec.pipeline.is_empty() {
        weight_streams(&spec.variant).saturating_mul(spec.param_bytes())
    } else {
        spec.pipeline.iter().map(param_stream_bytes).sum()
    }
}

/// Operating intensity: total FLOPs over parameter bytes streamed.
pub fn streaming_intensity(spec: &ModelSpec, image: Option<ImageSize>) -> Result<f64> {
    let flops = model_cost(spec, image, AttnMode::Baseline)?.total().flops;
    let streamed = param_stream_bytes(spec);
    if streamed == 0 {
        return Err(Error::Domain("zero-parameter spec".into()));
    }
    Ok(flops as f64 / streamed as f64)
}

/// Roofline placement of a whole model: both intensity metrics plus the
/// bound classification driven by operating intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelRoofline {
    pub capacity_intensity: f64,
    pub operating_intensity: f64,
    pub point: RooflinePoint,
}

pub fn model_roofline(
    spec: &ModelSpec,
    image: Option<ImageSize>,
    hw: &HardwareSpec,
) -> Result<ModelRoofline> {
    hw.validate()?;
    let capacity = arithmetic_intensity(spec, image)?;
    let operating = streaming_intensity(spec, image)?;
    Ok(ModelRoofline {
        capacity_intensity: capacity,
        operating_intensity: operating,
        point: classify_bound(operating, hw),
    })
}

/// Amdahl projection for speeding up a fraction of execution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupProjection {
    pub fraction: f64,
    pub module_speedup: f64,
    pub end_to_end: f64,
}

/// `end_to_end = 1 / ((1 - fraction) + fraction / module_speedup)`.
/// `module_speedup` may be infinite, giving the `1 / (1 - fraction)` limit.
pub fn amdahl(fraction: f64, module_speedup: f64) -> Result<SpeedupProjection> {
    if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
        return Err(Error::Domain("0 ≤ fraction ≤ 1".into()));
    }
    if module_speedup < 1.0 || module_speedup.is_nan() {
        return Err(Error::Domain("module_speedup ≥ 1".into()));
    }
    let denominator = (1.0 - fraction) + fraction / module_speedup;
    let end_to_end = if denominator == 0.0 { f64::INFINITY } else { 1.0 / denominator };
    Ok(SpeedupProjection { fraction, module_speedup, end_to_end })
}

/// Feasibility audit of a claimed end-to-end speedup against the Amdahl bound
/// `end_to_end ≤ 1 / (1 - fraction)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmdahlFeasibility {
    pub fraction: f64,
    pub end_to_end: f64,
    /// `1 / (1 - fraction)`, the limit as module speedup goes to infinity.
    pub limit: f64,
    pub feasible: bool,
    /// Module speedup required to realize `end_to_end`; none when infeasible.
    pub required_module_speedup: Option<f64>,
}

pub fn amdahl_feasibility(fraction: f64, end_to_end: f64) -> Result<AmdahlFeasibility> {
    if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
        return Err(Error::Domain("0 ≤ fraction ≤ 1".into()));
    }
    if end_to_end < 1.0 || !end_to_end.is_finite() {
        return Err(Error::Domain("end_to_end ≥ 1 and finite".into()));
    }
    let limit = if fraction < 1.0 { 1.0 / (1.0 - fraction) } else { f64::INFINITY };
    let feasible = end_to_end <= limit;
    let required_module_speedup = if !feasible {
        None
    } else if end_to_end == 1.0 {
        Some(1.0)
    } else {
        let denominator = 1.0 - end_to_end * (1.0 - fraction);
        if denominator <= 0.0 {
            None // exactly at the limit: only an infinite module speedup attains it
        } else {
            Some(fraction * end_to_end / denominator)
        }
    };
    Ok(AmdahlFeasibility { fraction, end_to_end, limit, feasible, required_module_speedup })
}

/// Measured end-to-end flash-attention speedups used as report annotations
/// and as inputs to the feasibility audit.
pub const REPORTED_FLASH_END_TO_END: &[(&str, f64)] = &[
    ("llama", 1.52),
    ("imagen", 1.22),
    ("stable-diffusion", 1.67),
    ("muse", 1.11),
    ("parti", 1.17),
    ("prod-image", 1.04),
    ("make-a-video", 1.06),
    ("phenaki", 1.15),
];

/// LLM-phase analogue of an attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PrefillLike,
    DecodeLike,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::PrefillLike => "prefill-like",
            Phase::DecodeLike => "decode-like",
        })
    }
}

/// Decode-like iff the call is a single-query lookup into a longer context
/// (q_len = 1, kv_len > 1); the single-token degenerate case counts as
/// prefill-like.
pub fn prefill_decode_classify(call: &AttentionCall) -> Phase {
    if call.q_len == 1 && call.kv_len > 1 {
        Phase::DecodeLike
    } else {
        Phase::PrefillLike
    }
}

/// Modeled attention speedup of flash over baseline for one call: the ratio
/// of roofline time bounds under the two traffic models (FLOPs unchanged).
pub fn flash_speedup_model(call: &AttentionCall, hw: &HardwareSpec, bytes_per_el: u8) -> f64 {
    let flops = attn_flops(call);
    let baseline = OpCost {
        flops,
        bytes_moved: attn_bytes(call, AttnMode::Baseline, bytes_per_el),
        ..OpCost::default()
    };
    let flash = OpCost {
        flops,
        bytes_moved: attn_bytes(call, AttnMode::Flash, bytes_per_el),
        ..OpCost::default()
    };
    estimate_time(&baseline, hw) / estimate_time(&flash, hw)
}

/// One row of roofline plot data.
#[derive(Debug, Clone, Serialize)]
pub struct RooflineRow {
    pub model: String,
    pub arithmetic_intensity: f64,
    pub operating_intensity: f64,
    pub attainable_flops: f64,
    pub bound: Bound,
}

pub fn write_roofline_csv<W: Write>(rows: &[RooflineRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "model",
        "arithmetic_intensity",
        "operating_intensity",
        "attainable_flops",
        "bound",
    ])
    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in rows {
        out.write_record([
            row.model.clone(),
            row.arithmetic_intensity.to_string(),
            row.operating_intensity.to_string(),
            row.attainable_flops.to_string(),
            row.bound.to_string(),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::preset;
    use crate::seqprofile::AttnKind;
    use proptest::prelude::*;

    fn call(q: u64, kv: u64, d: u64) -> AttentionCall {
        AttentionCall {
            kind: AttnKind::SelfAttn,
            q_len: q,
            kv_len: kv,
            head_dim: d,
            num_heads: 1,
            batch: 1,
            stage: None,
            step: 0,
        }
    }

    #[test]
    fn capacity_intensity_worked_value() {
        // 1e12 FLOPs per pass, 50 steps, 1.45e9 params at 2 bytes.
        let ai = capacity_intensity(50 * 1_000_000_000_000, 1_450_000_000, 2).unwrap();
        assert!((ai - 17_241.379).abs() < 0.01, "{ai}");
    }

    #[test]
    fn classify_bound_directions() {
        let hw = HardwareSpec::a100_like();
        let point = classify_bound(17_241.0, &hw);
        assert_eq!(point.bound, Bound::Compute);
        assert_eq!(point.attainable_flops, hw.peak_flops);

        let ridge = hw.ridge_point();
        assert_eq!(classify_bound(ridge, &hw).bound, Bound::Compute);

        let low = classify_bound(1.0, &hw);
        assert_eq!(low.bound, Bound::Memory);
        assert_eq!(low.attainable_flops, hw.mem_bandwidth);
    }

    #[test]
    fn estimate_time_hits_each_roof() {
        let hw = HardwareSpec::a100_like();
        let memory_only = OpCost {
            flops: 0,
            bytes_moved: 2_039_000_000_000,
            ..OpCost::default()
        };
        assert!((estimate_time(&memory_only, &hw) - 1.0).abs() < 1e-12);
        let compute_only = OpCost {
            flops: 312_000_000_000_000,
            bytes_moved: 0,
            ..OpCost::default()
        };
        assert!((estimate_time(&compute_only, &hw) - 1.0).abs() < 1e-12);
        // An op at the ridge point has equal roofs.
        let balanced = OpCost {
            flops: 312_000_000_000_000,
            bytes_moved: 2_039_000_000_000,
            ..OpCost::default()
        };
        let time = estimate_time(&balanced, &hw);
        assert!((time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn amdahl_worked_values() {
        let projection = amdahl(0.413, 2.0).unwrap();
        assert!((projection.end_to_end - 1.260).abs() < 0.001, "{}", projection.end_to_end);
        for p in [0.0, 0.25, 0.8, 1.0] {
            assert!((amdahl(p, 1.0).unwrap().end_to_end - 1.0).abs() < 1e-12);
        }
        assert!((amdahl(1.0, 3.0).unwrap().end_to_end - 3.0).abs() < 1e-12);
    }

    #[test]
    fn amdahl_rejects_domain_violations() {
        assert!(amdahl(-0.1, 2.0).is_err());
        assert!(amdahl(1.1, 2.0).is_err());
        assert!(amdahl(0.5, 0.9).is_err());
        assert!(amdahl(f64::NAN, 2.0).is_err());
    }

    #[test]
    fn feasibility_flags_violations() {
        // End-to-end 1.67x with attention fraction 0.413: feasible,
        // limit 1/(1-0.413) ≈ 1.704.
        let audit = amdahl_feasibility(0.413, 1.67).unwrap();
        assert!(audit.feasible);
        let required = audit.required_module_speedup.unwrap();
        let replay = amdahl(0.413, required).unwrap();
        assert!((replay.end_to_end - 1.67).abs() < 1e-9);

        // The same speedup with only 30% attention time is impossible.
        let audit = amdahl_feasibility(0.30, 1.67).unwrap();
        assert!(!audit.feasible);
        assert!(audit.required_module_speedup.is_none());

        // End-to-end 1.333x at p = 0.5 needs module speedup 2.
        let audit = amdahl_feasibility(0.5, 4.0 / 3.0).unwrap();
        assert!((audit.required_module_speedup.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn prefill_decode_classification() {
        assert_eq!(prefill_decode_classify(&call(4096, 4096, 64)), Phase::PrefillLike);
        assert_eq!(prefill_decode_classify(&call(1, 512, 64)), Phase::DecodeLike);
        assert_eq!(prefill_decode_classify(&call(1, 1, 64)), Phase::PrefillLike);
    }

    #[test]
    fn flash_speedup_prefill_exceeds_decode() {
        let hw = HardwareSpec::a100_like();
        let prefill = flash_speedup_model(&call(4096, 4096, 64), &hw, 2);
        let decode = flash_speedup_model(&call(1, 4096, 64), &hw, 2);
        assert!(prefill > decode, "prefill {prefill} vs decode {decode}");
        assert!(decode >= 1.0);
    }

    #[test]
    fn flash_speedup_compute_bound_tends_to_one() {
        let hw = HardwareSpec::a100_like();
        // Large head_dim pushes both modes onto the FLOP roof.
        let ratio = flash_speedup_model(&call(512, 512, 4096), &hw, 2);
        assert!((ratio - 1.0).abs() < 1e-12, "{ratio}");
    }

    #[test]
    fn diffusion_intensity_exceeds_transformer() {
        let diffusion = preset("stable-diffusion").unwrap();
        let transformer = preset("parti").unwrap();
        let ai_d = arithmetic_intensity(&diffusion, None).unwrap();
        let ai_t = arithmetic_intensity(&transformer, None).unwrap();
        assert!(ai_d > ai_t);
    }

    proptest! {
        #[test]
        fn amdahl_monotone_and_bounded(
            p in 0.0f64..1.0,
            s in 1.0f64..100.0,
        ) {
            let base = amdahl(p, s).unwrap().end_to_end;
            let more_fraction = amdahl((p + 0.01).min(1.0), s).unwrap().end_to_end;
            let more_speedup = amdahl(p, s + 1.0).unwrap().end_to_end;
            prop_assert!(more_fraction >= base - 1e-12);
            prop_assert!(more_speedup >= base - 1e-12);
            if p < 1.0 {
                prop_assert!(base <= 1.0 / (1.0 - p) + 1e-12);
            }
        }

        #[test]
        fn classification_scale_invariant(
            flops in 1u64..1_000_000_000,
            bytes in 1u64..1_000_000_000,
            scale in 1u64..1000,
        ) {
            let hw = HardwareSpec::a100_like();
            let ai = flops as f64 / bytes as f64;
            let scaled = (flops as f64 * scale as f64) / (bytes as f64 * scale as f64);
            prop_assert_eq!(classify_bound(ai, &hw).bound, classify_bound(scaled, &hw).bound);
        }

        #[test]
        fn flash_speedup_at_least_one(
            q in 1u64..2048,
            kv in 1u64..2048,
            d in 1u64..256,
        ) {
            let hw = HardwareSpec::a100_like();
            prop_assert!(flash_speedup_model(&call(q, kv, d), &hw, 2) >= 1.0 - 1e-12);
        }
    }
}
