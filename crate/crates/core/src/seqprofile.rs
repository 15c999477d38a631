//! Sequence-length profiling: the ordered trace of every attention call over
//! one inference pass.
//!
//! Diffusion traces follow the UNet traversal (down stages, bottleneck, up
//! stages), so their per-step q_len profile is U-shaped and palindromic.
//! Autoregressive transformers grow kv_len by one per generated token;
//! parallel decoders repeat a constant-shape call. Video traces rearrange
//! dimensions: spatial attention puts image tokens in the sequence position
//! with frames in the batch, temporal attention swaps the two.

use crate::archspec::{
    DecodeMode, DiffusionSpec, ImageSize, ModelSpec, TransformerSpec, Variant, VideoSpec,
};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

/// Attention flavor of a single call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnKind {
    #[serde(rename = "self")]
    SelfAttn,
    Cross,
    Spatial,
    Temporal,
}

impl AttnKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttnKind::SelfAttn => "self",
            AttnKind::Cross => "cross",
            AttnKind::Spatial => "spatial",
            AttnKind::Temporal => "temporal",
        }
    }
}

impl fmt::Display for AttnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One attention invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionCall {
    pub kind: AttnKind,
    pub q_len: u64,
    pub kv_len: u64,
    pub head_dim: u64,
    pub num_heads: u64,
    pub batch: u64,
    /// UNet stage index; none for transformer calls.
    pub stage: Option<u32>,
    /// Denoising or decode step index.
    pub step: u32,
}

impl AttentionCall {
    pub fn validate(&self) -> Result<()> {
        if self.q_len < 1 {
            return Err(Error::Validation("q_len ≥ 1".into()));
        }
        if self.kv_len < 1 {
            return Err(Error::Validation("kv_len ≥ 1".into()));
        }
        if self.batch < 1 {
            return Err(Error::Validation("batch ≥ 1".into()));
        }
        Ok(())
    }
}

/// Ordered attention-call trace over a full inference pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqLenTrace {
    pub model_name: String,
    pub calls: Vec<AttentionCall>,
}

impl SeqLenTrace {
    /// Builds a trace, rejecting an empty call list.
    pub fn try_new(model_name: impl Into<String>, calls: Vec<AttentionCall>) -> Result<Self> {
        let model_name = model_name.into();
        if calls.is_empty() {
            return Err(Error::EmptyTrace(format!(
                "{model_name} has no attention stages"
            )));
        }
        Ok(SeqLenTrace { model_name, calls })
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Plot-data export: one row per call, in execution order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "index", "step", "stage", "kind", "q_len", "kv_len", "batch", "heads", "head_dim",
        ])
        .map_err(csv_error)?;
        for (index, call) in self.calls.iter().enumerate() {
            let stage = call.stage.map(|s| s.to_string()).unwrap_or_default();
            out.write_record([
                index.to_string(),
                call.step.to_string(),
                stage,
                call.kind.to_string(),
                call.q_len.to_string(),
                call.kv_len.to_string(),
                call.batch.to_string(),
                call.num_heads.to_string(),
                call.head_dim.to_string(),
            ])
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Summary statistics for reports. Both sequence-length variation ratios
    /// are reported: the whole-trace max/min ratio and the largest ratio
    /// between adjacent stage visits.
    pub fn summary(&self) -> TraceSummary {
        let max_q = self.calls.iter().map(|c| c.q_len).max().unwrap_or(0);
        let min_q = self.calls.iter().map(|c| c.q_len).min().unwrap_or(0);
        let mut adjacent = 1.0f64;
        for pair in self.calls.windows(2) {
            if pair[0].stage != pair[1].stage {
                let hi = pair[0].q_len.max(pair[1].q_len) as f64;
                let lo = pair[0].q_len.min(pair[1].q_len) as f64;
                if lo > 0.0 {
                    adjacent = adjacent.max(hi / lo);
                }
            }
        }
        TraceSummary {
            num_calls: self.calls.len(),
            max_q_len: max_q,
            min_q_len: min_q,
            whole_trace_ratio: if min_q > 0 { max_q as f64 / min_q as f64 } else { 0.0 },
            adjacent_stage_ratio: adjacent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSummary {
    pub num_calls: usize,
    pub max_q_len: u64,
    pub min_q_len: u64,
    pub whole_trace_ratio: f64,
    pub adjacent_stage_ratio: f64,
}

fn csv_error(err: csv::Error) -> Error {
    Error::Io(std::io::Error::other(err))
}

/// UNet stage visit order for one traversal: down `0..depth`, bottleneck
/// `depth`, up `depth-1..=0`. Always `2 * depth + 1` visits.
pub fn stage_visits(unet_depth: u32) -> impl Iterator<Item = u32> {
    (0..unet_depth)
        .chain(std::iter::once(unet_depth))
        .chain((0..unet_depth).rev())
}

/// Attention calls of a single UNet traversal, in execution order.
///
/// At each visited stage with self-attention, q_len = kv_len = the stage
/// token count; with cross-attention, q_len is the stage token count and
/// kv_len is the encoded prompt length.
pub fn single_traversal_calls(spec: &DiffusionSpec, step: u32) -> Vec<AttentionCall> {
    let mut calls = Vec::new();
    for stage in stage_visits(spec.unet_depth) {
        let tokens = spec.stage_tokens(stage);
        for _ in 0..spec.blocks_per_stage {
            if spec.self_attn_stages.contains(&stage) {
                calls.push(AttentionCall {
                    kind: AttnKind::SelfAttn,
                    q_len: tokens,
                    kv_len: tokens,
                    head_dim: spec.head_dim,
                    num_heads: spec.num_heads,
                    batch: 1,
                    stage: Some(stage),
                    step,
                });
            }
            if spec.cross_attn_stages.contains(&stage) {
                calls.push(AttentionCall {
                    kind: AttnKind::Cross,
                    q_len: tokens,
                    kv_len: spec.text_encode,
                    head_dim: spec.head_dim,
                    num_heads: spec.num_heads,
                    batch: 1,
                    stage: Some(stage),
                    step,
                });
            }
        }
    }
    calls
}

pub(crate) fn diffusion_calls(spec: &DiffusionSpec, steps: u32) -> Vec<AttentionCall> {
    let mut calls = Vec::new();
    for step in 0..steps {
        for _ in 0..spec.guidance_multiplier {
            calls.extend(single_traversal_calls(spec, step));
        }
    }
    calls
}

/// Sequence-length trace of a diffusion model over `steps` denoising steps.
/// The per-step pattern repeats identically; its fundamental period is one
/// UNet traversal.
pub fn diffusion_trace(spec: &DiffusionSpec, steps: u32) -> Result<SeqLenTrace> {
    spec.validate()?;
    if steps < 1 {
        return Err(Error::Domain("steps ≥ 1".into()));
    }
    SeqLenTrace::try_new("diffusion", diffusion_calls(spec, steps))
}

pub(crate) fn transformer_calls(spec: &TransformerSpec) -> Vec<AttentionCall> {
    let head_dim = spec.head_dim();
    let call = |q_len, kv_len, step| AttentionCall {
        kind: AttnKind::SelfAttn,
        q_len,
        kv_len,
        head_dim,
        num_heads: spec.num_heads,
        batch: 1,
        stage: None,
        step,
    };
    match spec.decode_mode {
        DecodeMode::Autoregressive => {
            let mut calls = vec![call(spec.prompt_len, spec.prompt_len, 0)];
            for t in 1..spec.gen_tokens {
                calls.push(call(1, spec.prompt_len + t, t as u32));
            }
            calls
        }
        DecodeMode::Parallel => {
            let seq = spec.prompt_len + spec.gen_tokens;
            (0..spec.parallel_steps).map(|s| call(seq, seq, s)).collect()
        }
    }
}

/// Sequence-length trace of a transformer image generator.
///
/// Autoregressive mode emits a prefill call (q = kv = prompt) followed by one
/// q_len = 1 call per generated token with linearly growing kv context.
/// Parallel mode emits `parallel_steps` constant-shape calls over the full
/// prompt + generated token sequence.
pub fn transformer_trace(spec: &TransformerSpec) -> Result<SeqLenTrace> {
    spec.validate()?;
    SeqLenTrace::try_new("transformer", transformer_calls(spec))
}

pub(crate) fn video_traversal_calls(spec: &VideoSpec, step: u32) -> Vec<AttentionCall> {
    let base = &spec.base;
    let frames = spec.num_frames;
    let mut calls = Vec::new();
    for stage in stage_visits(base.unet_depth) {
        let tokens = base.stage_tokens(stage);
        for _ in 0..base.blocks_per_stage {
            if base.self_attn_stages.contains(&stage) {
                calls.push(AttentionCall {
                    kind: AttnKind::Spatial,
                    q_len: tokens,
                    kv_len: tokens,
                    head_dim: base.head_dim,
                    num_heads: base.num_heads,
                    batch: frames,
                    stage: Some(stage),
                    step,
                });
            }
            // Temporal attention follows the spatial site: the frame axis
            // moves into the sequence position, image tokens into the batch.
            if spec.temporal_attn_stages.contains(&stage) {
                calls.push(AttentionCall {
                    kind: AttnKind::Temporal,
                    q_len: frames,
                    kv_len: frames,
                    head_dim: base.head_dim,
                    num_heads: base.num_heads,
                    batch: tokens,
                    stage: Some(stage),
                    step,
                });
            }
            if base.cross_attn_stages.contains(&stage) {
                calls.push(AttentionCall {
                    kind: AttnKind::Cross,
                    q_len: tokens,
                    kv_len: base.text_encode,
                    head_dim: base.head_dim,
                    num_heads: base.num_heads,
                    batch: frames,
                    stage: Some(stage),
                    step,
                });
            }
        }
    }
    calls
}

pub(crate) fn video_calls(spec: &VideoSpec, steps: u32) -> Vec<AttentionCall> {
    let mut calls = Vec::new();
    for step in 0..steps {
        for _ in 0..spec.base.guidance_multiplier {
            calls.extend(video_traversal_calls(spec, step));
        }
    }
    calls
}

/// Sequence-length trace of a video diffusion model.
pub fn video_trace(spec: &VideoSpec, steps: u32) -> Result<SeqLenTrace> {
    spec.validate()?;
    if steps < 1 {
        return Err(Error::Domain("steps ≥ 1".into()));
    }
    SeqLenTrace::try_new("video", video_calls(spec, steps))
}

/// Trace for a full model spec, optionally rescaled to `image` and overriding
/// the step count. Pipelines are traced through their base generative
/// component (`variant`).
pub fn model_trace(
    spec: &ModelSpec,
    image: Option<ImageSize>,
    steps: Option<u32>,
) -> Result<SeqLenTrace> {
    spec.validate()?;
    let mut trace = match &spec.variant {
        Variant::Diffusion(d) => {
            let d = match image {
                Some(image) => d.at_image_size(image)?,
                None => d.clone(),
            };
            diffusion_trace(&d, steps.unwrap_or(d.denoising_steps))?
        }
        Variant::Transformer(t) => transformer_trace(t)?,
        Variant::Video(v) => {
            let v = match image {
                Some(image) => VideoSpec {
                    base: v.base.at_image_size(image)?,
                    ..v.clone()
                },
                None => v.clone(),
            };
            video_trace(&v, steps.unwrap_or(v.base.denoising_steps))?
        }
    };
    trace.model_name = spec.name.clone();
    Ok(trace)
}

/// Frequency distribution of q_len over the trace. The counts always total
/// the number of calls.
pub fn seq_len_histogram(trace: &SeqLenTrace) -> BTreeMap<u64, u64> {
    let mut histogram = BTreeMap::new();
    for call in &trace.calls {
        *histogram.entry(call.q_len).or_insert(0) += 1;
    }
    histogram
}

/// Plot-data export of a q_len histogram.
pub fn write_histogram_csv<W: Write>(histogram: &BTreeMap<u64, u64>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["q_len", "count"]).map_err(csv_error)?;
    for (q_len, count) in histogram {
        out.write_record([q_len.to_string(), count.to_string()])
            .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::{preset, LatentSpace};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    pub(crate) fn diffusion_fixture(
        latent: u64,
        depth: u32,
        self_stages: &[u32],
        cross_stages: &[u32],
        text: u64,
    ) -> DiffusionSpec {
        DiffusionSpec {
            latent_height: latent,
            latent_width: latent,
            downsample_factor: 2,
            unet_depth: depth,
            text_encode: text,
            denoising_steps: 1,
            self_attn_stages: self_stages.iter().copied().collect(),
            cross_attn_stages: cross_stages.iter().copied().collect(),
            blocks_per_stage: 1,
            head_dim: 8,
            num_heads: 4,
            space: LatentSpace::Latent,
            latent_downsample: 8,
            guidance_multiplier: 1,
            conv: None,
        }
    }

    #[test]
    fn depth_one_traversal_is_256_64_256() {
        // Hand enumeration: latent 16x16, d=2, depth=1, self at all stages.
        let spec = diffusion_fixture(16, 1, &[0, 1], &[], 0);
        let trace = diffusion_trace(&spec, 1).unwrap();
        let q: Vec<u64> = trace.calls.iter().map(|c| c.q_len).collect();
        assert_eq!(q, vec![256, 64, 256]);
    }

    #[test]
    fn stable_diffusion_max_q_len_is_4096() {
        let spec = preset("stable-diffusion").unwrap();
        let trace = model_trace(&spec, None, Some(3)).unwrap();
        assert_eq!(trace.calls.iter().map(|c| c.q_len).max(), Some(4096));
    }

    #[test]
    fn depth_zero_is_constant() {
        let spec = diffusion_fixture(16, 0, &[0], &[], 0);
        let trace = diffusion_trace(&spec, 4).unwrap();
        assert!(trace.calls.iter().all(|c| c.q_len == 256));
        assert_eq!(trace.len(), 4);
    }

    #[test]
    fn autoregressive_kv_grows_linearly() {
        let spec = TransformerSpec {
            num_layers: 2,
            model_dim: 16,
            num_heads: 2,
            prompt_len: 5,
            gen_tokens: 4,
            decode_mode: DecodeMode::Autoregressive,
            parallel_steps: 1,
        };
        let trace = transformer_trace(&spec).unwrap();
        let kv: Vec<u64> = trace.calls.iter().map(|c| c.kv_len).collect();
        assert_eq!(kv, vec![5, 6, 7, 8]);
        assert_eq!(trace.calls[0].q_len, 5);
        assert!(trace.calls[1..].iter().all(|c| c.q_len == 1));
    }

    #[test]
    fn parallel_kv_is_constant() {
        let spec = TransformerSpec {
            num_layers: 2,
            model_dim: 16,
            num_heads: 2,
            prompt_len: 5,
            gen_tokens: 11,
            decode_mode: DecodeMode::Parallel,
            parallel_steps: 3,
        };
        let trace = transformer_trace(&spec).unwrap();
        let kv: Vec<u64> = trace.calls.iter().map(|c| c.kv_len).collect();
        assert_eq!(kv, vec![16, 16, 16]);
    }

    #[test]
    fn single_token_generation_is_prefill_only() {
        let spec = TransformerSpec {
            num_layers: 1,
            model_dim: 8,
            num_heads: 1,
            prompt_len: 9,
            gen_tokens: 1,
            decode_mode: DecodeMode::Autoregressive,
            parallel_steps: 1,
        };
        let trace = transformer_trace(&spec).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.calls[0].q_len, 9);
        assert_eq!(trace.calls[0].kv_len, 9);
    }

    #[test]
    fn video_rearranges_dimensions() {
        // Stage resolution 32x32 with 16 frames: spatial q=1024 batch=16,
        // then temporal q=16 batch=1024.
        let spec = VideoSpec {
            base: diffusion_fixture(32, 0, &[0], &[], 0),
            num_frames: 16,
            temporal_attn_stages: [0].into_iter().collect(),
        };
        let trace = video_trace(&spec, 1).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.calls[0].kind, AttnKind::Spatial);
        assert_eq!((trace.calls[0].q_len, trace.calls[0].batch), (1024, 16));
        assert_eq!(trace.calls[1].kind, AttnKind::Temporal);
        assert_eq!((trace.calls[1].q_len, trace.calls[1].batch), (16, 1024));
    }

    #[test]
    fn single_frame_video_degenerates() {
        let spec = VideoSpec {
            base: diffusion_fixture(32, 0, &[0], &[], 0),
            num_frames: 1,
            temporal_attn_stages: [0].into_iter().collect(),
        };
        let trace = video_trace(&spec, 1).unwrap();
        assert!(trace
            .calls
            .iter()
            .filter(|c| c.kind == AttnKind::Temporal)
            .all(|c| c.q_len == 1));
    }

    #[test]
    fn video_without_temporal_reduces_to_diffusion_with_frame_batch() {
        let base = diffusion_fixture(16, 2, &[0, 1, 2], &[0, 2], 7);
        let spec = VideoSpec {
            base: base.clone(),
            num_frames: 5,
            temporal_attn_stages: BTreeSet::new(),
        };
        let video = video_trace(&spec, 2).unwrap();
        let diffusion = diffusion_trace(&base, 2).unwrap();
        assert_eq!(video.len(), diffusion.len());
        for (v, d) in video.calls.iter().zip(&diffusion.calls) {
            assert_eq!(v.q_len, d.q_len);
            assert_eq!(v.kv_len, d.kv_len);
            assert_eq!(v.stage, d.stage);
            assert_eq!(v.batch, 5);
        }
    }

    #[test]
    fn histogram_counts_q_lens() {
        let spec = diffusion_fixture(16, 1, &[0, 1], &[], 0);
        let trace = diffusion_trace(&spec, 1).unwrap();
        let histogram = seq_len_histogram(&trace);
        assert_eq!(histogram.get(&256), Some(&2));
        assert_eq!(histogram.get(&64), Some(&1));
        let total: u64 = histogram.values().sum();
        assert_eq!(total as usize, trace.len());
    }

    #[test]
    fn histogram_keys_quadruple_when_image_doubles() {
        let spec = preset("stable-diffusion").unwrap();
        let at_512 = model_trace(&spec, Some(ImageSize::square(512).unwrap()), Some(1)).unwrap();
        let at_1024 = model_trace(&spec, Some(ImageSize::square(1024).unwrap()), Some(1)).unwrap();
        let h_512 = seq_len_histogram(&at_512);
        let h_1024 = seq_len_histogram(&at_1024);
        assert_eq!(h_512.len(), h_1024.len());
        for ((k_small, v_small), (k_large, v_large)) in h_512.iter().zip(&h_1024) {
            assert_eq!(k_small * 4, *k_large);
            assert_eq!(v_small, v_large);
        }
    }

    #[test]
    fn no_attention_stages_is_an_empty_trace_error() {
        let spec = diffusion_fixture(16, 1, &[], &[], 0);
        match diffusion_trace(&spec, 1) {
            Err(Error::EmptyTrace(_)) => {}
            other => panic!("expected EmptyTrace, got {other:?}"),
        }
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let spec = diffusion_fixture(16, 1, &[0, 1], &[], 0);
        let trace = diffusion_trace(&spec, 1).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "index,step,stage,kind,q_len,kv_len,batch,heads,head_dim"
        );
        assert_eq!(lines.next().unwrap(), "0,0,0,self,256,256,1,4,8");
    }

    proptest! {
        #[test]
        fn per_step_subtrace_is_palindromic(
            depth in 0u32..4,
            latent_mult in 1u64..5,
            steps in 1u32..4,
        ) {
            let latent = latent_mult * 2u64.pow(depth);
            let all: Vec<u32> = (0..=depth).collect();
            let spec = diffusion_fixture(latent, depth, &all, &[], 0);
            let trace = diffusion_trace(&spec, steps).unwrap();
            let per_step = trace.len() / steps as usize;
            prop_assert_eq!(per_step, 2 * depth as usize + 1);
            for step in 0..steps as usize {
                let q: Vec<u64> = trace.calls[step * per_step..(step + 1) * per_step]
                    .iter()
                    .map(|c| c.q_len)
                    .collect();
                let mut reversed = q.clone();
                reversed.reverse();
                prop_assert_eq!(&q, &reversed);
            }
        }

        #[test]
        fn min_q_is_max_over_d_pow_2depth(
            depth in 0u32..4,
            latent_mult in 1u64..5,
            d in 2u64..4,
        ) {
            let latent = latent_mult * d.pow(depth);
            let all: Vec<u32> = (0..=depth).collect();
            let mut spec = diffusion_fixture(latent, depth, &all, &[], 0);
            spec.downsample_factor = d;
            let trace = diffusion_trace(&spec, 1).unwrap();
            let max = trace.calls.iter().map(|c| c.q_len).max().unwrap();
            let min = trace.calls.iter().map(|c| c.q_len).min().unwrap();
            prop_assert_eq!(min, max / d.pow(2 * depth));
        }

        #[test]
        fn trace_length_matches_enumeration(
            depth in 0u32..4,
            steps in 1u32..5,
            blocks in 1u32..4,
        ) {
            let latent = 2u64.pow(depth) * 3;
            let all: Vec<u32> = (0..=depth).collect();
            let mut spec = diffusion_fixture(latent, depth, &all, &all, 7);
            spec.blocks_per_stage = blocks;
            spec.denoising_steps = steps;
            let trace = diffusion_trace(&spec, steps).unwrap();
            // Each stage visit emits one self and one cross call per block.
            let visits_with_attention = 2 * (2 * depth as usize + 1);
            prop_assert_eq!(
                trace.len(),
                steps as usize * visits_with_attention * blocks as usize
            );
        }

        #[test]
        fn doubling_latent_quadruples_self_q(
            depth in 0u32..4,
            latent_mult in 1u64..4,
        ) {
            let latent = latent_mult * 2u64.pow(depth);
            let all: Vec<u32> = (0..=depth).collect();
            let spec = diffusion_fixture(latent, depth, &all, &all, 7);
            let doubled = diffusion_fixture(latent * 2, depth, &all, &all, 7);
            let a = diffusion_trace(&spec, 1).unwrap();
            let b = diffusion_trace(&doubled, 1).unwrap();
            for (small, large) in a.calls.iter().zip(&b.calls) {
                if small.kind == AttnKind::SelfAttn {
                    prop_assert_eq!(small.q_len * 4, large.q_len);
                }
            }
        }

        #[test]
        fn autoregressive_kv_strictly_increases(prompt in 1u64..40, gen in 2u64..40) {
            let spec = TransformerSpec {
                num_layers: 1,
                model_dim: 8,
                num_heads: 1,
                prompt_len: prompt,
                gen_tokens: gen,
                decode_mode: DecodeMode::Autoregressive,
                parallel_steps: 1,
            };
            let trace = transformer_trace(&spec).unwrap();
            for pair in trace.calls.windows(2) {
                prop_assert_eq!(pair[1].kv_len, pair[0].kv_len + 1);
            }
        }
    }
}
