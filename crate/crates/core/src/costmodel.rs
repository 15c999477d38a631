//! Closed-form FLOP, byte-traffic, and footprint models for attention,
//! convolution, and linear operators, plus whole-model aggregation.
//!
//! Attention FLOPs count only the two main matmuls (QK^T and PV); projection
//! and feed-forward work is accounted in the linear category. The similarity
//! matrix of one attention call takes `bytes_per_el * q_len * kv_len` bytes
//! (batch and heads omitted, matching the single-head convention of the
//! footprint formulas). Baseline attention charges `SIM_TRAVERSALS` main
//! memory passes over the similarity matrix; flash attention never spills it.
//! All counts are wide-integer exact; nothing is rounded until report time.

use crate::archspec::{DiffusionSpec, ImageSize, ModelSpec, TransformerSpec, Variant, VideoSpec};
use crate::category::OpCategory;
use crate::error::{Error, Result};
use crate::seqprofile::{
    diffusion_calls, single_traversal_calls, stage_visits, transformer_calls, video_calls,
    video_traversal_calls, AttentionCall, AttnKind,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

/// Main-memory traversals of the similarity matrix charged to baseline
/// attention: score write, softmax read, probability read for PV.
pub const SIM_TRAVERSALS: u32 = 3;

/// Feed-forward expansion assumed for the linear category of attention blocks.
pub const FF_EXPANSION: u64 = 4;

/// Attention execution mode for the byte-traffic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnMode {
    Baseline,
    Flash,
}

impl AttnMode {
    pub fn label(&self) -> &'static str {
        match self {
            AttnMode::Baseline => "baseline",
            AttnMode::Flash => "flash",
        }
    }
}

impl FromStr for AttnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(AttnMode::Baseline),
            "flash" => Ok(AttnMode::Flash),
            other => Err(Error::Domain(format!(
                "mode `{other}` is not one of baseline, flash"
            ))),
        }
    }
}

/// Whether footprint counts one head and batch entry (the convention of the
/// closed-form footprint model) or the full per-head, per-batch allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FootprintConvention {
    #[default]
    PerCall,
    Full,
}

/// FLOPs, bytes moved, peak intermediate bytes, and weight bytes of one
/// operator instance or a category aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OpCost {
    pub flops: u128,
    pub bytes_moved: u128,
    pub footprint: u128,
    pub param_bytes: u128,
}

impl OpCost {
    /// Accumulates another cost: additive in flops/bytes/params, peak in
    /// footprint.
    pub fn absorb(&mut self, other: &OpCost) {
        self.flops = self.flops.saturating_add(other.flops);
        self.bytes_moved = self.bytes_moved.saturating_add(other.bytes_moved);
        self.footprint = self.footprint.max(other.footprint);
        self.param_bytes = self.param_bytes.saturating_add(other.param_bytes);
    }

    fn scaled(&self, factor: u128) -> OpCost {
        OpCost {
            flops: self.flops.saturating_mul(factor),
            bytes_moved: self.bytes_moved.saturating_mul(factor),
            footprint: self.footprint,
            param_bytes: self.param_bytes,
        }
    }
}

/// Per-category cost aggregate over a full inference pass.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CostBreakdown {
    categories: BTreeMap<OpCategory, OpCost>,
}

impl CostBreakdown {
    pub fn new() -> Self {
        CostBreakdown::default()
    }

    pub fn add(&mut self, category: OpCategory, cost: &OpCost) {
        self.categories.entry(category).or_default().absorb(cost);
    }

    pub fn get(&self, category: OpCategory) -> OpCost {
        self.categories.get(&category).copied().unwrap_or_default()
    }

    pub fn categories(&self) -> impl Iterator<Item = (OpCategory, &OpCost)> {
        self.categories.iter().map(|(c, v)| (*c, v))
    }

    /// Component-wise sum of all categories.
    pub fn total(&self) -> OpCost {
        let mut total = OpCost::default();
        for cost in self.categories.values() {
            total.flops = total.flops.saturating_add(cost.flops);
            total.bytes_moved = total.bytes_moved.saturating_add(cost.bytes_moved);
            total.footprint = total.footprint.saturating_add(cost.footprint);
            total.param_bytes = total.param_bytes.saturating_add(cost.param_bytes);
        }
        total
    }

    fn merge(&mut self, other: &CostBreakdown) {
        for (category, cost) in &other.categories {
            self.add(*category, cost);
        }
    }
}

fn check_bytes_per_el(bytes_per_el: u8) -> Result<()> {
    if ![1, 2, 4].contains(&bytes_per_el) {
        return Err(Error::Validation("bytes_per_el ∈ {1, 2, 4}".into()));
    }
    Ok(())
}

/// Bytes of the similarity matrix of one attention call over an
/// `H_L x W_L` latent with a `text_encode`-token prompt:
/// `bytes_per_el * H_L*W_L * (H_L*W_L + text_encode)`.
pub fn sim_matrix_memory(h_l: u64, w_l: u64, text_encode: u64, bytes_per_el: u8) -> Result<u128> {
    check_bytes_per_el(bytes_per_el)?;
    let hw = h_l as u128 * w_l as u128;
    let seq = hw
        .checked_add(text_encode as u128)
        .ok_or(Error::Overflow("similarity-matrix memory"))?;
    hw.checked_mul(seq)
        .and_then(|cells| cells.checked_mul(bytes_per_el as u128))
        .ok_or(Error::Overflow("similarity-matrix memory"))
}

/// Similarity-matrix bytes of one call: `bytes_per_el * q_len * kv_len`,
/// optionally multiplied out over heads and batch.
pub fn call_sim_matrix_bytes(
    call: &AttentionCall,
    bytes_per_el: u8,
    convention: FootprintConvention,
) -> Result<u128> {
    check_bytes_per_el(bytes_per_el)?;
    let mut cells = (call.q_len as u128)
        .checked_mul(call.kv_len as u128)
        .ok_or(Error::Overflow("similarity-matrix bytes"))?;
    if convention == FootprintConvention::Full {
        cells = cells
            .checked_mul(call.num_heads as u128)
            .and_then(|c| c.checked_mul(call.batch as u128))
            .ok_or(Error::Overflow("similarity-matrix bytes"))?;
    }
    cells
        .checked_mul(bytes_per_el as u128)
        .ok_or(Error::Overflow("similarity-matrix bytes"))
}

/// Cumulative similarity-matrix bytes over one UNet traversal, honoring the
/// spec's attention stage sets and block multiplicity. With self and cross
/// attention at every stage and one block per stage this is exactly
/// `b * [ 2*sum_{n<depth} (HW/d^2n)*((HW/d^2n)+text) + (HW/d^2depth)*((HW/d^2depth)+text) ]`.
pub fn cumulative_sim_memory_with(spec: &DiffusionSpec, bytes_per_el: u8) -> Result<u128> {
    spec.validate()?;
    check_bytes_per_el(bytes_per_el)?;
    let mut total: u128 = 0;
    for stage in stage_visits(spec.unet_depth) {
        let tokens = spec.stage_tokens(stage) as u128;
        let mut visit: u128 = 0;
        if spec.self_attn_stages.contains(&stage) {
            visit = visit
                .checked_add(
                    tokens
                        .checked_mul(tokens)
                        .ok_or(Error::Overflow("cumulative similarity memory"))?,
                )
                .ok_or(Error::Overflow("cumulative similarity memory"))?;
        }
        if spec.cross_attn_stages.contains(&stage) {
            visit = visit
                .checked_add(
                    tokens
                        .checked_mul(spec.text_encode as u128)
                        .ok_or(Error::Overflow("cumulative similarity memory"))?,
                )
                .ok_or(Error::Overflow("cumulative similarity memory"))?;
        }
        total = visit
            .checked_mul(spec.blocks_per_stage as u128)
            .and_then(|v| total.checked_add(v))
            .ok_or(Error::Overflow("cumulative similarity memory"))?;
    }
    total
        .checked_mul(bytes_per_el as u128)
        .ok_or(Error::Overflow("cumulative similarity memory"))
}

/// `cumulative_sim_memory_with` at the 2-byte (FP16) element size.
pub fn cumulative_sim_memory(spec: &DiffusionSpec) -> Result<u128> {
    cumulative_sim_memory_with(spec, 2)
}

/// FLOPs of the two attention matmuls:
/// `4 * batch * num_heads * q_len * kv_len * head_dim`.
pub fn attn_flops(call: &AttentionCall) -> u128 {
    4u128
        .saturating_mul(call.batch as u128)
        .saturating_mul(call.num_heads as u128)
        .saturating_mul(call.q_len as u128)
        .saturating_mul(call.kv_len as u128)
        .saturating_mul(call.head_dim as u128)
}

/// Main-memory bytes of one attention call under the given traffic model.
///
/// Both modes read Q, K, V and write the output. Baseline additionally makes
/// `sim_traversals` passes over the `q_len x kv_len` similarity matrix; flash
/// keeps it on chip.
pub fn attn_bytes_with(
    call: &AttentionCall,
    mode: AttnMode,
    bytes_per_el: u8,
    sim_traversals: u32,
) -> u128 {
    let q = call.q_len as u128;
    let kv = call.kv_len as u128;
    let d = call.head_dim as u128;
    // Q read + K/V reads + output write, per head and batch entry.
    let mut elems = q
        .saturating_mul(d)
        .saturating_mul(2)
        .saturating_add(kv.saturating_mul(d).saturating_mul(2));
    if mode == AttnMode::Baseline {
        elems = elems.saturating_add(
            q.saturating_mul(kv).saturating_mul(sim_traversals as u128),
        );
    }
    elems
        .saturating_mul(call.batch as u128)
        .saturating_mul(call.num_heads as u128)
        .saturating_mul(bytes_per_el as u128)
}

/// `attn_bytes_with` at the default similarity-traversal count.
pub fn attn_bytes(call: &AttentionCall, mode: AttnMode, bytes_per_el: u8) -> u128 {
    attn_bytes_with(call, mode, bytes_per_el, SIM_TRAVERSALS)
}

fn attn_footprint(
    call: &AttentionCall,
    mode: AttnMode,
    bytes_per_el: u8,
    convention: FootprintConvention,
) -> u128 {
    match mode {
        AttnMode::Baseline => {
            call_sim_matrix_bytes(call, bytes_per_el, convention).unwrap_or(u128::MAX)
        }
        AttnMode::Flash => {
            // Q/K/V/O resident; the similarity matrix never materializes.
            let per_call = 2u128
                .saturating_mul(call.q_len as u128)
                .saturating_add(2u128.saturating_mul(call.kv_len as u128))
                .saturating_mul(call.head_dim as u128);
            let scale = match convention {
                FootprintConvention::PerCall => 1u128,
                FootprintConvention::Full => {
                    (call.num_heads as u128).saturating_mul(call.batch as u128)
                }
            };
            per_call
                .saturating_mul(scale)
                .saturating_mul(bytes_per_el as u128)
        }
    }
}

fn attn_call_cost(call: &AttentionCall, mode: AttnMode, bytes_per_el: u8) -> OpCost {
    OpCost {
        flops: attn_flops(call),
        bytes_moved: attn_bytes(call, mode, bytes_per_el),
        footprint: attn_footprint(call, mode, bytes_per_el, FootprintConvention::PerCall),
        param_bytes: 0,
    }
}

/// FLOPs of a stride-1 same-padding convolution:
/// `2 * in_h * in_w * k^2 * c_in * c_out`.
pub fn conv_flops(in_h: u64, in_w: u64, k: u64, c_in: u64, c_out: u64) -> u128 {
    2u128
        .saturating_mul(in_h as u128)
        .saturating_mul(in_w as u128)
        .saturating_mul((k as u128).saturating_mul(k as u128))
        .saturating_mul(c_in as u128)
        .saturating_mul(c_out as u128)
}

/// Main-memory bytes of a convolution: input read, output write, weight read.
pub fn conv_bytes(in_h: u64, in_w: u64, k: u64, c_in: u64, c_out: u64, bytes_per_el: u8) -> u128 {
    let hw = (in_h as u128).saturating_mul(in_w as u128);
    hw.saturating_mul(c_in as u128)
        .saturating_add(hw.saturating_mul(c_out as u128))
        .saturating_add(
            (k as u128)
                .saturating_mul(k as u128)
                .saturating_mul(c_in as u128)
                .saturating_mul(c_out as u128),
        )
        .saturating_mul(bytes_per_el as u128)
}

#[derive(Debug, Clone, Copy)]
struct ConvInstance {
    h: u64,
    w: u64,
    k: u64,
    c_in: u64,
    c_out: u64,
}

impl ConvInstance {
    fn cost(&self, bytes_per_el: u8) -> OpCost {
        OpCost {
            flops: conv_flops(self.h, self.w, self.k, self.c_in, self.c_out),
            bytes_moved: conv_bytes(self.h, self.w, self.k, self.c_in, self.c_out, bytes_per_el),
            footprint: (self.h as u128)
                .saturating_mul(self.w as u128)
                .saturating_mul(self.c_in as u128 + self.c_out as u128)
                .saturating_mul(bytes_per_el as u128),
            param_bytes: (self.k as u128)
                .saturating_mul(self.k as u128)
                .saturating_mul(self.c_in as u128)
                .saturating_mul(self.c_out as u128)
                .saturating_mul(bytes_per_el as u128),
        }
    }
}

/// 3x3 convolution instances of one UNet traversal. Each residual block is a
/// conv pair; transition convs change channel width entering a stage, the
/// samplers move between stages, and skip concatenation doubles the first
/// up-block input.
fn diffusion_conv_traversal(spec: &DiffusionSpec) -> Vec<ConvInstance> {
    let Some(conv) = &spec.conv else {
        return Vec::new();
    };
    let depth = spec.unet_depth as usize;
    let channels: Vec<u64> = conv
        .channel_mult
        .iter()
        .map(|m| conv.base_channels * m)
        .collect();
    let dims = |n: usize| {
        let d = spec.downsample_factor.pow(n as u32);
        (spec.latent_height / d, spec.latent_width / d)
    };
    let mut instances = Vec::new();
    let mut push = |n: usize, c_in: u64, c_out: u64| {
        let (h, w) = dims(n);
        instances.push(ConvInstance { h, w, k: 3, c_in, c_out });
    };

    for n in 0..depth {
        for block in 0..conv.res_blocks {
            let c_in = if block == 0 && n > 0 { channels[n - 1] } else { channels[n] };
            push(n, c_in, channels[n]);
            push(n, channels[n], channels[n]);
        }
        push(n + 1, channels[n], channels[n]); // downsample
    }
    for block in 0..conv.res_blocks {
        let c_in = if block == 0 && depth > 0 { channels[depth - 1] } else { channels[depth] };
        push(depth, c_in, channels[depth]);
        push(depth, channels[depth], channels[depth]);
    }
    for n in (0..depth).rev() {
        push(n, channels[n + 1], channels[n + 1]); // upsample
        for block in 0..conv.res_blocks {
            let c_in = if block == 0 { channels[n + 1] + channels[n] } else { channels[n] };
            push(n, c_in, channels[n]);
            push(n, channels[n], channels[n]);
        }
    }
    instances
}

/// One dense projection over `tokens` rows: `d_in -> d_out`.
fn proj_cost(tokens: u128, d_in: u128, d_out: u128, bytes_per_el: u8) -> OpCost {
    let bpe = bytes_per_el as u128;
    OpCost {
        flops: 2u128
            .saturating_mul(tokens)
            .saturating_mul(d_in)
            .saturating_mul(d_out),
        bytes_moved: tokens
            .saturating_mul(d_in)
            .saturating_add(tokens.saturating_mul(d_out))
            .saturating_add(d_in.saturating_mul(d_out))
            .saturating_mul(bpe),
        footprint: tokens.saturating_mul(d_out).saturating_mul(bpe),
        param_bytes: d_in.saturating_mul(d_out).saturating_mul(bpe),
    }
}

/// Linear-category work attached to one attention call: Q/K/V/O projections,
/// plus the block feed-forward at self/spatial sites.
fn linear_call_cost(call: &AttentionCall, bytes_per_el: u8) -> OpCost {
    let d = (call.num_heads as u128).saturating_mul(call.head_dim as u128);
    let tokens_q = (call.batch as u128).saturating_mul(call.q_len as u128);
    let tokens_kv = (call.batch as u128).saturating_mul(call.kv_len as u128);
    let mut cost = OpCost::default();
    match call.kind {
        AttnKind::SelfAttn | AttnKind::Spatial => {
            for _ in 0..4 {
                cost.absorb(&proj_cost(tokens_q, d, d, bytes_per_el));
            }
            let hidden = d.saturating_mul(FF_EXPANSION as u128);
            cost.absorb(&proj_cost(tokens_q, d, hidden, bytes_per_el));
            cost.absorb(&proj_cost(tokens_q, hidden, d, bytes_per_el));
        }
        AttnKind::Cross => {
            for _ in 0..2 {
                cost.absorb(&proj_cost(tokens_q, d, d, bytes_per_el));
            }
            for _ in 0..2 {
                cost.absorb(&proj_cost(tokens_kv, d, d, bytes_per_el));
            }
        }
        AttnKind::Temporal => {
            for _ in 0..4 {
                cost.absorb(&proj_cost(tokens_q, d, d, bytes_per_el));
            }
        }
    }
    cost
}

fn without_params(mut cost: OpCost) -> OpCost {
    cost.param_bytes = 0;
    cost
}

fn accumulate_attention_calls(
    breakdown: &mut CostBreakdown,
    calls: &[AttentionCall],
    mode: AttnMode,
    bytes_per_el: u8,
    repeat: u128,
) {
    for call in calls {
        breakdown.add(
            OpCategory::Attention,
            &attn_call_cost(call, mode, bytes_per_el).scaled(repeat),
        );
        breakdown.add(
            OpCategory::Linear,
            &without_params(linear_call_cost(call, bytes_per_el)).scaled(repeat),
        );
    }
}

/// Weight bytes per category, counted once per distinct site rather than per
/// step repetition.
fn add_structural_params(
    breakdown: &mut CostBreakdown,
    traversal_calls: &[AttentionCall],
    conv_instances: &[ConvInstance],
    bytes_per_el: u8,
) {
    let mut linear_params: u128 = 0;
    for call in traversal_calls {
        linear_params = linear_params.saturating_add(linear_call_cost(call, bytes_per_el).param_bytes);
    }
    let mut conv_params: u128 = 0;
    for instance in conv_instances {
        conv_params = conv_params.saturating_add(instance.cost(bytes_per_el).param_bytes);
    }
    breakdown.add(
        OpCategory::Linear,
        &OpCost { param_bytes: linear_params, ..OpCost::default() },
    );
    breakdown.add(
        OpCategory::Convolution,
        &OpCost { param_bytes: conv_params, ..OpCost::default() },
    );
}

fn diffusion_component_cost(
    spec: &DiffusionSpec,
    mode: AttnMode,
    bytes_per_el: u8,
) -> CostBreakdown {
    let mut breakdown = CostBreakdown::new();
    let calls = diffusion_calls(spec, spec.denoising_steps);
    accumulate_attention_calls(&mut breakdown, &calls, mode, bytes_per_el, 1);
    let instances = diffusion_conv_traversal(spec);
    let repeats = spec.denoising_steps as u128 * spec.guidance_multiplier as u128;
    for instance in &instances {
        breakdown.add(
            OpCategory::Convolution,
            &without_params(instance.cost(bytes_per_el)).scaled(repeats),
        );
    }
    add_structural_params(
        &mut breakdown,
        &single_traversal_calls(spec, 0),
        &instances,
        bytes_per_el,
    );
    breakdown
}

fn video_component_cost(spec: &VideoSpec, mode: AttnMode, bytes_per_el: u8) -> CostBreakdown {
    let mut breakdown = CostBreakdown::new();
    let calls = video_calls(spec, spec.base.denoising_steps);
    accumulate_attention_calls(&mut breakdown, &calls, mode, bytes_per_el, 1);
    // Spatial convolutions run once per frame.
    let instances = diffusion_conv_traversal(&spec.base);
    let repeats = spec.base.denoising_steps as u128
        * spec.base.guidance_multiplier as u128
        * spec.num_frames as u128;
    for instance in &instances {
        breakdown.add(
            OpCategory::Convolution,
            &without_params(instance.cost(bytes_per_el)).scaled(repeats),
        );
    }
    add_structural_params(
        &mut breakdown,
        &video_traversal_calls(spec, 0),
        &instances,
        bytes_per_el,
    );
    breakdown
}

fn transformer_component_cost(
    spec: &TransformerSpec,
    mode: AttnMode,
    bytes_per_el: u8,
) -> CostBreakdown {
    let mut breakdown = CostBreakdown::new();
    let calls = transformer_calls(spec);
    let layers = spec.num_layers as u128;
    accumulate_attention_calls(&mut breakdown, &calls, mode, bytes_per_el, layers);
    let d = spec.model_dim as u128;
    let per_layer_params = 4u128
        .saturating_mul(d)
        .saturating_mul(d)
        .saturating_add(2u128.saturating_mul(d).saturating_mul(d.saturating_mul(FF_EXPANSION as u128)))
        .saturating_mul(bytes_per_el as u128);
    breakdown.add(
        OpCategory::Linear,
        &OpCost {
            param_bytes: per_layer_params.saturating_mul(layers),
            ..OpCost::default()
        },
    );
    breakdown
}

fn scale_dim(dim: u64, numerator: u64, denominator: u64) -> Result<u64> {
    let scaled = dim as u128 * numerator as u128;
    if !scaled.is_multiple_of(denominator as u128) {
        return Err(Error::Validation(format!(
            "image scaling {numerator}/{denominator} does not divide latent dim {dim}"
        )));
    }
    u64::try_from(scaled / denominator as u128).map_err(|_| Error::Overflow("scaled latent dim"))
}

fn scale_diffusion(
    spec: &DiffusionSpec,
    h_ratio: (u64, u64),
    w_ratio: (u64, u64),
) -> Result<DiffusionSpec> {
    let mut scaled = spec.clone();
    scaled.latent_height = scale_dim(spec.latent_height, h_ratio.0, h_ratio.1)?;
    scaled.latent_width = scale_dim(spec.latent_width, w_ratio.0, w_ratio.1)?;
    scaled.validate()?;
    Ok(scaled)
}

fn scale_variant(
    variant: &Variant,
    h_ratio: (u64, u64),
    w_ratio: (u64, u64),
) -> Result<Variant> {
    Ok(match variant {
        Variant::Diffusion(d) => Variant::Diffusion(scale_diffusion(d, h_ratio, w_ratio)?),
        Variant::Video(v) => Variant::Video(VideoSpec {
            base: scale_diffusion(&v.base, h_ratio, w_ratio)?,
            ..v.clone()
        }),
        Variant::Transformer(t) => Variant::Transformer(t.clone()),
    })
}

fn variant_cost(variant: &Variant, mode: AttnMode, bytes_per_el: u8) -> CostBreakdown {
    let mut breakdown = match variant {
        Variant::Diffusion(d) => diffusion_component_cost(d, mode, bytes_per_el),
        Variant::Video(v) => video_component_cost(v, mode, bytes_per_el),
        Variant::Transformer(t) => transformer_component_cost(t, mode, bytes_per_el),
    };
    // GroupNorm and other are lump-sum hooks; present with zero cost so
    // measured-vs-modeled comparisons see all five categories.
    breakdown.add(OpCategory::GroupNorm, &OpCost::default());
    breakdown.add(OpCategory::Other, &OpCost::default());
    breakdown
}

/// Per-category cost of a full inference pass. Pipelines sum over their
/// components; `image = None` keeps every component at its native size, and a
/// given image rescales diffusion latents by the image / native ratio
/// (transformer token counts are spec-fixed and unaffected).
pub fn model_cost(
    spec: &ModelSpec,
    image: Option<ImageSize>,
    mode: AttnMode,
) -> Result<CostBreakdown> {
    spec.validate()?;
    let ratios = match (image, spec.native_image_size()) {
        (Some(image), Some(native)) => Some((
            (image.height, native.height),
            (image.width, native.width),
        )),
        _ => None,
    };
    let component_cost = |component: &ModelSpec| -> Result<CostBreakdown> {
        let variant = match ratios {
            Some((h_ratio, w_ratio)) => scale_variant(&component.variant, h_ratio, w_ratio)?,
            None => component.variant.clone(),
        };
        Ok(variant_cost(&variant, mode, component.bytes_per_param))
    };
    if spec.pipeline.is_empty() {
        component_cost(spec)
    } else {
        let mut breakdown = CostBreakdown::new();
        for component in &spec.pipeline {
            breakdown.merge(&component_cost(component)?);
        }
        Ok(breakdown)
    }
}

/// One row of a frames sweep: attention cost split into spatial and temporal
/// contributions over a single UNet traversal.
#[derive(Debug, Clone, Serialize)]
pub struct FrameSweepRow {
    pub frames: u64,
    pub spatial: OpCost,
    pub temporal: OpCost,
}

/// Sweeps the frame count: spatial FLOPs grow linearly in F (frames ride in
/// the batch), temporal FLOPs quadratically (F is the sequence length).
/// Costs cover one UNet traversal at 2 bytes per element.
pub fn temporal_spatial_sweep(spec: &VideoSpec, frames: &[u64]) -> Result<Vec<FrameSweepRow>> {
    spec.validate()?;
    if frames.is_empty() {
        return Err(Error::Domain("frames non-empty".into()));
    }
    if frames.iter().any(|&f| f < 1) {
        return Err(Error::Domain("each frame count ≥ 1".into()));
    }
    let mut rows = Vec::with_capacity(frames.len());
    for &f in frames {
        let swept = VideoSpec { num_frames: f, ..spec.clone() };
        let mut spatial = OpCost::default();
        let mut temporal = OpCost::default();
        for call in video_traversal_calls(&swept, 0) {
            let cost = attn_call_cost(&call, AttnMode::Baseline, 2);
            match call.kind {
                AttnKind::Spatial => spatial.absorb(&cost),
                AttnKind::Temporal => temporal.absorb(&cost),
                _ => {}
            }
        }
        rows.push(FrameSweepRow { frames: f, spatial, temporal });
    }
    Ok(rows)
}

/// Frame count at which temporal attention FLOPs overtake spatial: the ratio
/// of spatial token-squared mass to temporal token mass over one traversal.
/// For a single stage at resolution HxW this is exactly H*W.
pub fn temporal_crossover(spec: &VideoSpec) -> Result<f64> {
    spec.validate()?;
    let base = &spec.base;
    let mut spatial_mass: f64 = 0.0;
    let mut temporal_mass: f64 = 0.0;
    for stage in stage_visits(base.unet_depth) {
        let tokens = base.stage_tokens(stage) as f64;
        let blocks = base.blocks_per_stage as f64;
        if base.self_attn_stages.contains(&stage) {
            spatial_mass += blocks * tokens * tokens;
        }
        if spec.temporal_attn_stages.contains(&stage) {
            temporal_mass += blocks * tokens;
        }
    }
    if temporal_mass == 0.0 {
        return Err(Error::Domain(
            "crossover undefined without temporal attention stages".into(),
        ));
    }
    Ok(spatial_mass / temporal_mass)
}

/// Least-squares slope of y over x. None with fewer than two points or zero
/// x-variance.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut covariance = 0.0;
    let mut variance = 0.0;
    for (x, y) in points {
        covariance += (x - mean_x) * (y - mean_y);
        variance += (x - mean_x) * (x - mean_x);
    }
    if variance == 0.0 {
        return None;
    }
    Some(covariance / variance)
}

/// Fitted log-log slope of cumulative similarity memory versus square latent
/// side length. Exactly 4 when `text_encode = 0`; the sub-leading text term
/// pulls the fit below 4 at small sizes.
pub fn memory_scaling_exponent(spec: &DiffusionSpec, sizes: &[u64]) -> Result<f64> {
    let distinct: std::collections::BTreeSet<u64> = sizes.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateFit(
            "fewer than 2 distinct sizes".into(),
        ));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for &side in sizes {
        let mut sized = spec.clone();
        sized.latent_height = side;
        sized.latent_width = side;
        sized.validate()?;
        let memory = cumulative_sim_memory_with(&sized, 2)?;
        points.push(((side as f64).ln(), (memory as f64).ln()));
    }
    least_squares_slope(&points)
        .ok_or_else(|| Error::DegenerateFit("zero variance in sizes".into()))
}

/// One row of a sweep CSV: per-category cost at one x-axis point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub x: u64,
    pub category: String,
    pub flops: u128,
    pub bytes_moved: u128,
    pub footprint: u128,
}

/// Writes sweep plot data; `extra` appends a constant summary column
/// (fitted exponent or crossover frame count) to every row.
pub fn write_sweep_csv<W: Write>(
    rows: &[SweepRow],
    extra: Option<(&str, &str)>,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["x_value", "category", "flops", "bytes_moved", "footprint"];
    if let Some((name, _)) = extra {
        header.push(name);
    }
    out.write_record(&header)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in rows {
        let mut record = vec![
            row.x.to_string(),
            row.category.clone(),
            row.flops.to_string(),
            row.bytes_moved.to_string(),
            row.footprint.to_string(),
        ];
        if let Some((_, value)) = extra {
            record.push(value.to_string());
        }
        out.write_record(&record)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::{preset, LatentSpace};
    use crate::seqprofile::diffusion_trace;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn fixture(latent: u64, depth: u32, text: u64) -> DiffusionSpec {
        let all: BTreeSet<u32> = (0..=depth).collect();
        DiffusionSpec {
            latent_height: latent,
            latent_width: latent,
            downsample_factor: 2,
            unet_depth: depth,
            text_encode: text,
            denoising_steps: 1,
            self_attn_stages: all.clone(),
            cross_attn_stages: if text > 0 { all } else { BTreeSet::new() },
            blocks_per_stage: 1,
            head_dim: 8,
            num_heads: 4,
            space: LatentSpace::Latent,
            latent_downsample: 8,
            guidance_multiplier: 1,
            conv: None,
        }
    }

    fn call(q: u64, kv: u64, d: u64, heads: u64, batch: u64) -> AttentionCall {
        AttentionCall {
            kind: AttnKind::SelfAttn,
            q_len: q,
            kv_len: kv,
            head_dim: d,
            num_heads: heads,
            batch,
            stage: None,
            step: 0,
        }
    }

    #[test]
    fn sim_matrix_worked_values() {
        assert_eq!(sim_matrix_memory(64, 64, 77, 2).unwrap(), 34_185_216);
        assert_eq!(sim_matrix_memory(1, 1, 0, 2).unwrap(), 2);
        assert_eq!(sim_matrix_memory(8, 8, 77, 2).unwrap(), 18_048);
    }

    #[test]
    fn sim_matrix_rejects_bad_element_size() {
        assert!(sim_matrix_memory(4, 4, 0, 3).is_err());
    }

    #[test]
    fn sim_matrix_overflow_is_an_error() {
        assert!(matches!(
            sim_matrix_memory(u64::MAX, u64::MAX, 0, 4),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn cumulative_worked_value_is_66() {
        // H_L = W_L = 2, d = 2, depth = 1, text = 0:
        // 2 * [2*(4*4) + (1*1)] = 66.
        let spec = fixture(2, 1, 0);
        assert_eq!(cumulative_sim_memory(&spec).unwrap(), 66);
    }

    #[test]
    fn cumulative_at_depth_zero_is_one_sim_matrix() {
        let spec = fixture(16, 0, 77);
        assert_eq!(
            cumulative_sim_memory(&spec).unwrap(),
            sim_matrix_memory(16, 16, 77, 2).unwrap()
        );
    }

    #[test]
    fn cumulative_matches_trace_enumeration_for_preset() {
        let spec = preset("stable-diffusion").unwrap();
        let Variant::Diffusion(d) = &spec.variant else {
            panic!("stable-diffusion is a diffusion preset")
        };
        let trace = diffusion_trace(&{
            let mut one = d.clone();
            one.guidance_multiplier = 1;
            one
        }, 1)
        .unwrap();
        let summed: u128 = trace
            .calls
            .iter()
            .map(|c| {
                call_sim_matrix_bytes(c, 2, FootprintConvention::PerCall).unwrap()
            })
            .sum();
        assert_eq!(cumulative_sim_memory(d).unwrap(), summed);
    }

    #[test]
    fn attn_flops_worked_values() {
        assert_eq!(attn_flops(&call(16, 16, 64, 1, 1)), 65_536);
        assert_eq!(attn_flops(&call(1, 1, 1, 1, 1)), 4);
        assert_eq!(
            attn_flops(&call(16, 16, 64, 1, 2)),
            2 * attn_flops(&call(16, 16, 64, 1, 1))
        );
    }

    #[test]
    fn attn_bytes_worked_values() {
        let unit = call(1, 1, 1, 1, 1);
        assert_eq!(attn_bytes(&unit, AttnMode::Baseline, 2), 14);
        assert_eq!(attn_bytes(&unit, AttnMode::Flash, 2), 8);
    }

    #[test]
    fn baseline_minus_flash_is_sim_traffic() {
        let c = call(33, 65, 16, 3, 2);
        let difference =
            attn_bytes(&c, AttnMode::Baseline, 2) - attn_bytes(&c, AttnMode::Flash, 2);
        assert_eq!(
            difference,
            3 * 2 * (c.batch as u128) * (c.num_heads as u128) * (c.q_len as u128)
                * (c.kv_len as u128)
        );
    }

    #[test]
    fn conv_flops_worked_values() {
        assert_eq!(conv_flops(1, 1, 1, 1, 1), 2);
        assert_eq!(conv_flops(2, 1, 1, 1, 1), 4);
        assert_eq!(conv_flops(64, 64, 3, 320, 320), 7_549_747_200);
    }

    #[test]
    fn attention_only_spec_has_zero_convolution() {
        let spec = ModelSpec {
            spec_version: Some(1),
            name: "attn-only".into(),
            total_params: 1_000,
            bytes_per_param: 2,
            variant: Variant::Diffusion(fixture(16, 1, 0)),
            pipeline: vec![],
            assumed: vec![],
            notes: None,
        };
        let breakdown = model_cost(&spec, None, AttnMode::Baseline).unwrap();
        assert_eq!(breakdown.get(OpCategory::Convolution), OpCost::default());
        assert!(breakdown.get(OpCategory::Attention).flops > 0);
    }

    #[test]
    fn category_flops_scale_with_steps() {
        let spec = preset("stable-diffusion").unwrap();
        let Variant::Diffusion(d) = &spec.variant else { unreachable!() };
        let mut half = d.clone();
        half.denoising_steps = 25;
        let full_cost = diffusion_component_cost(d, AttnMode::Baseline, 2);
        let half_cost = diffusion_component_cost(&half, AttnMode::Baseline, 2);
        for category in OpCategory::ALL {
            assert_eq!(
                full_cost.get(category).flops,
                2 * half_cost.get(category).flops,
                "{category}"
            );
        }
    }

    #[test]
    fn attention_category_matches_trace_sum() {
        let spec = preset("stable-diffusion").unwrap();
        let Variant::Diffusion(d) = &spec.variant else { unreachable!() };
        let breakdown = model_cost(&spec, None, AttnMode::Baseline).unwrap();
        let trace = diffusion_trace(d, d.denoising_steps).unwrap();
        let summed: u128 = trace.calls.iter().map(attn_flops).sum();
        assert_eq!(breakdown.get(OpCategory::Attention).flops, summed);
    }

    #[test]
    fn flash_mode_reduces_attention_bytes_only() {
        let spec = preset("stable-diffusion").unwrap();
        let baseline = model_cost(&spec, None, AttnMode::Baseline).unwrap();
        let flash = model_cost(&spec, None, AttnMode::Flash).unwrap();
        assert!(
            flash.get(OpCategory::Attention).bytes_moved
                < baseline.get(OpCategory::Attention).bytes_moved
        );
        assert_eq!(
            flash.get(OpCategory::Attention).flops,
            baseline.get(OpCategory::Attention).flops
        );
        assert_eq!(
            flash.get(OpCategory::Convolution),
            baseline.get(OpCategory::Convolution)
        );
    }

    fn single_stage_video(side: u64, frames: u64) -> VideoSpec {
        VideoSpec {
            base: DiffusionSpec {
                latent_height: side,
                latent_width: side,
                downsample_factor: 2,
                unet_depth: 0,
                text_encode: 0,
                denoising_steps: 1,
                self_attn_stages: [0].into_iter().collect(),
                cross_attn_stages: BTreeSet::new(),
                blocks_per_stage: 1,
                head_dim: 1,
                num_heads: 1,
                space: LatentSpace::Pixel,
                latent_downsample: 1,
                guidance_multiplier: 1,
                conv: None,
            },
            num_frames: frames,
            temporal_attn_stages: [0].into_iter().collect(),
        }
    }

    #[test]
    fn sweep_crossover_at_f_equals_hw() {
        let spec = single_stage_video(8, 1);
        let rows = temporal_spatial_sweep(&spec, &[63, 64, 65]).unwrap();
        assert!(rows[0].temporal.flops < rows[0].spatial.flops);
        assert_eq!(rows[1].temporal.flops, rows[1].spatial.flops);
        assert!(rows[2].temporal.flops > rows[2].spatial.flops);
        assert_eq!(temporal_crossover(&spec).unwrap(), 64.0);
    }

    #[test]
    fn sweep_single_frame_is_minimal() {
        let spec = single_stage_video(8, 1);
        let rows = temporal_spatial_sweep(&spec, &[1]).unwrap();
        // One temporal call with q = kv = 1: 4 * batch * head_dim FLOPs.
        assert_eq!(rows[0].temporal.flops, 4 * 64);
    }

    #[test]
    fn sweep_slopes_are_quadratic_and_linear() {
        let spec = single_stage_video(8, 1);
        let frames: Vec<u64> = (3..=8).map(|p| 1u64 << p).collect();
        let rows = temporal_spatial_sweep(&spec, &frames).unwrap();
        let temporal: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.frames as f64).ln(), (r.temporal.flops as f64).ln()))
            .collect();
        let spatial: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.frames as f64).ln(), (r.spatial.flops as f64).ln()))
            .collect();
        let temporal_slope = least_squares_slope(&temporal).unwrap();
        let spatial_slope = least_squares_slope(&spatial).unwrap();
        assert!((temporal_slope - 2.0).abs() < 1e-9, "{temporal_slope}");
        assert!((spatial_slope - 1.0).abs() < 1e-9, "{spatial_slope}");
    }

    #[test]
    fn exponent_is_exactly_four_without_text() {
        let spec = fixture(8, 3, 0);
        let slope = memory_scaling_exponent(&spec, &[8, 16, 32, 64]).unwrap();
        assert!((slope - 4.0).abs() < 1e-9, "{slope}");
    }

    #[test]
    fn exponent_with_text_is_below_four_and_rises() {
        let spec = fixture(8, 3, 77);
        let slope = memory_scaling_exponent(&spec, &[8, 16, 32, 64]).unwrap();
        assert!(slope > 3.5 && slope <= 4.0, "{slope}");
        let small = memory_scaling_exponent(&spec, &[8, 16, 32]).unwrap();
        let large = memory_scaling_exponent(&spec, &[16, 32, 64]).unwrap();
        assert!(large > small);
    }

    #[test]
    fn exponent_needs_two_distinct_sizes() {
        let spec = fixture(8, 3, 0);
        assert!(matches!(
            memory_scaling_exponent(&spec, &[8, 8]),
            Err(Error::DegenerateFit(_))
        ));
    }

    proptest! {
        #[test]
        fn sim_matrix_is_quartic_at_zero_text(h in 1u64..64, w in 1u64..64) {
            let small = sim_matrix_memory(h, w, 0, 2).unwrap();
            let large = sim_matrix_memory(2 * h, 2 * w, 0, 2).unwrap();
            prop_assert_eq!(large, 16 * small);
        }

        #[test]
        fn attn_flops_symmetric_and_linear(
            q in 1u64..512,
            kv in 1u64..512,
            d in 1u64..64,
            heads in 1u64..8,
            batch in 1u64..8,
        ) {
            let a = call(q, kv, d, heads, batch);
            let b = call(kv, q, d, heads, batch);
            prop_assert_eq!(attn_flops(&a), attn_flops(&b));
            let doubled_heads = call(q, kv, d, heads * 2, batch);
            prop_assert_eq!(attn_flops(&doubled_heads), 2 * attn_flops(&a));
            let doubled_dim = call(q, kv, d * 2, heads, batch);
            prop_assert_eq!(attn_flops(&doubled_dim), 2 * attn_flops(&a));
        }

        #[test]
        fn flash_strictly_below_baseline(
            q in 1u64..512,
            kv in 1u64..512,
            d in 1u64..64,
            heads in 1u64..8,
            batch in 1u64..8,
        ) {
            let c = call(q, kv, d, heads, batch);
            prop_assert!(
                attn_bytes(&c, AttnMode::Flash, 2) < attn_bytes(&c, AttnMode::Baseline, 2)
            );
        }

        #[test]
        fn crossover_non_decreasing_in_resolution(side_pow in 1u32..5) {
            let small = single_stage_video(1 << side_pow, 1);
            let large = single_stage_video(1 << (side_pow + 1), 1);
            prop_assert!(
                temporal_crossover(&large).unwrap() >= temporal_crossover(&small).unwrap()
            );
        }

        #[test]
        fn breakdown_total_is_category_sum(steps in 1u32..4) {
            let mut d = fixture(16, 2, 7);
            d.denoising_steps = steps;
            d.conv = Some(crate::archspec::ConvConfig {
                base_channels: 8,
                channel_mult: vec![1, 2, 4],
                res_blocks: 2,
            });
            let breakdown = diffusion_component_cost(&d, AttnMode::Baseline, 2);
            let total = breakdown.total();
            let flops: u128 = OpCategory::ALL
                .iter()
                .map(|c| breakdown.get(*c).flops)
                .sum();
            prop_assert_eq!(total.flops, flops);
            let bytes: u128 = OpCategory::ALL
                .iter()
                .map(|c| breakdown.get(*c).bytes_moved)
                .sum();
            prop_assert_eq!(total.bytes_moved, bytes);
        }
    }
}
