//! Architecture and hardware descriptions.
//!
//! Model specs are declarative JSON documents (`spec_version: 1`) describing a
//! generative pipeline: a diffusion UNet, a transformer decoder, or a video
//! extension of a UNet, optionally composed into a multi-component pipeline
//! (text encoder, base model, super-resolution stages, decoder). Built-in
//! presets mirror a small suite of published text-to-image/video models; every
//! field a preset fills beyond its published source is listed in the spec's
//! `assumed` set so reports can distinguish given from assumed values.

use crate::error::{json_parse_error, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Environment variable that overrides the embedded preset directory.
pub const PRESET_DIR_ENV: &str = "GENPERF_PRESET_DIR";

/// Schema version accepted by `load_spec`.
pub const SPEC_VERSION: u32 = 1;

/// Output image size in pixels (height x width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: u64,
    pub width: u64,
}

impl ImageSize {
    pub fn new(height: u64, width: u64) -> Result<Self> {
        if height < 1 {
            return Err(Error::Validation("height ≥ 1".into()));
        }
        if width < 1 {
            return Err(Error::Validation("width ≥ 1".into()));
        }
        Ok(ImageSize { height, width })
    }

    pub fn square(side: u64) -> Result<Self> {
        ImageSize::new(side, side)
    }
}

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl FromStr for ImageSize {
    type Err = Error;

    /// Parses the CLI form `HxW`, e.g. `512x512`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Domain(format!("image size `{s}` is not of the form HxW")))?;
        let height: u64 = h
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("image size height `{h}` is not an integer")))?;
        let width: u64 = w
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("image size width `{w}` is not an integer")))?;
        ImageSize::new(height, width)
    }
}

/// Whether the UNet denoises raw pixels or a compressed latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    Pixel,
    Latent,
}

/// Convolutional structure of a UNet, used for the convolution cost category.
///
/// Channel counts at stage `n` are `base_channels * channel_mult[n]`;
/// `channel_mult` must have one entry per stage including the bottleneck.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub base_channels: u64,
    pub channel_mult: Vec<u64>,
    pub res_blocks: u32,
}

/// Diffusion UNet description.
///
/// Stage indexing: `n = 0` is the full-resolution latent stage and
/// `n = unet_depth` is the bottleneck. A stage-`n` latent holds
/// `latent_height * latent_width / downsample_factor^(2n)` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub latent_height: u64,
    pub latent_width: u64,
    pub downsample_factor: u64,
    pub unet_depth: u32,
    pub text_encode: u64,
    pub denoising_steps: u32,
    pub self_attn_stages: BTreeSet<u32>,
    pub cross_attn_stages: BTreeSet<u32>,
    /// Attention block pairs (self + cross) per stage visit.
    #[serde(default = "default_one_u32")]
    pub blocks_per_stage: u32,
    pub head_dim: u64,
    pub num_heads: u64,
    pub space: LatentSpace,
    /// Linear ratio image side / latent side (1 for pixel-space models).
    #[serde(default = "default_one_u64")]
    pub latent_downsample: u64,
    /// UNet evaluations per denoising step (2 models classifier-free guidance).
    #[serde(default = "default_one_u32")]
    pub guidance_multiplier: u32,
    /// Convolution structure; absent means no convolution cost is modeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
}

fn default_one_u32() -> u32 {
    1
}

fn default_one_u64() -> u64 {
    1
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_height < 1 || self.latent_width < 1 {
            return Err(Error::Validation("latent dims ≥ 1".into()));
        }
        if self.downsample_factor < 1 {
            return Err(Error::Validation("downsample_factor ≥ 1".into()));
        }
        if self.denoising_steps < 1 {
            return Err(Error::Validation("denoising_steps ≥ 1".into()));
        }
        if self.blocks_per_stage < 1 {
            return Err(Error::Validation("blocks_per_stage ≥ 1".into()));
        }
        if self.guidance_multiplier < 1 {
            return Err(Error::Validation("guidance_multiplier ≥ 1".into()));
        }
        if self.head_dim < 1 || self.num_heads < 1 {
            return Err(Error::Validation("head_dim and num_heads ≥ 1".into()));
        }
        if self.latent_downsample < 1 {
            return Err(Error::Validation("latent_downsample ≥ 1".into()));
        }
        for &stage in self.self_attn_stages.iter().chain(&self.cross_attn_stages) {
            if stage > self.unet_depth {
                return Err(Error::Validation(
                    "every stage index in attn-stage sets is ≤ unet_depth".into(),
                ));
            }
        }
        let full = self
            .downsample_factor
            .checked_pow(self.unet_depth)
            .ok_or(Error::Overflow("downsample_factor^unet_depth"))?;
        if !self.latent_height.is_multiple_of(full) || !self.latent_width.is_multiple_of(full) {
            return Err(Error::Validation(
                "latent dims divisible by downsample_factor^unet_depth".into(),
            ));
        }
        if !self.cross_attn_stages.is_empty() && self.text_encode < 1 {
            return Err(Error::Validation(
                "text_encode ≥ 1 when cross-attention stages are present".into(),
            ));
        }
        if let Some(conv) = &self.conv {
            if conv.base_channels < 1 {
                return Err(Error::Validation("conv.base_channels ≥ 1".into()));
            }
            if conv.res_blocks < 1 {
                return Err(Error::Validation("conv.res_blocks ≥ 1".into()));
            }
            if conv.channel_mult.len() != self.unet_depth as usize + 1 {
                return Err(Error::Validation(
                    "conv.channel_mult length = unet_depth + 1".into(),
                ));
            }
            if conv.channel_mult.iter().any(|&m| m < 1) {
                return Err(Error::Validation("conv.channel_mult entries ≥ 1".into()));
            }
        }
        Ok(())
    }

    /// Tokens in the stage-`n` latent: `H_L * W_L / d^(2n)`.
    pub fn stage_tokens(&self, stage: u32) -> u64 {
        let d = self.downsample_factor.pow(stage);
        (self.latent_height / d) * (self.latent_width / d)
    }

    /// Native output image size implied by the latent dims and downsample ratio.
    pub fn native_image_size(&self) -> ImageSize {
        ImageSize {
            height: self.latent_height * self.latent_downsample,
            width: self.latent_width * self.latent_downsample,
        }
    }

    /// Rescales the latent so the model produces `image` instead of its native size.
    pub fn at_image_size(&self, image: ImageSize) -> Result<DiffusionSpec> {
        if !image.height.is_multiple_of(self.latent_downsample) || !image.width.is_multiple_of(self.latent_downsample)
        {
            return Err(Error::Validation(format!(
                "image size {image} not divisible by latent_downsample {}",
                self.latent_downsample
            )));
        }
        let mut scaled = self.clone();
        scaled.latent_height = image.height / self.latent_downsample;
        scaled.latent_width = image.width / self.latent_downsample;
        scaled.validate()?;
        Ok(scaled)
    }
}

/// How a transformer produces image tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Autoregressive,
    Parallel,
}

/// Transformer decoder description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub num_layers: u32,
    pub model_dim: u64,
    pub num_heads: u64,
    pub prompt_len: u64,
    pub gen_tokens: u64,
    pub decode_mode: DecodeMode,
    #[serde(default = "default_one_u32")]
    pub parallel_steps: u32,
}

impl TransformerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::Validation("num_layers ≥ 1".into()));
        }
        if self.model_dim < 1 {
            return Err(Error::Validation("model_dim ≥ 1".into()));
        }
        if self.num_heads < 1 {
            return Err(Error::Validation("num_heads ≥ 1".into()));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Validation("model_dim divisible by num_heads".into()));
        }
        if self.prompt_len < 1 {
            return Err(Error::Validation("prompt_len ≥ 1".into()));
        }
        if self.gen_tokens < 1 {
            return Err(Error::Validation("gen_tokens ≥ 1".into()));
        }
        if self.parallel_steps < 1 {
            return Err(Error::Validation("parallel_steps ≥ 1".into()));
        }
        Ok(())
    }

    /// Channels per attention head.
    pub fn head_dim(&self) -> u64 {
        self.model_dim / self.num_heads
    }
}

/// Video diffusion description: a UNet plus temporal attention stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub base: DiffusionSpec,
    pub num_frames: u64,
    pub temporal_attn_stages: BTreeSet<u32>,
}

impl VideoSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.num_frames < 1 {
            return Err(Error::Validation("num_frames ≥ 1".into()));
        }
        for &stage in &self.temporal_attn_stages {
            if stage > self.base.unet_depth {
                return Err(Error::Validation(
                    "every stage index in attn-stage sets is ≤ unet_depth".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Generative computation performed by one model component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Diffusion(DiffusionSpec),
    Transformer(TransformerSpec),
    Video(VideoSpec),
}

impl Variant {
    pub fn validate(&self) -> Result<()> {
        match self {
            Variant::Diffusion(d) => d.validate(),
            Variant::Transformer(t) => t.validate(),
            Variant::Video(v) => v.validate(),
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            Variant::Diffusion(_) => "diffusion",
            Variant::Transformer(_) => "transformer",
            Variant::Video(_) => "video",
        }
    }

    /// Native image size for diffusion/video variants; transformers have none.
    pub fn native_image_size(&self) -> Option<ImageSize> {
        match self {
            Variant::Diffusion(d) => Some(d.native_image_size()),
            Variant::Video(v) => Some(v.base.native_image_size()),
            Variant::Transformer(_) => None,
        }
    }
}

/// Declarative description of a generative pipeline.
///
/// `variant` is the base generative component. A non-empty `pipeline` lists
/// *all* components strung together at inference (text encoder, base model,
/// super-resolution stages, decoder) in execution order; cost aggregation then
/// sums over the pipeline, while sequence-length tracing follows `variant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Required at the top level of a spec document; optional on nested entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_version: Option<u32>,
    pub name: String,
    pub total_params: u64,
    #[serde(default = "default_bytes_per_param")]
    pub bytes_per_param: u8,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pipeline: Vec<ModelSpec>,
    /// Field paths filled by documented assumptions rather than published data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

fn default_bytes_per_param() -> u8 {
    2
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Validation("name non-empty".into()));
        }
        if self.total_params < 1 {
            return Err(Error::Validation("total_params ≥ 1".into()));
        }
        if ![1, 2, 4].contains(&self.bytes_per_param) {
            return Err(Error::Validation("bytes_per_param ∈ {1, 2, 4}".into()));
        }
        self.variant.validate()?;
        for component in &self.pipeline {
            component.validate()?;
        }
        Ok(())
    }

    /// Bytes of model capacity: `total_params * bytes_per_param`.
    pub fn param_bytes(&self) -> u128 {
        self.total_params as u128 * self.bytes_per_param as u128
    }

    pub fn native_image_size(&self) -> Option<ImageSize> {
        self.variant.native_image_size()
    }

    pub fn from_json_str(input: &str) -> Result<ModelSpec> {
        serde_json::from_str(input).map_err(|e| json_parse_error(input, &e))
    }

    pub fn to_json_pretty(&self) -> String {
        let mut doc = self.clone();
        if doc.spec_version.is_none() {
            doc.spec_version = Some(SPEC_VERSION);
        }
        serde_json::to_string_pretty(&doc).expect("model spec serializes")
    }
}

/// Accelerator description used for roofline placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub name: String,
    /// Peak compute rate in FLOP/s.
    pub peak_flops: f64,
    /// Main-memory bandwidth in bytes/s.
    pub mem_bandwidth: f64,
    /// Memory capacity in bytes.
    pub mem_capacity: f64,
    /// True when the numbers are configuration assumptions, not vendor data.
    #[serde(default)]
    pub assumed: bool,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<()> {
        for (value, field) in [
            (self.peak_flops, "peak_flops"),
            (self.mem_bandwidth, "mem_bandwidth"),
            (self.mem_capacity, "mem_capacity"),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Validation(format!("{field} strictly positive")));
            }
        }
        Ok(())
    }

    /// Arithmetic intensity at which the roofline transitions to compute-bound.
    pub fn ridge_point(&self) -> f64 {
        self.peak_flops / self.mem_bandwidth
    }

    pub fn from_json_str(input: &str) -> Result<HardwareSpec> {
        let hw: HardwareSpec =
            serde_json::from_str(input).map_err(|e| json_parse_error(input, &e))?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<HardwareSpec> {
        HardwareSpec::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Default A100-like accelerator; numeric values are assumptions.
    pub fn a100_like() -> HardwareSpec {
        HardwareSpec::from_json_str(include_str!("../presets/a100-like.hw.json"))
            .expect("embedded hardware spec is valid")
    }
}

/// Loads and validates a model spec document from a file.
pub fn load_spec(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let input = std::fs::read_to_string(path)?;
    load_spec_str(&input)
}

/// Loads and validates a model spec document from a string.
pub fn load_spec_str(input: &str) -> Result<ModelSpec> {
    let spec = ModelSpec::from_json_str(input)?;
    match spec.spec_version {
        Some(SPEC_VERSION) => {}
        Some(other) => {
            return Err(Error::Validation(format!(
                "unsupported spec_version {other}; expected {SPEC_VERSION}"
            )))
        }
        None => {
            return Err(Error::Validation(
                "spec_version: 1 required at top level".into(),
            ))
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes a spec document, filling in `spec_version` if absent.
pub fn write_spec(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, spec.to_json_pretty())?;
    Ok(())
}

const PRESETS: &[(&str, &str)] = &[
    ("imagen", include_str!("../presets/imagen.json")),
    (
        "stable-diffusion",
        include_str!("../presets/stable-diffusion.json"),
    ),
    ("muse", include_str!("../presets/muse.json")),
    ("parti", include_str!("../presets/parti.json")),
    (
        "make-a-video-like",
        include_str!("../presets/make-a-video-like.json"),
    ),
    ("phenaki-like", include_str!("../presets/phenaki-like.json")),
    ("llama-like", include_str!("../presets/llama-like.json")),
];

/// Names of the built-in presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(name, _)| *name).collect()
}

/// Returns the named built-in model spec.
///
/// When `GENPERF_PRESET_DIR` is set and `<dir>/<name>.json` exists, that file
/// overrides the embedded preset.
pub fn preset(name: &str) -> Result<ModelSpec> {
    if let Ok(dir) = std::env::var(PRESET_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{name}.json"));
        if candidate.is_file() {
            return load_spec(candidate);
        }
    }
    let embedded = PRESETS
        .iter()
        .find(|(preset_name, _)| *preset_name == name)
        .map(|(_, body)| *body)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    load_spec_str(embedded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_diffusion() -> DiffusionSpec {
        DiffusionSpec {
            latent_height: 64,
            latent_width: 64,
            downsample_factor: 2,
            unet_depth: 3,
            text_encode: 77,
            denoising_steps: 50,
            self_attn_stages: (0..=3).collect(),
            cross_attn_stages: (0..=3).collect(),
            blocks_per_stage: 1,
            head_dim: 8,
            num_heads: 96,
            space: LatentSpace::Latent,
            latent_downsample: 8,
            guidance_multiplier: 1,
            conv: None,
        }
    }

    #[test]
    fn spec_file_round_trips() {
        let spec = ModelSpec {
            spec_version: Some(1),
            name: "test".into(),
            total_params: 1_000_000,
            bytes_per_param: 2,
            variant: Variant::Diffusion(small_diffusion()),
            pipeline: vec![],
            assumed: vec!["variant.num_heads".into()],
            notes: None,
        };
        let loaded = load_spec_str(&spec.to_json_pretty()).unwrap();
        assert_eq!(loaded, spec);
        match &loaded.variant {
            Variant::Diffusion(d) => {
                assert_eq!(d.latent_height, 64);
                assert_eq!(d.downsample_factor, 2);
                assert_eq!(d.unet_depth, 3);
                assert_eq!(d.text_encode, 77);
            }
            other => panic!("expected diffusion variant, got {other:?}"),
        }
    }

    #[test]
    fn zero_downsample_factor_names_invariant() {
        let mut d = small_diffusion();
        d.downsample_factor = 0;
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("downsample_factor ≥ 1"), "{err}");
    }

    #[test]
    fn indivisible_latent_rejected() {
        let mut d = small_diffusion();
        d.latent_height = 60;
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn stage_out_of_range_rejected() {
        let mut d = small_diffusion();
        d.self_attn_stages.insert(9);
        assert!(d.validate().is_err());
    }

    #[test]
    fn cross_attention_requires_text() {
        let mut d = small_diffusion();
        d.text_encode = 0;
        assert!(d.validate().is_err());
        d.cross_attn_stages.clear();
        d.validate().unwrap();
    }

    #[test]
    fn spec_version_required_at_top_level() {
        let spec = ModelSpec {
            spec_version: None,
            name: "v".into(),
            total_params: 10,
            bytes_per_param: 2,
            variant: Variant::Diffusion(small_diffusion()),
            pipeline: vec![],
            assumed: vec![],
            notes: None,
        };
        let body = serde_json::to_string(&spec).unwrap();
        let err = load_spec_str(&body).unwrap_err();
        assert!(err.to_string().contains("spec_version"), "{err}");
    }

    #[test]
    fn every_preset_passes_validation() {
        for name in preset_names() {
            let spec = preset(name).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            spec.validate().unwrap();
            assert_eq!(spec.spec_version, Some(SPEC_VERSION));
        }
    }

    #[test]
    fn stable_diffusion_preset_matches_published_shape() {
        let spec = preset("stable-diffusion").unwrap();
        assert_eq!(spec.total_params, 1_450_000_000);
        match &spec.variant {
            Variant::Diffusion(d) => {
                assert_eq!(d.space, LatentSpace::Latent);
                assert_eq!(d.native_image_size(), ImageSize { height: 512, width: 512 });
            }
            other => panic!("expected diffusion, got {other:?}"),
        }
    }

    #[test]
    fn parti_preset_matches_published_shape() {
        let spec = preset("parti").unwrap();
        assert_eq!(spec.total_params, 20_000_000_000);
        match &spec.variant {
            Variant::Transformer(t) => {
                assert_eq!(t.num_layers, 80);
                assert_eq!(t.model_dim, 4096);
                assert_eq!(t.decode_mode, DecodeMode::Autoregressive);
            }
            other => panic!("expected transformer, got {other:?}"),
        }
    }

    #[test]
    fn muse_preset_matches_published_shape() {
        let spec = preset("muse").unwrap();
        assert_eq!(spec.total_params, 3_000_000_000);
        match &spec.variant {
            Variant::Transformer(t) => {
                assert_eq!(t.num_layers, 48);
                assert_eq!(t.model_dim, 2048);
                assert_eq!(t.decode_mode, DecodeMode::Parallel);
            }
            other => panic!("expected transformer, got {other:?}"),
        }
    }

    #[test]
    fn imagen_preset_is_a_pipeline_with_super_resolution() {
        let spec = preset("imagen").unwrap();
        assert_eq!(spec.pipeline.len(), 4);
        assert!(matches!(spec.pipeline[0].variant, Variant::Transformer(_)));
        assert!(matches!(spec.pipeline[1].variant, Variant::Diffusion(_)));
        assert!(matches!(spec.pipeline[2].variant, Variant::Diffusion(_)));
        assert!(matches!(spec.pipeline[3].variant, Variant::Diffusion(_)));
        let sum: u64 = spec.pipeline.iter().map(|c| c.total_params).sum();
        assert_eq!(sum, spec.total_params);
    }

    #[test]
    fn latent_presets_are_image_size_consistent() {
        for name in preset_names() {
            let spec = preset(name).unwrap();
            if let Variant::Diffusion(d) = &spec.variant {
                let native = d.native_image_size();
                assert_eq!(d.latent_downsample * d.latent_height, native.height);
                assert_eq!(d.latent_downsample * d.latent_width, native.width);
            }
        }
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn image_size_parses_and_rejects() {
        let parsed: ImageSize = "512x768".parse().unwrap();
        assert_eq!(parsed, ImageSize { height: 512, width: 768 });
        assert!("512".parse::<ImageSize>().is_err());
        assert!("0x8".parse::<ImageSize>().is_err());
    }

    #[test]
    fn at_image_size_rescales_latent() {
        let d = small_diffusion();
        let scaled = d.at_image_size(ImageSize::square(1024).unwrap()).unwrap();
        assert_eq!(scaled.latent_height, 128);
        assert!(d.at_image_size(ImageSize::square(100).unwrap()).is_err());
    }
}
