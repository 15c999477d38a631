//! Analytical performance models and profiler-trace analysis for multi-modal
//! generative inference (text-to-image diffusion, transformer image
//! generation, text-to-video).
//!
//! The crate predicts sequence-length profiles, FLOP/byte costs, roofline
//! placement, and optimization speedups from declarative architecture specs,
//! and cross-checks the predictions against ingested profiler traces:
//!
//! - [`archspec`]: spec/hardware schemas, validation, built-in presets
//! - [`seqprofile`]: ordered attention-call traces and histograms
//! - [`costmodel`]: FLOP/byte/footprint closed forms and model aggregation
//! - [`roofline`]: intensity metrics, bound classification, Amdahl projection
//! - [`traceparse`]: Chrome trace-event ingestion and kernel attribution

pub mod archspec;
pub mod category;
pub mod costmodel;
pub mod error;
pub mod roofline;
pub mod seqprofile;
pub mod traceparse;

pub use archspec::{HardwareSpec, ImageSize, ModelSpec};
pub use category::OpCategory;
pub use costmodel::{AttnMode, CostBreakdown, OpCost};
pub use error::{Error, Result};
pub use seqprofile::{AttentionCall, SeqLenTrace};
pub use traceparse::{CategoryRules, OperatorBreakdown, TraceEvent};
