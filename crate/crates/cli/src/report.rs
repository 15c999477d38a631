//! Analyze-report assembly and rendering.
//!
//! One `Report` feeds all three output formats. The config echo reproduces
//! the exact validated spec (including its `assumed` field list) so a report
//! is auditable back to its inputs.

use anyhow::{Context, Result};
use genperf_core::archspec::{HardwareSpec, ImageSize, ModelSpec, SPEC_VERSION};
use genperf_core::costmodel::{model_cost, AttnMode, CostBreakdown};
use genperf_core::roofline::{
    amdahl, estimate_time, model_roofline, prefill_decode_classify, write_roofline_csv,
    ModelRoofline, Phase, RooflineRow,
};
use genperf_core::seqprofile::{model_trace, seq_len_histogram, TraceSummary};
use genperf_core::OpCategory;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
pub struct Report {
    pub toolkit_version: String,
    pub spec_version: u32,
    pub model: String,
    pub hardware: HardwareSpec,
    pub image_size: Option<ImageSize>,
    pub mode: AttnMode,
    /// The full resolved spec, echoed for auditability.
    pub config: ModelSpec,
    pub seqlen: SeqlenSection,
    pub cost: CostSection,
    pub roofline: RooflineSection,
    pub census: CensusSection,
    pub amdahl_projections: Vec<AmdahlRow>,
}

#[derive(Serialize)]
pub struct SeqlenSection {
    pub summary: TraceSummary,
    pub histogram: BTreeMap<u64, u64>,
}

#[derive(Serialize)]
pub struct CostSection {
    pub baseline: Vec<CategoryCostRow>,
    pub flash: Vec<CategoryCostRow>,
}

#[derive(Serialize)]
pub struct CategoryCostRow {
    pub category: OpCategory,
    pub flops: u128,
    pub bytes_moved: u128,
    pub footprint: u128,
    pub param_bytes: u128,
    pub est_time_s: f64,
    pub time_fraction: f64,
}

#[derive(Serialize)]
pub struct RooflineSection {
    #[serde(flatten)]
    pub placement: ModelRoofline,
    pub ridge_point: f64,
    /// Peak baseline attention footprint against device memory capacity.
    pub peak_attention_footprint_bytes: u128,
    pub footprint_fits_memory: bool,
}

#[derive(Serialize)]
pub struct CensusSection {
    pub prefill_like: usize,
    pub decode_like: usize,
}

#[derive(Serialize)]
pub struct AmdahlRow {
    /// Module speedup label; "inf" marks the limiting projection.
    pub module_speedup: String,
    pub attention_fraction: f64,
    pub end_to_end: f64,
}

fn cost_rows(breakdown: &CostBreakdown, hw: &HardwareSpec) -> Vec<CategoryCostRow> {
    let times: BTreeMap<OpCategory, f64> = OpCategory::ALL
        .iter()
        .map(|c| (*c, estimate_time(&breakdown.get(*c), hw)))
        .collect();
    let total: f64 = times.values().sum();
    OpCategory::ALL
        .iter()
        .map(|category| {
            let cost = breakdown.get(*category);
            let est_time_s = times[category];
            CategoryCostRow {
                category: *category,
                flops: cost.flops,
                bytes_moved: cost.bytes_moved,
                footprint: cost.footprint,
                param_bytes: cost.param_bytes,
                est_time_s,
                time_fraction: if total > 0.0 { est_time_s / total } else { 0.0 },
            }
        })
        .collect()
}

pub fn build_report(
    spec: &ModelSpec,
    image: Option<ImageSize>,
    steps: Option<u32>,
    hw: &HardwareSpec,
    mode: AttnMode,
) -> Result<Report> {
    let trace = model_trace(spec, image, steps)?;
    let histogram = seq_len_histogram(&trace);
    let baseline = model_cost(spec, image, AttnMode::Baseline)?;
    let flash = model_cost(spec, image, AttnMode::Flash)?;
    let placement = model_roofline(spec, image, hw)?;

    let census = trace
        .calls
        .iter()
        .fold(CensusSection { prefill_like: 0, decode_like: 0 }, |mut census, call| {
            match prefill_decode_classify(call) {
                Phase::PrefillLike => census.prefill_like += 1,
                Phase::DecodeLike => census.decode_like += 1,
            }
            census
        });

    let primary = match mode {
        AttnMode::Baseline => &baseline,
        AttnMode::Flash => &flash,
    };
    let rows = cost_rows(primary, hw);
    let attention_fraction = rows
        .iter()
        .find(|r| r.category == OpCategory::Attention)
        .map(|r| r.time_fraction)
        .unwrap_or(0.0);
    let mut amdahl_projections = Vec::new();
    for speedup in [1.5, 2.0, 4.0, f64::INFINITY] {
        let projection = amdahl(attention_fraction, speedup)?;
        amdahl_projections.push(AmdahlRow {
            module_speedup: if speedup.is_finite() {
                format!("{speedup}")
            } else {
                "inf".to_string()
            },
            attention_fraction,
            end_to_end: projection.end_to_end,
        });
    }

    let peak_attention_footprint = baseline.get(OpCategory::Attention).footprint;
    Ok(Report {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        spec_version: SPEC_VERSION,
        model: spec.name.clone(),
        hardware: hw.clone(),
        image_size: image.or_else(|| spec.native_image_size()),
        mode,
        config: spec.clone(),
        seqlen: SeqlenSection { summary: trace.summary(), histogram },
        cost: CostSection {
            baseline: cost_rows(&baseline, hw),
            flash: cost_rows(&flash, hw),
        },
        roofline: RooflineSection {
            placement,
            ridge_point: hw.ridge_point(),
            peak_attention_footprint_bytes: peak_attention_footprint,
            footprint_fits_memory: (peak_attention_footprint as f64) <= hw.mem_capacity,
        },
        census,
        amdahl_projections,
    })
}

fn push_cost_table(out: &mut String, label: &str, rows: &[CategoryCostRow]) {
    let _ = writeln!(out, "[cost breakdown — {label}]");
    let _ = writeln!(
        out,
        "{:<12} {:>20} {:>20} {:>16} {:>16} {:>12} {:>9}",
        "category", "flops", "bytes_moved", "footprint", "param_bytes", "est_time_s", "fraction"
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>20} {:>20} {:>16} {:>16} {:>12.6e} {:>9.4}",
            row.category.to_string(),
            row.flops,
            row.bytes_moved,
            row.footprint,
            row.param_bytes,
            row.est_time_s,
            row.time_fraction
        );
    }
}

pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "genperf analyze report");
    let _ = writeln!(
        out,
        "toolkit_version: {}  spec_version: {}",
        report.toolkit_version, report.spec_version
    );
    let _ = writeln!(
        out,
        "model: {}  hardware: {}{}  mode: {}",
        report.model,
        report.hardware.name,
        if report.hardware.assumed { " (assumed)" } else { "" },
        report.mode.label(),
    );
    if let Some(image) = report.image_size {
        let _ = writeln!(out, "image size: {image}");
    }

    let _ = writeln!(out, "\n[config]");
    let _ = writeln!(out, "{}", report.config.to_json_pretty());

    let summary = &report.seqlen.summary;
    let _ = writeln!(out, "[sequence-length profile]");
    let _ = writeln!(
        out,
        "calls: {}  q_len: {}..{}  whole-trace ratio: {:.2}x  adjacent-stage ratio: {:.2}x",
        summary.num_calls,
        summary.min_q_len,
        summary.max_q_len,
        summary.whole_trace_ratio,
        summary.adjacent_stage_ratio
    );
    let histogram: Vec<String> = report
        .seqlen
        .histogram
        .iter()
        .map(|(q, n)| format!("{q}:{n}"))
        .collect();
    let _ = writeln!(out, "q_len histogram: {}", histogram.join(" "));

    let _ = writeln!(out);
    push_cost_table(&mut out, "baseline", &report.cost.baseline);
    let _ = writeln!(out);
    push_cost_table(&mut out, "flash", &report.cost.flash);

    let roofline = &report.roofline;
    let _ = writeln!(out, "\n[roofline]");
    let _ = writeln!(
        out,
        "capacity intensity (FLOPs / param bytes): {:.2} FLOP/B",
        roofline.placement.capacity_intensity
    );
    let _ = writeln!(
        out,
        "operating intensity (FLOPs / streamed param bytes): {:.2} FLOP/B",
        roofline.placement.operating_intensity
    );
    let _ = writeln!(
        out,
        "ridge point: {:.2} FLOP/B  bound: {}  attainable: {:.4e} FLOP/s",
        roofline.ridge_point,
        roofline.placement.point.bound,
        roofline.placement.point.attainable_flops
    );
    let _ = writeln!(
        out,
        "peak attention footprint: {} B ({})",
        roofline.peak_attention_footprint_bytes,
        if roofline.footprint_fits_memory { "fits device memory" } else { "EXCEEDS device memory" }
    );

    let _ = writeln!(out, "\n[prefill/decode census]");
    let _ = writeln!(
        out,
        "prefill-like: {}  decode-like: {}",
        report.census.prefill_like, report.census.decode_like
    );

    let _ = writeln!(out, "\n[amdahl projections for attention speedup]");
    let _ = writeln!(out, "{:<16} {:>10} {:>12}", "module_speedup", "fraction", "end_to_end");
    for row in &report.amdahl_projections {
        let _ = writeln!(
            out,
            "{:<16} {:>10.4} {:>12.4}",
            row.module_speedup, row.attention_fraction, row.end_to_end
        );
    }
    out
}

/// CSV bundle: `<stem>.breakdown.csv`, `<stem>.roofline.csv`,
/// `<stem>.census.csv`, `<stem>.amdahl.csv`.
pub fn write_csv_bundle(report: &Report, out: &Path) -> Result<()> {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .context("--out needs a file name")?;
    let named = |suffix: &str| out.with_file_name(format!("{stem}.{suffix}.csv"));

    let breakdown_path = named("breakdown");
    let mut w = csv::Writer::from_path(&breakdown_path)?;
    w.write_record([
        "mode",
        "category",
        "flops",
        "bytes_moved",
        "footprint",
        "param_bytes",
        "est_time_s",
        "time_fraction",
    ])?;
    for (mode, rows) in [("baseline", &report.cost.baseline), ("flash", &report.cost.flash)] {
        for row in rows {
            w.write_record([
                mode.to_string(),
                row.category.to_string(),
                row.flops.to_string(),
                row.bytes_moved.to_string(),
                row.footprint.to_string(),
                row.param_bytes.to_string(),
                row.est_time_s.to_string(),
                row.time_fraction.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let roofline_path = named("roofline");
    let file = std::fs::File::create(&roofline_path)?;
    write_roofline_csv(
        &[RooflineRow {
            model: report.model.clone(),
            arithmetic_intensity: report.roofline.placement.capacity_intensity,
            operating_intensity: report.roofline.placement.operating_intensity,
            attainable_flops: report.roofline.placement.point.attainable_flops,
            bound: report.roofline.placement.point.bound,
        }],
        file,
    )?;

    let census_path = named("census");
    let mut w = csv::Writer::from_path(&census_path)?;
    w.write_record(["phase", "calls"])?;
    w.write_record(["prefill-like", &report.census.prefill_like.to_string()])?;
    w.write_record(["decode-like", &report.census.decode_like.to_string()])?;
    w.flush()?;

    let amdahl_path = named("amdahl");
    let mut w = csv::Writer::from_path(&amdahl_path)?;
    w.write_record(["module_speedup", "attention_fraction", "end_to_end"])?;
    for row in &report.amdahl_projections {
        w.write_record([
            row.module_speedup.clone(),
            row.attention_fraction.to_string(),
            row.end_to_end.to_string(),
        ])?;
    }
    w.flush()?;

    println!(
        "wrote {:?}, {:?}, {:?}, {:?}",
        breakdown_path, roofline_path, census_path, amdahl_path
    );
    Ok(())
}
