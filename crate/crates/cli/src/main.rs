//! genperf: analytical performance models and profiler-trace analysis for
//! generative image/video inference.

mod report;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use genperf_core::archspec::{self, HardwareSpec, ImageSize, ModelSpec, Variant};
use genperf_core::costmodel::{
    least_squares_slope, memory_scaling_exponent, model_cost, temporal_crossover,
    temporal_spatial_sweep, write_sweep_csv, AttnMode, SweepRow,
};
use genperf_core::roofline::{amdahl, amdahl_feasibility};
use genperf_core::seqprofile::{model_trace, seq_len_histogram, write_histogram_csv};
use genperf_core::traceparse::{
    attention_speedup_from_traces, compare_breakdown, link_kernels, parse_trace, CategoryRules,
    OperatorBreakdown,
};
use genperf_core::OpCategory;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "genperf",
    version,
    about = "Performance models and trace analysis for generative image/video inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the sequence-length trace and histogram of a model as CSV.
    Seqlen(SeqlenArgs),
    /// Full report: cost breakdown, roofline point, prefill/decode census,
    /// and Amdahl projections.
    Analyze(AnalyzeArgs),
    /// Sweep image size, frame count, or latent size and emit per-point costs.
    Sweep(SweepArgs),
    /// Ingest a profiler trace and emit the measured operator breakdown.
    Trace(TraceArgs),
    /// Compare a measured operator breakdown against the cost model.
    Compare(CompareArgs),
    /// Amdahl projection or feasibility audit for an attention speedup.
    Amdahl(AmdahlArgs),
}

#[derive(Args)]
struct SpecArg {
    /// Model spec file, or `preset:<name>` for a built-in.
    #[arg(long)]
    spec: String,
    /// Output image size `HxW`; defaults to the spec's native size.
    #[arg(long)]
    image_size: Option<String>,
    /// Denoising-step override for diffusion/video models.
    #[arg(long)]
    steps: Option<u32>,
    /// Frame-count override for video models.
    #[arg(long)]
    frames: Option<u64>,
}

impl SpecArg {
    fn resolve(&self) -> Result<(ModelSpec, Option<ImageSize>)> {
        let mut spec = if let Some(name) = self.spec.strip_prefix("preset:") {
            archspec::preset(name)?
        } else {
            archspec::load_spec(&self.spec)
                .with_context(|| format!("loading spec `{}`", self.spec))?
        };
        if let Some(frames) = self.frames {
            match &mut spec.variant {
                Variant::Video(video) => video.num_frames = frames,
                _ => bail!("--frames applies only to video specs; `{}` is not one", spec.name),
            }
            spec.validate()?;
        }
        let image = self
            .image_size
            .as_deref()
            .map(str::parse::<ImageSize>)
            .transpose()?;
        Ok((spec, image))
    }
}

#[derive(Args)]
struct SeqlenArgs {
    #[command(flatten)]
    spec: SpecArg,
    /// Trace CSV path; the histogram lands next to it as `<stem>.histogram.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    spec: SpecArg,
    /// Hardware spec file; defaults to the embedded A100-like spec.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Attention traffic model driving the primary breakdown.
    #[arg(long, default_value = "baseline")]
    mode: String,
    /// Output path; stdout when omitted (table and doc formats only).
    #[arg(long)]
    out: Option<PathBuf>,
    /// table, csv, or doc (JSON mirror of every section).
    #[arg(long, default_value = "table")]
    format: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    spec: SpecArg,
    /// image-size, frames, or latent.
    #[arg(long)]
    axis: String,
    /// Sweep points: `a,b,c`, `lo..hi` (doubling), or `lo..hi:xK`.
    #[arg(long)]
    range: String,
    #[arg(long, default_value = "baseline")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    /// Chrome trace-event file (bare array or `traceEvents` object).
    #[arg(long)]
    trace: PathBuf,
    /// Category rules file; defaults to the embedded rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// A second trace of the same model with optimized attention; prints
    /// module and end-to-end speedups plus an Amdahl consistency check.
    #[arg(long)]
    optimized: Option<PathBuf>,
    /// Breakdown CSV path; stdout table when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    spec: SpecArg,
    #[arg(long)]
    hw: Option<PathBuf>,
    #[arg(long, default_value = "baseline")]
    mode: String,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Comparison CSV path; stdout table when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AmdahlArgs {
    /// Fraction of execution time in the optimized module (0..=1).
    #[arg(long)]
    fraction: f64,
    /// Module speedup; projects the end-to-end speedup.
    #[arg(long)]
    speedup: Option<f64>,
    /// Claimed end-to-end speedup; audits feasibility against 1/(1-fraction).
    #[arg(long)]
    end_to_end: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Seqlen(args) => cmd_seqlen(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Amdahl(args) => cmd_amdahl(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_hardware(path: &Option<PathBuf>) -> Result<HardwareSpec> {
    Ok(match path {
        Some(path) => {
            HardwareSpec::load(path).with_context(|| format!("loading hardware spec {path:?}"))?
        }
        None => HardwareSpec::a100_like(),
    })
}

fn load_rules(path: &Option<PathBuf>) -> Result<CategoryRules> {
    Ok(match path {
        Some(path) => {
            CategoryRules::load(path).with_context(|| format!("loading rules {path:?}"))?
        }
        None => CategoryRules::default(),
    })
}

fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let extension = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{suffix}.{extension}"))
}

fn cmd_seqlen(args: SeqlenArgs) -> Result<()> {
    let (spec, image) = args.spec.resolve()?;
    let trace = model_trace(&spec, image, args.spec.steps)?;
    let histogram = seq_len_histogram(&trace);

    let trace_file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {:?}", args.out))?;
    trace.write_csv(trace_file)?;
    let histogram_path = sibling_with_suffix(&args.out, "histogram");
    let histogram_file = std::fs::File::create(&histogram_path)
        .with_context(|| format!("creating {histogram_path:?}"))?;
    write_histogram_csv(&histogram, histogram_file)?;

    let summary = trace.summary();
    println!(
        "{}: {} attention calls, q_len {}..{} (whole-trace ratio {:.1}x, adjacent-stage ratio {:.1}x)",
        trace.model_name,
        summary.num_calls,
        summary.min_q_len,
        summary.max_q_len,
        summary.whole_trace_ratio,
        summary.adjacent_stage_ratio,
    );
    println!("wrote {:?} and {:?}", args.out, histogram_path);
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let (spec, image) = args.spec.resolve()?;
    let hw = load_hardware(&args.hw)?;
    let mode: AttnMode = args.mode.parse()?;
    let doc = report::build_report(&spec, image, args.spec.steps, &hw, mode)?;
    match args.format.as_str() {
        "table" => {
            let rendered = report::render_table(&doc);
            match &args.out {
                Some(path) => std::fs::write(path, rendered)?,
                None => print!("{rendered}"),
            }
        }
        "doc" => {
            let rendered = serde_json::to_string_pretty(&doc)?;
            match &args.out {
                Some(path) => std::fs::write(path, rendered)?,
                None => println!("{rendered}"),
            }
        }
        "csv" => {
            let out = args
                .out
                .as_ref()
                .context("--format csv requires --out; it writes several files")?;
            report::write_csv_bundle(&doc, out)?;
        }
        other => bail!("format `{other}` is not one of table, csv, doc"),
    }
    Ok(())
}

fn parse_range(range: &str) -> Result<Vec<u64>> {
    let points: Vec<u64> = if let Some((bounds, factor)) = range.split_once(":x") {
        let factor: u64 = factor.parse().context("range factor")?;
        if factor < 2 {
            bail!("invalid range: geometric factor must be ≥ 2");
        }
        geometric(bounds, factor)?
    } else if range.contains("..") {
        geometric(range, 2)?
    } else {
        range
            .split(',')
            .map(|v| v.trim().parse::<u64>().context("range value"))
            .collect::<Result<_>>()?
    };
    if points.len() < 2 {
        bail!("invalid range: need at least 2 points, got {}", points.len());
    }
    Ok(points)
}

fn geometric(bounds: &str, factor: u64) -> Result<Vec<u64>> {
    let (lo, hi) = bounds
        .split_once("..")
        .context("range must be `lo..hi` or a comma list")?;
    let lo: u64 = lo.trim().parse().context("range lower bound")?;
    let hi: u64 = hi.trim().parse().context("range upper bound")?;
    if lo < 1 || hi < lo {
        bail!("invalid range: require 1 ≤ lo ≤ hi");
    }
    let mut points = Vec::new();
    let mut value = lo;
    while value <= hi {
        points.push(value);
        value = value.saturating_mul(factor);
    }
    Ok(points)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (spec, image) = args.spec.resolve()?;
    let mode: AttnMode = args.mode.parse()?;
    let points = parse_range(&args.range)?;
    let file =
        std::fs::File::create(&args.out).with_context(|| format!("creating {:?}", args.out))?;

    match args.axis.as_str() {
        "image-size" => {
            if image.is_some() {
                bail!("--image-size conflicts with axis=image-size; the range supplies sizes");
            }
            let mut rows = Vec::new();
            for &side in &points {
                let size = ImageSize::square(side)?;
                let cost = model_cost(&spec, Some(size), mode)?;
                for category in OpCategory::ALL {
                    let op = cost.get(category);
                    rows.push(SweepRow {
                        x: side,
                        category: category.to_string(),
                        flops: op.flops,
                        bytes_moved: op.bytes_moved,
                        footprint: op.footprint,
                    });
                }
            }
            write_sweep_csv(&rows, None, file)?;
            println!("swept image size over {points:?}; wrote {:?}", args.out);
        }
        "frames" => {
            let Variant::Video(video) = &spec.variant else {
                bail!("axis=frames requires a video spec; `{}` is not one", spec.name);
            };
            let sweep = temporal_spatial_sweep(video, &points)?;
            let crossover = temporal_crossover(video)?;
            let mut rows = Vec::new();
            for row in &sweep {
                for (label, cost) in [("spatial", &row.spatial), ("temporal", &row.temporal)] {
                    rows.push(SweepRow {
                        x: row.frames,
                        category: label.to_string(),
                        flops: cost.flops,
                        bytes_moved: cost.bytes_moved,
                        footprint: cost.footprint,
                    });
                }
            }
            let crossover_text = format!("{crossover}");
            write_sweep_csv(&rows, Some(("crossover_frames", &crossover_text)), file)?;
            let slope = |pick: fn(&genperf_core::costmodel::FrameSweepRow) -> u128| {
                let log_points: Vec<(f64, f64)> = sweep
                    .iter()
                    .map(|r| ((r.frames as f64).ln(), (pick(r) as f64).ln()))
                    .collect();
                least_squares_slope(&log_points).unwrap_or(f64::NAN)
            };
            println!(
                "frames sweep: spatial slope {:.3}, temporal slope {:.3}, crossover at F = {crossover}",
                slope(|r| r.spatial.flops),
                slope(|r| r.temporal.flops),
            );
            println!("wrote {:?}", args.out);
        }
        "latent" => {
            let diffusion = match &spec.variant {
                Variant::Diffusion(d) => d.clone(),
                Variant::Video(v) => v.base.clone(),
                Variant::Transformer(_) => {
                    bail!("axis=latent requires a diffusion spec; `{}` is not one", spec.name)
                }
            };
            let exponent = memory_scaling_exponent(&diffusion, &points)?;
            let mut rows = Vec::new();
            for &side in &points {
                let size = ImageSize::square(side * diffusion.latent_downsample)?;
                let cost = model_cost(&spec, Some(size), mode)?;
                for category in OpCategory::ALL {
                    let op = cost.get(category);
                    rows.push(SweepRow {
                        x: side,
                        category: category.to_string(),
                        flops: op.flops,
                        bytes_moved: op.bytes_moved,
                        footprint: op.footprint,
                    });
                }
            }
            let exponent_text = format!("{exponent:.3}");
            write_sweep_csv(&rows, Some(("fitted_exponent", &exponent_text)), file)?;
            println!(
                "latent sweep: fitted memory exponent {exponent:.3} over {points:?}; wrote {:?}",
                args.out
            );
        }
        other => bail!("axis `{other}` is not one of image-size, frames, latent"),
    }
    Ok(())
}

fn breakdown_from(path: &Path, rules: &CategoryRules) -> Result<OperatorBreakdown> {
    let events = parse_trace(path).with_context(|| format!("parsing trace {path:?}"))?;
    let breakdown = link_kernels(&events, rules);
    if breakdown.total_us <= 0.0 {
        bail!("no accelerator kernels found in {path:?}");
    }
    Ok(breakdown)
}

fn print_breakdown_table(breakdown: &OperatorBreakdown) {
    println!("{:<12} {:>14} {:>9}", "category", "microseconds", "fraction");
    let fractions = breakdown.fractions();
    for category in OpCategory::ALL {
        println!(
            "{:<12} {:>14.3} {:>9.4}",
            category.to_string(),
            breakdown.time(category),
            fractions.get(&category).copied().unwrap_or(0.0)
        );
    }
    println!(
        "total {:.3} us busy, {:.3} us wall-clock, {} unattributed kernel(s)",
        breakdown.total_us, breakdown.wall_clock_us, breakdown.unattributed_kernels
    );
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let rules = load_rules(&args.rules)?;
    let breakdown = breakdown_from(&args.trace, &rules)?;
    match &args.out {
        Some(path) => {
            let file =
                std::fs::File::create(path).with_context(|| format!("creating {path:?}"))?;
            breakdown.write_csv(file)?;
            println!("wrote {path:?}");
        }
        None => print_breakdown_table(&breakdown),
    }
    if let Some(optimized_path) = &args.optimized {
        let optimized = breakdown_from(optimized_path, &rules)?;
        let (module, end_to_end) = attention_speedup_from_traces(&breakdown, &optimized)?;
        let fraction = breakdown.time(OpCategory::Attention) / breakdown.total_us;
        let audit = amdahl_feasibility(fraction, end_to_end.max(1.0))?;
        println!(
            "attention module speedup {module:.3}x, end-to-end {end_to_end:.3}x (baseline attention fraction {fraction:.3})"
        );
        println!(
            "amdahl bound 1/(1-p) = {:.3}x: end-to-end is {}",
            audit.limit,
            if audit.feasible { "feasible" } else { "INFEASIBLE for an attention-only change" }
        );
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let rules = load_rules(&args.rules)?;
    let breakdown = breakdown_from(&args.trace, &rules)?;
    let (spec, image) = args.spec.resolve()?;
    let hw = load_hardware(&args.hw)?;
    let mode: AttnMode = args.mode.parse()?;
    let modeled = model_cost(&spec, image, mode)?;
    let comparison = compare_breakdown(&breakdown, &modeled, &hw);
    match &args.out {
        Some(path) => {
            let file =
                std::fs::File::create(path).with_context(|| format!("creating {path:?}"))?;
            comparison.write_csv(file)?;
            println!("wrote {path:?}");
        }
        None => {
            println!(
                "{:<12} {:>9} {:>9} {:>9}",
                "category", "measured", "modeled", "delta"
            );
            for row in &comparison.rows {
                println!(
                    "{:<12} {:>9.4} {:>9.4} {:>+9.4}",
                    row.category.to_string(),
                    row.measured_fraction,
                    row.modeled_fraction,
                    row.delta
                );
            }
        }
    }
    println!("rank-order agreement (kendall tau-b): {:.4}", comparison.rank_agreement);
    Ok(())
}

fn cmd_amdahl(args: AmdahlArgs) -> Result<()> {
    match (args.speedup, args.end_to_end) {
        (Some(speedup), None) => {
            let projection = amdahl(args.fraction, speedup)?;
            println!(
                "amdahl(p={}, s={}) -> end-to-end {:.4}x (limit {:.4}x)",
                projection.fraction,
                projection.module_speedup,
                projection.end_to_end,
                if args.fraction < 1.0 { 1.0 / (1.0 - args.fraction) } else { f64::INFINITY },
            );
        }
        (None, Some(end_to_end)) => {
            let audit = amdahl_feasibility(args.fraction, end_to_end)?;
            if audit.feasible {
                println!(
                    "feasible: end-to-end {end_to_end}x at p={} needs module speedup {}",
                    args.fraction,
                    audit
                        .required_module_speedup
                        .map(|s| format!("{s:.4}x"))
                        .unwrap_or_else(|| "inf".into()),
                );
            } else {
                println!(
                    "INFEASIBLE: end-to-end {end_to_end}x exceeds the Amdahl bound {:.4}x at p={}",
                    audit.limit, args.fraction
                );
            }
        }
        _ => bail!("provide exactly one of --speedup or --end-to-end"),
    }
    Ok(())
}
