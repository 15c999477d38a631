//! Chrome trace-event ingestion and kernel-to-operator attribution.
//!
//! Accepts the standard profiler export: either a bare JSON event array or an
//! object with a `traceEvents` array. Complete (`X`), duration (`B`/`E`) and
//! flow (`s`/`t`/`f`) events are retained; metadata and other phases are
//! skipped. Timestamps are treated as microseconds regardless of any
//! display-unit metadata.
//!
//! Attribution follows the annotate-and-link methodology: CPU-side events
//! whose names match the category rules become annotation spans; each
//! accelerator kernel is attributed via its launch event's correlation id
//! (primary) or enclosing-span containment (fallback), innermost span winning,
//! with kernel-name heuristics as a last resort and `other` as the sink.
//! Kernels overlapping on distinct streams are summed as busy time; the
//! wall-clock span is reported separately.

use crate::archspec::HardwareSpec;
use crate::category::OpCategory;
use crate::costmodel::CostBreakdown;
use crate::error::{json_parse_error, Error, Result};
use crate::roofline::estimate_time;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One retained trace event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub name: String,
    pub phase: String,
    /// Microseconds.
    pub timestamp: f64,
    /// Microseconds; zero for non-complete events.
    pub duration: f64,
    pub process_id: i64,
    pub thread_id: i64,
    pub correlation: Option<u64>,
    pub category: Option<String>,
}

const RETAINED_PHASES: &[&str] = &["X", "B", "E", "s", "t", "f"];

fn correlation_from_args(args: &Value) -> Option<u64> {
    let correlation = args.get("correlation")?;
    match correlation {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn event_from_value(index: usize, value: &Value) -> Result<Option<TraceEvent>> {
    let object = value.as_object().ok_or_else(|| Error::Validation(format!(
        "event {index} is not an object"
    )))?;
    let field = |key: &str| -> Result<&Value> {
        object.get(key).ok_or_else(|| {
            Error::Validation(format!("event {index} missing required field `{key}`"))
        })
    };
    let name = field("name")?
        .as_str()
        .ok_or_else(|| Error::Validation(format!("event {index}: `name` must be a string")))?
        .to_string();
    let phase = field("ph")?
        .as_str()
        .ok_or_else(|| Error::Validation(format!("event {index}: `ph` must be a string")))?
        .to_string();
    let timestamp = field("ts")?
        .as_f64()
        .ok_or_else(|| Error::Validation(format!("event {index}: `ts` must be a number")))?;
    if !RETAINED_PHASES.contains(&phase.as_str()) {
        return Ok(None);
    }
    if timestamp < 0.0 {
        return Err(Error::Validation(format!(
            "event {index}: timestamps non-negative"
        )));
    }
    let duration = match object.get("dur") {
        Some(v) => v.as_f64().ok_or_else(|| {
            Error::Validation(format!("event {index}: `dur` must be a number"))
        })?,
        None => 0.0,
    };
    if phase == "X" && duration < 0.0 {
        return Err(Error::Validation(format!(
            "event {index}: duration ≥ 0 for complete events"
        )));
    }
    Ok(Some(TraceEvent {
        name,
        phase,
        timestamp,
        duration,
        process_id: object.get("pid").and_then(Value::as_i64).unwrap_or(0),
        thread_id: object.get("tid").and_then(Value::as_i64).unwrap_or(0),
        correlation: object.get("args").and_then(correlation_from_args),
        category: object
            .get("cat")
            .and_then(Value::as_str)
            .map(str::to_string),
    }))
}

/// Parses a trace-event document from a string, preserving event order.
/// Unknown fields and non-retained phases are ignored.
pub fn parse_trace_str(input: &str) -> Result<Vec<TraceEvent>> {
    let document: Value =
        serde_json::from_str(input).map_err(|e| json_parse_error(input, &e))?;
    let raw_events = match &document {
        Value::Array(events) => events.as_slice(),
        Value::Object(object) => object
            .get("traceEvents")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Validation("document has no `traceEvents` array".into())
            })?,
        _ => {
            return Err(Error::Validation(
                "document is neither an event array nor a trace object".into(),
            ))
        }
    };
    let mut events = Vec::with_capacity(raw_events.len());
    for (index, value) in raw_events.iter().enumerate() {
        if let Some(event) = event_from_value(index, value)? {
            events.push(event);
        }
    }
    Ok(events)
}

/// Parses a trace-event document from a file.
pub fn parse_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>> {
    parse_trace_str(&std::fs::read_to_string(path)?)
}

/// Serializes events back to the object form; `parse_trace` on the output
/// reproduces the retained field set exactly.
pub fn write_events_json(events: &[TraceEvent]) -> String {
    let rendered: Vec<Value> = events
        .iter()
        .map(|e| {
            let mut object = serde_json::Map::new();
            object.insert("name".into(), Value::String(e.name.clone()));
            object.insert("ph".into(), Value::String(e.phase.clone()));
            object.insert("ts".into(), serde_json::json!(e.timestamp));
            object.insert("dur".into(), serde_json::json!(e.duration));
            object.insert("pid".into(), serde_json::json!(e.process_id));
            object.insert("tid".into(), serde_json::json!(e.thread_id));
            if let Some(cat) = &e.category {
                object.insert("cat".into(), Value::String(cat.clone()));
            }
            if let Some(correlation) = e.correlation {
                object.insert("args".into(), serde_json::json!({ "correlation": correlation }));
            }
            Value::Object(object)
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "traceEvents": rendered }))
        .expect("trace events serialize")
}

/// Ordered label-pattern rules mapping annotations and kernel names to
/// operator categories. First match wins; matching is case-insensitive
/// substring.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CategoryRules {
    pub rules: Vec<CategoryRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CategoryRule {
    pub pattern: String,
    pub category: OpCategory,
}

impl Default for CategoryRules {
    fn default() -> Self {
        CategoryRules::from_json_str(DEFAULT_RULES_JSON).expect("embedded rules are valid")
    }
}

/// The editable default rules file shipped with the toolkit.
pub const DEFAULT_RULES_JSON: &str = include_str!("../rules/default-rules.json");

impl CategoryRules {
    pub fn from_json_str(input: &str) -> Result<CategoryRules> {
        let rules: CategoryRules =
            serde_json::from_str(input).map_err(|e| json_parse_error(input, &e))?;
        if rules.rules.is_empty() {
            return Err(Error::Validation("rules file has no rules".into()));
        }
        if rules.rules.iter().any(|r| r.pattern.is_empty()) {
            return Err(Error::Validation("rule patterns non-empty".into()));
        }
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CategoryRules> {
        CategoryRules::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// First rule whose pattern is a case-insensitive substring of `label`.
    pub fn match_category(&self, label: &str) -> Option<OpCategory> {
        let lowered = label.to_lowercase();
        self.rules
            .iter()
            .find(|rule| lowered.contains(&rule.pattern.to_lowercase()))
            .map(|rule| rule.category)
    }
}

/// A CPU-side annotation interval on one thread.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationSpan {
    pub label: String,
    pub category: OpCategory,
    /// Microseconds.
    pub start: f64,
    /// Microseconds.
    pub end: f64,
    pub process_id: i64,
    pub thread_id: i64,
}

/// Measured per-category kernel time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorBreakdown {
    /// Busy microseconds per category (overlapping streams summed).
    pub times_us: BTreeMap<OpCategory, f64>,
    pub total_us: f64,
    /// Kernels that fell through to `other` with no rule match at all.
    pub unattributed_kernels: u64,
    /// Wall-clock span of the kernel timeline, reported separately from the
    /// per-category busy times.
    pub wall_clock_us: f64,
}

impl OperatorBreakdown {
    /// Builds a breakdown directly from per-category times.
    pub fn from_times(times_us: BTreeMap<OpCategory, f64>) -> OperatorBreakdown {
        let total_us = times_us.values().sum();
        OperatorBreakdown {
            times_us,
            total_us,
            unattributed_kernels: 0,
            wall_clock_us: 0.0,
        }
    }

    pub fn time(&self, category: OpCategory) -> f64 {
        self.times_us.get(&category).copied().unwrap_or(0.0)
    }

    /// Per-category fractions of total kernel time; empty when no time.
    pub fn fractions(&self) -> BTreeMap<OpCategory, f64> {
        if self.total_us <= 0.0 {
            return BTreeMap::new();
        }
        self.times_us
            .iter()
            .map(|(category, time)| (*category, time / self.total_us))
            .collect()
    }

    /// Breakdown report rows: (category, microseconds, fraction).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["category", "microseconds", "fraction"])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let fractions = self.fractions();
        for category in OpCategory::ALL {
            let time = self.time(category);
            let fraction = fractions.get(&category).copied().unwrap_or(0.0);
            out.write_record([
                category.to_string(),
                time.to_string(),
                fraction.to_string(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn is_kernel(event: &TraceEvent) -> bool {
    event.phase == "X"
        && event
            .category
            .as_deref()
            .is_some_and(|cat| cat.to_lowercase().contains("kernel"))
}

fn span_contains(span: &AnnotationSpan, timestamp: f64) -> bool {
    timestamp >= span.start && timestamp < span.end
}

/// Innermost (shortest) span on one thread containing `timestamp`.
fn innermost_span(
    spans: &[AnnotationSpan],
    pid: i64,
    tid: i64,
    timestamp: f64,
) -> Option<&AnnotationSpan> {
    spans
        .iter()
        .filter(|s| s.process_id == pid && s.thread_id == tid && span_contains(s, timestamp))
        .min_by(|a, b| {
            let width_a = a.end - a.start;
            let width_b = b.end - b.start;
            width_a
                .partial_cmp(&width_b)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.start.partial_cmp(&a.start).unwrap_or(std::cmp::Ordering::Equal))
        })
}

/// Attributes every accelerator kernel to an operator category and aggregates
/// busy time. Unattributable kernels land in `other` and are counted.
pub fn link_kernels(events: &[TraceEvent], rules: &CategoryRules) -> OperatorBreakdown {
    // Annotation spans: CPU-side complete events whose name matches a rule.
    let spans: Vec<AnnotationSpan> = events
        .iter()
        .filter(|e| e.phase == "X" && !is_kernel(e))
        .filter_map(|e| {
            rules.match_category(&e.name).map(|category| AnnotationSpan {
                label: e.name.clone(),
                category,
                start: e.timestamp,
                end: e.timestamp + e.duration,
                process_id: e.process_id,
                thread_id: e.thread_id,
            })
        })
        .collect();

    // Launch sites: non-kernel events carrying a correlation id.
    let mut launches: BTreeMap<u64, (i64, i64, f64)> = BTreeMap::new();
    for event in events.iter().filter(|e| !is_kernel(e)) {
        if let Some(correlation) = event.correlation {
            launches
                .entry(correlation)
                .or_insert((event.process_id, event.thread_id, event.timestamp));
        }
    }

    // Canonical kernel order keeps aggregation independent of input order.
    let mut kernels: Vec<&TraceEvent> = events.iter().filter(|e| is_kernel(e)).collect();
    kernels.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then(a.process_id.cmp(&b.process_id))
            .then(a.thread_id.cmp(&b.thread_id))
            .then(a.name.cmp(&b.name))
            .then(a.duration.total_cmp(&b.duration))
    });

    let mut times_us: BTreeMap<OpCategory, f64> = BTreeMap::new();
    let mut unattributed = 0u64;
    let mut earliest = f64::INFINITY;
    let mut latest = f64::NEG_INFINITY;
    for kernel in &kernels {
        earliest = earliest.min(kernel.timestamp);
        latest = latest.max(kernel.timestamp + kernel.duration);
        let annotated = kernel
            .correlation
            .and_then(|correlation| launches.get(&correlation))
            .and_then(|(pid, tid, ts)| innermost_span(&spans, *pid, *tid, *ts))
            .or_else(|| {
                innermost_span(&spans, kernel.process_id, kernel.thread_id, kernel.timestamp)
            })
            .map(|span| span.category);
        let category = match annotated {
            Some(category) => category,
            None => match rules.match_category(&kernel.name) {
                Some(category) => category,
                None => {
                    unattributed += 1;
                    OpCategory::Other
                }
            },
        };
        *times_us.entry(category).or_insert(0.0) += kernel.duration;
    }
    let total_us = times_us.values().sum();
    OperatorBreakdown {
        times_us,
        total_us,
        unattributed_kernels: unattributed,
        wall_clock_us: if kernels.is_empty() { 0.0 } else { latest - earliest },
    }
}

/// Measured-versus-modeled comparison for one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryComparison {
    pub category: OpCategory,
    pub measured_fraction: f64,
    pub modeled_fraction: f64,
    /// measured − modeled.
    pub delta: f64,
    /// delta / modeled; none when the modeled fraction is zero.
    pub relative_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<CategoryComparison>,
    /// Kendall tau-b between measured and modeled fractions.
    pub rank_agreement: f64,
}

impl ComparisonReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "category",
            "measured_fraction",
            "modeled_fraction",
            "delta",
            "relative_delta",
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for row in &self.rows {
            out.write_record([
                row.category.to_string(),
                row.measured_fraction.to_string(),
                row.modeled_fraction.to_string(),
                row.delta.to_string(),
                row.relative_delta.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Kendall tau-b rank correlation; 1.0 for identically ordered vectors
/// (including fully tied pairs).
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "rank vectors must have equal length");
    let n = xs.len();
    if n < 2 {
        return 1.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx == 0.0 && dy == 0.0 {
                ties_x += 1;
                ties_y += 1;
            } else if dx == 0.0 {
                ties_x += 1;
            } else if dy == 0.0 {
                ties_y += 1;
            } else if dx * dy > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denominator = (((pairs - ties_x) as f64) * ((pairs - ties_y) as f64)).sqrt();
    if denominator == 0.0 {
        // Both vectors fully tied have identical (trivial) orderings.
        return if ties_x == pairs && ties_y == pairs { 1.0 } else { 0.0 };
    }
    (concordant - discordant) as f64 / denominator
}

/// Compares a measured breakdown against modeled per-category roofline times.
pub fn compare_breakdown(
    measured: &OperatorBreakdown,
    modeled: &CostBreakdown,
    hw: &HardwareSpec,
) -> ComparisonReport {
    let modeled_times: BTreeMap<OpCategory, f64> = OpCategory::ALL
        .iter()
        .map(|category| (*category, estimate_time(&modeled.get(*category), hw)))
        .collect();
    let modeled_total: f64 = modeled_times.values().sum();
    let measured_fractions = measured.fractions();
    let mut rows = Vec::with_capacity(OpCategory::ALL.len());
    let mut measured_vector = Vec::new();
    let mut modeled_vector = Vec::new();
    for category in OpCategory::ALL {
        let measured_fraction = measured_fractions.get(&category).copied().unwrap_or(0.0);
        let modeled_fraction = if modeled_total > 0.0 {
            modeled_times[&category] / modeled_total
        } else {
            0.0
        };
        measured_vector.push(measured_fraction);
        modeled_vector.push(modeled_fraction);
        rows.push(CategoryComparison {
            category,
            measured_fraction,
            modeled_fraction,
            delta: measured_fraction - modeled_fraction,
            relative_delta: (modeled_fraction != 0.0)
                .then(|| (measured_fraction - modeled_fraction) / modeled_fraction),
        });
    }
    ComparisonReport {
        rows,
        rank_agreement: kendall_tau_b(&measured_vector, &modeled_vector),
    }
}

/// Module and end-to-end speedups between two breakdowns of the same model
/// that differ only in attention implementation.
pub fn attention_speedup_from_traces(
    baseline: &OperatorBreakdown,
    optimized: &OperatorBreakdown,
) -> Result<(f64, f64)> {
    let optimized_attention = optimized.time(OpCategory::Attention);
    if optimized_attention <= 0.0 {
        return Err(Error::Domain("zero optimized attention time".into()));
    }
    if optimized.total_us <= 0.0 {
        return Err(Error::Domain("zero optimized total time".into()));
    }
    let module = baseline.time(OpCategory::Attention) / optimized_attention;
    let end_to_end = baseline.total_us / optimized.total_us;
    Ok((module, end_to_end))
}
