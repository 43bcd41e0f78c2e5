//! Conversion of span, metric, log and fault-injection tables into labeled
//! windows.
//!
//! Column names, the timestamp format and the class list come from a JSON
//! [`ColumnMap`]. Timestamps are held as integer milliseconds. Services are
//! indexed by first appearance in the spans, then the metrics, then the logs,
//! so all windows of one capture share a node index space. Bins start at the
//! earliest timestamp seen in any table.
//!
//! Feature channels are metric names plus the reserved channels
//! `log_count`, `span_count` and `span_error_rate`. Metric channels take the
//! per-bin mean and carry the previous bin's value into empty bins (0 before
//! the first observation); the reserved channels are counts or rates and are 0
//! in empty bins. Every channel is z-scored with statistics from the bins
//! covered by the leading training windows.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphseq::{Dataset, Edge, GraphWindow, Manifest};

pub const LOG_COUNT: &str = "log_count";
pub const SPAN_COUNT: &str = "span_count";
pub const SPAN_ERROR_RATE: &str = "span_error_rate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanColumns {
    pub timestamp: String,
    pub service: String,
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: String,
    #[serde(default)]
    pub status: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricColumns {
    pub timestamp: String,
    pub service: String,
    pub metric: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogColumns {
    pub timestamp: String,
    pub service: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionColumns {
    pub start: String,
    pub end: String,
    pub service: String,
    pub class: String,
}

fn default_delimiter() -> char {
    ','
}

/// Ingest configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// `unix_s`, `unix_ms`, `rfc3339`, or a strftime pattern read as UTC.
    pub timestamp_format: String,
    pub spans: SpanColumns,
    pub metrics: MetricColumns,
    #[serde(default)]
    pub logs: Option<LogColumns>,
    #[serde(default)]
    pub injections: Option<InjectionColumns>,
    /// Label space; index 0 is the class of windows without any injection.
    pub class_names: Vec<String>,
    pub channels: Vec<String>,
}

impl ColumnMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: ColumnMap =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::Config("column map needs at least two class names".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("column map lists no feature channels".into()));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Config("delimiter must be a single ASCII character".into()));
        }
        Ok(())
    }
}

/// A header plus string cells, as read from a delimited file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str], rows: &[&[&str]]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        }
    }

    fn column(&self, name: &str, table: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{table} table has no column {name:?}")))
    }
}

pub fn read_table(path: &Path, delimiter: char) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Timestamp in milliseconds since the Unix epoch.
pub fn parse_timestamp(s: &str, format: &str) -> Option<i64> {
    let s = s.trim();
    let ms = match format {
        "unix_s" => s.parse::<f64>().ok().map(|x| x * 1000.0)?,
        "unix_ms" => s.parse::<f64>().ok()?,
        "rfc3339" => return DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp_millis()),
        pattern => {
            return NaiveDateTime::parse_from_str(s, pattern)
                .ok()
                .map(|d| d.and_utc().timestamp_millis())
        }
    };
    (ms.is_finite() && ms.abs() < 9.0e15).then(|| ms.round() as i64)
}

fn parse_status(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "ok" | "success" | "true" | "1" => Some(true),
        "error" | "failure" | "fail" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// Skipped-row counts by reason.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SkipReport {
    pub rows: usize,
    pub skipped: BTreeMap<String, usize>,
}

impl SkipReport {
    fn skip(&mut self, reason: &str) {
        *self.skipped.entry(reason.to_string()).or_default() += 1;
    }

    pub fn total_skipped(&self) -> usize {
        self.skipped.values().sum()
    }
}

fn cell<'a>(row: &'a [String], idx: usize) -> Option<&'a str> {
    row.get(idx).map(|s| s.trim()).filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRecord {
    pub timestamp: i64,
    pub service: String,
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub success: bool,
}

/// Malformed rows are skipped and counted; a span id repeated within a trace
/// keeps its first row.
pub fn parse_spans(table: &Table, cols: &SpanColumns, ts_format: &str) -> Result<(Vec<SpanRecord>, SkipReport)> {
    let ts = table.column(&cols.timestamp, "span")?;
    let svc = table.column(&cols.service, "span")?;
    let trace = table.column(&cols.trace_id, "span")?;
    let span = table.column(&cols.span_id, "span")?;
    let parent = table.column(&cols.parent_span_id, "span")?;
    let status = cols.status.as_ref().map(|c| table.column(c, "span")).transpose()?;

    let mut report = SkipReport::default();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in &table.rows {
        report.rows += 1;
        let (Some(service), Some(trace_id), Some(span_id)) = (cell(row, svc), cell(row, trace), cell(row, span)) else {
            report.skip("missing field");
            continue;
        };
        let Some(timestamp) = cell(row, ts).and_then(|s| parse_timestamp(s, ts_format)) else {
            report.skip("unparseable timestamp");
            continue;
        };
        let success = match status {
            Some(idx) => match cell(row, idx).and_then(parse_status) {
                Some(ok) => ok,
                None => {
                    report.skip("unparseable status");
                    continue;
                }
            },
            None => true,
        };
        if !seen.insert((trace_id.to_string(), span_id.to_string())) {
            report.skip("duplicate span id");
            continue;
        }
        out.push(SpanRecord {
            timestamp,
            service: service.to_string(),
            trace_id: trace_id.to_string(),
            span_id: span_id.to_string(),
            parent_span_id: cell(row, parent).map(str::to_string),
            success,
        });
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub timestamp: i64,
    pub service: String,
    pub metric: String,
    pub value: f64,
}

pub fn parse_metrics(table: &Table, cols: &MetricColumns, ts_format: &str) -> Result<(Vec<MetricRecord>, SkipReport)> {
    let ts = table.column(&cols.timestamp, "metric")?;
    let svc = table.column(&cols.service, "metric")?;
    let name = table.column(&cols.metric, "metric")?;
    let val = table.column(&cols.value, "metric")?;
    let mut report = SkipReport::default();
    let mut out = Vec::new();
    for row in &table.rows {
        report.rows += 1;
        let (Some(service), Some(metric)) = (cell(row, svc), cell(row, name)) else {
            report.skip("missing field");
            continue;
        };
        let Some(timestamp) = cell(row, ts).and_then(|s| parse_timestamp(s, ts_format)) else {
            report.skip("unparseable timestamp");
            continue;
        };
        let Some(value) = cell(row, val).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()) else {
            report.skip("non-finite or unparseable value");
            continue;
        };
        out.push(MetricRecord {
            timestamp,
            service: service.to_string(),
            metric: metric.to_string(),
            value,
        });
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub timestamp: i64,
    pub service: String,
}

pub fn parse_logs(table: &Table, cols: &LogColumns, ts_format: &str) -> Result<(Vec<LogRecord>, SkipReport)> {
    let ts = table.column(&cols.timestamp, "log")?;
    let svc = table.column(&cols.service, "log")?;
    let mut report = SkipReport::default();
    let mut out = Vec::new();
    for row in &table.rows {
        report.rows += 1;
        let Some(service) = cell(row, svc) else {
            report.skip("missing field");
            continue;
        };
        let Some(timestamp) = cell(row, ts).and_then(|s| parse_timestamp(s, ts_format)) else {
            report.skip("unparseable timestamp");
            continue;
        };
        out.push(LogRecord {
            timestamp,
            service: service.to_string(),
        });
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionRecord {
    pub start: i64,
    pub end: i64,
    pub service: String,
    pub class: usize,
}

pub fn parse_injections(
    table: &Table,
    cols: &InjectionColumns,
    ts_format: &str,
    class_names: &[String],
) -> Result<(Vec<InjectionRecord>, SkipReport)> {
    let start = table.column(&cols.start, "injection")?;
    let end = table.column(&cols.end, "injection")?;
    let svc = table.column(&cols.service, "injection")?;
    let class = table.column(&cols.class, "injection")?;
    let mut report = SkipReport::default();
    let mut out = Vec::new();
    for row in &table.rows {
        report.rows += 1;
        let Some(service) = cell(row, svc) else {
            report.skip("missing field");
            continue;
        };
        let (Some(s), Some(e)) = (
            cell(row, start).and_then(|v| parse_timestamp(v, ts_format)),
            cell(row, end).and_then(|v| parse_timestamp(v, ts_format)),
        ) else {
            report.skip("unparseable timestamp");
            continue;
        };
        if s > e {
            report.skip("start after end");
            continue;
        }
        let Some(c) = cell(row, class).and_then(|name| class_names.iter().position(|n| n == name)) else {
            report.skip("unknown class");
            continue;
        };
        out.push(InjectionRecord {
            start: s,
            end: e,
            service: service.to_string(),
            class: c,
        });
    }
    Ok((out, report))
}

/// Service name to node index, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceIndex {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ServiceIndex {
    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Time bins of equal width starting at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binning {
    pub origin: i64,
    pub width: i64,
}

impl Binning {
    pub fn new(origin: i64, width: i64) -> Result<Self> {
        if width <= 0 {
            return Err(Error::Config("bin width must be positive".into()));
        }
        Ok(Binning { origin, width })
    }

    /// Bin holding `t`; negative before the origin.
    pub fn bin(&self, t: i64) -> i64 {
        (t - self.origin).div_euclid(self.width)
    }

    pub fn start(&self, bin: i64) -> i64 {
        self.origin + bin * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BinnedEdges {
    pub bins: BTreeMap<i64, BTreeSet<Edge>>,
    /// Child spans whose parent span is absent from the data.
    pub orphans: usize,
}

/// Caller→callee edges per bin: for each span with a parent in another
/// service, `(parent service, child service)` in the bin of the child span.
pub fn bin_edges(spans: &[SpanRecord], binning: Binning, services: &ServiceIndex) -> BinnedEdges {
    let owner: HashMap<(&str, &str), &str> = spans
        .iter()
        .map(|s| ((s.trace_id.as_str(), s.span_id.as_str()), s.service.as_str()))
        .collect();
    let mut out = BinnedEdges::default();
    for s in spans {
        let Some(parent) = &s.parent_span_id else {
            continue;
        };
        let Some(&caller) = owner.get(&(s.trace_id.as_str(), parent.as_str())) else {
            out.orphans += 1;
            continue;
        };
        if caller == s.service {
            continue;
        }
        if let (Some(c), Some(d)) = (services.get(caller), services.get(&s.service)) {
            out.bins.entry(binning.bin(s.timestamp)).or_default().insert((c, d));
        }
    }
    out
}

/// Raw features `[bin][service][channel]` for bins `0..num_bins`, before
/// normalization.
pub fn build_features(
    metrics: &[MetricRecord],
    logs: &[LogRecord],
    spans: &[SpanRecord],
    binning: Binning,
    num_bins: usize,
    services: &ServiceIndex,
    channels: &[String],
) -> Result<Vec<f64>> {
    let metric_names: BTreeSet<&str> = metrics.iter().map(|m| m.metric.as_str()).collect();
    for c in channels {
        let reserved = [LOG_COUNT, SPAN_COUNT, SPAN_ERROR_RATE].contains(&c.as_str());
        if !reserved && !metric_names.contains(c.as_str()) {
            return Err(Error::Config(format!("unknown channel {c:?}")));
        }
    }
    let n = services.len();
    let d = channels.len();
    let slot = |bin: i64, svc: &str| -> Option<(usize, usize)> {
        let b = usize::try_from(bin).ok().filter(|&b| b < num_bins)?;
        Some((b, services.get(svc)?))
    };

    // (sum, count) per (bin, service, channel).
    let mut acc = vec![(0.0_f64, 0_usize); num_bins * n * d];
    let channel_of: HashMap<&str, usize> = channels.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
    for m in metrics {
        if let (Some(&k), Some((b, i))) = (channel_of.get(m.metric.as_str()), slot(binning.bin(m.timestamp), &m.service)) {
            let cell = &mut acc[(b * n + i) * d + k];
            cell.0 += m.value;
            cell.1 += 1;
        }
    }
    let mut features = vec![0.0; num_bins * n * d];
    for (k, name) in channels.iter().enumerate() {
        match name.as_str() {
            LOG_COUNT => {
                for l in logs {
                    if let Some((b, i)) = slot(binning.bin(l.timestamp), &l.service) {
                        features[(b * n + i) * d + k] += 1.0;
                    }
                }
            }
            SPAN_COUNT | SPAN_ERROR_RATE => {
                let mut counts = vec![(0usize, 0usize); num_bins * n];
                for s in spans {
                    if let Some((b, i)) = slot(binning.bin(s.timestamp), &s.service) {
                        counts[b * n + i].0 += 1;
                        counts[b * n + i].1 += usize::from(!s.success);
                    }
                }
                for (idx, &(total, failed)) in counts.iter().enumerate() {
                    features[idx * d + k] = if name == SPAN_COUNT {
                        total as f64
                    } else if total > 0 {
                        failed as f64 / total as f64
                    } else {
                        0.0
                    };
                }
            }
            _ => {
                for i in 0..n {
                    let mut last = 0.0;
                    for b in 0..num_bins {
                        let (sum, count) = acc[(b * n + i) * d + k];
                        if count > 0 {
                            last = sum / count as f64;
                        }
                        features[(b * n + i) * d + k] = last;
                    }
                }
            }
        }
    }
    Ok(features)
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl NormStats {
    /// Statistics over every service in bins `0..num_bins` of `features`.
    pub fn fit(features: &[f64], num_services: usize, num_bins: usize, channels: &[String]) -> Self {
        let d = channels.len();
        let count = (num_bins * num_services) as f64;
        let mut mean = vec![0.0; d];
        let mut variance = vec![0.0; d];
        if count > 0.0 {
            for row in features[..num_bins * num_services * d].chunks(d) {
                for k in 0..d {
                    mean[k] += row[k];
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for row in features[..num_bins * num_services * d].chunks(d) {
                for k in 0..d {
                    variance[k] += (row[k] - mean[k]).powi(2);
                }
            }
            variance.iter_mut().for_each(|v| *v /= count);
        }
        NormStats {
            channels: channels.to_vec(),
            mean,
            variance,
        }
    }

    /// `(x - mean) / std`, dividing by 1 for zero-variance channels.
    pub fn apply(&self, features: &mut [f64]) {
        let d = self.channels.len();
        for row in features.chunks_mut(d) {
            for k in 0..d {
                let std = self.variance[k].sqrt();
                let scale = if std > 0.0 { std } else { 1.0 };
                row[k] = (row[k] - self.mean[k]) / scale;
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: NormStats =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if stats.mean.len() != stats.channels.len() || stats.variance.len() != stats.channels.len() {
            return Err(Error::Format(format!("{}: statistics do not match channel count", path.display())));
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("stats serialize");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A label decision for one time range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowLabel {
    Class(usize),
    /// Tied classes with equal overlap and equal earliest start.
    Ambiguous(Vec<usize>),
}

/// Label for `[start, end)`: class 0 without overlap, otherwise the class
/// with the largest total overlap, then the earliest-starting class.
pub fn label_range(start: i64, end: i64, injections: &[InjectionRecord]) -> WindowLabel {
    let mut per_class: BTreeMap<usize, (i64, i64)> = BTreeMap::new();
    for inj in injections {
        let overlap = end.min(inj.end) - start.max(inj.start);
        let touches = overlap > 0 || (inj.start == inj.end && inj.start >= start && inj.start < end);
        if touches {
            let e = per_class.entry(inj.class).or_insert((0, i64::MAX));
            e.0 += overlap.max(0);
            e.1 = e.1.min(inj.start);
        }
    }
    let Some(best) = per_class.values().copied().max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1))) else {
        return WindowLabel::Class(0);
    };
    let winners: Vec<usize> = per_class.iter().filter(|(_, &v)| v == best).map(|(&c, _)| c).collect();
    if winners.len() == 1 {
        WindowLabel::Class(winners[0])
    } else {
        WindowLabel::Ambiguous(winners)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedWindow {
    pub id: String,
    pub reason: String,
}

/// Labels windows from their time ranges, dropping ambiguous ones.
pub fn label_windows(
    windows: Vec<(GraphWindow, i64, i64)>,
    injections: &[InjectionRecord],
) -> (Vec<GraphWindow>, Vec<DroppedWindow>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (w, start, end) in windows {
        match label_range(start, end, injections) {
            WindowLabel::Class(c) => kept.push(w.with_label(c)),
            WindowLabel::Ambiguous(classes) => dropped.push(DroppedWindow {
                id: w.id().to_string(),
                reason: format!("ambiguous label among classes {classes:?}"),
            }),
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub bin_width_ms: i64,
    pub window_len: usize,
    pub stride: usize,
    /// Leading share of windows whose bins feed the normalization statistics.
    pub train_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            bin_width_ms: 60_000,
            window_len: 8,
            stride: 4,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestInputs {
    pub spans: PathBuf,
    pub metrics: PathBuf,
    pub logs: Option<PathBuf>,
    pub injections: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct IngestReport {
    pub spans: SkipReport,
    pub metrics: SkipReport,
    pub logs: Option<SkipReport>,
    pub injections: Option<SkipReport>,
    pub orphan_spans: usize,
    pub num_services: usize,
    pub num_bins: usize,
    pub dropped_windows: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub dataset: Dataset,
    pub norm_stats: NormStats,
    pub report: IngestReport,
}

/// Parsed records of one capture.
#[derive(Debug, Clone, Default)]
pub struct Capture {
    pub spans: Vec<SpanRecord>,
    pub metrics: Vec<MetricRecord>,
    pub logs: Vec<LogRecord>,
    pub injections: Vec<InjectionRecord>,
}

/// Builds windows from parsed records. With `stats` the given normalization
/// is applied; otherwise it is fitted on the leading training windows.
pub fn build_dataset(
    capture: &Capture,
    map: &ColumnMap,
    config: &IngestConfig,
    stats: Option<&NormStats>,
) -> Result<IngestOutput> {
    map.validate()?;
    if config.window_len == 0 || config.stride == 0 {
        return Err(Error::Config("window length and stride must be at least 1".into()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(Error::Config("train fraction must lie in (0, 1]".into()));
    }
    let mut services = ServiceIndex::default();
    for s in &capture.spans {
        services.insert(&s.service);
    }
    for m in &capture.metrics {
        services.insert(&m.service);
    }
    for l in &capture.logs {
        services.insert(&l.service);
    }
    let times = capture
        .spans
        .iter()
        .map(|s| s.timestamp)
        .chain(capture.metrics.iter().map(|m| m.timestamp))
        .chain(capture.logs.iter().map(|l| l.timestamp));
    let (Some(origin), Some(last)) = (times.clone().min(), times.max()) else {
        return Err(Error::validation("capture", "no timestamped records"));
    };
    let binning = Binning::new(origin, config.bin_width_ms)?;
    let num_bins = binning.bin(last) as usize + 1;
    if num_bins < config.window_len {
        return Err(Error::validation(
            "capture",
            format!("{num_bins} bins is shorter than one window of {}", config.window_len),
        ));
    }
    let edges = bin_edges(&capture.spans, binning, &services);
    let mut features = build_features(
        &capture.metrics,
        &capture.logs,
        &capture.spans,
        binning,
        num_bins,
        &services,
        &map.channels,
    )?;
    let starts: Vec<usize> = (0..=num_bins - config.window_len).step_by(config.stride).collect();
    let stats = match stats {
        Some(s) => {
            if s.channels != map.channels {
                return Err(Error::Config("normalization statistics were fitted on other channels".into()));
            }
            s.clone()
        }
        None => {
            let n_train = ((config.train_fraction * starts.len() as f64).ceil() as usize).clamp(1, starts.len());
            let train_bins = starts[n_train - 1] + config.window_len;
            NormStats::fit(&features, services.len(), train_bins, &map.channels)
        }
    };
    stats.apply(&mut features);

    let n = services.len();
    let d = map.channels.len();
    let step_len = n * d;
    let mut windows = Vec::with_capacity(starts.len());
    for &s in &starts {
        let id = format!("bin{s}");
        let feats = features[s * step_len..(s + config.window_len) * step_len].to_vec();
        let step_edges = (s..s + config.window_len)
            .map(|b| {
                edges
                    .bins
                    .get(&(b as i64))
                    .map(|set| set.iter().copied().collect())
                    .unwrap_or_default()
            })
            .collect();
        let w = GraphWindow::new(
            id,
            n,
            config.window_len,
            d,
            feats,
            step_edges,
            0,
            Some(services.names().to_vec()),
        )?;
        let start = binning.start(s as i64);
        let end = binning.start((s + config.window_len) as i64);
        windows.push((w, start, end));
    }
    let (windows, dropped) = label_windows(windows, &capture.injections);
    let manifest = Manifest {
        num_classes: map.class_names.len(),
        class_names: map.class_names.clone(),
        feat_names: map.channels.clone(),
    };
    Ok(IngestOutput {
        dataset: Dataset::new(manifest, windows)?,
        norm_stats: stats,
        report: IngestReport {
            orphan_spans: edges.orphans,
            num_services: n,
            num_bins,
            dropped_windows: dropped.into_iter().map(|d| (d.id, d.reason)).collect(),
            ..IngestReport::default()
        },
    })
}

/// Reads the tables named in `inputs` and builds the dataset.
pub fn ingest(
    inputs: &IngestInputs,
    map: &ColumnMap,
    config: &IngestConfig,
    stats: Option<&NormStats>,
) -> Result<IngestOutput> {
    map.validate()?;
    let fmt = &map.timestamp_format;
    let (spans, span_report) = parse_spans(&read_table(&inputs.spans, map.delimiter)?, &map.spans, fmt)?;
    let (metrics, metric_report) = parse_metrics(&read_table(&inputs.metrics, map.delimiter)?, &map.metrics, fmt)?;
    let (logs, log_report) = match (&inputs.logs, &map.logs) {
        (Some(path), Some(cols)) => {
            let (l, r) = parse_logs(&read_table(path, map.delimiter)?, cols, fmt)?;
            (l, Some(r))
        }
        (Some(_), None) => return Err(Error::Config("log file given but the column map has no logs section".into())),
        _ => (Vec::new(), None),
    };
    let (injections, injection_report) = match (&inputs.injections, &map.injections) {
        (Some(path), Some(cols)) => {
            let (i, r) = parse_injections(&read_table(path, map.delimiter)?, cols, fmt, &map.class_names)?;
            (i, Some(r))
        }
        (Some(_), None) => {
            return Err(Error::Config(
                "injection file given but the column map has no injections section".into(),
            ))
        }
        _ => (Vec::new(), None),
    };
    let capture = Capture {
        spans,
        metrics,
        logs,
        injections,
    };
    let mut out = build_dataset(&capture, map, config, stats)?;
    out.report.spans = span_report;
    out.report.metrics = metric_report;
    out.report.logs = log_report;
    out.report.injections = injection_report;
    Ok(out)
}
