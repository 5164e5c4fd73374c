//! Aggregation and reporting over finished runs: action-distribution grids,
//! per-category accuracy tables, perceptual-quality ingestion, and the
//! csv/json/svg report emitters.
//!
//! Everything here is pure single-threaded aggregation with deterministic
//! output: map keys are sorted, float formatting is fixed (two decimals in
//! tables, four in raw dumps), and emitting the same bundle twice produces
//! byte-identical files.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::EntropySummary;
use crate::domain::{Action, ActionKind, FrameRecord, RunResult};
use crate::error::{Error, Result};
use crate::search::SearchTrace;
use crate::util::canonical_json;

/// Row labels of the action grid, in grid order.
pub const KIND_LABELS: [&str; 3] = ["move-forward", "turn-left", "turn-right"];
/// Column labels of the action grid: magnitude buckets 0.25m/9°, 0.5m/18°,
/// 0.75m/27°.
pub const BUCKET_LABELS: [&str; 3] = ["small", "medium", "large"];

// ---------------------------------------------------------------------------
// Action distribution
// ---------------------------------------------------------------------------

/// 3×3 action-count grid: rows are action kinds (forward, left, right),
/// columns are magnitude buckets (small, medium, large).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionGrid {
    pub counts: [[u64; 3]; 3],
}

fn kind_row(kind: ActionKind) -> usize {
    match kind {
        ActionKind::MoveForward => 0,
        ActionKind::TurnLeft => 1,
        ActionKind::TurnRight => 2,
    }
}

impl ActionGrid {
    pub fn count(&mut self, action: &Action) {
        if let Some(bucket) = action.magnitude_bucket() {
            self.counts[kind_row(action.kind)][bucket] += 1;
        } else {
            log::warn!("action with off-grid magnitude ignored: {action:?}");
        }
    }

    pub fn cell(&self, kind: ActionKind, bucket: usize) -> u64 {
        self.counts[kind_row(kind)][bucket]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn kind_total(&self, kind: ActionKind) -> u64 {
        self.counts[kind_row(kind)].iter().sum()
    }

    /// Fraction of all counted actions with this kind (0.0 on an empty grid).
    pub fn kind_share(&self, kind: ActionKind) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.kind_total(kind) as f64 / total as f64
        }
    }
}

/// Counts producing actions across search traces. With `selected_only` the
/// census covers the frames that made the final evidence buffer (the chosen
/// moves); without it, the action of every expanded node.
pub fn action_distribution(traces: &[SearchTrace], selected_only: bool) -> ActionGrid {
    let mut grid = ActionGrid::default();
    for trace in traces {
        if selected_only {
            let mut by_ref: HashMap<&str, &Action> = HashMap::new();
            for node in &trace.nodes {
                for r in &node.frame_refs {
                    by_ref.insert(r.as_str(), &node.action);
                }
            }
            for r in &trace.buffer_refs {
                match by_ref.get(r.as_str()) {
                    Some(action) => grid.count(action),
                    None => log::warn!("buffer ref {r} not present in its own trace"),
                }
            }
        } else {
            for node in &trace.nodes {
                grid.count(&node.action);
            }
        }
    }
    grid
}

/// Action grid over the buffer-selected actions already recorded in results.
pub fn action_distribution_from_results(results: &[RunResult]) -> ActionGrid {
    let mut grid = ActionGrid::default();
    for result in results {
        for action in &result.selected_actions {
            grid.count(action);
        }
    }
    grid
}

// ---------------------------------------------------------------------------
// Accuracy tables
// ---------------------------------------------------------------------------

/// (correct, total) tally for one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        if correct {
            self.correct += 1;
        }
    }

    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

/// Renders a cell percentage with the tables' two-decimal convention;
/// empty cells render as an em dash.
pub fn format_cell(tally: &Tally) -> String {
    match tally.percent() {
        Some(p) => format!("{p:.2}"),
        None => "—".to_string(),
    }
}

/// One table row: a (verifier, k, γ) condition and its per-category cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub verifier: String,
    pub top_k: usize,
    pub gamma: u32,
    /// Aligned with the table's `categories`.
    pub cells: Vec<Tally>,
    /// Pooled over all of the row's questions, NOT the mean of the cells.
    pub avg: Tally,
}

impl AccuracyRow {
    pub fn label(&self) -> String {
        format!("{} (k={}, γ={})", self.verifier, self.top_k, self.gamma)
    }
}

/// Accuracy per (verifier, k, γ) × category, with a pooled Avg. column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub categories: Vec<String>,
    pub rows: Vec<AccuracyRow>,
}

/// Label under which questions missing from the category map are tallied.
pub const UNCATEGORIZED: &str = "uncategorized";

/// Builds the accuracy table. `categories` maps question ids to category
/// labels; unmapped questions land in the "uncategorized" bucket. Rows are
/// sorted by (verifier, k, γ) and columns alphabetically, so the table is
/// deterministic for a given result set.
pub fn accuracy_table(
    results: &[RunResult],
    categories: &HashMap<String, String>,
) -> AccuracyTable {
    let mut column_set: BTreeSet<String> = BTreeSet::new();
    let mut rows: BTreeMap<(String, usize, u32), HashMap<String, Tally>> = BTreeMap::new();
    for result in results {
        let category = categories
            .get(&result.question_id)
            .cloned()
            .unwrap_or_else(|| UNCATEGORIZED.to_string());
        column_set.insert(category.clone());
        rows.entry((result.verifier.clone(), result.top_k, result.beam_depth))
            .or_default()
            .entry(category)
            .or_default()
            .add(result.correct);
    }

    let columns: Vec<String> = column_set.into_iter().collect();
    let rows = rows
        .into_iter()
        .map(|((verifier, top_k, gamma), cells_by_category)| {
            let cells: Vec<Tally> = columns
                .iter()
                .map(|c| cells_by_category.get(c).copied().unwrap_or_default())
                .collect();
            let avg = cells.iter().fold(Tally::default(), |mut acc, t| {
                acc.correct += t.correct;
                acc.total += t.total;
                acc
            });
            AccuracyRow {
                verifier,
                top_k,
                gamma,
                cells,
                avg,
            }
        })
        .collect();
    AccuracyTable {
        categories: columns,
        rows,
    }
}

impl AccuracyTable {
    /// CSV rendering: header `condition,<categories...>,avg`, cells in the
    /// two-decimal table format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition");
        for c in &self.categories {
            out.push(',');
            out.push_str(c);
        }
        out.push_str(",avg\n");
        for row in &self.rows {
            out.push_str(&row.label());
            for cell in &row.cells {
                out.push(',');
                out.push_str(&format_cell(cell));
            }
            out.push(',');
            out.push_str(&format_cell(&row.avg));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Perceptual-quality ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct QualityCsvRow {
    frame_ref: String,
    benchmark: String,
    gamma: u32,
    score: f64,
}

/// Mean quality for one (benchmark, γ) group; `gamma` None is the pooled
/// per-benchmark average over all of its frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityGroup {
    pub benchmark: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<u32>,
    pub count: usize,
    pub mean: f64,
}

/// Parsed quality file: one score per known frame (duplicates last-wins)
/// plus group means.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    pub per_frame: BTreeMap<String, f64>,
    /// Per-(benchmark, γ) means followed by pooled per-benchmark means,
    /// sorted by benchmark then γ.
    pub groups: Vec<QualityGroup>,
    pub skipped_unknown: usize,
    pub duplicates: usize,
}

/// Ingests a `frame_ref,benchmark,gamma,score` CSV. Rows naming frames
/// outside `known_refs` are skipped with a warning; duplicate frame refs
/// keep the last row seen (with a warning). Group means are exact sample
/// means over the surviving per-frame scores.
pub fn ingest_quality_scores(
    path: &Path,
    known_refs: &HashSet<String>,
) -> Result<QualityReport> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot read quality CSV {path:?}: {e}")))?;
    let mut rows: BTreeMap<String, QualityCsvRow> = BTreeMap::new();
    let mut report = QualityReport::default();
    for record in reader.deserialize::<QualityCsvRow>() {
        let row =
            record.map_err(|e| Error::Config(format!("malformed quality CSV row: {e}")))?;
        if !known_refs.contains(&row.frame_ref) {
            log::warn!("quality row for unknown frame {} skipped", row.frame_ref);
            report.skipped_unknown += 1;
            continue;
        }
        if rows.insert(row.frame_ref.clone(), row).is_some() {
            report.duplicates += 1;
            log::warn!("duplicate quality rows; keeping the last one seen");
        }
    }

    let mut by_group: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    let mut by_benchmark: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in rows.values() {
        report.per_frame.insert(row.frame_ref.clone(), row.score);
        by_group
            .entry((row.benchmark.clone(), row.gamma))
            .or_default()
            .push(row.score);
        by_benchmark
            .entry(row.benchmark.clone())
            .or_default()
            .push(row.score);
    }
    let mean = |scores: &[f64]| scores.iter().sum::<f64>() / scores.len() as f64;
    let mut groups: Vec<QualityGroup> = by_group
        .into_iter()
        .map(|((benchmark, gamma), scores)| QualityGroup {
            benchmark,
            gamma: Some(gamma),
            count: scores.len(),
            mean: mean(&scores),
        })
        .collect();
    groups.extend(by_benchmark.into_iter().map(|(benchmark, scores)| {
        QualityGroup {
            benchmark,
            gamma: None,
            count: scores.len(),
            mean: mean(&scores),
        }
    }));
    groups.sort_by(|a, b| {
        (&a.benchmark, a.gamma.is_none(), a.gamma).cmp(&(&b.benchmark, b.gamma.is_none(), b.gamma))
    });
    report.groups = groups;
    Ok(report)
}

/// Copies ingested per-frame quality scores onto matching frame records.
pub fn attach_quality(frames: &mut [FrameRecord], report: &QualityReport) {
    for frame in frames {
        if let Some(score) = report.per_frame.get(&frame.image_ref) {
            frame.quality_score = Some(*score);
        }
    }
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

/// Everything the emitters render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub accuracy: AccuracyTable,
    pub entropy: EntropySummary,
    pub actions_selected: ActionGrid,
    pub actions_expanded: ActionGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!(
                "unknown report format {other:?} (expected csv, json, or svg)"
            ))),
        }
    }
}

/// Writes the bundle in the requested format and returns the created file
/// paths. Output is deterministic: emitting the same bundle twice yields
/// byte-identical files.
pub fn emit_report(
    bundle: &ReportBundle,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Csv => {
            emit("accuracy.csv", bundle.accuracy.to_csv())?;
            emit("entropy.csv", entropy_csv(&bundle.entropy))?;
            emit("actions.csv", actions_csv(bundle))?;
            if let Some(quality) = &bundle.quality {
                emit("quality.csv", quality_csv(quality))?;
            }
        }
        ReportFormat::Json => {
            let value = serde_json::to_value(bundle)?;
            emit("report.json", canonical_json(&value) + "\n")?;
        }
        ReportFormat::Svg => {
            emit("entropy.svg", entropy_svg(&bundle.entropy))?;
            emit(
                "actions.svg",
                actions_svg("Selected actions", &bundle.actions_selected),
            )?;
            emit(
                "actions_expanded.svg",
                actions_svg("Expanded actions", &bundle.actions_expanded),
            )?;
        }
    }
    Ok(written)
}

/// Raw-dump CSV (4-decimal floats): condition,group,valid,invalid,mean.
fn entropy_csv(summary: &EntropySummary) -> String {
    let mut out = String::from("condition,group,valid,invalid,mean\n");
    for c in &summary.conditions {
        for (group, stats) in [
            ("overall", &c.overall),
            ("correct", &c.correct),
            ("wrong", &c.wrong),
        ] {
            let mean = stats
                .mean
                .map(|m| format!("{m:.4}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.condition, group, stats.valid, stats.invalid, mean
            ));
        }
    }
    out
}

fn grid_csv_rows(out: &mut String, which: &str, grid: &ActionGrid) {
    for (row, kind_label) in KIND_LABELS.iter().enumerate() {
        out.push_str(&format!(
            "{which},{kind_label},{},{},{}\n",
            grid.counts[row][0], grid.counts[row][1], grid.counts[row][2]
        ));
    }
}

fn actions_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("grid,kind,small,medium,large\n");
    grid_csv_rows(&mut out, "selected", &bundle.actions_selected);
    grid_csv_rows(&mut out, "expanded", &bundle.actions_expanded);
    out
}

/// Table CSV (2-decimal floats): benchmark,gamma,count,mean; γ blank on
/// pooled per-benchmark rows.
fn quality_csv(report: &QualityReport) -> String {
    let mut out = String::from("benchmark,gamma,count,mean\n");
    for g in &report.groups {
        let gamma = g.gamma.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.2}\n",
            g.benchmark, gamma, g.count, g.mean
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// SVG bar charts
// ---------------------------------------------------------------------------

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 320.0;
const SVG_MARGIN: f64 = 40.0;

struct Bar {
    label: String,
    value: f64,
    color: &'static str,
}

/// Minimal deterministic bar chart; values are annotated above each bar.
fn bar_chart(title: &str, bars: &[Bar], value_format_decimals: usize) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        SVG_WIDTH / 2.0,
        xml_escape(title)
    ));
    let max_value = bars.iter().map(|b| b.value).fold(0.0f64, f64::max);
    let plot_height = SVG_HEIGHT - 2.0 * SVG_MARGIN;
    let plot_width = SVG_WIDTH - 2.0 * SVG_MARGIN;
    let slot = if bars.is_empty() {
        plot_width
    } else {
        plot_width / bars.len() as f64
    };
    for (i, bar) in bars.iter().enumerate() {
        let height = if max_value > 0.0 {
            plot_height * bar.value / max_value
        } else {
            0.0
        };
        let x = SVG_MARGIN + i as f64 * slot + slot * 0.125;
        let y = SVG_HEIGHT - SVG_MARGIN - height;
        svg.push_str(&format!(
            "  <rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{height:.2}\" fill=\"{}\"/>\n",
            slot * 0.75,
            bar.color
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{:.*}</text>\n",
            x + slot * 0.375,
            y - 4.0,
            value_format_decimals,
            bar.value
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            x + slot * 0.375,
            SVG_HEIGHT - SVG_MARGIN + 14.0,
            xml_escape(&bar.label)
        ));
    }
    svg.push_str(&format!(
        "  <line x1=\"{SVG_MARGIN}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        SVG_HEIGHT - SVG_MARGIN,
        SVG_WIDTH - SVG_MARGIN,
        SVG_HEIGHT - SVG_MARGIN
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn entropy_svg(summary: &EntropySummary) -> String {
    let mut bars = Vec::new();
    for c in &summary.conditions {
        for (group, stats, color) in [
            ("overall", &c.overall, "#4878a8"),
            ("correct", &c.correct, "#58a05a"),
            ("wrong", &c.wrong, "#b05050"),
        ] {
            if let Some(mean) = stats.mean {
                bars.push(Bar {
                    label: format!("{} {}", c.condition, group),
                    value: mean,
                    color,
                });
            }
        }
    }
    bar_chart("Mean answer entropy", &bars, 4)
}

fn actions_svg(title: &str, grid: &ActionGrid) -> String {
    let mut bars = Vec::new();
    for (row, kind_label) in KIND_LABELS.iter().enumerate() {
        for (col, bucket_label) in BUCKET_LABELS.iter().enumerate() {
            bars.push(Bar {
                label: format!("{kind_label}/{bucket_label}"),
                value: grid.counts[row][col] as f64,
                color: ["#4878a8", "#58a05a", "#b05050"][row],
            });
        }
    }
    bar_chart(title, &bars, 0)
}
