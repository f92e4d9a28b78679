//! Structured outputs: semantic results, impact analysis, updated
//! requirements, the overall summary and the energy ledger.
//!
//! Every table is written twice: CSV with 4-decimal numbers and JSON
//! (`{"schema", "version", "rows"}`) at full precision. Writes go through a
//! temp file in the target directory and a rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EnergyRates;
use crate::generation::OpCounts;
use crate::orchestrator::{CycleState, RecommendationAction};
use crate::similarity::MatchCategory;

pub const REPORT_VERSION: u32 = 1;

pub const SEMANTIC_RESULTS: &str = "semantic_results";
pub const IMPACT_ANALYSIS: &str = "impact_analysis";
pub const UPDATED_REQUIREMENTS: &str = "updated_requirements";
pub const OVERALL_SUMMARY: &str = "overall_summary";
pub const ENERGY: &str = "energy";

pub const ENERGY_NOTE: &str = "Savings of 21 kWh and 0.008 t CO2eq for 30 saved operations, as sometimes quoted, \
do not follow from these rates (30 x 0.1 kWh = 3 kWh; 3 kWh x 0.0004 t/kWh = 0.0012 t). \
Figures in this file follow CO2eq = (ops x energy per op) x grid factor.";

pub const OP_UNIT_NOTE: &str = "One operation is one generation-provider call (one batch); token counts are not used.";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
    #[error("row {0}: {1}")]
    InvalidRow(usize, String),
    #[error("malformed {schema} report: {message}")]
    Malformed { schema: &'static str, message: String },
    #[error("operation counts must be non-negative")]
    NegativeOps,
    #[error("rates must be non-negative")]
    NegativeRate,
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticResultRow {
    pub left_id: String,
    pub right_id: Option<String>,
    pub left_text: String,
    pub right_text: String,
    pub cosine: f64,
    pub jaccard: f64,
    pub category: MatchCategory,
    pub action: Option<RecommendationAction>,
    pub rationale: String,
    pub testing_impact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub requirement_id: String,
    pub linked_artefact_id: String,
    pub traceability_cosine: f64,
    pub impact_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatedRequirementRow {
    pub requirement_id: String,
    pub cycle: u32,
    pub prior_text: String,
    pub updated_text: String,
    pub action_applied: RecommendationAction,
    pub reviewer: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryHistogram {
    pub high: usize,
    pub medium: usize,
    pub low: usize,
    pub no_match: usize,
}

impl CategoryHistogram {
    /// From counts indexed by [`MatchCategory::ordinal`].
    pub fn from_counts(c: [usize; 4]) -> Self {
        Self {
            no_match: c[0],
            low: c[1],
            medium: c[2],
            high: c[3],
        }
    }

    pub fn total(&self) -> usize {
        self.high + self.medium + self.low + self.no_match
    }

    pub fn count(&self, c: MatchCategory) -> usize {
        match c {
            MatchCategory::High => self.high,
            MatchCategory::Medium => self.medium,
            MatchCategory::Low => self.low,
            MatchCategory::NoMatch => self.no_match,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RubricMeans {
    pub clarity: f64,
    pub completeness: f64,
    pub testability: f64,
    pub consistency: f64,
    pub semantic_alignment: f64,
}

impl RubricMeans {
    pub fn from_array(m: [f64; 5]) -> Self {
        Self {
            clarity: m[0],
            completeness: m[1],
            testability: m[2],
            consistency: m[3],
            semantic_alignment: m[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.clarity,
            self.completeness,
            self.testability,
            self.consistency,
            self.semantic_alignment,
        ]
    }

    pub fn overall(&self) -> f64 {
        self.as_array().iter().sum::<f64>() / 5.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub cycle: u32,
    pub mean_cosine: f64,
    pub histogram: CategoryHistogram,
    pub rubric: RubricMeans,
    /// Provider calls made during this cycle.
    pub ops: OpCounts,
}

/// A table with a fixed CSV column order.
pub trait ReportRow: Serialize + DeserializeOwned + Sized {
    const SCHEMA: &'static str;
    const HEADER: &'static [&'static str];

    fn validate(&self) -> Result<(), String>;
    fn to_record(&self) -> Vec<String>;
    fn from_record(fields: &[&str]) -> Result<Self, String>;
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn unit_interval(name: &str, x: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(format!("{name} {x} is outside [0, 1]"))
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("`{s}` is not a number"))
}

fn parse_int<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not an integer"))
}

fn parse_action(s: &str) -> Result<RecommendationAction, String> {
    RecommendationAction::parse(s).ok_or_else(|| format!("unknown action `{s}`"))
}

impl ReportRow for SemanticResultRow {
    const SCHEMA: &'static str = SEMANTIC_RESULTS;
    const HEADER: &'static [&'static str] = &[
        "left_id",
        "right_id",
        "left_text",
        "right_text",
        "cosine",
        "jaccard",
        "category",
        "action",
        "rationale",
        "testing_impact",
    ];

    fn validate(&self) -> Result<(), String> {
        unit_interval("cosine", self.cosine)?;
        unit_interval("jaccard", self.jaccard)?;
        // No action is fine for any band: suppressed pairs carry none.
        let consistent = match (self.category, self.action) {
            (_, None) => true,
            (MatchCategory::High, Some(_)) => false,
            (MatchCategory::Medium | MatchCategory::Low, Some(a)) => a == RecommendationAction::Refine,
            (MatchCategory::NoMatch, Some(a)) => a == RecommendationAction::AddCoverage,
        };
        if !consistent {
            return Err(format!("action {:?} does not fit category {}", self.action, self.category));
        }
        if self.right_id.is_none() && self.category != MatchCategory::NoMatch {
            return Err("unmatched row must be NoMatch".into());
        }
        Ok(())
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.left_id.clone(),
            self.right_id.clone().unwrap_or_default(),
            self.left_text.clone(),
            self.right_text.clone(),
            num(self.cosine),
            num(self.jaccard),
            self.category.as_str().to_string(),
            self.action.map_or_else(String::new, |a| a.as_str().to_string()),
            self.rationale.clone(),
            self.testing_impact.clone(),
        ]
    }

    fn from_record(f: &[&str]) -> Result<Self, String> {
        Ok(Self {
            left_id: f[0].to_string(),
            right_id: Some(f[1]).filter(|s| !s.is_empty()).map(str::to_string),
            left_text: f[2].to_string(),
            right_text: f[3].to_string(),
            cosine: parse_f64(f[4])?,
            jaccard: parse_f64(f[5])?,
            category: MatchCategory::parse(f[6]).ok_or_else(|| format!("unknown category `{}`", f[6]))?,
            action: Some(f[7]).filter(|s| !s.is_empty()).map(parse_action).transpose()?,
            rationale: f[8].to_string(),
            testing_impact: f[9].to_string(),
        })
    }
}

impl ReportRow for ImpactRow {
    const SCHEMA: &'static str = IMPACT_ANALYSIS;
    const HEADER: &'static [&'static str] =
        &["requirement_id", "linked_artefact_id", "traceability_cosine", "impact_note"];

    fn validate(&self) -> Result<(), String> {
        unit_interval("traceability_cosine", self.traceability_cosine)
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.requirement_id.clone(),
            self.linked_artefact_id.clone(),
            num(self.traceability_cosine),
            self.impact_note.clone(),
        ]
    }

    fn from_record(f: &[&str]) -> Result<Self, String> {
        Ok(Self {
            requirement_id: f[0].to_string(),
            linked_artefact_id: f[1].to_string(),
            traceability_cosine: parse_f64(f[2])?,
            impact_note: f[3].to_string(),
        })
    }
}

impl ReportRow for UpdatedRequirementRow {
    const SCHEMA: &'static str = UPDATED_REQUIREMENTS;
    const HEADER: &'static [&'static str] = &[
        "requirement_id",
        "cycle",
        "prior_text",
        "updated_text",
        "action_applied",
        "reviewer",
    ];

    fn validate(&self) -> Result<(), String> {
        if self.requirement_id.is_empty() {
            return Err("requirement_id is empty".into());
        }
        Ok(())
    }

    fn to_record(&self) -> Vec<String> {
        vec![
            self.requirement_id.clone(),
            self.cycle.to_string(),
            self.prior_text.clone(),
            self.updated_text.clone(),
            self.action_applied.as_str().to_string(),
            self.reviewer.clone(),
        ]
    }

    fn from_record(f: &[&str]) -> Result<Self, String> {
        Ok(Self {
            requirement_id: f[0].to_string(),
            cycle: parse_int(f[1])?,
            prior_text: f[2].to_string(),
            updated_text: f[3].to_string(),
            action_applied: parse_action(f[4])?,
            reviewer: f[5].to_string(),
        })
    }
}

impl ReportRow for SummaryRecord {
    const SCHEMA: &'static str = OVERALL_SUMMARY;
    const HEADER: &'static [&'static str] = &[
        "cycle",
        "mean_cosine",
        "high",
        "medium",
        "low",
        "no_match",
        "clarity",
        "completeness",
        "testability",
        "consistency",
        "semantic_alignment",
        "forward_ops",
        "reverse_ops",
        "judge_ops",
    ];

    fn validate(&self) -> Result<(), String> {
        unit_interval("mean_cosine", self.mean_cosine)?;
        if let Some(m) = self.rubric.as_array().iter().find(|m| !(1.0..=5.0).contains(*m)) {
            return Err(format!("rubric mean {m} is outside [1, 5]"));
        }
        Ok(())
    }

    fn to_record(&self) -> Vec<String> {
        let h = &self.histogram;
        let mut out = vec![
            self.cycle.to_string(),
            num(self.mean_cosine),
            h.high.to_string(),
            h.medium.to_string(),
            h.low.to_string(),
            h.no_match.to_string(),
        ];
        out.extend(self.rubric.as_array().iter().map(|&m| num(m)));
        out.extend([self.ops.forward_ops, self.ops.reverse_ops, self.ops.judge_ops].map(|o| o.to_string()));
        out
    }

    fn from_record(f: &[&str]) -> Result<Self, String> {
        let mut rubric = [0.0; 5];
        for (slot, s) in rubric.iter_mut().zip(&f[6..11]) {
            *slot = parse_f64(s)?;
        }
        Ok(Self {
            cycle: parse_int(f[0])?,
            mean_cosine: parse_f64(f[1])?,
            histogram: CategoryHistogram {
                high: parse_int(f[2])?,
                medium: parse_int(f[3])?,
                low: parse_int(f[4])?,
                no_match: parse_int(f[5])?,
            },
            rubric: RubricMeans::from_array(rubric),
            ops: OpCounts {
                forward_ops: parse_int(f[11])?,
                reverse_ops: parse_int(f[12])?,
                judge_ops: parse_int(f[13])?,
            },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Document<R> {
    schema: String,
    version: u32,
    rows: Vec<R>,
}

fn validate_rows<R: ReportRow>(rows: &[R]) -> Result<(), ReportError> {
    for (i, r) in rows.iter().enumerate() {
        r.validate().map_err(|reason| ReportError::InvalidRow(i, reason))?;
    }
    Ok(())
}

pub fn render_csv<R: ReportRow>(rows: &[R]) -> Result<String, ReportError> {
    validate_rows(rows)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let to_err = |e: csv::Error| ReportError::Malformed {
        schema: R::SCHEMA,
        message: e.to_string(),
    };
    w.write_record(R::HEADER).map_err(to_err)?;
    for r in rows {
        w.write_record(r.to_record()).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Malformed {
        schema: R::SCHEMA,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_json<R: ReportRow + Clone>(rows: &[R]) -> Result<String, ReportError> {
    validate_rows(rows)?;
    let doc = Document {
        schema: R::SCHEMA.to_string(),
        version: REPORT_VERSION,
        rows: rows.to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report rows serialize");
    s.push('\n');
    Ok(s)
}

pub fn parse_csv<R: ReportRow>(text: &str) -> Result<Vec<R>, ReportError> {
    let malformed = |message: String| ReportError::Malformed {
        schema: R::SCHEMA,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?;
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(malformed(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().collect();
        rows.push(R::from_record(&fields).map_err(malformed)?);
    }
    Ok(rows)
}

pub fn parse_json<R: ReportRow>(text: &str) -> Result<Vec<R>, ReportError> {
    let doc: Document<R> = serde_json::from_str(text).map_err(|e| ReportError::Malformed {
        schema: R::SCHEMA,
        message: e.to_string(),
    })?;
    if doc.schema != R::SCHEMA || doc.version != REPORT_VERSION {
        return Err(ReportError::Malformed {
            schema: R::SCHEMA,
            message: format!("found schema `{}` version {}", doc.schema, doc.version),
        });
    }
    Ok(doc.rows)
}

/// Writes `contents` to `path` via a temp file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), ReportError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_failure(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_failure(dir))?;
    tmp.write_all(contents.as_bytes()).map_err(io_failure(path))?;
    tmp.persist(path).map_err(|e| ReportError::IoFailure {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Writes `<dir>/<schema>.csv` and `<dir>/<schema>.json`.
pub fn emit<R: ReportRow + Clone>(rows: &[R], dir: &Path) -> Result<(), ReportError> {
    let csv = render_csv(rows)?;
    let json = render_json(rows)?;
    write_atomic(&dir.join(format!("{}.csv", R::SCHEMA)), &csv)?;
    write_atomic(&dir.join(format!("{}.json", R::SCHEMA)), &json)
}

pub fn emit_semantic_results(rows: &[SemanticResultRow], dir: &Path) -> Result<(), ReportError> {
    emit(rows, dir)
}

pub fn emit_impact_analysis(rows: &[ImpactRow], dir: &Path) -> Result<(), ReportError> {
    emit(rows, dir)
}

pub fn emit_updated_requirements(rows: &[UpdatedRequirementRow], dir: &Path) -> Result<(), ReportError> {
    emit(rows, dir)
}

pub fn emit_overall_summary(rows: &[SummaryRecord], dir: &Path) -> Result<(), ReportError> {
    emit(rows, dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub llm_ops: i64,
    pub energy_per_op_kwh: f64,
    pub grid_factor_tons_per_kwh: f64,
    pub baseline_ops: Option<i64>,
}

impl EnergyLedger {
    pub fn new(llm_ops: i64, rates: &EnergyRates) -> Self {
        Self {
            llm_ops,
            energy_per_op_kwh: rates.energy_per_op_kwh,
            grid_factor_tons_per_kwh: rates.grid_factor_tons_per_kwh,
            baseline_ops: rates.baseline_ops,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub ops: i64,
    pub energy_kwh: f64,
    pub co2_tons: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Co2Eq {
    pub energy_kwh: f64,
    pub co2_tons: f64,
    /// `(baseline - ops)` run through the same formula.
    pub savings: Option<Emission>,
}

/// Rounds away binary noise such as `30 × 0.1 = 3.0000000000000004`.
fn settle(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn emission(ops: i64, ledger: &EnergyLedger) -> Emission {
    let energy = settle(ops as f64 * ledger.energy_per_op_kwh);
    Emission {
        ops,
        energy_kwh: energy,
        co2_tons: settle(energy * ledger.grid_factor_tons_per_kwh),
    }
}

/// `energy = ops × energy_per_op`, `co2 = energy × grid_factor`.
pub fn compute_co2eq(ledger: &EnergyLedger) -> Result<Co2Eq, ReportError> {
    if ledger.llm_ops < 0 || ledger.baseline_ops.is_some_and(|b| b < 0) {
        return Err(ReportError::NegativeOps);
    }
    if !(ledger.energy_per_op_kwh >= 0.0 && ledger.grid_factor_tons_per_kwh >= 0.0) {
        return Err(ReportError::NegativeRate);
    }
    let own = emission(ledger.llm_ops, ledger);
    Ok(Co2Eq {
        energy_kwh: own.energy_kwh,
        co2_tons: own.co2_tons,
        savings: ledger.baseline_ops.map(|b| emission(b - ledger.llm_ops, ledger)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub schema: String,
    pub version: u32,
    pub op_unit: String,
    pub batch_size: usize,
    pub ledger: EnergyLedger,
    pub totals: Co2Eq,
    pub per_cycle: Vec<CycleEmission>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleEmission {
    pub cycle: u32,
    pub ops: OpCounts,
    pub energy_kwh: f64,
    pub co2_tons: f64,
}

pub fn energy_report(history: &[SummaryRecord], rates: &EnergyRates, batch_size: usize) -> Result<EnergyReport, ReportError> {
    let total: u64 = history.iter().map(|h| h.ops.total()).sum();
    let ledger = EnergyLedger::new(total as i64, rates);
    let totals = compute_co2eq(&ledger)?;
    let per_cycle = history
        .iter()
        .map(|h| {
            let e = emission(h.ops.total() as i64, &ledger);
            CycleEmission {
                cycle: h.cycle,
                ops: h.ops,
                energy_kwh: e.energy_kwh,
                co2_tons: e.co2_tons,
            }
        })
        .collect();
    Ok(EnergyReport {
        schema: ENERGY.into(),
        version: REPORT_VERSION,
        op_unit: "provider_call".into(),
        batch_size,
        ledger,
        totals,
        per_cycle,
        notes: vec![OP_UNIT_NOTE.into(), ENERGY_NOTE.into()],
    })
}

pub fn cycle_dir(project_dir: &Path, cycle: u32) -> PathBuf {
    project_dir.join(format!("cycle-{cycle}"))
}

/// Writes the current cycle's three tables, the overall summary and the
/// energy ledger under `project_dir`.
pub fn write_cycle_reports(
    project_dir: &Path,
    state: &CycleState,
    rates: &EnergyRates,
    batch_size: usize,
) -> Result<(), ReportError> {
    let dir = cycle_dir(project_dir, state.cycle);
    emit_semantic_results(&state.semantic, &dir)?;
    emit_impact_analysis(&state.impact, &dir)?;
    emit_updated_requirements(&state.updates, &dir)?;
    emit_overall_summary(&state.history, project_dir)?;
    let energy = energy_report(&state.history, rates, batch_size)?;
    let mut text = serde_json::to_string_pretty(&energy).expect("energy report serializes");
    text.push('\n');
    write_atomic(&project_dir.join(format!("{ENERGY}.json")), &text)
}

/// The JSON forms of one cycle's reports, read back from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub cycle: u32,
    pub semantic_results: serde_json::Value,
    pub impact_analysis: serde_json::Value,
    pub updated_requirements: serde_json::Value,
    pub overall_summary: serde_json::Value,
}

pub fn read_bundle(project_dir: &Path, cycle: u32) -> Result<ReportBundle, ReportError> {
    let read = |path: PathBuf| -> Result<serde_json::Value, ReportError> {
        let text = std::fs::read_to_string(&path).map_err(io_failure(&path))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
            schema: "bundle",
            message: format!("{}: {e}", path.display()),
        })
    };
    let dir = cycle_dir(project_dir, cycle);
    Ok(ReportBundle {
        cycle,
        semantic_results: read(dir.join(format!("{SEMANTIC_RESULTS}.json")))?,
        impact_analysis: read(dir.join(format!("{IMPACT_ANALYSIS}.json")))?,
        updated_requirements: read(dir.join(format!("{UPDATED_REQUIREMENTS}.json")))?,
        overall_summary: read(project_dir.join(format!("{OVERALL_SUMMARY}.json")))?,
    })
}

/// Fixed-width table of the summary records, for terminals.
pub fn summary_table(rows: &[SummaryRecord]) -> String {
    let mut out = format!(
        "{:>5} {:>8} {:>5} {:>6} {:>5} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>4}\n",
        "cycle", "cosine", "high", "medium", "low", "no_match", "clar", "compl", "test", "cons", "align", "ops"
    );
    for r in rows {
        let m = r.rubric;
        out.push_str(&format!(
            "{:>5} {:>8.4} {:>5} {:>6} {:>5} {:>8} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>4}\n",
            r.cycle,
            r.mean_cosine,
            r.histogram.high,
            r.histogram.medium,
            r.histogram.low,
            r.histogram.no_match,
            m.clarity,
            m.completeness,
            m.testability,
            m.consistency,
            m.semantic_alignment,
            r.ops.total()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semantic(cosine: f64) -> SemanticResultRow {
        SemanticResultRow {
            left_id: "1#0".into(),
            right_id: Some("1#0".into()),
            left_text: "Lock, the \"account\".".into(),
            right_text: "Lock it\nnow.".into(),
            cosine,
            jaccard: 0.5,
            category: MatchCategory::Medium,
            action: Some(RecommendationAction::Refine),
            rationale: "r".into(),
            testing_impact: "t".into(),
        }
    }

    #[test]
    fn empty_tables() {
        assert_eq!(
            render_csv::<ImpactRow>(&[]).unwrap(),
            "requirement_id,linked_artefact_id,traceability_cosine,impact_note\r\n"
        );
        let json = render_json::<ImpactRow>(&[]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema"], "impact_analysis");
        assert_eq!(v["version"], 1);
        assert_eq!(v["rows"], serde_json::json!([]));
    }

    #[test]
    fn four_decimal_csv_and_quoting() {
        let csv = render_csv(&[semantic(0.8)]).unwrap();
        assert!(csv.contains(",0.8000,0.5000,Medium,refine,"));
        assert!(csv.contains("\"Lock, the \"\"account\"\".\""));
        let back: Vec<SemanticResultRow> = parse_csv(&csv).unwrap();
        assert_eq!(back, vec![semantic(0.8)]);
    }

    #[test]
    fn invalid_rows_are_rejected() {
        assert!(matches!(render_csv(&[semantic(0.7), semantic(1.2)]), Err(ReportError::InvalidRow(1, _))));
        let mut wrong = semantic(0.7);
        wrong.action = Some(RecommendationAction::Merge);
        assert!(matches!(render_json(&[wrong]), Err(ReportError::InvalidRow(0, _))));
    }

    #[test]
    fn energy_examples() {
        let rates = EnergyRates::default();
        let zero = compute_co2eq(&EnergyLedger::new(0, &rates)).unwrap();
        assert_eq!((zero.energy_kwh, zero.co2_tons), (0.0, 0.0));
        let hundred = compute_co2eq(&EnergyLedger::new(100, &rates)).unwrap();
        assert_eq!((hundred.energy_kwh, hundred.co2_tons), (10.0, 0.004));
        let mut with_baseline = EnergyLedger::new(70, &rates);
        with_baseline.baseline_ops = Some(100);
        let s = compute_co2eq(&with_baseline).unwrap().savings.unwrap();
        assert_eq!((s.ops, s.energy_kwh, s.co2_tons), (30, 3.0, 0.0012));
        assert!(matches!(compute_co2eq(&EnergyLedger::new(-1, &rates)), Err(ReportError::NegativeOps)));
    }
}
