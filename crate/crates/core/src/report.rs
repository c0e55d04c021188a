//! The assessment report: a JSON document holding everything needed to audit
//! or re-derive a run, and its Markdown rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assessment::{
    AssessmentConfig, CalibrationMode, ResponseDistribution, SigmaKind, SymmetryReport, TraitStat,
    TraitStats,
};
use crate::backend::BackendDescriptor;
use crate::inventory::{Inventory, Trait};
use crate::mcqa::{OptionProbVector, ResponseRecord};
use crate::selection::MIScore;
use crate::templating::{CanonicalLabel, OptionOrder};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub backend: BackendDescriptor,
    /// RFC 3339, UTC.
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    /// Order the candidates were scored under.
    pub order: String,
    pub sample_seed: u64,
    pub sample_size: usize,
    pub ranking: Vec<MIScore>,
}

/// Answers to every item under one option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRun {
    pub order: OptionOrder,
    pub stats: TraitStats,
    pub distribution: ResponseDistribution,
    pub records: Vec<ResponseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentFreeProbe {
    pub order: String,
    pub vector: OptionProbVector,
    pub selected: CanonicalLabel,
    /// Fraction of items answered with the probe's selection.
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentFreeSection {
    pub probes: Vec<ContentFreeProbe>,
    /// Over all (item, order) records.
    pub match_rate: f64,
}

impl ContentFreeSection {
    pub fn probe(&self, order: &str) -> Option<&ContentFreeProbe> {
        self.probes.iter().find(|p| p.order == order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderShare {
    pub order: String,
    pub max_label_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSection {
    pub mode: CalibrationMode,
    pub runs: Vec<OrderRun>,
    pub symmetry: SymmetryReport,
    /// Calibrated selections pooled over all orders.
    #[serde(with = "crate::mcqa::label_map")]
    pub pooled_label_percent: [f64; 5],
    pub max_label_share: f64,
    pub uncalibrated_max_label_share: f64,
    pub per_order: Vec<OrderShare>,
    /// Records whose calibrated vector is flat: the raw answer was entirely
    /// explained by the content-free prior.
    pub bias_only_records: usize,
}

/// Reference human statistics shown alongside model results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBaseline {
    pub stats: BTreeMap<Trait, TraitStat>,
    #[serde(with = "crate::mcqa::label_map")]
    pub label_percent: [f64; 5],
    /// Keyed values 5..1.
    pub value_fraction: [f64; 5],
}

impl HumanBaseline {
    /// Published human responses to the 1k-item machine personality inventory.
    pub fn mpi() -> Self {
        let rows = [
            (Trait::Openness, 3.44, 1.13),
            (Trait::Conscientiousness, 3.60, 0.98),
            (Trait::Extraversion, 3.41, 1.07),
            (Trait::Agreeableness, 3.66, 1.04),
            (Trait::Neuroticism, 2.80, 1.06),
        ];
        HumanBaseline {
            stats: rows
                .into_iter()
                .map(|(t, mean, sigma)| (t, TraitStat { mean, sigma, n: 0 }))
                .collect(),
            label_percent: [14.80, 29.08, 18.98, 21.77, 15.37],
            value_fraction: [0.22, 0.32, 0.19, 0.18, 0.09],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub schema_version: u32,
    pub config: AssessmentConfig,
    pub provenance: Provenance,
    pub inventory: Inventory,
    pub template: String,
    /// The chosen template rendered with a `{Situation}` placeholder.
    pub template_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSummary>,
    pub runs: Vec<OrderRun>,
    pub symmetry: SymmetryReport,
    pub content_free: ContentFreeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
    pub human: HumanBaseline,
}

impl AssessmentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn run(&self, order: &str) -> Option<&OrderRun> {
        self.runs.iter().find(|r| r.order.name == order)
    }

    /// Records grouped by order name, in run order.
    pub fn records_by_order(&self) -> Vec<(String, Vec<ResponseRecord>)> {
        self.runs
            .iter()
            .map(|r| (r.order.name.clone(), r.records.clone()))
            .collect()
    }

    /// A copy with timestamps blanked, for comparing runs.
    pub fn without_timestamps(&self) -> Self {
        let mut r = self.clone();
        r.provenance.started_at.clear();
        r.provenance.finished_at.clear();
        r
    }
}

/// Two decimals, halves rounded away from zero.
pub fn fmt2(x: f64) -> String {
    let scaled = x * 100.0;
    let frac = scaled.fract().abs();
    let rounded = if (frac - 0.5).abs() < 1e-7 {
        scaled.trunc() + scaled.signum()
    } else {
        scaled.round()
    };
    let out = format!("{:.2}", rounded / 100.0);
    if out == "-0.00" {
        "0.00".into()
    } else {
        out
    }
}

fn stats_cells(stats: &BTreeMap<Trait, TraitStat>) -> String {
    Trait::ALL
        .iter()
        .map(|t| match stats.get(t) {
            Some(s) => format!(" {} ± {} |", fmt2(s.mean), fmt2(s.sigma)),
            None => " – |".into(),
        })
        .collect()
}

fn ocean_table(out: &mut String, runs: &[OrderRun], human: &HumanBaseline) {
    out.push_str("| Order |");
    for t in Trait::ALL {
        let _ = write!(out, " {} |", t.code());
    }
    out.push_str("\n|---|---|---|---|---|---|\n");
    for run in runs {
        let _ = writeln!(out, "| {} |{}", run.order.name, stats_cells(&run.stats.per_trait));
    }
    let _ = writeln!(out, "| Human |{}", stats_cells(&human.stats));
}

fn distribution_table(out: &mut String, runs: &[OrderRun], human: &HumanBaseline) {
    out.push_str("| Order |");
    for l in CanonicalLabel::ALL {
        let _ = write!(out, " {} % |", l.abbrev());
    }
    out.push_str(" 5 | 4 | 3 | 2 | 1 |\n|---|---|---|---|---|---|---|---|---|---|---|\n");
    let row = |out: &mut String, name: &str, labels: &[f64; 5], values: &[f64; 5]| {
        let _ = write!(out, "| {name} |");
        for x in labels.iter().chain(values) {
            let _ = write!(out, " {} |", fmt2(*x));
        }
        out.push('\n');
    };
    for run in runs {
        row(
            out,
            &run.order.name,
            &run.distribution.label_percent,
            &run.distribution.value_fraction,
        );
    }
    row(out, "Human", &human.label_percent, &human.value_fraction);
}

fn symmetry_section(out: &mut String, sym: &SymmetryReport) {
    let _ = writeln!(
        out,
        "Reference order: {}. Minimum agreement {} (τ = {}): **{}**.\n",
        sym.reference,
        fmt2(sym.min_agreement),
        fmt2(sym.tau),
        if sym.pass { "PASS" } else { "FAIL" }
    );
    if sym.agreements.is_empty() {
        return;
    }
    out.push_str("| Order A | Order B | Agreement |\n|---|---|---|\n");
    for p in &sym.agreements {
        let _ = writeln!(out, "| {} | {} | {} |", p.a, p.b, fmt2(p.agreement));
    }
    out.push('\n');
}

pub fn render_markdown(report: &AssessmentReport) -> String {
    let mut out = String::new();
    let p = &report.provenance;
    let _ = writeln!(out, "# Personality assessment: {}\n", p.backend.name);
    let _ = writeln!(out, "- Inventory: {} ({} items)", report.inventory.name, report.inventory.len());
    let _ = writeln!(out, "- Template: `{}` ({})", report.template, report.config.indexing);
    let _ = writeln!(
        out,
        "- σ: {}",
        match report.config.sigma {
            SigmaKind::Population => "population",
            SigmaKind::Sample => "sample",
        }
    );
    let _ = writeln!(out, "- Tool: psyprobe {}", p.tool_version);
    let _ = writeln!(out, "- Run: {} → {}\n", p.started_at, p.finished_at);

    out.push_str("## Prompt\n\n```text\n");
    out.push_str(&report.template_text);
    out.push_str("\n```\n\n");

    if let Some(sel) = &report.selection {
        let _ = writeln!(
            out,
            "## Template selection\n\n{} sampled items, order {}.\n\n| Template | MI (nats) |\n|---|---|",
            sel.sample_size, sel.order
        );
        for s in &sel.ranking {
            let _ = writeln!(out, "| {} | {:.4} |", s.template, s.mi_nats);
        }
        out.push('\n');
    }

    out.push_str("## OCEAN scores (mean ± σ)\n\n");
    ocean_table(&mut out, &report.runs, &report.human);
    out.push_str("\n## Answer distribution\n\n");
    distribution_table(&mut out, &report.runs, &report.human);
    out.push_str("\n## Option-order symmetry\n\n");
    symmetry_section(&mut out, &report.symmetry);

    out.push_str("## Content-free probes\n\n");
    let _ = writeln!(
        out,
        "Share of answers equal to the content-free answer: {}.\n",
        fmt2(report.content_free.match_rate)
    );
    if !report.content_free.probes.is_empty() {
        out.push_str("| Order | Content-free answer | Match rate |\n|---|---|---|\n");
        for probe in &report.content_free.probes {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                probe.order,
                probe.selected.abbrev(),
                fmt2(probe.match_rate)
            );
        }
        out.push('\n');
    }

    if let Some(cal) = &report.calibration {
        let _ = writeln!(
            out,
            "## Calibrated ({})\n\nMax label share {} (uncalibrated {}); {} records fully explained by the prior.\n",
            match cal.mode {
                CalibrationMode::Divide => "divide",
                CalibrationMode::Multiply => "multiply",
            },
            fmt2(cal.max_label_share),
            fmt2(cal.uncalibrated_max_label_share),
            cal.bias_only_records
        );
        ocean_table(&mut out, &cal.runs, &report.human);
        out.push('\n');
        distribution_table(&mut out, &cal.runs, &report.human);
        out.push('\n');
        symmetry_section(&mut out, &cal.symmetry);
    }
    out
}
