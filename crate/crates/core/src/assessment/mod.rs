//! Scoring a set of answers: keyed Likert values, OCEAN statistics, answer
//! distributions, option-order symmetry and content-free calibration.

mod config;
mod run;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::inventory::{Inventory, InventoryError, Key, Trait};
use crate::mcqa::{OptionProbVector, ResponseRecord, ScoringError};
use crate::selection::SelectionError;
use crate::templating::{CanonicalLabel, TemplateError};

pub use config::{AssessmentConfig, BackendConfig, OrderChoice, Seeds, TemplateChoice};
pub use run::{calibrate_report, run_assessment, run_with_backend, score_orders};

#[derive(Debug, Error)]
pub enum AssessmentError {
    #[error("item {0} has no response")]
    MissingItem(String),
    #[error("item {0} has more than one response")]
    DuplicateItem(String),
    #[error("response for unknown item {0}")]
    UnknownItem(String),
    #[error("orders {a} and {b} cover different items")]
    CoverageMismatch { a: String, b: String },
    #[error("no response records")]
    NoRecords,
    #[error("item {item_id}, order {order}, template {template}: {source}")]
    Scoring {
        item_id: String,
        order: String,
        template: String,
        #[source]
        source: ScoringError,
    },
    #[error("content-free probe, order {order}, template {template}: {source}")]
    ContentFree {
        order: String,
        template: String,
        #[source]
        source: ScoringError,
    },
    #[error("template selection failed: {0}")]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Keyed Likert value: positive items map VA..VI to 5..1, negative items to 1..5.
pub fn likert_value(label: CanonicalLabel, key: Key) -> u8 {
    let positive = 5 - label.index() as u8;
    match key {
        Key::Positive => positive,
        Key::Negative => 6 - positive,
    }
}

/// Which standard deviation the statistics report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKind {
    /// Denominator N.
    #[default]
    Population,
    /// Denominator N − 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitStat {
    pub mean: f64,
    pub sigma: f64,
    pub n: usize,
}

/// Mean and standard deviation of the keyed values per trait. Traits without
/// items are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitStats {
    pub sigma_kind: SigmaKind,
    pub per_trait: BTreeMap<Trait, TraitStat>,
}

impl TraitStats {
    pub fn get(&self, trait_: Trait) -> Option<&TraitStat> {
        self.per_trait.get(&trait_)
    }
}

/// Pairs each inventory item with its record, checking exact coverage.
fn match_records<'a>(
    records: &'a [ResponseRecord],
    inv: &'a Inventory,
) -> Result<Vec<(&'a crate::inventory::InventoryItem, &'a ResponseRecord)>, AssessmentError> {
    let mut by_id: HashMap<&str, &ResponseRecord> = HashMap::with_capacity(records.len());
    for r in records {
        if by_id.insert(r.item_id.as_str(), r).is_some() {
            return Err(AssessmentError::DuplicateItem(r.item_id.clone()));
        }
    }
    let mut pairs = Vec::with_capacity(inv.items.len());
    for item in &inv.items {
        let record = by_id
            .remove(item.id.as_str())
            .ok_or_else(|| AssessmentError::MissingItem(item.id.clone()))?;
        pairs.push((item, record));
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(AssessmentError::UnknownItem(extra.to_string()));
    }
    Ok(pairs)
}

pub fn ocean_stats(
    records: &[ResponseRecord],
    inv: &Inventory,
    sigma_kind: SigmaKind,
) -> Result<TraitStats, AssessmentError> {
    let mut values: BTreeMap<Trait, Vec<u8>> = BTreeMap::new();
    for (item, record) in match_records(records, inv)? {
        values
            .entry(item.trait_)
            .or_default()
            .push(likert_value(record.selected, item.key));
    }
    let per_trait = values
        .into_iter()
        .map(|(t, vs)| (t, summarize(&vs, sigma_kind)))
        .collect();
    Ok(TraitStats {
        sigma_kind,
        per_trait,
    })
}

/// Keyed values are small integers, so the sums are exact and each statistic
/// is rounded once.
fn summarize(values: &[u8], sigma_kind: SigmaKind) -> TraitStat {
    let n = values.len() as u64;
    let sum: u64 = values.iter().map(|&v| v as u64).sum();
    let sum_sq: u64 = values.iter().map(|&v| (v as u64).pow(2)).sum();
    // n² · population variance
    let scaled = n * sum_sq - sum * sum;
    let denom = match sigma_kind {
        SigmaKind::Population => n * n,
        SigmaKind::Sample => n * n.saturating_sub(1).max(1),
    };
    TraitStat {
        mean: sum as f64 / n as f64,
        sigma: (scaled as f64 / denom as f64).sqrt(),
        n: values.len(),
    }
}

/// Share of each selected label and of each keyed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDistribution {
    /// Percent of items selecting each label.
    #[serde(with = "crate::mcqa::label_map")]
    pub label_percent: [f64; 5],
    /// Fraction of items whose keyed value is 5, 4, 3, 2, 1 (in that order).
    pub value_fraction: [f64; 5],
}

impl ResponseDistribution {
    /// Largest label share as a fraction.
    pub fn max_label_share(&self) -> f64 {
        self.label_percent.iter().copied().fold(0.0, f64::max) / 100.0
    }
}

pub fn distributions(
    records: &[ResponseRecord],
    inv: &Inventory,
) -> Result<ResponseDistribution, AssessmentError> {
    let pairs = match_records(records, inv)?;
    if pairs.is_empty() {
        return Err(AssessmentError::NoRecords);
    }
    let mut labels = [0usize; 5];
    let mut values = [0usize; 5];
    for (item, record) in &pairs {
        labels[record.selected.index()] += 1;
        values[5 - likert_value(record.selected, item.key) as usize] += 1;
    }
    let n = pairs.len() as f64;
    Ok(ResponseDistribution {
        label_percent: labels.map(|c| 100.0 * c as f64 / n),
        value_fraction: values.map(|c| c as f64 / n),
    })
}

/// Label shares (percent) pooled over several record sets.
pub fn pooled_label_percent<'a>(runs: impl IntoIterator<Item = &'a [ResponseRecord]>) -> [f64; 5] {
    let mut counts = [0usize; 5];
    let mut total = 0usize;
    for records in runs {
        for r in records {
            counts[r.selected.index()] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return [0.0; 5];
    }
    counts.map(|c| 100.0 * c as f64 / total as f64)
}

/// Fraction of items answered identically in two record sets.
pub fn agreement(a: &[ResponseRecord], b: &[ResponseRecord]) -> Result<f64, AssessmentError> {
    let mismatch = || AssessmentError::CoverageMismatch {
        a: a.first().map(|r| r.order.clone()).unwrap_or_default(),
        b: b.first().map(|r| r.order.clone()).unwrap_or_default(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    if a.is_empty() {
        return Err(AssessmentError::NoRecords);
    }
    let lookup: HashMap<&str, CanonicalLabel> =
        b.iter().map(|r| (r.item_id.as_str(), r.selected)).collect();
    let mut same = 0usize;
    for r in a {
        match lookup.get(r.item_id.as_str()) {
            Some(label) if *label == r.selected => same += 1,
            Some(_) => {}
            None => return Err(mismatch()),
        }
    }
    Ok(same as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub a: String,
    pub b: String,
    pub agreement: f64,
}

/// Trait statistics of one order minus those of the reference order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderDelta {
    pub order: String,
    pub mean_delta: BTreeMap<Trait, f64>,
    pub sigma_delta: BTreeMap<Trait, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `Original` when present, otherwise the first order.
    pub reference: String,
    pub tau: f64,
    /// Every unordered pair of orders, reference pairs first.
    pub agreements: Vec<PairAgreement>,
    pub deltas: Vec<OrderDelta>,
    /// Lowest agreement of any order with the reference.
    pub min_agreement: f64,
    pub pass: bool,
}

impl SymmetryReport {
    pub fn agreement_between(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(1.0);
        }
        self.agreements
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.agreement)
    }
}

pub const REFERENCE_ORDER: &str = "Original";

/// Option-order symmetry over records grouped by order name.
///
/// The verdict passes when every order agrees with the reference on at least
/// a `tau` fraction of items.
pub fn symmetry_report(
    records_by_order: &[(String, Vec<ResponseRecord>)],
    inv: &Inventory,
    sigma_kind: SigmaKind,
    tau: f64,
) -> Result<SymmetryReport, AssessmentError> {
    let Some(first) = records_by_order.first() else {
        return Err(AssessmentError::NoRecords);
    };
    let reference_idx = records_by_order
        .iter()
        .position(|(name, _)| name == REFERENCE_ORDER)
        .unwrap_or(0);
    let (reference, reference_records) = &records_by_order[reference_idx];
    let _ = first;

    let mut agreements = Vec::new();
    let mut min_agreement: f64 = 1.0;
    for (name, records) in records_by_order.iter().filter(|(n, _)| n != reference) {
        let a = agreement(reference_records, records)?;
        min_agreement = min_agreement.min(a);
        agreements.push(PairAgreement {
            a: reference.clone(),
            b: name.clone(),
            agreement: a,
        });
    }
    for (i, (name_a, a)) in records_by_order.iter().enumerate() {
        for (name_b, b) in &records_by_order[i + 1..] {
            if name_a == reference || name_b == reference {
                continue;
            }
            agreements.push(PairAgreement {
                a: name_a.clone(),
                b: name_b.clone(),
                agreement: agreement(a, b)?,
            });
        }
    }

    let reference_stats = ocean_stats(reference_records, inv, sigma_kind)?;
    let mut deltas = Vec::new();
    for (name, records) in records_by_order.iter().filter(|(n, _)| n != reference) {
        let stats = ocean_stats(records, inv, sigma_kind)?;
        let mut mean_delta = BTreeMap::new();
        let mut sigma_delta = BTreeMap::new();
        for (t, s) in &stats.per_trait {
            if let Some(r) = reference_stats.get(*t) {
                mean_delta.insert(*t, s.mean - r.mean);
                sigma_delta.insert(*t, s.sigma - r.sigma);
            }
        }
        deltas.push(OrderDelta {
            order: name.clone(),
            mean_delta,
            sigma_delta,
        });
    }

    Ok(SymmetryReport {
        reference: reference.clone(),
        tau,
        agreements,
        deltas,
        min_agreement,
        pass: min_agreement >= tau,
    })
}

/// How content-free probabilities rescale an output vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// `q_j ∝ v_j / cf_j`: removes the prior bias.
    #[default]
    Divide,
    /// `q_j ∝ v_j · cf_j`.
    Multiply,
}

/// Floor applied to content-free probabilities before dividing.
pub const CALIBRATION_EPSILON: f64 = 1e-12;

/// Rescales `v` label-wise by the content-free vector `cf` and renormalizes.
/// The result keeps `v`'s presented order.
pub fn calibrate(v: &OptionProbVector, cf: &OptionProbVector, mode: CalibrationMode) -> OptionProbVector {
    let mut q = [0.0; 5];
    for (j, slot) in q.iter_mut().enumerate() {
        let prior = cf.probs[j].max(CALIBRATION_EPSILON);
        *slot = match mode {
            CalibrationMode::Divide => v.probs[j] / prior,
            CalibrationMode::Multiply => v.probs[j] * prior,
        };
    }
    let total: f64 = q.iter().sum();
    let probs = if total > 0.0 && total.is_finite() {
        q.map(|x| x / total)
    } else {
        [0.2; 5]
    };
    OptionProbVector {
        probs,
        presented_order: v.presented_order.clone(),
    }
}
