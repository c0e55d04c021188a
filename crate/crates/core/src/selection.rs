//! Unsupervised template selection by mutual information.
//!
//! For a template `f` and inputs `x_1..x_m` with output distributions `p_i`,
//!
//! ```text
//! I(f(X); Y) ≈ H(mean_i p_i) − mean_i H(p_i)
//! ```
//!
//! A template whose outputs are confident per input (low conditional entropy)
//! yet spread across answers over the inputs (high marginal entropy) scores
//! high. Entropies are in nats.

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::Inventory;
use crate::mcqa::{OptionProbVector, Scorer, ScoringError};
use crate::templating::{OptionOrder, TemplateSpec};

/// Upper bound of the estimate with five classes.
pub const MAX_MI: f64 = 1.6094379124341003; // ln 5

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("mutual information needs at least one vector")]
    Empty,
    #[error("no candidate templates")]
    NoCandidates,
    #[error("template {template}, item {item_id}: {source}")]
    Scoring {
        template: String,
        item_id: String,
        #[source]
        source: ScoringError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIScore {
    pub template: String,
    pub mi_nats: f64,
    pub n_inputs: usize,
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Marginal entropy minus mean conditional entropy, clamped to `[0, ln 5]`.
pub fn mutual_information(vectors: &[OptionProbVector]) -> Result<f64, SelectionError> {
    if vectors.is_empty() {
        return Err(SelectionError::Empty);
    }
    let m = vectors.len() as f64;
    let mut mean = [0.0; 5];
    let mut conditional = 0.0;
    for v in vectors {
        for (acc, p) in mean.iter_mut().zip(v.probs) {
            *acc += p;
        }
        conditional += entropy(&v.probs);
    }
    let mean = mean.map(|s| s / m);
    let mi = entropy(&mean) - conditional / m;
    // Rounding can leave a few ulps of negative or spurious mass.
    Ok(if mi < 1e-12 { 0.0 } else { mi.min(MAX_MI) })
}

/// Result of [`select_template`]: the winner plus the full ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: TemplateSpec,
    /// Sorted by MI descending, then template name.
    pub ranking: Vec<MIScore>,
}

/// Scores every candidate on the sample under `order` and keeps the template
/// with the highest mutual information. Ties go to the lexicographically
/// smallest name. Any scoring failure aborts the selection.
pub async fn select_template(
    scorer: &Scorer,
    candidates: &[TemplateSpec],
    sample: &Inventory,
    order: &OptionOrder,
    concurrency: usize,
) -> Result<Selection, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    if sample.items.is_empty() {
        return Err(SelectionError::Empty);
    }

    let jobs = candidates
        .iter()
        .flat_map(|spec| sample.items.iter().map(move |item| (spec, item)));
    let vectors: Vec<OptionProbVector> = stream::iter(jobs)
        .map(|(spec, item)| async move {
            scorer
                .score(spec, &item.situation, order)
                .await
                .map_err(|source| SelectionError::Scoring {
                    template: spec.name(),
                    item_id: item.id.clone(),
                    source,
                })
        })
        .buffered(concurrency.max(1))
        .try_collect()
        .await?;

    let per_template = sample.items.len();
    let mut ranking = candidates
        .iter()
        .zip(vectors.chunks(per_template))
        .map(|(spec, chunk)| {
            Ok(MIScore {
                template: spec.name(),
                mi_nats: mutual_information(chunk)?,
                n_inputs: chunk.len(),
            })
        })
        .collect::<Result<Vec<_>, SelectionError>>()?;
    rank(&mut ranking);

    let best_name = &ranking[0].template;
    let best = *candidates
        .iter()
        .find(|s| &s.name() == best_name)
        .expect("ranking names come from candidates");
    Ok(Selection { best, ranking })
}

fn rank(scores: &mut [MIScore]) {
    scores.sort_by(|a, b| {
        b.mi_nats
            .total_cmp(&a.mi_nats)
            .then_with(|| a.template.cmp(&b.template))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templating::CanonicalLabel;
    use proptest::prelude::*;

    fn one_hot(label: CanonicalLabel) -> OptionProbVector {
        let mut p = [0.0; 5];
        p[label.index()] = 1.0;
        OptionProbVector::from_canonical(p, &OptionOrder::original()).unwrap()
    }

    fn vec_of(p: [f64; 5]) -> OptionProbVector {
        OptionProbVector::from_canonical(p, &OptionOrder::original()).unwrap()
    }

    #[test]
    fn ln5_constant() {
        assert!((MAX_MI - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn worked_values() {
        let v = vec_of([0.5, 0.2, 0.1, 0.1, 0.1]);
        assert_eq!(mutual_information(&[v.clone(), v.clone(), v]).unwrap(), 0.0);

        let two = [one_hot(CanonicalLabel::VA), one_hot(CanonicalLabel::VI)];
        assert!((mutual_information(&two).unwrap() - 2f64.ln()).abs() < 1e-9);

        let five: Vec<_> = CanonicalLabel::ALL.into_iter().map(one_hot).collect();
        assert!((mutual_information(&five).unwrap() - 5f64.ln()).abs() < 1e-9);

        assert!(matches!(mutual_information(&[]), Err(SelectionError::Empty)));
    }

    #[test]
    fn ranking_breaks_ties_by_name() {
        let mut scores = vec![
            MIScore { template: "b".into(), mi_nats: 0.1, n_inputs: 1 },
            MIScore { template: "c".into(), mi_nats: 0.3, n_inputs: 1 },
            MIScore { template: "a".into(), mi_nats: 0.1, n_inputs: 1 },
        ];
        rank(&mut scores);
        let names: Vec<_> = scores.iter().map(|s| s.template.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
    }

    fn arb_vector() -> impl Strategy<Value = OptionProbVector> {
        prop::array::uniform5(0.0f64..1.0)
            .prop_filter("non-zero mass", |p| p.iter().sum::<f64>() > 1e-9)
            .prop_map(vec_of)
    }

    proptest! {
        #[test]
        fn bounded(vs in prop::collection::vec(arb_vector(), 1..20)) {
            let mi = mutual_information(&vs).unwrap();
            prop_assert!((0.0..=MAX_MI).contains(&mi));
        }

        #[test]
        fn permutation_invariant(vs in prop::collection::vec(arb_vector(), 1..12), rot in 0usize..12) {
            let mut rotated = vs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let a = mutual_information(&vs).unwrap();
            let b = mutual_information(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn duplicates_stay_bounded(vs in prop::collection::vec(arb_vector(), 1..8), pick in 0usize..8) {
            let mut dup = vs.clone();
            dup.push(vs[pick % vs.len()].clone());
            let mi = mutual_information(&dup).unwrap();
            prop_assert!(mi.is_finite() && (0.0..=MAX_MI).contains(&mi));
        }
    }
}
