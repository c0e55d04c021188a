//! Turning continuation scores into a probability vector over the five labels.
//!
//! Non-indexed templates score the option texts themselves, indexed templates
//! score the symbols `A`..`E`. Either way each continuation is reduced to the
//! geometric mean of its token probabilities, the five results are
//! renormalized, and presented positions are mapped back to canonical labels.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendError, ContinuationScore, ScoreRequest};
use crate::templating::{
    CanonicalLabel, Indexing, OptionOrder, PromptTable, RenderedPrompt, TemplateSpec,
    INDEX_SYMBOLS,
};

/// n-th root of the product of token probabilities, `exp(mean(logprobs))`.
pub fn length_normalized_score(cs: &ContinuationScore) -> f64 {
    let n = cs.logprobs.len().max(1) as f64;
    (cs.logprobs.iter().sum::<f64>() / n).exp()
}

/// How index symbols are sent as continuations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolStyle {
    /// `A`
    #[default]
    Bare,
    /// `(A).`
    Parenthesized,
}

impl SymbolStyle {
    pub fn render(self, symbol: &str) -> String {
        match self {
            SymbolStyle::Bare => symbol.to_string(),
            SymbolStyle::Parenthesized => format!("({symbol})."),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("template {template} is {actual}, expected {expected}")]
    WrongIndexing {
        template: String,
        expected: Indexing,
        actual: Indexing,
    },
    #[error("option scores cannot be normalized: {0:?}")]
    Degenerate([f64; 5]),
}

/// Probabilities over the canonical labels, plus the order they were shown in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionProbVector {
    #[serde(with = "label_map")]
    pub probs: [f64; 5],
    pub presented_order: OptionOrder,
}

impl OptionProbVector {
    /// From unnormalized scores listed in presented order.
    pub fn from_presented(scores: [f64; 5], order: &OptionOrder) -> Result<Self, ScoringError> {
        let mut canonical = [0.0; 5];
        for (pos, score) in scores.iter().enumerate() {
            canonical[order.label_at(pos).index()] = *score;
        }
        Self::from_canonical(canonical, order)
    }

    /// From unnormalized scores indexed by canonical label.
    pub fn from_canonical(scores: [f64; 5], order: &OptionOrder) -> Result<Self, ScoringError> {
        let total: f64 = scores.iter().sum();
        if !total.is_finite() || total <= 0.0 || scores.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(ScoringError::Degenerate(scores));
        }
        Ok(OptionProbVector {
            probs: scores.map(|s| s / total),
            presented_order: order.clone(),
        })
    }

    pub fn uniform(order: &OptionOrder) -> Self {
        OptionProbVector {
            probs: [0.2; 5],
            presented_order: order.clone(),
        }
    }

    pub fn prob(&self, label: CanonicalLabel) -> f64 {
        self.probs[label.index()]
    }

    /// Probabilities in presented order.
    pub fn presented(&self) -> [f64; 5] {
        self.presented_order.permutation.map(|l| self.prob(l))
    }
}

pub(crate) mod label_map {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[allow(non_snake_case)]
    struct Labels {
        VA: f64,
        MA: f64,
        NANI: f64,
        MI: f64,
        VI: f64,
    }

    pub fn serialize<S: Serializer>(p: &[f64; 5], s: S) -> Result<S::Ok, S::Error> {
        Labels {
            VA: p[0],
            MA: p[1],
            NANI: p[2],
            MI: p[3],
            VI: p[4],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 5], D::Error> {
        let l = Labels::deserialize(d)?;
        Ok([l.VA, l.MA, l.NANI, l.MI, l.VI])
    }
}

/// Argmax, ties going to the earliest presented option. The flag reports
/// whether a tie had to be broken.
pub fn select_answer_with_tie(v: &OptionProbVector) -> (CanonicalLabel, bool) {
    let mut best = v.presented_order.label_at(0);
    let mut best_p = v.prob(best);
    let mut tied = false;
    for &label in &v.presented_order.permutation[1..] {
        let p = v.prob(label);
        if p > best_p {
            best = label;
            best_p = p;
            tied = false;
        } else if p == best_p {
            tied = true;
        }
    }
    (best, tied)
}

pub fn select_answer(v: &OptionProbVector) -> CanonicalLabel {
    select_answer_with_tie(v).0
}

/// One answered item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub item_id: String,
    pub template: String,
    pub order: String,
    pub vector: OptionProbVector,
    pub selected: CanonicalLabel,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tie_broken: bool,
}

impl ResponseRecord {
    pub fn new(item_id: impl Into<String>, template: impl Into<String>, vector: OptionProbVector) -> Self {
        let (selected, tie_broken) = select_answer_with_tie(&vector);
        ResponseRecord {
            item_id: item_id.into(),
            template: template.into(),
            order: vector.presented_order.name.clone(),
            vector,
            selected,
            tie_broken,
        }
    }
}

/// Renders prompts and scores them against a backend.
#[derive(Clone)]
pub struct Scorer {
    backend: Arc<dyn Backend>,
    prompts: Arc<PromptTable>,
    symbol_style: SymbolStyle,
}

impl Scorer {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Scorer {
            backend,
            prompts: Arc::new(PromptTable::builtin()),
            symbol_style: SymbolStyle::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptTable) -> Self {
        self.prompts = Arc::new(prompts);
        self
    }

    pub fn with_symbol_style(mut self, style: SymbolStyle) -> Self {
        self.symbol_style = style;
        self
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn prompts(&self) -> &PromptTable {
        &self.prompts
    }

    /// Dispatches on the template's indexing style.
    pub async fn score(
        &self,
        spec: &TemplateSpec,
        situation: &str,
        order: &OptionOrder,
    ) -> Result<OptionProbVector, ScoringError> {
        let prompt = self.prompts.render(spec, situation, order);
        self.score_rendered(spec, &prompt, order).await
    }

    pub async fn score_content_free(
        &self,
        spec: &TemplateSpec,
        order: &OptionOrder,
    ) -> Result<OptionProbVector, ScoringError> {
        self.score(spec, "", order).await
    }

    /// Scores the five option texts as continuations.
    pub async fn score_nonindexed(
        &self,
        spec: &TemplateSpec,
        situation: &str,
        order: &OptionOrder,
    ) -> Result<OptionProbVector, ScoringError> {
        expect_indexing(spec, Indexing::NonIndexed)?;
        self.score(spec, situation, order).await
    }

    /// Scores the symbols `A`..`E`; symbol `i` stands for the label presented at `i`.
    pub async fn score_indexed(
        &self,
        spec: &TemplateSpec,
        situation: &str,
        order: &OptionOrder,
    ) -> Result<OptionProbVector, ScoringError> {
        expect_indexing(spec, Indexing::Indexed)?;
        self.score(spec, situation, order).await
    }

    async fn score_rendered(
        &self,
        spec: &TemplateSpec,
        prompt: &RenderedPrompt,
        order: &OptionOrder,
    ) -> Result<OptionProbVector, ScoringError> {
        let continuations: Vec<String> = match spec.indexing {
            Indexing::NonIndexed => prompt.option_texts.clone(),
            Indexing::Indexed => INDEX_SYMBOLS
                .iter()
                .map(|s| self.symbol_style.render(s))
                .collect(),
        };
        let req = ScoreRequest::new(prompt.text.clone(), continuations);
        let scores = backend::score(self.backend.as_ref(), &req).await?;
        let mut presented = [0.0; 5];
        for (slot, cs) in presented.iter_mut().zip(&scores) {
            *slot = length_normalized_score(cs);
        }
        OptionProbVector::from_presented(presented, order)
    }
}

fn expect_indexing(spec: &TemplateSpec, expected: Indexing) -> Result<(), ScoringError> {
    if spec.indexing != expected {
        return Err(ScoringError::WrongIndexing {
            template: spec.name(),
            expected,
            actual: spec.indexing,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockRespondent;
    use crate::templating::enumerate_templates;
    use proptest::prelude::*;
    use CanonicalLabel::*;

    fn cs(probs: &[f64]) -> ContinuationScore {
        ContinuationScore {
            tokens: probs.iter().map(|_| "t".to_string()).collect(),
            logprobs: probs.iter().map(|p| p.ln()).collect(),
        }
    }

    #[test]
    fn geometric_mean_examples() {
        assert!((length_normalized_score(&cs(&[0.5, 0.5])) - 0.5).abs() < 1e-15);
        assert!((length_normalized_score(&cs(&[0.9, 0.1])) - 0.3).abs() < 1e-15);
        assert!((length_normalized_score(&cs(&[0.7])) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn presented_positions_map_back_to_labels() {
        let v = OptionProbVector::from_presented([0.4, 0.1, 0.1, 0.2, 0.2], &OptionOrder::reverse()).unwrap();
        assert_eq!(v.prob(VI), 0.4);
        assert_eq!(v.prob(MI), 0.1);
        assert_eq!(v.prob(NANI), 0.1);
        assert_eq!(v.prob(MA), 0.2);
        assert_eq!(v.prob(VA), 0.2);
        assert_eq!(v.presented(), [0.4, 0.1, 0.1, 0.2, 0.2]);
    }

    #[test]
    fn argmax_and_tie_break() {
        let order = OptionOrder::original();
        let v = OptionProbVector::from_canonical([0.5, 0.125, 0.125, 0.125, 0.125], &order).unwrap();
        assert_eq!(select_answer_with_tie(&v), (VA, false));

        let v = OptionProbVector::from_canonical([0.3, 0.3, 0.2, 0.1, 0.1], &order).unwrap();
        assert_eq!(select_answer_with_tie(&v), (VA, true));

        let ma_first = OptionOrder::new("ma-first", [MA, VA, NANI, MI, VI]).unwrap();
        let v = OptionProbVector::from_canonical([0.3, 0.3, 0.2, 0.1, 0.1], &ma_first).unwrap();
        assert_eq!(select_answer(&v), MA);
    }

    #[test]
    fn degenerate_scores_rejected() {
        let order = OptionOrder::original();
        assert!(OptionProbVector::from_canonical([0.0; 5], &order).is_err());
        assert!(OptionProbVector::from_canonical([f64::NAN, 1.0, 1.0, 1.0, 1.0], &order).is_err());
    }

    #[test]
    fn vector_json_uses_label_names() {
        let v = OptionProbVector::uniform(&OptionOrder::original());
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["probs"]["NANI"], 0.2);
        let back: OptionProbVector = serde_json::from_value(json).unwrap();
        assert_eq!(back, v);
    }

    #[tokio::test]
    async fn mock_scoring_examples() {
        let nonindexed = enumerate_templates(Indexing::NonIndexed)[7];
        let indexed = enumerate_templates(Indexing::Indexed)[7];

        let uniform = Scorer::new(Arc::new(MockRespondent::uniform()));
        for spec in [nonindexed, indexed] {
            let v = uniform.score(&spec, "work hard", &OptionOrder::original()).await.unwrap();
            for p in v.probs {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }

        let constant = Scorer::new(Arc::new(MockRespondent::constant(VA)));
        let v = constant
            .score_nonindexed(&nonindexed, "work hard", &OptionOrder::reverse())
            .await
            .unwrap();
        assert_eq!(select_answer(&v), VA);

        let bound = Scorer::new(Arc::new(MockRespondent::index_bound("A")));
        let v = bound.score_indexed(&indexed, "work hard", &OptionOrder::original()).await.unwrap();
        assert_eq!(select_answer(&v), VA);
        let v = bound.score_indexed(&indexed, "work hard", &OptionOrder::reverse()).await.unwrap();
        assert_eq!(select_answer(&v), VI);

        assert!(matches!(
            bound.score_indexed(&nonindexed, "work hard", &OptionOrder::original()).await,
            Err(ScoringError::WrongIndexing { .. })
        ));
    }

    #[tokio::test]
    async fn text_bound_vector_is_order_invariant() {
        let scorer = Scorer::new(Arc::new(MockRespondent::constant(NANI)));
        let spec = enumerate_templates(Indexing::NonIndexed)[12];
        let base = scorer.score(&spec, "trust others", &OptionOrder::original()).await.unwrap();
        for order in OptionOrder::default_set(5) {
            let v = scorer.score(&spec, "trust others", &order).await.unwrap();
            for (a, b) in v.probs.iter().zip(base.probs) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn duplicating_tokens_keeps_score(probs in prop::collection::vec(0.001f64..1.0, 1..8)) {
            let doubled: Vec<f64> = probs.iter().chain(probs.iter()).copied().collect();
            let a = length_normalized_score(&cs(&probs));
            let b = length_normalized_score(&cs(&doubled));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn normalized_vectors_sum_to_one(scores in prop::array::uniform5(1e-6f64..10.0), scale in 1e-3f64..1e3) {
            let order = OptionOrder::reverse();
            let v = OptionProbVector::from_presented(scores, &order).unwrap();
            prop_assert!((v.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(v.probs.iter().all(|p| (0.0..=1.0).contains(p)));
            let scaled = OptionProbVector::from_presented(scores.map(|s| s * scale), &order).unwrap();
            prop_assert_eq!(select_answer(&scaled), select_answer(&v));
        }
    }
}
