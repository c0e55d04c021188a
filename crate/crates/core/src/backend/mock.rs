//! Deterministic respondents that reproduce the failure modes the harness is
//! built to detect: a fixed-answer bias and a bias toward one index symbol.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, BackendError, ContinuationScore, ScoreRequest};
use crate::templating::{CanonicalLabel, INDEX_SYMBOLS};

/// Probability given to the preferred continuation; the rest is split evenly.
pub const DEFAULT_MARGIN: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Prefers the option whose text is this label, wherever it is presented.
    ConstantLabel(CanonicalLabel),
    /// Prefers the option at this index position (`A` = 0), whatever its text.
    IndexBound(usize),
    Uniform,
    /// `sha256(prompt)` → probabilities over the canonical labels (VA..VI).
    TableDriven(BTreeMap<String, [f64; 5]>),
}

impl MockBehavior {
    /// Hex digest used as the table key for a prompt.
    pub fn prompt_key(prompt: &str) -> String {
        hex::encode(Sha256::digest(prompt.as_bytes()))
    }

    /// Loads a table file: a JSON object mapping prompt digests to five probabilities.
    pub fn table_from_json(json: &str) -> Result<MockBehavior, String> {
        let table: BTreeMap<String, [f64; 5]> =
            serde_json::from_str(json).map_err(|e| e.to_string())?;
        for (key, dist) in &table {
            if dist.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(format!("entry {key}: probabilities must be positive"));
            }
        }
        Ok(MockBehavior::TableDriven(table))
    }
}

impl fmt::Display for MockBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockBehavior::ConstantLabel(l) => write!(f, "constant={l}"),
            MockBehavior::IndexBound(i) => write!(f, "index={}", INDEX_SYMBOLS[*i]),
            MockBehavior::Uniform => f.write_str("uniform"),
            MockBehavior::TableDriven(t) => write!(f, "table[{}]", t.len()),
        }
    }
}

/// Parses `constant=VA`, `index=A` or `uniform`. Tables are loaded from files
/// with [`MockBehavior::table_from_json`].
impl FromStr for MockBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once('=').unwrap_or((s, ""));
        match kind.trim() {
            "constant" => Ok(MockBehavior::ConstantLabel(arg.parse()?)),
            "index" => INDEX_SYMBOLS
                .iter()
                .position(|sym| sym.eq_ignore_ascii_case(arg.trim()))
                .map(MockBehavior::IndexBound)
                .ok_or_else(|| format!("unknown index symbol `{arg}`")),
            "uniform" => Ok(MockBehavior::Uniform),
            _ => Err(format!("unknown mock behavior `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRespondent {
    pub behavior: MockBehavior,
    pub margin: f64,
}

impl MockRespondent {
    pub fn new(behavior: MockBehavior) -> Self {
        MockRespondent {
            behavior,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn constant(label: CanonicalLabel) -> Self {
        Self::new(MockBehavior::ConstantLabel(label))
    }

    pub fn index_bound(symbol: &str) -> Self {
        Self::new(format!("index={symbol}").parse().expect("symbol A..E"))
    }

    pub fn uniform() -> Self {
        Self::new(MockBehavior::Uniform)
    }

    /// Target probability of every continuation; each lies in (0, 1].
    fn continuation_probs(&self, req: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        let n = req.continuations.len();
        let options = presented_options(&req.prompt);
        let resolved: Vec<Resolved> = req
            .continuations
            .iter()
            .map(|c| resolve(c, &options))
            .collect();

        let preferred: Vec<bool> = match &self.behavior {
            MockBehavior::Uniform => return Ok(vec![1.0 / n as f64; n]),
            MockBehavior::TableDriven(table) => {
                let key = MockBehavior::prompt_key(&req.prompt);
                let dist = table
                    .get(&key)
                    .ok_or_else(|| BackendError::Model(format!("no table entry for prompt {key}")))?;
                return resolved
                    .iter()
                    .zip(&req.continuations)
                    .map(|(r, c)| {
                        r.label.map(|l| dist[l.index()]).ok_or_else(|| {
                            BackendError::Model(format!("cannot map continuation `{c}` to an option"))
                        })
                    })
                    .collect();
            }
            MockBehavior::ConstantLabel(target) => {
                resolved.iter().map(|r| r.label == Some(*target)).collect()
            }
            MockBehavior::IndexBound(position) => {
                resolved.iter().map(|r| r.position == Some(*position)).collect()
            }
        };

        let hits = preferred.iter().filter(|p| **p).count();
        if n == 1 {
            return Ok(vec![1.0]);
        }
        if hits == 0 {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let hit_p = self.margin / hits as f64;
        let miss_p = if hits == n {
            hit_p
        } else {
            (1.0 - self.margin) / (n - hits) as f64
        };
        Ok(preferred
            .into_iter()
            .map(|p| if p { hit_p } else { miss_p })
            .collect())
    }
}

#[async_trait]
impl Backend for MockRespondent {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: format!("mock:{}", self.behavior),
            deterministic: true,
        }
    }

    async fn score(&self, req: &ScoreRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        req.validate()?;
        let probs = self.continuation_probs(req)?;
        Ok(req
            .continuations
            .iter()
            .zip(probs)
            .map(|(text, p)| {
                let tokens = tokenize(text);
                // Every token carries ln p, so the geometric mean recovers p.
                let logprobs = vec![p.ln(); tokens.len()];
                ContinuationScore { tokens, logprobs }
            })
            .collect())
    }
}

/// Whitespace tokenizer; later tokens keep their leading space.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    for (i, word) in text.split_whitespace().enumerate() {
        if i == 0 {
            tokens.push(word.to_string());
        } else {
            tokens.push(format!(" {word}"));
        }
    }
    if tokens.is_empty() {
        tokens.push(text.to_string());
    }
    tokens
}

#[derive(Debug, Clone)]
struct PresentedOption {
    symbol: Option<usize>,
    label: Option<CanonicalLabel>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Resolved {
    position: Option<usize>,
    label: Option<CanonicalLabel>,
}

/// Option lines between `Options:` and the answer cue, in presented order.
fn presented_options(prompt: &str) -> Vec<PresentedOption> {
    let mut lines = prompt.lines().skip_while(|l| l.trim() != "Options:").skip(1);
    let mut options = Vec::new();
    for line in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("My answer") || line.starts_with("Answer") {
            break;
        }
        let (symbol, text) = match split_indexed(line) {
            Some((sym, rest)) => (Some(sym), rest),
            None => (None, line),
        };
        options.push(PresentedOption {
            symbol,
            label: CanonicalLabel::from_display(text),
        });
    }
    options
}

/// `(B). Moderately Accurate` → (1, "Moderately Accurate").
fn split_indexed(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix('(')?;
    let (sym, rest) = rest.split_once(")")?;
    let position = INDEX_SYMBOLS.iter().position(|s| *s == sym)?;
    Some((position, rest.trim_start_matches('.').trim()))
}

/// A bare symbol such as `A`, `(A)` or `(A).`.
fn as_symbol(continuation: &str) -> Option<usize> {
    let stripped = continuation
        .trim()
        .trim_start_matches('(')
        .trim_end_matches('.')
        .trim_end_matches(')');
    INDEX_SYMBOLS.iter().position(|s| *s == stripped)
}

fn resolve(continuation: &str, options: &[PresentedOption]) -> Resolved {
    if let Some(position) = as_symbol(continuation) {
        let label = options
            .iter()
            .find(|o| o.symbol == Some(position))
            .and_then(|o| o.label);
        return Resolved {
            position: Some(position),
            label,
        };
    }
    let label = CanonicalLabel::from_display(continuation);
    let position = label.and_then(|l| options.iter().position(|o| o.label == Some(l)));
    Resolved { position, label }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::score;
    use crate::mcqa::length_normalized_score;
    use crate::templating::{enumerate_templates, render_prompt, Indexing, OptionOrder};

    fn texts(spec_lc: bool, order: &OptionOrder) -> Vec<String> {
        order
            .permutation
            .iter()
            .map(|l| {
                if spec_lc {
                    l.display().to_lowercase()
                } else {
                    l.display().to_string()
                }
            })
            .collect()
    }

    fn symbols() -> Vec<String> {
        INDEX_SYMBOLS.iter().map(|s| s.to_string()).collect()
    }

    #[tokio::test]
    async fn uniform_single_tokens_get_ln_one_fifth() {
        let req = ScoreRequest::new("p", symbols());
        let out = score(&MockRespondent::uniform(), &req).await.unwrap();
        for cs in out {
            assert_eq!(cs.tokens.len(), 1);
            assert!((cs.total_logprob() - 0.2f64.ln()).abs() < 1e-15);
        }
    }

    #[tokio::test]
    async fn constant_label_wins_everywhere() {
        let mock = MockRespondent::constant(CanonicalLabel::VA);
        for spec in enumerate_templates(Indexing::NonIndexed) {
            for order in OptionOrder::default_set(1) {
                let prompt = render_prompt(&spec, "work hard", &order);
                let req = ScoreRequest::new(prompt.text, texts(spec.lowercase_options, &order));
                let out = score(&mock, &req).await.unwrap();
                let scores: Vec<f64> = out.iter().map(length_normalized_score).collect();
                let win = order.position_of(CanonicalLabel::VA);
                for (i, s) in scores.iter().enumerate() {
                    if i != win {
                        assert!(scores[win] > *s);
                    }
                }
            }
        }
    }

    #[tokio::test]
    async fn constant_label_follows_text_under_indexed_prompt() {
        let mock = MockRespondent::constant(CanonicalLabel::VA);
        let spec = enumerate_templates(Indexing::Indexed)[0];
        let order = OptionOrder::reverse();
        let prompt = render_prompt(&spec, "work hard", &order);
        let out = score(&mock, &ScoreRequest::new(prompt.text, symbols())).await.unwrap();
        let best = (0..5)
            .max_by(|a, b| out[*a].total_logprob().total_cmp(&out[*b].total_logprob()))
            .unwrap();
        assert_eq!(best, 4);
    }

    #[tokio::test]
    async fn index_bound_ignores_text() {
        let mock = MockRespondent::index_bound("A");
        for spec in enumerate_templates(Indexing::Indexed) {
            for order in OptionOrder::default_set(3) {
                let prompt = render_prompt(&spec, "trust others", &order);
                let out = score(&mock, &ScoreRequest::new(prompt.text, symbols())).await.unwrap();
                for cs in &out[1..] {
                    assert!(out[0].total_logprob() > cs.total_logprob());
                }
            }
        }
    }

    #[tokio::test]
    async fn parenthesized_symbols_resolve() {
        let mock = MockRespondent::constant(CanonicalLabel::MI);
        let spec = enumerate_templates(Indexing::Indexed)[5];
        let prompt = render_prompt(&spec, "trust others", &OptionOrder::original());
        let conts = INDEX_SYMBOLS.iter().map(|s| format!("({s}).")).collect();
        let out = score(&mock, &ScoreRequest::new(prompt.text, conts)).await.unwrap();
        assert!((out[3].logprobs[0] - 0.9f64.ln()).abs() < 1e-15);
    }

    #[tokio::test]
    async fn table_driven_lookup_and_miss() {
        let spec = enumerate_templates(Indexing::NonIndexed)[0];
        let order = OptionOrder::original();
        let prompt = render_prompt(&spec, "trust others", &order);
        let table = BTreeMap::from([(MockBehavior::prompt_key(&prompt.text), [0.1, 0.2, 0.3, 0.2, 0.2])]);
        let mock = MockRespondent::new(MockBehavior::TableDriven(table));
        let out = score(&mock, &ScoreRequest::new(prompt.text.clone(), texts(false, &order)))
            .await
            .unwrap();
        assert!((length_normalized_score(&out[2]) - 0.3).abs() < 1e-12);
        let miss = score(&mock, &ScoreRequest::new("other", texts(false, &order))).await;
        assert!(matches!(miss, Err(BackendError::Model(_))));
    }

    #[test]
    fn behavior_strings() {
        assert_eq!(
            "constant=VA".parse::<MockBehavior>().unwrap(),
            MockBehavior::ConstantLabel(CanonicalLabel::VA)
        );
        assert_eq!("index=C".parse::<MockBehavior>().unwrap(), MockBehavior::IndexBound(2));
        assert_eq!("uniform".parse::<MockBehavior>().unwrap(), MockBehavior::Uniform);
        assert!("index=Z".parse::<MockBehavior>().is_err());
        assert!(MockBehavior::table_from_json(r#"{"k":[0,0.2,0.2,0.3,0.3]}"#).is_err());
    }
}
