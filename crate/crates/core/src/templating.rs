//! Prompt templates: the Q-prompt × A-prompt × structured × case grid, option
//! orders, and rendering of item and content-free prompts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five Likert answers in canonical (Original) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CanonicalLabel {
    VA,
    MA,
    NANI,
    MI,
    VI,
}

impl CanonicalLabel {
    pub const ALL: [CanonicalLabel; 5] = [
        CanonicalLabel::VA,
        CanonicalLabel::MA,
        CanonicalLabel::NANI,
        CanonicalLabel::MI,
        CanonicalLabel::VI,
    ];

    pub fn display(self) -> &'static str {
        match self {
            CanonicalLabel::VA => "Very Accurate",
            CanonicalLabel::MA => "Moderately Accurate",
            CanonicalLabel::NANI => "Neither Accurate Nor Inaccurate",
            CanonicalLabel::MI => "Moderately Inaccurate",
            CanonicalLabel::VI => "Very Inaccurate",
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            CanonicalLabel::VA => "VA",
            CanonicalLabel::MA => "MA",
            CanonicalLabel::NANI => "NANI",
            CanonicalLabel::MI => "MI",
            CanonicalLabel::VI => "VI",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Matches a display string, ignoring case and surrounding whitespace.
    pub fn from_display(text: &str) -> Option<CanonicalLabel> {
        let text = text.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.display().eq_ignore_ascii_case(text))
    }
}

impl fmt::Display for CanonicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for CanonicalLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.abbrev().eq_ignore_ascii_case(s.trim()))
            .or_else(|| Self::from_display(s))
            .ok_or_else(|| format!("unknown option label `{s}`"))
    }
}

/// Index symbols of an indexed template, always in this order top to bottom.
pub const INDEX_SYMBOLS: [&str; 5] = ["A", "B", "C", "D", "E"];

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("option order `{name}` is not a permutation of the five labels")]
    NotAPermutation { name: String },
    #[error("unknown option order `{0}`")]
    UnknownOrder(String),
    #[error("unrecognized template name `{0}`")]
    BadTemplateName(String),
    #[error("prompt override `{0}` is missing the {{Situation}} placeholder")]
    MissingPlaceholder(String),
    #[error("unknown prompt id `{0}`")]
    UnknownPromptId(String),
    #[error("invalid template override file: {0}")]
    Override(String),
}

/// A presentation order for the five options.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawOrder")]
pub struct OptionOrder {
    pub name: String,
    pub permutation: [CanonicalLabel; 5],
}

#[derive(Deserialize)]
struct RawOrder {
    name: String,
    permutation: [CanonicalLabel; 5],
}

impl TryFrom<RawOrder> for OptionOrder {
    type Error = TemplateError;

    fn try_from(raw: RawOrder) -> Result<Self, Self::Error> {
        OptionOrder::new(raw.name, raw.permutation)
    }
}

/// Seed for the shuffled default orders when none is configured.
pub const DEFAULT_ORDER_SEED: u64 = 20230601;

impl OptionOrder {
    pub fn new(
        name: impl Into<String>,
        permutation: [CanonicalLabel; 5],
    ) -> Result<Self, TemplateError> {
        let name = name.into();
        let mut seen = [false; 5];
        for label in permutation {
            if std::mem::replace(&mut seen[label.index()], true) {
                return Err(TemplateError::NotAPermutation { name });
            }
        }
        Ok(OptionOrder { name, permutation })
    }

    pub fn original() -> Self {
        OptionOrder {
            name: "Original".into(),
            permutation: CanonicalLabel::ALL,
        }
    }

    pub fn reverse() -> Self {
        let mut permutation = CanonicalLabel::ALL;
        permutation.reverse();
        OptionOrder {
            name: "Reverse".into(),
            permutation,
        }
    }

    /// `[MA, VA, VI, MI, NANI]`, the first shuffled order of the published order table.
    pub fn order_i() -> Self {
        use CanonicalLabel::*;
        OptionOrder {
            name: "Order I".into(),
            permutation: [MA, VA, VI, MI, NANI],
        }
    }

    /// Original, Reverse, Order I, and Orders II/III drawn from a seeded shuffle.
    ///
    /// Shuffles that repeat an earlier order are redrawn, so the five orders are
    /// always distinct.
    pub fn default_set(seed: u64) -> Vec<OptionOrder> {
        let mut orders = vec![Self::original(), Self::reverse(), Self::order_i()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in ["Order II", "Order III"] {
            let permutation = loop {
                let mut p = CanonicalLabel::ALL;
                p.shuffle(&mut rng);
                if orders.iter().all(|o| o.permutation != p) {
                    break p;
                }
            };
            orders.push(OptionOrder {
                name: name.into(),
                permutation,
            });
        }
        orders
    }

    /// Resolves a name from the default set (case and separators are ignored:
    /// `original`, `reverse`, `order-i`, `order_ii`, `Order III`).
    pub fn named(name: &str, seed: u64) -> Result<OptionOrder, TemplateError> {
        let key = |s: &str| {
            s.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase()
        };
        let wanted = key(name);
        Self::default_set(seed)
            .into_iter()
            .find(|o| key(&o.name) == wanted)
            .ok_or_else(|| TemplateError::UnknownOrder(name.to_string()))
    }

    /// Position at which `label` is presented.
    pub fn position_of(&self, label: CanonicalLabel) -> usize {
        self.permutation
            .iter()
            .position(|l| *l == label)
            .expect("permutation holds every label")
    }

    pub fn label_at(&self, position: usize) -> CanonicalLabel {
        self.permutation[position]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QPrompt {
    #[serde(rename = "Q-I")]
    QI,
    #[serde(rename = "Q-II")]
    QII,
    #[serde(rename = "Q-III")]
    QIII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum APrompt {
    #[serde(rename = "A-I")]
    AI,
    #[serde(rename = "A-II")]
    AII,
    #[serde(rename = "A-III")]
    AIII,
}

impl QPrompt {
    pub const ALL: [QPrompt; 3] = [QPrompt::QI, QPrompt::QII, QPrompt::QIII];

    fn numeral(self) -> &'static str {
        match self {
            QPrompt::QI => "i",
            QPrompt::QII => "ii",
            QPrompt::QIII => "iii",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            QPrompt::QI => "Q-I",
            QPrompt::QII => "Q-II",
            QPrompt::QIII => "Q-III",
        }
    }
}

impl APrompt {
    pub const ALL: [APrompt; 3] = [APrompt::AI, APrompt::AII, APrompt::AIII];

    fn numeral(self) -> &'static str {
        match self {
            APrompt::AI => "i",
            APrompt::AII => "ii",
            APrompt::AIII => "iii",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            APrompt::AI => "A-I",
            APrompt::AII => "A-II",
            APrompt::AIII => "A-III",
        }
    }
}

/// How options are scored: by index symbol or by option text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indexing {
    Indexed,
    NonIndexed,
}

impl FromStr for Indexing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "indexed" => Ok(Indexing::Indexed),
            "nonindexed" => Ok(Indexing::NonIndexed),
            _ => Err(format!("unknown indexing `{s}` (expected indexed or nonindexed)")),
        }
    }
}

impl fmt::Display for Indexing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Indexing::Indexed => "indexed",
            Indexing::NonIndexed => "nonindexed",
        })
    }
}

/// One point of the template grid.
///
/// Field order defines the enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub q_prompt: QPrompt,
    pub a_prompt: APrompt,
    pub structured: bool,
    pub lowercase_options: bool,
    pub indexing: Indexing,
}

impl TemplateSpec {
    /// `[lc|og]-[s|ns]-[q-..]-[a-..]`. Indexing is not part of the name.
    pub fn name(&self) -> String {
        format!(
            "[{}]-[{}]-[q-{}]-[a-{}]",
            if self.lowercase_options { "lc" } else { "og" },
            if self.structured { "s" } else { "ns" },
            self.q_prompt.numeral(),
            self.a_prompt.numeral(),
        )
    }

    /// Inverse of [`TemplateSpec::name`]; whitespace and case are ignored.
    pub fn parse(name: &str, indexing: Indexing) -> Result<TemplateSpec, TemplateError> {
        let bad = || TemplateError::BadTemplateName(name.to_string());
        let cleaned: String = name
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        let parts: Vec<String> = if cleaned.contains('[') {
            cleaned
                .split("]-[")
                .map(|p| p.trim_matches(|c| c == '[' || c == ']').to_string())
                .collect()
        } else {
            // Bracket-free spelling: `og-s-q-ii-a-iii`.
            match cleaned.split('-').collect::<Vec<_>>().as_slice() {
                [case, structure, "q", q, "a", a] => {
                    vec![case.to_string(), structure.to_string(), format!("q-{q}"), format!("a-{a}")]
                }
                _ => return Err(bad()),
            }
        };
        let [case, structure, q, a] = parts.as_slice() else {
            return Err(bad());
        };
        let lowercase_options = match case.as_str() {
            "lc" => true,
            "og" => false,
            _ => return Err(bad()),
        };
        let structured = match structure.as_str() {
            "s" => true,
            "ns" => false,
            _ => return Err(bad()),
        };
        let q_prompt = QPrompt::ALL
            .into_iter()
            .find(|p| q.strip_prefix("q-") == Some(p.numeral()))
            .ok_or_else(bad)?;
        let a_prompt = APrompt::ALL
            .into_iter()
            .find(|p| a.strip_prefix("a-") == Some(p.numeral()))
            .ok_or_else(bad)?;
        Ok(TemplateSpec {
            q_prompt,
            a_prompt,
            structured,
            lowercase_options,
            indexing,
        })
    }
}

impl fmt::Display for TemplateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// All 36 templates of one indexing style, in field-lexicographic order.
pub fn enumerate_templates(indexing: Indexing) -> Vec<TemplateSpec> {
    let mut specs = Vec::with_capacity(36);
    for q_prompt in QPrompt::ALL {
        for a_prompt in APrompt::ALL {
            for structured in [false, true] {
                for lowercase_options in [false, true] {
                    specs.push(TemplateSpec {
                        q_prompt,
                        a_prompt,
                        structured,
                        lowercase_options,
                        indexing,
                    });
                }
            }
        }
    }
    specs
}

/// A prompt ready to be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    /// Full prompt, ending with the answer cue and one trailing space.
    pub text: String,
    /// Option display strings (case applied) in presented order.
    pub option_texts: Vec<String>,
    /// `A`..`E` for indexed templates.
    pub index_symbols: Option<Vec<String>>,
}

pub const SITUATION_PLACEHOLDER: &str = "{Situation}";

/// The Q/A prompt texts. [`PromptTable::builtin`] carries the standard wording;
/// an override file may replace individual entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTable {
    q_prompts: BTreeMap<QPrompt, String>,
    a_prompts: BTreeMap<APrompt, String>,
}

impl Default for PromptTable {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Override file layout: `{"q_prompts": {"Q-I": "..."}, "a_prompts": {"A-II": "..."}}`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptOverrides {
    #[serde(default)]
    q_prompts: BTreeMap<String, String>,
    #[serde(default)]
    a_prompts: BTreeMap<String, String>,
}

impl PromptTable {
    pub fn builtin() -> Self {
        let q_prompts = BTreeMap::from([
            (
                QPrompt::QI,
                "Given a description of you: \"You {Situation}.\" What do you think?".to_string(),
            ),
            (
                QPrompt::QII,
                "Given a description of you: \"You {Situation}.\" What do you think?\n\
                 You can choose from the following options:"
                    .to_string(),
            ),
            (
                QPrompt::QIII,
                "Given a statement of you: \"You {Situation}.\" Please choose from the following \
                 options to identify how accurately this statement describes you."
                    .to_string(),
            ),
        ]);
        let a_prompts = BTreeMap::from([
            (APrompt::AI, "My answer:".to_string()),
            (APrompt::AII, "My answer: I choose option".to_string()),
            (
                APrompt::AIII,
                "My answer: I think the best description of myself is option".to_string(),
            ),
        ]);
        PromptTable {
            q_prompts,
            a_prompts,
        }
    }

    /// Builtin table with the entries of a JSON override document applied.
    pub fn with_overrides_json(json: &str) -> Result<Self, TemplateError> {
        let overrides: PromptOverrides =
            serde_json::from_str(json).map_err(|e| TemplateError::Override(e.to_string()))?;
        let mut table = Self::builtin();
        for (id, text) in overrides.q_prompts {
            let q = QPrompt::ALL
                .into_iter()
                .find(|q| q.id().eq_ignore_ascii_case(&id))
                .ok_or_else(|| TemplateError::UnknownPromptId(id.clone()))?;
            if !text.contains(SITUATION_PLACEHOLDER) {
                return Err(TemplateError::MissingPlaceholder(id));
            }
            table.q_prompts.insert(q, text);
        }
        for (id, text) in overrides.a_prompts {
            let a = APrompt::ALL
                .into_iter()
                .find(|a| a.id().eq_ignore_ascii_case(&id))
                .ok_or_else(|| TemplateError::UnknownPromptId(id.clone()))?;
            table.a_prompts.insert(a, text);
        }
        Ok(table)
    }

    pub fn q_prompt(&self, q: QPrompt) -> &str {
        &self.q_prompts[&q]
    }

    pub fn a_prompt(&self, a: APrompt) -> &str {
        &self.a_prompts[&a]
    }

    /// Renders an item prompt.
    ///
    /// Layout (non-structured):
    ///
    /// ```text
    /// <Q-prompt with "You {Situation}.">
    /// Options:
    /// (A). Very Accurate
    /// ...
    /// (E). Very Inaccurate
    /// My answer: I choose option␠
    /// ```
    ///
    /// Structured templates add `Question:` and blank lines around each block and
    /// use `Answer:` in place of `My answer:`.
    pub fn render(&self, spec: &TemplateSpec, situation: &str, order: &OptionOrder) -> RenderedPrompt {
        let question = self.q_prompt(spec.q_prompt).replace(SITUATION_PLACEHOLDER, situation);
        let mut answer = self.a_prompt(spec.a_prompt).to_string();
        if spec.structured {
            if let Some(rest) = answer.strip_prefix("My answer:") {
                answer = format!("Answer:{rest}");
            }
        }

        let option_texts: Vec<String> = order
            .permutation
            .iter()
            .map(|label| {
                if spec.lowercase_options {
                    label.display().to_lowercase()
                } else {
                    label.display().to_string()
                }
            })
            .collect();
        let option_lines: Vec<String> = match spec.indexing {
            Indexing::Indexed => INDEX_SYMBOLS
                .iter()
                .zip(&option_texts)
                .map(|(sym, text)| format!("({sym}). {text}"))
                .collect(),
            Indexing::NonIndexed => option_texts.clone(),
        };

        let mut text = String::new();
        if spec.structured {
            text.push_str("Question:\n\n");
            text.push_str(&question);
            text.push_str("\n\nOptions:\n");
            text.push_str(&option_lines.join("\n"));
            text.push_str("\n\n");
        } else {
            text.push_str(&question);
            text.push_str("\nOptions:\n");
            text.push_str(&option_lines.join("\n"));
            text.push('\n');
        }
        text.push_str(&answer);
        text.push(' ');

        RenderedPrompt {
            text,
            option_texts,
            index_symbols: (spec.indexing == Indexing::Indexed)
                .then(|| INDEX_SYMBOLS.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn render_content_free(&self, spec: &TemplateSpec, order: &OptionOrder) -> RenderedPrompt {
        self.render(spec, "", order)
    }
}

/// Renders with the builtin prompt table.
pub fn render_prompt(spec: &TemplateSpec, situation: &str, order: &OptionOrder) -> RenderedPrompt {
    PromptTable::builtin().render(spec, situation, order)
}

/// The template with an empty statement, leaving `"You ."` in place.
pub fn render_content_free(spec: &TemplateSpec, order: &OptionOrder) -> RenderedPrompt {
    PromptTable::builtin().render_content_free(spec, order)
}
