//! Personality inventories: loading, validation and per-trait sampling.
//!
//! An inventory is an ordered list of situational statements, each tagged with
//! the OCEAN trait it measures and whether agreement raises (positive key) or
//! lowers (negative key) the score on that trait.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The Big Five personality traits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trait {
    #[serde(rename = "O")]
    Openness,
    #[serde(rename = "C")]
    Conscientiousness,
    #[serde(rename = "E")]
    Extraversion,
    #[serde(rename = "A")]
    Agreeableness,
    #[serde(rename = "N")]
    Neuroticism,
}

impl Trait {
    /// OCEAN order.
    pub const ALL: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Trait::Openness => "O",
            Trait::Conscientiousness => "C",
            Trait::Extraversion => "E",
            Trait::Agreeableness => "A",
            Trait::Neuroticism => "N",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
        }
    }

    /// Position in OCEAN order.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Trait {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "O" | "o" | "Openness" => Ok(Trait::Openness),
            "C" | "c" | "Conscientiousness" => Ok(Trait::Conscientiousness),
            "E" | "e" | "Extraversion" | "Extroversion" => Ok(Trait::Extraversion),
            "A" | "a" | "Agreeableness" => Ok(Trait::Agreeableness),
            "N" | "n" | "Neuroticism" => Ok(Trait::Neuroticism),
            other => Err(other.to_string()),
        }
    }
}

/// Direction in which an item is correlated with its trait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Key {
    Positive,
    Negative,
}

impl Key {
    pub fn sign(self) -> i8 {
        match self {
            Key::Positive => 1,
            Key::Negative => -1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Key::Positive => "+",
            Key::Negative => "-",
        }
    }

    fn parse(raw: &str) -> Option<Key> {
        match raw.trim() {
            "+" | "1" | "+1" | "1.0" | "+1.0" | "positive" | "Positive" => Some(Key::Positive),
            "-" | "\u{2212}" | "-1" | "\u{2212}1" | "-1.0" | "negative" | "Negative" => {
                Some(Key::Negative)
            }
            _ => None,
        }
    }
}

// On disk the key is the integer +1 / -1; symbols and strings are accepted on input.
impl Serialize for Key {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.sign())
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawKey::deserialize(deserializer)?;
        raw.resolve()
            .ok_or_else(|| serde::de::Error::custom(format!("unknown key symbol `{}`", raw.text())))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawKey {
    Int(i64),
    Float(f64),
    Text(String),
}

impl RawKey {
    fn resolve(&self) -> Option<Key> {
        match self {
            RawKey::Int(1) => Some(Key::Positive),
            RawKey::Int(-1) => Some(Key::Negative),
            RawKey::Int(_) => None,
            RawKey::Float(f) if *f == 1.0 => Some(Key::Positive),
            RawKey::Float(f) if *f == -1.0 => Some(Key::Negative),
            RawKey::Float(_) => None,
            RawKey::Text(s) => Key::parse(s),
        }
    }

    fn text(&self) -> String {
        match self {
            RawKey::Int(i) => i.to_string(),
            RawKey::Float(f) => f.to_string(),
            RawKey::Text(s) => s.clone(),
        }
    }
}

/// One situational statement.
///
/// `situation` is the statement body that fills the `You {Situation}.` slot of
/// a template, so it never starts with "You" and carries no final period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub id: String,
    #[serde(rename = "text")]
    pub situation: String,
    #[serde(rename = "label_ocean")]
    pub trait_: Trait,
    pub key: Key,
}

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("failed to read inventory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown trait label `{value}`")]
    UnknownTrait { line: usize, value: String },
    #[error("line {line}: unknown key symbol `{value}`")]
    UnknownKey { line: usize, value: String },
    #[error("line {line}: invalid situation: {reason}")]
    InvalidSituation { line: usize, reason: String },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("inventory has no items")]
    Empty,
    #[error("trait {trait_} has {available} items, {requested} requested")]
    InsufficientItems {
        trait_: Trait,
        available: usize,
        requested: usize,
    },
}

/// On-disk layouts understood by [`load_inventory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InventoryFormat {
    Csv,
    JsonLines,
}

impl InventoryFormat {
    /// Guess from the file extension; anything that is not `.csv` is JSON-lines.
    pub fn from_path(path: &Path) -> InventoryFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InventoryFormat::Csv,
            _ => InventoryFormat::JsonLines,
        }
    }
}

/// An ordered, immutable collection of items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub name: String,
    pub items: Vec<InventoryItem>,
}

/// Positive/negative item counts for one trait.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCounts {
    pub positive: usize,
    pub negative: usize,
}

impl KeyCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }

    /// Fraction of positively keyed items, `None` for an empty trait.
    pub fn positive_fraction(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.positive as f64 / self.total() as f64)
    }
}

/// Per-trait and overall fraction of positively keyed items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFractions {
    pub per_trait: BTreeMap<Trait, f64>,
    pub overall: f64,
}

impl KeyFractions {
    pub fn get(&self, trait_: Trait) -> Option<f64> {
        self.per_trait.get(&trait_).copied()
    }
}

impl Inventory {
    /// Builds an inventory, enforcing the item invariants.
    pub fn new(name: impl Into<String>, items: Vec<InventoryItem>) -> Result<Self, InventoryError> {
        if items.is_empty() {
            return Err(InventoryError::Empty);
        }
        let mut seen = HashSet::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            check_situation(&item.situation)
                .map_err(|reason| InventoryError::InvalidSituation { line: idx + 1, reason })?;
            if !seen.insert(item.id.as_str()) {
                return Err(InventoryError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Inventory {
            name: name.into(),
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&InventoryItem> {
        self.items.iter().find(|item| item.id == id)
    }

    pub fn items_of(&self, trait_: Trait) -> impl Iterator<Item = &InventoryItem> {
        self.items.iter().filter(move |item| item.trait_ == trait_)
    }

    pub fn key_counts(&self) -> BTreeMap<Trait, KeyCounts> {
        let mut counts: BTreeMap<Trait, KeyCounts> = BTreeMap::new();
        for item in &self.items {
            let entry = counts.entry(item.trait_).or_default();
            match item.key {
                Key::Positive => entry.positive += 1,
                Key::Negative => entry.negative += 1,
            }
        }
        counts
    }

    /// Canonical JSON-lines serialization.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("items always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_jsonl())
    }
}

/// Loads an inventory file; rows keep their file order.
pub fn load_inventory(path: &Path, format: InventoryFormat) -> Result<Inventory, InventoryError> {
    let text = fs::read_to_string(path).map_err(|source| InventoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("inventory")
        .to_string();
    parse_inventory(&name, &text, format)
}

/// Parses inventory text already in memory.
pub fn parse_inventory(
    name: &str,
    text: &str,
    format: InventoryFormat,
) -> Result<Inventory, InventoryError> {
    let rows = match format {
        InventoryFormat::JsonLines => parse_jsonl_rows(text)?,
        InventoryFormat::Csv => parse_csv_rows(text)?,
    };
    if rows.is_empty() {
        return Err(InventoryError::Empty);
    }
    let width = rows.len().to_string().len().max(4);
    let mut items = Vec::with_capacity(rows.len());
    for (idx, row) in rows.into_iter().enumerate() {
        let line = row.line;
        let trait_ = Trait::from_str(&row.label_ocean).map_err(|value| {
            InventoryError::UnknownTrait { line, value }
        })?;
        let key = row.key.resolve().ok_or_else(|| InventoryError::UnknownKey {
            line,
            value: row.key.text(),
        })?;
        let situation = normalize_situation(&row.text)
            .map_err(|reason| InventoryError::InvalidSituation { line, reason })?;
        let id = match row.id {
            Some(id) if !id.trim().is_empty() => id.trim().to_string(),
            _ => format!("{idx:0width$}"),
        };
        items.push(InventoryItem {
            id,
            situation,
            trait_,
            key,
        });
    }
    Inventory::new(name, items)
}

struct RawRow {
    line: usize,
    id: Option<String>,
    text: String,
    label_ocean: String,
    key: RawKey,
}

#[derive(Deserialize)]
struct JsonRow {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
    label_ocean: String,
    key: RawKey,
}

fn parse_jsonl_rows(text: &str) -> Result<Vec<RawRow>, InventoryError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(raw).map_err(|e| InventoryError::Parse {
            line,
            message: e.to_string(),
        })?;
        let id = match row.id {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s),
            Some(serde_json::Value::Number(n)) => Some(n.to_string()),
            Some(other) => {
                return Err(InventoryError::Parse {
                    line,
                    message: format!("id must be a string, got {other}"),
                })
            }
        };
        rows.push(RawRow {
            line,
            id,
            text: row.text,
            label_ocean: row.label_ocean,
            key: row.key,
        });
    }
    Ok(rows)
}

fn parse_csv_rows(text: &str) -> Result<Vec<RawRow>, InventoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| InventoryError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(text_col), Some(trait_col), Some(key_col)) =
        (column("text"), column("label_ocean"), column("key"))
    else {
        return Err(InventoryError::Parse {
            line: 1,
            message: "header must contain text, label_ocean and key columns".into(),
        });
    };
    let id_col = column("id");

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| InventoryError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |col: usize| {
            record.get(col).map(str::to_string).ok_or_else(|| InventoryError::Parse {
                line,
                message: format!("missing column {}", &headers[col]),
            })
        };
        rows.push(RawRow {
            line,
            id: id_col.and_then(|c| record.get(c)).map(str::to_string),
            text: field(text_col)?,
            label_ocean: field(trait_col)?,
            key: RawKey::Text(field(key_col)?),
        });
    }
    Ok(rows)
}

/// Brings a raw statement into `{Situation}` form.
///
/// Trims, drops a leading "You ", drops one trailing period and lower-cases the
/// first letter unless the statement opens with an acronym. Idempotent.
pub fn normalize_situation(raw: &str) -> Result<String, String> {
    let mut s = raw.trim();
    for prefix in ["You ", "you "] {
        if let Some(rest) = s.strip_prefix(prefix) {
            s = rest.trim_start();
        }
    }
    if let Some(rest) = s.strip_suffix('.') {
        s = rest.trim_end();
    }
    let mut chars = s.chars();
    let normalized = match (chars.next(), chars.next()) {
        (Some(first), second) if first.is_uppercase() && !second.is_some_and(char::is_uppercase) => {
            first.to_lowercase().chain(s[first.len_utf8()..].chars()).collect()
        }
        _ => s.to_string(),
    };
    check_situation(&normalized)?;
    Ok(normalized)
}

fn check_situation(s: &str) -> Result<(), String> {
    if s.trim().is_empty() {
        return Err("statement is empty".into());
    }
    if s.contains('\n') || s.contains('\r') {
        return Err("statement contains a newline".into());
    }
    if s.starts_with("You ") || s.starts_with("you ") {
        return Err("statement must not start with \"You\"".into());
    }
    Ok(())
}

/// Deterministic sub-inventory with exactly `n_per_trait` items of each trait.
///
/// Items of each trait are sorted by id, shuffled with a ChaCha8 stream seeded
/// by `seed` (traits drawn in OCEAN order from the same stream), and the first
/// `n_per_trait` are kept.
pub fn sample_per_trait(
    inv: &Inventory,
    n_per_trait: usize,
    seed: u64,
) -> Result<Inventory, InventoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n_per_trait * Trait::ALL.len());
    for trait_ in Trait::ALL {
        let mut pool: Vec<&InventoryItem> = inv.items_of(trait_).collect();
        if pool.len() < n_per_trait {
            return Err(InventoryError::InsufficientItems {
                trait_,
                available: pool.len(),
                requested: n_per_trait,
            });
        }
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        pool.shuffle(&mut rng);
        items.extend(pool.into_iter().take(n_per_trait).cloned());
    }
    Ok(Inventory {
        name: format!("{}[n={n_per_trait},seed={seed}]", inv.name),
        items,
    })
}

/// Fraction of positively keyed items per trait and overall.
///
/// Traits with no items are absent from `per_trait`.
pub fn key_fractions(inv: &Inventory) -> KeyFractions {
    let counts = inv.key_counts();
    let per_trait = counts
        .iter()
        .filter_map(|(t, c)| c.positive_fraction().map(|p| (*t, p)))
        .collect();
    let positive: usize = counts.values().map(|c| c.positive).sum();
    let total: usize = counts.values().map(KeyCounts::total).sum();
    KeyFractions {
        per_trait,
        overall: if total == 0 {
            0.0
        } else {
            positive as f64 / total as f64
        },
    }
}
