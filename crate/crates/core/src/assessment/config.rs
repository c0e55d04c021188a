use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AssessmentError, CalibrationMode, SigmaKind};
use crate::backend::{Backend, HttpBackend, MockBehavior, MockRespondent, RecordReplay};
use crate::inventory::InventoryFormat;
use crate::mcqa::SymbolStyle;
use crate::templating::{Indexing, OptionOrder, TemplateSpec, DEFAULT_ORDER_SEED};

/// Everything a run needs, loadable from JSON. Relative paths are resolved
/// against the config file's directory by [`AssessmentConfig::from_file`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentConfig {
    pub inventory: PathBuf,
    /// Guessed from the extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inventory_format: Option<InventoryFormat>,
    pub backend: BackendConfig,
    pub indexing: Indexing,
    #[serde(default)]
    pub template: TemplateChoice,
    /// Defaults to the five standard orders.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<OrderChoice>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub seeds: Seeds,
    /// Items per trait used to rank templates.
    #[serde(default = "default_sample")]
    pub sample_per_trait: usize,
    #[serde(default)]
    pub calibrate: bool,
    #[serde(default)]
    pub calibration_mode: CalibrationMode,
    #[serde(default)]
    pub symbol_style: SymbolStyle,
    #[serde(default)]
    pub sigma: SigmaKind,
    /// Requests in flight at once.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// JSON file replacing some of the built-in question/answer prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_overrides: Option<PathBuf>,
}

fn default_tau() -> f64 {
    0.95
}

fn default_sample() -> usize {
    10
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Draws the two shuffled default orders.
    #[serde(default = "default_order_seed")]
    pub orders: u64,
    /// Draws the template-selection sample.
    #[serde(default)]
    pub sample: u64,
}

fn default_order_seed() -> u64 {
    DEFAULT_ORDER_SEED
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            orders: DEFAULT_ORDER_SEED,
            sample: 0,
        }
    }
}

/// `"auto"` or a template name such as `og-ns-q-i-a-ii`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum TemplateChoice {
    #[default]
    Auto,
    Named(String),
}

impl Serialize for TemplateChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TemplateChoice::Auto => s.serialize_str("auto"),
            TemplateChoice::Named(n) => s.serialize_str(n),
        }
    }
}

impl<'de> Deserialize<'de> for TemplateChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s.eq_ignore_ascii_case("auto") {
            TemplateChoice::Auto
        } else {
            TemplateChoice::Named(s)
        })
    }
}

/// An order given by name (`"Reverse"`) or spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderChoice {
    Named(String),
    Explicit(OptionOrder),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Mock {
        /// `constant=VA`, `index=A`, `uniform`; ignored when `table` is set.
        #[serde(default)]
        behavior: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
    },
    /// Endpoint falls back to `PSYPROBE_ENDPOINT`.
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
    },
    Replay { cassette: PathBuf },
    Record {
        cassette: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
    },
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn Backend>, AssessmentError> {
        Ok(match self {
            BackendConfig::Mock {
                behavior,
                table,
                margin,
            } => {
                let behavior = match (table, behavior) {
                    (Some(path), _) => {
                        let text = fs::read_to_string(path).map_err(|e| {
                            AssessmentError::Config(format!("{}: {e}", path.display()))
                        })?;
                        MockBehavior::table_from_json(&text).map_err(AssessmentError::Config)?
                    }
                    (None, Some(b)) => b.parse().map_err(AssessmentError::Config)?,
                    (None, None) => {
                        return Err(AssessmentError::Config(
                            "mock backend needs `behavior` or `table`".into(),
                        ))
                    }
                };
                let mut mock = MockRespondent::new(behavior);
                if let Some(m) = margin {
                    if !(0.2..1.0).contains(m) {
                        return Err(AssessmentError::Config(format!(
                            "mock margin {m} outside [0.2, 1)"
                        )));
                    }
                    mock.margin = *m;
                }
                Arc::new(mock)
            }
            BackendConfig::Http { endpoint } => Arc::new(HttpBackend::from_env(endpoint.clone())?),
            BackendConfig::Replay { cassette } => Arc::new(RecordReplay::replay(cassette)?),
            BackendConfig::Record { cassette, endpoint } => {
                let inner: Arc<dyn Backend> = Arc::new(HttpBackend::from_env(endpoint.clone())?);
                Arc::new(RecordReplay::record(inner, cassette)?)
            }
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        match self {
            BackendConfig::Mock {
                table: Some(path), ..
            }
            | BackendConfig::Replay { cassette: path }
            | BackendConfig::Record { cassette: path, .. } => *path = base.join(&*path),
            _ => {}
        }
    }
}

/// `mock:constant=VA`, `mock:index=A`, `mock:uniform`, `mock:table=PATH`,
/// `http` / `http:URL`, `replay:PATH`, `record:PATH`.
impl FromStr for BackendConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let need = |what: &str| {
            if arg.is_empty() {
                Err(format!("backend `{kind}` needs {what}"))
            } else {
                Ok(arg)
            }
        };
        match kind {
            "mock" => {
                let arg = need("a behavior")?;
                if let Some(path) = arg.strip_prefix("table=") {
                    return Ok(BackendConfig::Mock {
                        behavior: None,
                        table: Some(path.into()),
                        margin: None,
                    });
                }
                arg.parse::<MockBehavior>()?;
                Ok(BackendConfig::Mock {
                    behavior: Some(arg.to_string()),
                    table: None,
                    margin: None,
                })
            }
            "http" | "https" => Ok(BackendConfig::Http {
                endpoint: match (kind, arg) {
                    (_, "") => None,
                    ("http", a) if a.starts_with("//") => Some(format!("http:{a}")),
                    ("https", a) => Some(format!("https:{a}")),
                    (_, a) => Some(a.to_string()),
                },
            }),
            "replay" => Ok(BackendConfig::Replay {
                cassette: need("a cassette path")?.into(),
            }),
            "record" => Ok(BackendConfig::Record {
                cassette: need("a cassette path")?.into(),
                endpoint: None,
            }),
            _ => Err(format!("unknown backend `{s}`")),
        }
    }
}

impl AssessmentConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(inventory: impl Into<PathBuf>, backend: BackendConfig, indexing: Indexing) -> Self {
        AssessmentConfig {
            inventory: inventory.into(),
            inventory_format: None,
            backend,
            indexing,
            template: TemplateChoice::Auto,
            orders: Vec::new(),
            tau: default_tau(),
            seeds: Seeds::default(),
            sample_per_trait: default_sample(),
            calibrate: false,
            calibration_mode: CalibrationMode::default(),
            symbol_style: SymbolStyle::default(),
            sigma: SigmaKind::default(),
            concurrency: default_concurrency(),
            prompt_overrides: None,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, AssessmentError> {
        let config: AssessmentConfig =
            serde_json::from_str(json).map_err(|e| AssessmentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, AssessmentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AssessmentError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.inventory = base.join(&config.inventory);
        config.prompt_overrides = config.prompt_overrides.map(|p| base.join(p));
        config.backend.resolve_paths(base);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AssessmentError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(AssessmentError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.concurrency == 0 {
            return Err(AssessmentError::Config("concurrency must be at least 1".into()));
        }
        if self.sample_per_trait == 0 && self.template == TemplateChoice::Auto {
            return Err(AssessmentError::Config(
                "automatic template selection needs sample_per_trait ≥ 1".into(),
            ));
        }
        self.resolved_orders()?;
        if let TemplateChoice::Named(name) = &self.template {
            TemplateSpec::parse(name, self.indexing)?;
        }
        Ok(())
    }

    /// The configured orders, or the five defaults. Names must be unique.
    pub fn resolved_orders(&self) -> Result<Vec<OptionOrder>, AssessmentError> {
        let orders = if self.orders.is_empty() {
            OptionOrder::default_set(self.seeds.orders)
        } else {
            self.orders
                .iter()
                .map(|o| match o {
                    OrderChoice::Named(n) => OptionOrder::named(n, self.seeds.orders),
                    OrderChoice::Explicit(o) => Ok(o.clone()),
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        for (i, o) in orders.iter().enumerate() {
            if orders[..i].iter().any(|p| p.name == o.name) {
                return Err(AssessmentError::Config(format!("order `{}` listed twice", o.name)));
            }
        }
        Ok(orders)
    }

    pub fn inventory_format(&self) -> InventoryFormat {
        self.inventory_format
            .unwrap_or_else(|| InventoryFormat::from_path(&self.inventory))
    }
}
