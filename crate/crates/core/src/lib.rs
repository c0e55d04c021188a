//! Administer self-assessment personality inventories to language models and
//! check whether the answers can be trusted.
//!
//! The pipeline: pick a prompt template by mutual information, score every
//! inventory item under several option orders, aggregate OCEAN statistics,
//! test option-order symmetry, probe the model with content-free prompts and
//! optionally calibrate against them.
//!
//! The guide in `book/` explains each step; its code listings are compiled as
//! doctests of this crate.

pub mod assessment;
pub mod backend;
pub mod inventory;
pub mod mcqa;
pub mod report;
pub mod selection;
pub mod templating;

pub use assessment::{
    calibrate, distributions, likert_value, ocean_stats, run_assessment, symmetry_report,
    AssessmentConfig, CalibrationMode, SigmaKind,
};
pub use backend::{Backend, BackendError, ContinuationScore, ScoreRequest};
pub use inventory::{
    key_fractions, load_inventory, sample_per_trait, Inventory, InventoryFormat, InventoryItem,
    Key, Trait,
};
pub use mcqa::{length_normalized_score, select_answer, OptionProbVector, ResponseRecord, Scorer};
pub use report::{render_markdown, AssessmentReport, HumanBaseline};
pub use selection::{mutual_information, select_template, MIScore};
pub use templating::{
    enumerate_templates, render_content_free, render_prompt, CanonicalLabel, Indexing,
    OptionOrder, TemplateSpec,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/inventories.md")]
    mod inventories {}
    #[doc = include_str!("../../../book/src/templates.md")]
    mod templates {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/mutual-information.md")]
    mod mutual_information {}
    #[doc = include_str!("../../../book/src/symmetry.md")]
    mod symmetry {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
