mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use psyprobe::assessment::{
    run_with_backend, AssessmentConfig, AssessmentError, OrderChoice, SigmaKind, TemplateChoice,
};
use psyprobe::backend::{MockBehavior, MockRespondent};
use psyprobe::inventory::{load_inventory, InventoryFormat};
use psyprobe::report::{render_markdown, AssessmentReport};
use psyprobe::templating::{PromptTable, TemplateSpec};
use psyprobe::{CanonicalLabel, Indexing, Inventory, OptionOrder, Trait};

use common::data;

fn synthetic() -> Inventory {
    load_inventory(&data("synthetic_mpi.jsonl"), InventoryFormat::JsonLines).unwrap()
}

fn toy() -> Inventory {
    load_inventory(&data("toy.csv"), InventoryFormat::Csv).unwrap()
}

fn config(mock: &str, indexing: Indexing) -> AssessmentConfig {
    AssessmentConfig::new(
        data("synthetic_mpi.jsonl"),
        format!("mock:{mock}").parse().unwrap(),
        indexing,
    )
}

#[tokio::test]
async fn concurrency_does_not_change_the_report() {
    let mut reports = Vec::new();
    for k in [1, 4, 16] {
        let mut c = config("index=B", Indexing::Indexed);
        c.concurrency = k;
        c.calibrate = true;
        let r = run_with_backend(&c, synthetic(), Arc::new(MockRespondent::index_bound("B")))
            .await
            .unwrap();
        let mut r = r.without_timestamps();
        r.config.concurrency = 0;
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
    assert!(reports[0].selection.is_some());
}

#[tokio::test]
async fn sample_sigma_matches_the_published_row() {
    let mut c = config("constant=VA", Indexing::NonIndexed);
    c.sigma = SigmaKind::Sample;
    c.orders = vec![OrderChoice::Named("Original".into())];
    let r = run_with_backend(&c, synthetic(), Arc::new(MockRespondent::constant(CanonicalLabel::VA)))
        .await
        .unwrap();
    let rounded: Vec<String> = Trait::ALL
        .iter()
        .map(|t| format!("{:.2}", r.runs[0].stats.get(*t).unwrap().sigma))
        .collect();
    assert_eq!(rounded, ["1.97", "2.00", "1.99", "2.00", "1.91"]);
}

/// A respondent whose answers carry item content on top of a strong pull
/// towards VA: calibration spreads the answers out within a single order.
#[tokio::test]
async fn calibration_deconcentrates_within_one_order() {
    let inv = toy();
    let spec = TemplateSpec::parse("og-ns-q-i-a-i", Indexing::NonIndexed).unwrap();
    let order = OptionOrder::original();
    let prompts = PromptTable::builtin();
    let mut table = BTreeMap::new();
    for (i, item) in inv.items.iter().enumerate() {
        // VA always wins, but the runner-up rotates with the item.
        let mut p = [0.05; 5];
        p[0] = 0.6;
        p[1 + i % 4] = 0.2;
        table.insert(MockBehavior::prompt_key(&prompts.render(&spec, &item.situation, &order).text), p);
    }
    table.insert(
        MockBehavior::prompt_key(&prompts.render_content_free(&spec, &order).text),
        [0.85, 0.0375, 0.0375, 0.0375, 0.0375],
    );
    let mut c = config("uniform", Indexing::NonIndexed);
    c.template = TemplateChoice::Named(spec.name());
    c.orders = vec![OrderChoice::Named("Original".into())];
    c.calibrate = true;
    let r = run_with_backend(&c, inv, Arc::new(MockRespondent::new(MockBehavior::TableDriven(table))))
        .await
        .unwrap();
    assert_eq!(r.runs[0].distribution.label_percent[0], 100.0);
    assert_eq!(r.content_free.match_rate, 1.0);
    let cal = r.calibration.unwrap();
    assert_eq!(cal.per_order[0].max_label_share, cal.max_label_share);
    assert!(cal.max_label_share <= 0.3, "{}", cal.max_label_share);
    assert_eq!(cal.bias_only_records, 0);
}

#[tokio::test]
async fn report_round_trips_and_renders() {
    let mut c = config("constant=MI", Indexing::Indexed);
    c.calibrate = true;
    c.template = TemplateChoice::Named("lc-s-q-iii-a-ii".into());
    let r = run_with_backend(&c, synthetic(), Arc::new(MockRespondent::constant(CanonicalLabel::MI)))
        .await
        .unwrap();
    let back = AssessmentReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert!(r.template_text.contains("{Situation}"));
    assert!(r.provenance.finished_at >= r.provenance.started_at);

    let md = render_markdown(&r);
    assert!(md.contains("| Order I | 2.81 ± 0.98 |") || md.contains("| Original | 2.81 ± 0.98 |"));
    assert!(md.contains("## Calibrated (divide)"));

    let mut empty = r.clone();
    empty.runs.clear();
    empty.content_free.probes.clear();
    empty.calibration = None;
    empty.selection = None;
    let md = render_markdown(&empty);
    let ocean = md.split("## OCEAN scores").nth(1).unwrap();
    let table: Vec<&str> = ocean.lines().filter(|l| l.starts_with('|')).take_while(|l| !l.contains("VA %")).collect();
    assert_eq!(table.len(), 3, "header, rule and the human row");
    assert!(table[2].starts_with("| Human |"));
}

#[tokio::test]
async fn scoring_failures_name_the_item() {
    let mut c = config("uniform", Indexing::NonIndexed);
    c.template = TemplateChoice::Named("og-ns-q-i-a-i".into());
    let empty_table = MockRespondent::new(MockBehavior::TableDriven(BTreeMap::new()));
    let err = run_with_backend(&c, toy(), Arc::new(empty_table)).await.unwrap_err();
    match err {
        AssessmentError::Scoring { item_id, order, .. } => {
            assert_eq!(item_id, "o1");
            assert_eq!(order, "Original");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[tokio::test]
async fn prompt_overrides_reach_the_backend() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = dir.path().join("prompts.json");
    std::fs::write(
        &overrides,
        r#"{"q_prompts": {"Q-I": "Consider: \"You {Situation}.\""}, "a_prompts": {"A-I": "Pick:"}}"#,
    )
    .unwrap();
    let mut c = config("constant=NANI", Indexing::NonIndexed);
    c.template = TemplateChoice::Named("og-ns-q-i-a-i".into());
    c.prompt_overrides = Some(overrides);
    let r = run_with_backend(&c, toy(), Arc::new(MockRespondent::constant(CanonicalLabel::NANI)))
        .await
        .unwrap();
    assert!(r.template_text.starts_with("Consider: \"You {Situation}.\""));
    assert!(r.template_text.ends_with("Pick: "));
    assert_eq!(r.runs[0].stats.get(Trait::Agreeableness).unwrap().mean, 3.0);
}

#[test]
fn csv_and_jsonl_load_the_same_items() {
    let inv = toy();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.jsonl");
    inv.write_jsonl(&path).unwrap();
    let back = load_inventory(&path, InventoryFormat::JsonLines).unwrap();
    assert_eq!(back.items, inv.items);
}
