use std::fs;
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use futures::stream::{self, StreamExt, TryStreamExt};

use super::{
    calibrate, distributions, ocean_stats, pooled_label_percent, symmetry_report, AssessmentConfig,
    AssessmentError, CalibrationMode, SigmaKind, TemplateChoice, REFERENCE_ORDER,
};
use crate::backend::Backend;
use crate::inventory::{load_inventory, sample_per_trait, Inventory};
use crate::mcqa::{select_answer, ResponseRecord, Scorer};
use crate::report::{
    AssessmentReport, CalibrationSection, ContentFreeProbe, ContentFreeSection, HumanBaseline,
    OrderRun, OrderShare, Provenance, SelectionSummary, SCHEMA_VERSION,
};
use crate::selection::select_template;
use crate::templating::{
    enumerate_templates, OptionOrder, PromptTable, TemplateSpec, SITUATION_PLACEHOLDER,
};

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Loads the inventory and backend named by `config` and runs the pipeline.
pub async fn run_assessment(config: &AssessmentConfig) -> Result<AssessmentReport, AssessmentError> {
    config.validate()?;
    let inventory = load_inventory(&config.inventory, config.inventory_format())?;
    let backend = config.backend.build()?;
    run_with_backend(config, inventory, backend).await
}

/// Runs the pipeline on an already loaded inventory and backend;
/// `config.inventory` and `config.backend` are only echoed.
pub async fn run_with_backend(
    config: &AssessmentConfig,
    inventory: Inventory,
    backend: Arc<dyn Backend>,
) -> Result<AssessmentReport, AssessmentError> {
    config.validate()?;
    let started_at = now();
    let prompts = match &config.prompt_overrides {
        Some(path) => {
            let json = fs::read_to_string(path)
                .map_err(|e| AssessmentError::Config(format!("{}: {e}", path.display())))?;
            PromptTable::with_overrides_json(&json)?
        }
        None => PromptTable::builtin(),
    };
    let scorer = Scorer::new(backend.clone())
        .with_prompts(prompts)
        .with_symbol_style(config.symbol_style);
    let orders = config.resolved_orders()?;
    let reference = orders
        .iter()
        .find(|o| o.name == REFERENCE_ORDER)
        .unwrap_or(&orders[0])
        .clone();

    let (spec, selection) = match &config.template {
        TemplateChoice::Named(name) => (TemplateSpec::parse(name, config.indexing)?, None),
        TemplateChoice::Auto => {
            let sample = sample_per_trait(&inventory, config.sample_per_trait, config.seeds.sample)?;
            let chosen = select_template(
                &scorer,
                &enumerate_templates(config.indexing),
                &sample,
                &reference,
                config.concurrency,
            )
            .await?;
            let summary = SelectionSummary {
                order: reference.name.clone(),
                sample_seed: config.seeds.sample,
                sample_size: sample.len(),
                ranking: chosen.ranking,
            };
            (chosen.best, Some(summary))
        }
    };

    let scored = score_orders(&scorer, &spec, &inventory, &orders, config.concurrency).await?;
    let runs = build_runs(&inventory, scored, config.sigma)?;
    let by_order: Vec<(String, Vec<ResponseRecord>)> = runs
        .iter()
        .map(|r| (r.order.name.clone(), r.records.clone()))
        .collect();
    let symmetry = symmetry_report(&by_order, &inventory, config.sigma, config.tau)?;

    let mut probes = Vec::with_capacity(orders.len());
    for order in &orders {
        let vector = scorer
            .score_content_free(&spec, order)
            .await
            .map_err(|source| AssessmentError::ContentFree {
                order: order.name.clone(),
                template: spec.name(),
                source,
            })?;
        probes.push(vector);
    }
    let content_free = content_free_section(&runs, probes);

    let mut report = AssessmentReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            backend: backend.descriptor(),
            started_at,
            finished_at: String::new(),
        },
        template: spec.name(),
        template_text: scorer
            .prompts()
            .render(&spec, SITUATION_PLACEHOLDER, &reference)
            .text,
        selection,
        runs,
        symmetry,
        content_free,
        calibration: None,
        human: HumanBaseline::mpi(),
        inventory,
    };
    if config.calibrate {
        report.calibration = Some(calibrate_report(&report, config.calibration_mode)?);
    }
    report.provenance.finished_at = now();
    Ok(report)
}

/// Scores every item under every order. At most `concurrency` requests are in
/// flight; results keep item order regardless.
pub async fn score_orders(
    scorer: &Scorer,
    spec: &TemplateSpec,
    inventory: &Inventory,
    orders: &[OptionOrder],
    concurrency: usize,
) -> Result<Vec<(OptionOrder, Vec<ResponseRecord>)>, AssessmentError> {
    let template = spec.name();
    let jobs = orders
        .iter()
        .flat_map(|order| inventory.items.iter().map(move |item| (order, item)));
    let records: Vec<ResponseRecord> = stream::iter(jobs)
        .map(|(order, item)| {
            let template = &template;
            async move {
                scorer
                    .score(spec, &item.situation, order)
                    .await
                    .map(|v| ResponseRecord::new(&item.id, template.as_str(), v))
                    .map_err(|source| AssessmentError::Scoring {
                        item_id: item.id.clone(),
                        order: order.name.clone(),
                        template: template.clone(),
                        source,
                    })
            }
        })
        .buffered(concurrency.max(1))
        .try_collect()
        .await?;

    let per_order = inventory.items.len().max(1);
    Ok(orders
        .iter()
        .cloned()
        .zip(records.chunks(per_order).map(<[_]>::to_vec).chain(std::iter::repeat(Vec::new())))
        .collect())
}

fn build_runs(
    inventory: &Inventory,
    scored: Vec<(OptionOrder, Vec<ResponseRecord>)>,
    sigma: SigmaKind,
) -> Result<Vec<OrderRun>, AssessmentError> {
    scored
        .into_iter()
        .map(|(order, records)| {
            Ok(OrderRun {
                stats: ocean_stats(&records, inventory, sigma)?,
                distribution: distributions(&records, inventory)?,
                order,
                records,
            })
        })
        .collect()
}

fn content_free_section(
    runs: &[OrderRun],
    vectors: Vec<crate::mcqa::OptionProbVector>,
) -> ContentFreeSection {
    let mut matched = 0usize;
    let mut total = 0usize;
    let probes = runs
        .iter()
        .zip(vectors)
        .map(|(run, vector)| {
            let selected = select_answer(&vector);
            let hits = run.records.iter().filter(|r| r.selected == selected).count();
            matched += hits;
            total += run.records.len();
            ContentFreeProbe {
                order: run.order.name.clone(),
                vector,
                selected,
                match_rate: hits as f64 / run.records.len().max(1) as f64,
            }
        })
        .collect();
    ContentFreeSection {
        probes,
        match_rate: if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        },
    }
}

fn max_share(percent: &[f64; 5]) -> f64 {
    percent.iter().copied().fold(0.0, f64::max) / 100.0
}

/// Rescales every record by its order's content-free probe and recomputes the
/// statistics. Needs no backend, so it also works on saved reports.
pub fn calibrate_report(
    report: &AssessmentReport,
    mode: CalibrationMode,
) -> Result<CalibrationSection, AssessmentError> {
    let inventory = &report.inventory;
    let sigma = report.config.sigma;
    let mut scored = Vec::with_capacity(report.runs.len());
    let mut bias_only_records = 0usize;
    for run in &report.runs {
        let probe = report.content_free.probe(&run.order.name).ok_or_else(|| {
            AssessmentError::Config(format!("no content-free probe for order {}", run.order.name))
        })?;
        let records: Vec<ResponseRecord> = run
            .records
            .iter()
            .map(|r| {
                let q = calibrate(&r.vector, &probe.vector, mode);
                if q.probs.iter().all(|p| (p - 0.2).abs() < 1e-9) {
                    bias_only_records += 1;
                }
                ResponseRecord::new(&r.item_id, &r.template, q)
            })
            .collect();
        scored.push((run.order.clone(), records));
    }
    let runs = build_runs(inventory, scored, sigma)?;
    let by_order: Vec<(String, Vec<ResponseRecord>)> = runs
        .iter()
        .map(|r| (r.order.name.clone(), r.records.clone()))
        .collect();
    let symmetry = symmetry_report(&by_order, inventory, sigma, report.config.tau)?;
    let pooled = pooled_label_percent(runs.iter().map(|r| r.records.as_slice()));
    let uncalibrated = pooled_label_percent(report.runs.iter().map(|r| r.records.as_slice()));
    Ok(CalibrationSection {
        mode,
        per_order: runs
            .iter()
            .map(|r| OrderShare {
                order: r.order.name.clone(),
                max_label_share: r.distribution.max_label_share(),
            })
            .collect(),
        runs,
        symmetry,
        pooled_label_percent: pooled,
        max_label_share: max_share(&pooled),
        uncalibrated_max_label_share: max_share(&uncalibrated),
        bias_only_records,
    })
}
