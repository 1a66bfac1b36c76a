use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sogm_core::baselines::ConfusionMatrix;
use sogm_core::io;
use sogm_core::pipeline::{prepare_scenes, run_prepared, ClassifierKind, ExperimentConfig, RepresentationTag};
use sogm_core::sim::CLASS_NAMES;
use sogm_core::Error;

use crate::commands::{write_csv, PredictionRow};
use crate::manifest::Recorder;
use crate::scenes::{conflict, load_scenes, resolve_config};
use crate::{plot, EvaluateArgs, Format, Sweep};

/// Bakis chain lengths of the length sweep.
pub const BAKIS_LENGTHS: [usize; 9] = [3, 5, 7, 8, 9, 10, 15, 20, 30];

/// One score in long format: a sweep value, a split and a metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sweep: String,
    pub value: String,
    pub representation: String,
    pub classifier: String,
    pub bakis_length: Option<usize>,
    pub split_seed: Option<u64>,
    pub metric: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub sweep: String,
    pub value: String,
    pub split_seed: u64,
    pub scenario: usize,
    pub macro_f1: f64,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    value: String,
    split_seed: u64,
    run_id: String,
    macro_f1: f64,
    per_class_f1: Vec<f64>,
    confusion: ConfusionMatrix,
}

fn metric_rows(template: &ScoreRow, confusion: &ConfusionMatrix) -> Vec<ScoreRow> {
    let mut rows = vec![ScoreRow {
        metric: "macro_f1".into(),
        score: confusion.macro_f1(),
        ..template.clone()
    }];
    for (c, f) in CLASS_NAMES.iter().zip(confusion.per_class_f1()) {
        rows.push(ScoreRow {
            metric: format!("f1_{c}"),
            score: f,
            ..template.clone()
        });
    }
    rows
}

fn sweep_name(sweep: Sweep) -> &'static str {
    match sweep {
        Sweep::None => "none",
        Sweep::Representation => "representation",
        Sweep::BakisLength => "bakis_length",
        Sweep::Classifier => "classifier",
    }
}

/// Configurations of a sweep, labeled by the swept value.
fn sweep_configs(sweep: Sweep, base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    Ok(match sweep {
        Sweep::None => vec![("".into(), base.clone())],
        Sweep::Representation => RepresentationTag::ALL
            .into_iter()
            .map(|r| (r.name().to_string(), with(&|c| c.evaluation.representation = r)))
            .collect(),
        Sweep::BakisLength => {
            if base.classifier.kind != ClassifierKind::Hmm {
                return Err(conflict(format!(
                    "a bakis_length sweep needs the hmm classifier, not {}",
                    base.classifier.kind.name()
                )));
            }
            BAKIS_LENGTHS
                .into_iter()
                .map(|s| (s.to_string(), with(&|c| c.model.num_states = s)))
                .collect()
        }
        Sweep::Classifier => ClassifierKind::ALL
            .into_iter()
            .map(|k| (k.name().to_string(), with(&|c| c.classifier.kind = k)))
            .collect(),
    })
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    if args.splits == 0 {
        return Err(Error::InvalidParams("--splits must be at least 1".into()).into());
    }
    match &args.predictions {
        Some(p) => score_predictions(args, p),
        None => experiment(args),
    }
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let text = io::read_text(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: record {}", path.display(), i + 1)))
        .collect()
}

fn class_index(name: &str) -> Result<usize> {
    CLASS_NAMES
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::UnknownClass(name.to_string()).into())
}

fn score_predictions(args: &EvaluateArgs, path: &Path) -> Result<()> {
    let config = resolve_config(&args.common, None, None)?;
    let mut rec = Recorder::new("evaluate", &args.common.out);
    rec.input(path);
    let rows = read_predictions(path)?;
    let truth = rows.iter().map(|r| class_index(&r.truth)).collect::<Result<Vec<_>>>()?;
    let predicted = rows.iter().map(|r| class_index(&r.predicted)).collect::<Result<Vec<_>>>()?;
    let mut confusion = ConfusionMatrix::new(&CLASS_NAMES);
    confusion.add(&truth, &predicted)?;
    let template = ScoreRow {
        sweep: "none".into(),
        value: "".into(),
        representation: "".into(),
        classifier: "".into(),
        bakis_length: None,
        split_seed: None,
        metric: String::new(),
        score: 0.0,
    };
    let scores = metric_rows(&template, &confusion);
    match args.format {
        Format::Csv => write_csv(&rec.artifact("scores.csv"), &scores)?,
        Format::Json => io::write_json(&rec.artifact("scores.json"), &serde_json::json!({
            "scores": scores,
            "confusion": confusion,
        }))?,
    }
    rec.finish(&config)?;
    Ok(())
}

fn experiment(args: &EvaluateArgs) -> Result<()> {
    let common = &args.common;
    let config = resolve_config(common, args.dataset.as_deref(), None)?;
    config.validate()?;
    let runs = sweep_configs(args.sweep, &config)?;
    let mut rec = Recorder::new("evaluate", &common.out);
    let scenes = match &args.dataset {
        Some(d) => {
            rec.input(d);
            if let Some(s) = &args.segmentation {
                rec.input(s);
            }
            load_scenes(d, args.segmentation.as_deref(), &config)?
        }
        None => prepare_scenes(&config)?,
    };

    let sweep = sweep_name(args.sweep);
    let mut scores = Vec::new();
    let mut per_scenario = Vec::new();
    let mut summaries = Vec::new();
    for (value, cfg) in &runs {
        for k in 0..args.splits {
            let mut cfg = cfg.clone();
            cfg.evaluation.split_seed = config.evaluation.split_seed.wrapping_add(k);
            let result = run_prepared(&cfg, &scenes)?;
            log::info!("{sweep}={value} split {}: macro-F1 {:.4}", cfg.evaluation.split_seed, result.macro_f1);
            let hmm = result.classifier == ClassifierKind::Hmm;
            let template = ScoreRow {
                sweep: sweep.into(),
                value: value.clone(),
                representation: result.representation.name().into(),
                classifier: result.classifier.name().into(),
                bakis_length: hmm.then_some(result.bakis_length),
                split_seed: Some(cfg.evaluation.split_seed),
                metric: String::new(),
                score: 0.0,
            };
            scores.extend(metric_rows(&template, &result.confusion));
            per_scenario.extend(result.per_scenario_f1.iter().map(|&(scenario, f)| ScenarioScore {
                sweep: sweep.into(),
                value: value.clone(),
                split_seed: cfg.evaluation.split_seed,
                scenario,
                macro_f1: f,
            }));
            summaries.push(RunSummary {
                value: value.clone(),
                split_seed: cfg.evaluation.split_seed,
                run_id: result.run_id,
                macro_f1: result.macro_f1,
                per_class_f1: result.per_class_f1,
                confusion: result.confusion,
            });
        }
    }

    match args.format {
        Format::Csv => {
            write_csv(&rec.artifact("scores.csv"), &scores)?;
            write_csv(&rec.artifact("per_scenario.csv"), &per_scenario)?;
        }
        Format::Json => io::write_json(&rec.artifact("scores.json"), &serde_json::json!({
            "scores": scores,
            "per_scenario": per_scenario,
            "runs": summaries,
        }))?,
    }
    if args.svg {
        let groups: Vec<(String, Vec<f64>)> = runs
            .iter()
            .map(|(value, _)| {
                let label = if value.is_empty() { "all".to_string() } else { value.clone() };
                let vals = per_scenario.iter().filter(|s| &s.value == value).map(|s| s.macro_f1).collect();
                (label, vals)
            })
            .collect();
        let svg = plot::box_plot(&format!("macro-F1 per test scenario, sweep: {sweep}"), "macro-F1", &groups);
        io::write_bytes(&rec.artifact("scores.svg"), svg.as_bytes())?;
    }
    rec.finish(&config)?;
    Ok(())
}
