//! Subcommand bodies shared by the binary and the tests.

use std::path::Path;

use serde::Serialize;
use tsrc_core::{Dataset, DecisionRule, SrcClassifier, StructuredDictionary, Tensor3, Verdict};

use crate::benchmark;
use crate::config::{combo_channels, DictKind, ExperimentConfig};
use crate::curves::{emit_curves, CurveSelection};
use crate::error::{CliError, Result};
use crate::experiment::{
    classify_tests, dataset_noise_levels, fit_method, run_experiment, test_set, trial_data,
    write_rows, Label, ResultRow, TrainingPool,
};
use crate::multilook::run_multilook;

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let ds = benchmark::generate(&cfg.generator, cfg.seed)?;
    ds.write(out)?;
    Ok(ds)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    Dataset::read(&cfg.dataset).map_err(|e| CliError::Data(format!("{}: {e}", cfg.dataset.display())))
}

pub fn eval(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let rows = run_experiment(cfg, &load_dataset(cfg)?)?;
    write_rows(&rows, &cfg.output)?;
    Ok(rows)
}

pub fn multilook_eval(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let rows = run_multilook(cfg, &load_dataset(cfg)?)?;
    write_rows(&rows, &cfg.output)?;
    Ok(rows)
}

fn first_combo(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<usize>> {
    let names = combo_channels(&cfg.channel_combos[0]).map_err(|m| CliError::Config {
        field: "channel_combos.0".into(),
        message: m,
    })?;
    ds.channel_indices(&names).map_err(|e| CliError::Data(e.to_string()))
}

/// Learns a dictionary from trial 0 with the first learned method (or the
/// first method's mode) on the first channel combination.
pub fn train_dl(cfg: &ExperimentConfig, stem: &Path) -> Result<StructuredDictionary> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let pool = TrainingPool::from_dataset(&ds, &first_combo(cfg, &ds)?)?;
    let mut method = cfg
        .methods
        .iter()
        .copied()
        .find(|m| m.dictionary == DictKind::Learned)
        .unwrap_or(cfg.methods[0]);
    method.dictionary = DictKind::Learned;
    let fitted = fit_method(method, &trial_data(&pool, cfg, 0), cfg, cfg.seed, cfg.seed)?;
    let dict = fitted.classifier.dictionary().clone();
    let meta = serde_json::json!({ "method": method.to_string(), "lambda": fitted.lambda });
    dict.save(stem, Some(meta))?;
    Ok(dict)
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub index: usize,
    pub class: String,
    pub noise_level: f64,
    pub truth: String,
    pub predicted: String,
    pub verdict: String,
    pub correct: bool,
    pub min_residual: f64,
}

fn label_name(l: Label, targets: &[String]) -> String {
    match l {
        Label::Target(i) => targets[i].clone(),
        Label::Confuser => "confuser".into(),
    }
}

/// Classifies every test sample with the first method fitted on trial 0, or
/// with a saved dictionary when `dictionary` is given.
pub fn classify(cfg: &ExperimentConfig, dictionary: Option<&Path>, out: &Path) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let channels = first_combo(cfg, &ds)?;
    let pool = TrainingPool::from_dataset(&ds, &channels)?;
    let targets = pool.target_names();
    let method = cfg.methods[0];
    let mut fitted = fit_method(method, &trial_data(&pool, cfg, 0), cfg, cfg.seed, cfg.seed)?;
    if let Some(stem) = dictionary {
        let dict = StructuredDictionary::load(stem)?;
        let rule = *fitted.classifier.rule();
        let solver = crate::experiment::solver_config(method, fitted.lambda, cfg);
        fitted.classifier = SrcClassifier::new(dict, &solver, rule)?;
    }
    let levels = if cfg.noise_levels.is_empty() {
        dataset_noise_levels(&ds)
    } else {
        cfg.noise_levels.clone()
    };
    let mut preds = Vec::new();
    for level in levels {
        let tests = test_set(&ds, &channels, level, &targets)?;
        for (t, o) in tests.iter().zip(classify_tests(&fitted, &tests, &targets)?) {
            preds.push(Prediction {
                index: t.index,
                class: t.class.clone(),
                noise_level: level,
                truth: label_name(o.truth, &targets),
                predicted: label_name(o.predicted, &targets),
                verdict: match o.decision.verdict {
                    Verdict::Class(c) => fitted.classifier.dictionary().classes()[c].name.clone(),
                    Verdict::Confuser(rule) => rule.to_string(),
                },
                correct: crate::experiment::is_correct(o.truth, o.predicted, cfg.scenario),
                min_residual: o.decision.residuals.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
    }
    write_rows(&preds, out)?;
    Ok(preds)
}

/// Splits up to `count` test samples per noise level into a clean object
/// part and a ground part with the first method's raw dictionary, and
/// writes `noisy.t3`, `clean.t3` and `ground.t3` (columns are samples).
pub fn denoise(cfg: &ExperimentConfig, out: &Path, count: usize) -> Result<usize> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let channels = first_combo(cfg, &ds)?;
    let pool = TrainingPool::from_dataset(&ds, &channels)?;
    let targets = pool.target_names();
    let mut method = cfg.methods[0];
    method.dictionary = DictKind::Raw;
    let mut fitted = fit_method(method, &trial_data(&pool, cfg, 0), cfg, cfg.seed, cfg.seed)?;
    fitted.classifier.set_rule(DecisionRule::residual_only());
    let (mut noisy, mut clean, mut ground) = (Vec::new(), Vec::new(), Vec::new());
    for level in dataset_noise_levels(&ds) {
        for t in test_set(&ds, &channels, level, &targets)?.into_iter().take(count) {
            let (c, g) = fitted.classifier.denoise(&t.signal)?;
            noisy.push(t.signal);
            clean.push(c);
            ground.push(g);
        }
    }
    if noisy.is_empty() {
        return Err(CliError::Data("no test samples to denoise".into()));
    }
    std::fs::create_dir_all(out)?;
    for (name, set) in [("noisy", &noisy), ("clean", &clean), ("ground", &ground)] {
        let refs: Vec<&Tensor3> = set.iter().collect();
        Tensor3::hcat(&refs)?.save(out.join(format!("{name}.t3")))?;
    }
    Ok(noisy.len())
}

pub fn curves(results: &Path, out: &Path, sel: &CurveSelection) -> Result<usize> {
    let rows: Vec<ResultRow> = crate::experiment::read_rows(results)?;
    let points = emit_curves(&rows, sel)?;
    write_rows(&points, out)?;
    Ok(points.len())
}
