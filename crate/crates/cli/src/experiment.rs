//! Classification experiments over a generated dataset.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tsrc_core::dataset::{SampleRole, Split};
use tsrc_core::sar::derive_seed;
use tsrc_core::{
    assemble_dictionary, learn, ClassDecision, ClassInfo, ClassRole, ClassSamples, Dataset, DecisionRule,
    DictLearnConfig, ProxSpec, SolverConfig, SrcClassifier, StructuredDictionary, Tensor3, Verdict,
};

use crate::config::{combo_channels, DictKind, ExperimentConfig, MethodSpec, Scenario};
use crate::error::{CliError, Result};

/// Scales a sample to unit Frobenius norm over its channels.
pub fn normalize(y: &Tensor3) -> Tensor3 {
    let n = y.frobenius_norm();
    if n > 0.0 {
        y.scaled(1.0 / n)
    } else {
        y.clone()
    }
}

/// Normalized training and ground samples of a dataset, grouped by object.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    pub targets: Vec<(String, Vec<Tensor3>)>,
    pub confusers: Vec<(String, Vec<Tensor3>)>,
    pub ground: Vec<Tensor3>,
}

fn grouped(ds: &Dataset, channels: &[usize], split: Split, role: SampleRole) -> Result<Vec<(String, Vec<Tensor3>)>> {
    let mut out: Vec<(String, Vec<Tensor3>)> = Vec::new();
    for (i, r) in ds.records().iter().enumerate() {
        if r.split != split || r.role != role {
            continue;
        }
        let s = normalize(&ds.sample(i, channels)?);
        match out.iter_mut().find(|(n, _)| *n == r.class) {
            Some((_, v)) => v.push(s),
            None => out.push((r.class.clone(), vec![s])),
        }
    }
    Ok(out)
}

impl TrainingPool {
    pub fn from_dataset(ds: &Dataset, channels: &[usize]) -> Result<Self> {
        let targets = grouped(ds, channels, Split::Train, SampleRole::Target)?;
        if targets.is_empty() {
            return Err(CliError::Data("dataset has no target training samples".into()));
        }
        let ground = ds
            .select(|r| r.split == Split::Ground)
            .into_iter()
            .map(|i| ds.sample(i, channels).map(|s| normalize(&s)))
            .collect::<tsrc_core::Result<_>>()?;
        Ok(TrainingPool {
            targets,
            confusers: grouped(ds, channels, Split::Train, SampleRole::Confuser)?,
            ground,
        })
    }

    pub fn target_names(&self) -> Vec<String> {
        self.targets.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Dictionary material of one trial: one class per target, one per seen
/// confuser type, and the ground samples.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub classes: Vec<ClassSamples>,
    pub ground: Vec<Tensor3>,
    pub left_out: Option<String>,
}

fn subset(rng: &mut ChaCha8Rng, items: &[Tensor3], keep: Option<usize>) -> Vec<Tensor3> {
    match keep {
        Some(k) if k < items.len() => {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.shuffle(rng);
            let mut idx = idx[..k].to_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| items[i].clone()).collect()
        }
        _ => items.to_vec(),
    }
}

/// Training material of trial `trial`: cycles the left-out confuser type
/// and draws the per-trial training and ground subsets.
pub fn trial_data(pool: &TrainingPool, cfg: &ExperimentConfig, trial: usize) -> TrialData {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7121, trial as u64));
    let left_out = (cfg.leave_one_confuser_out && pool.confusers.len() >= 2)
        .then(|| pool.confusers[trial % pool.confusers.len()].0.clone());
    let mut classes: Vec<ClassSamples> = pool
        .targets
        .iter()
        .map(|(name, s)| ClassSamples {
            info: ClassInfo::target(name.clone()),
            samples: subset(&mut rng, s, cfg.train_per_class),
        })
        .collect();
    for (name, s) in &pool.confusers {
        if Some(name) == left_out.as_ref() {
            continue;
        }
        classes.push(ClassSamples {
            info: ClassInfo::confuser(name.clone()),
            samples: subset(&mut rng, s, cfg.train_per_class),
        });
    }
    TrialData {
        classes,
        ground: subset(&mut rng, &pool.ground, cfg.ground_atoms),
        left_out,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Index into the target list.
    Target(usize),
    Confuser,
}

#[derive(Debug, Clone)]
pub struct TestSample {
    pub index: usize,
    pub class: String,
    pub truth: Label,
    pub noise_level: f64,
    pub signal: Tensor3,
}

/// Normalized test samples at `level`, labelled against `targets`.
pub fn test_set(ds: &Dataset, channels: &[usize], level: f64, targets: &[String]) -> Result<Vec<TestSample>> {
    ds.select(|r| r.split == Split::Test && r.noise_level == level)
        .into_iter()
        .map(|i| {
            let r = &ds.records()[i];
            let truth = match r.role {
                SampleRole::Target => Label::Target(
                    targets
                        .iter()
                        .position(|t| *t == r.class)
                        .ok_or_else(|| CliError::Data(format!("test target {} has no training data", r.class)))?,
                ),
                _ => Label::Confuser,
            };
            Ok(TestSample {
                index: i,
                class: r.class.clone(),
                truth,
                noise_level: level,
                signal: normalize(&ds.sample(i, channels)?),
            })
        })
        .collect()
}

/// Every noise level present among the test samples, ascending.
pub fn dataset_noise_levels(ds: &Dataset) -> Vec<f64> {
    let mut v: Vec<f64> = ds
        .records()
        .iter()
        .filter(|r| r.split == Split::Test)
        .map(|r| r.noise_level)
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Maps a decision to a label: a target class, or confuser for a
/// confuser rule or a known-confuser class.
pub fn predicted_label(decision: &ClassDecision, dict: &StructuredDictionary, targets: &[String]) -> Label {
    match decision.verdict {
        Verdict::Class(c) if dict.classes()[c].role == ClassRole::Target => targets
            .iter()
            .position(|t| *t == dict.classes()[c].name)
            .map_or(Label::Confuser, Label::Target),
        _ => Label::Confuser,
    }
}

pub fn is_correct(truth: Label, predicted: Label, scenario: Scenario) -> bool {
    match scenario {
        Scenario::SeparateTarget => truth == predicted,
        Scenario::AllTarget => matches!(
            (truth, predicted),
            (Label::Target(_), Label::Target(_)) | (Label::Confuser, Label::Confuser)
        ),
    }
}

pub fn solver_config(method: MethodSpec, lambda: f64, cfg: &ExperimentConfig) -> SolverConfig {
    SolverConfig::new(lambda, ProxSpec::new(method.mode, method.nonneg))
        .with_max_iters(cfg.solver.max_iters)
        .with_tol(cfg.solver.tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Mean fold accuracy per grid value.
    pub scores: Vec<f64>,
    /// Minimum class residual of every held-out sample at the chosen λ.
    pub held_out_min_residuals: Vec<f64>,
}

/// Stratified k-fold cross-validation of λ over the training classes (the
/// ground block stays in every fold's dictionary). A held-out sample
/// counts as correct only when its own class has the strictly smallest
/// residual. Ties between grid values go to the larger λ.
pub fn select_lambda(
    classes: &[ClassSamples],
    ground: &[Tensor3],
    grid: &[f64],
    folds: usize,
    base: &SolverConfig,
    seed: u64,
) -> Result<LambdaChoice> {
    if grid.is_empty() {
        return Err(CliError::Config {
            field: "lambda_grid".into(),
            message: "must not be empty".into(),
        });
    }
    if folds < 2 {
        return Err(CliError::Config {
            field: "cv_folds".into(),
            message: "must be at least 2".into(),
        });
    }
    let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(classes.len());
    for (c, cls) in classes.iter().enumerate() {
        if cls.samples.len() < folds {
            return Err(CliError::Data(format!(
                "class {} is absent from fold {} ({} samples for {folds} folds)",
                cls.info.name,
                cls.samples.len(),
                folds
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC5, c as u64));
        let mut idx: Vec<usize> = (0..cls.samples.len()).collect();
        idx.shuffle(&mut rng);
        let mut fold_of = vec![0; idx.len()];
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
        assignment.push(fold_of);
    }
    let split = |f: usize| -> (Vec<ClassSamples>, Vec<(usize, Tensor3)>) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (c, cls) in classes.iter().enumerate() {
            let mut keep = Vec::new();
            for (i, s) in cls.samples.iter().enumerate() {
                if assignment[c][i] == f {
                    held.push((c, s.clone()));
                } else {
                    keep.push(s.clone());
                }
            }
            train.push(ClassSamples {
                info: cls.info.clone(),
                samples: keep,
            });
        }
        (train, held)
    };
    let splits: Vec<_> = (0..folds).map(split).collect();
    let dicts: Vec<StructuredDictionary> = splits
        .iter()
        .map(|(train, _)| assemble_dictionary(train, ground))
        .collect::<tsrc_core::Result<_>>()?;

    let mut scores = Vec::with_capacity(grid.len());
    let mut residuals_per_lambda = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut cfg = base.clone();
        cfg.lambda = lambda;
        let mut fold_acc = 0.0;
        let mut mins = Vec::new();
        for ((_, held), dict) in splits.iter().zip(&dicts) {
            let clf = SrcClassifier::new(dict.clone(), &cfg, DecisionRule::residual_only())?;
            let ys: Vec<Tensor3> = held.iter().map(|(_, s)| s.clone()).collect();
            let mut correct = 0usize;
            for ((c, _), d) in held.iter().zip(clf.classify_batch(&ys)) {
                let d = d?;
                let own = d.residuals[*c];
                if d.residuals.iter().enumerate().all(|(j, &r)| j == *c || r > own) {
                    correct += 1;
                }
                mins.push(d.residuals.iter().copied().fold(f64::INFINITY, f64::min));
            }
            fold_acc += correct as f64 / held.len() as f64;
        }
        scores.push(fold_acc / folds as f64);
        residuals_per_lambda.push(mins);
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && grid[i] > grid[best]) {
            best = i;
        }
    }
    Ok(LambdaChoice {
        lambda: grid[best],
        scores,
        held_out_min_residuals: residuals_per_lambda.swap_remove(best),
    })
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::INFINITY;
    }
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// A method fitted on one trial's training data.
#[derive(Debug, Clone)]
pub struct FittedMethod {
    pub method: MethodSpec,
    pub lambda: f64,
    pub classifier: SrcClassifier,
}

/// Fits `method` on a trial. `cv_seed` fixes the fold assignment, so
/// methods sharing it are compared on the same folds; `learn_seed` seeds
/// dictionary learning.
pub fn fit_method(
    method: MethodSpec,
    data: &TrialData,
    cfg: &ExperimentConfig,
    cv_seed: u64,
    learn_seed: u64,
) -> Result<FittedMethod> {
    let base = solver_config(method, cfg.lambda_grid[0], cfg);
    let calibrate = cfg.decision.calibrate_tau_quantile;
    let (lambda, tau) = if cfg.lambda_grid.len() == 1 && calibrate.is_none() {
        (cfg.lambda_grid[0], cfg.decision.tau)
    } else {
        let choice = select_lambda(&data.classes, &data.ground, &cfg.lambda_grid, cfg.cv_folds, &base, cv_seed)?;
        let tau = match calibrate {
            Some(q) => Some(quantile(&choice.held_out_min_residuals, q)),
            None => cfg.decision.tau,
        };
        (choice.lambda, tau)
    };
    let dict = match method.dictionary {
        DictKind::Raw => assemble_dictionary(&data.classes, &data.ground)?,
        DictKind::Learned => {
            let dl = &cfg.dict_learn;
            let dl_cfg = DictLearnConfig {
                atoms_per_class: dl.atoms_per_class,
                lambda: dl.lambda.unwrap_or(lambda),
                discriminant_weight: dl.discriminant_weight,
                outer_iters: dl.outer_iters,
                sparsity_mode: method.mode,
                nonneg: method.nonneg,
                learn_ground: dl.learn_ground,
                inner_max_iters: dl.inner_max_iters,
                inner_tol: dl.inner_tol,
                seed: learn_seed,
            };
            learn(&data.classes, &data.ground, &dl_cfg)?.dictionary
        }
    };
    let rule = DecisionRule {
        eps: cfg.decision.eps,
        tau: tau.unwrap_or(f64::INFINITY),
        shared_dominant: cfg.decision.shared_dominant,
    };
    Ok(FittedMethod {
        method,
        lambda,
        classifier: SrcClassifier::new(dict, &solver_config(method, lambda, cfg), rule)?,
    })
}

/// Per-sample outcome of classifying a test set.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub index: usize,
    pub truth: Label,
    pub predicted: Label,
    pub decision: ClassDecision,
}

pub fn classify_tests(fitted: &FittedMethod, tests: &[TestSample], targets: &[String]) -> Result<Vec<Outcome>> {
    let ys: Vec<Tensor3> = tests.iter().map(|t| t.signal.clone()).collect();
    let dict = fitted.classifier.dictionary();
    fitted
        .classifier
        .classify_batch(&ys)
        .into_iter()
        .zip(tests)
        .map(|(d, t)| {
            let d = d.map_err(|e| match e {
                tsrc_core::Error::Diverged { .. } => CliError::Numerical(format!("sample {}: {e}", t.index)),
                other => other.into(),
            })?;
            Ok(Outcome {
                index: t.index,
                truth: t.truth,
                predicted: predicted_label(&d, dict, targets),
                decision: d,
            })
        })
        .collect()
}

/// Rows are true labels, columns predicted labels; order is the targets
/// followed by the confuser label.
pub fn confusion_matrix(outcomes: &[Outcome], targets: usize) -> Vec<Vec<usize>> {
    let idx = |l: Label| match l {
        Label::Target(i) => i,
        Label::Confuser => targets,
    };
    let mut m = vec![vec![0; targets + 1]; targets + 1];
    for o in outcomes {
        m[idx(o.truth)][idx(o.predicted)] += 1;
    }
    m
}

pub fn accuracy(outcomes: &[Outcome], scenario: Scenario) -> (usize, usize) {
    let correct = outcomes
        .iter()
        .filter(|o| is_correct(o.truth, o.predicted, scenario))
        .count();
    (correct, outcomes.len())
}

/// One line of the results table. Trial rows carry the trial index; the
/// aggregate row of a (method, combo, noise level) group has trial `mean`
/// and the sample standard deviation of the trial accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub combo: String,
    pub scenario: String,
    pub noise_level: f64,
    pub trial: String,
    pub accuracy: f64,
    pub std: Option<f64>,
    pub correct: Option<usize>,
    pub total: Option<usize>,
    pub lambda: Option<f64>,
}

pub const MEAN_TRIAL: &str = "mean";

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

struct CellResult {
    method: usize,
    combo: usize,
    trial: usize,
    lambda: f64,
    /// (correct, total) per noise level.
    counts: Vec<(usize, usize)>,
}

/// Runs every (method, combo, trial) cell and returns trial rows followed,
/// per group, by the mean row.
pub fn run_experiment(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let levels = if cfg.noise_levels.is_empty() {
        dataset_noise_levels(ds)
    } else {
        cfg.noise_levels.clone()
    };
    if levels.is_empty() {
        return Err(CliError::Data("dataset has no test samples".into()));
    }
    let available: BTreeSet<u64> = dataset_noise_levels(ds).iter().map(|l| l.to_bits()).collect();
    if let Some(l) = levels.iter().find(|l| !available.contains(&l.to_bits())) {
        return Err(CliError::Data(format!("dataset has no test samples at noise level {l}")));
    }

    struct ComboData {
        pool: TrainingPool,
        tests: Vec<Vec<TestSample>>,
    }
    let combos: Vec<ComboData> = cfg
        .channel_combos
        .iter()
        .map(|combo| {
            let names = combo_channels(combo).map_err(|m| CliError::Config {
                field: "channel_combos".into(),
                message: m,
            })?;
            let channels = ds.channel_indices(&names).map_err(|e| CliError::Data(e.to_string()))?;
            let pool = TrainingPool::from_dataset(ds, &channels)?;
            let targets = pool.target_names();
            let tests = levels
                .iter()
                .map(|&l| test_set(ds, &channels, l, &targets))
                .collect::<Result<_>>()?;
            Ok(ComboData { pool, tests })
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize, usize)> = (0..cfg.channel_combos.len())
        .flat_map(|c| (0..cfg.trials).flat_map(move |t| (0..cfg.methods.len()).map(move |m| (c, t, m))))
        .collect();
    let results: Vec<CellResult> = cells
        .par_iter()
        .enumerate()
        .map(|(cell, &(c, t, m))| -> Result<CellResult> {
            let data = trial_data(&combos[c].pool, cfg, t);
            let cv_seed = derive_seed(cfg.seed, 0xCF00 + c as u64, t as u64);
            let fitted = fit_method(
                cfg.methods[m],
                &data,
                cfg,
                cv_seed,
                derive_seed(cfg.seed, 0xCE11, cell as u64),
            )?;
            let targets = combos[c].pool.target_names();
            let counts = combos[c]
                .tests
                .iter()
                .map(|tests| classify_tests(&fitted, tests, &targets).map(|o| accuracy(&o, cfg.scenario)))
                .collect::<Result<_>>()?;
            Ok(CellResult {
                method: m,
                combo: c,
                trial: t,
                lambda: fitted.lambda,
                counts,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for m in 0..cfg.methods.len() {
        for c in 0..cfg.channel_combos.len() {
            for (li, &level) in levels.iter().enumerate() {
                let mut accs = Vec::with_capacity(cfg.trials);
                for t in 0..cfg.trials {
                    let r = results
                        .iter()
                        .find(|r| r.method == m && r.combo == c && r.trial == t)
                        .expect("every cell ran");
                    let (correct, total) = r.counts[li];
                    let acc = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
                    accs.push(acc);
                    rows.push(ResultRow {
                        method: cfg.methods[m].to_string(),
                        combo: cfg.channel_combos[c].clone(),
                        scenario: cfg.scenario.to_string(),
                        noise_level: level,
                        trial: t.to_string(),
                        accuracy: acc,
                        std: None,
                        correct: Some(correct),
                        total: Some(total),
                        lambda: Some(r.lambda),
                    });
                }
                let (mean, std) = mean_std(&accs);
                rows.push(ResultRow {
                    method: cfg.methods[m].to_string(),
                    combo: cfg.channel_combos[c].clone(),
                    scenario: cfg.scenario.to_string(),
                    noise_level: level,
                    trial: MEAN_TRIAL.into(),
                    accuracy: mean,
                    std: Some(std),
                    correct: None,
                    total: None,
                    lambda: None,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// Mean accuracy of the aggregate row for (method, combo, noise level).
pub fn mean_accuracy(rows: &[ResultRow], method: &str, combo: &str, level: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.trial == MEAN_TRIAL && r.method == method && r.combo == combo && r.noise_level == level)
        .map(|r| r.accuracy)
}
