//! Multi-look evaluation over a multi-look dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tsrc_core::dataset::{SampleRole, Split, FULL_SET, HALF_SET, LOOK_FULL, LOOK_LEFT, LOOK_RIGHT};
use tsrc_core::sar::derive_seed;
use tsrc_core::{
    ClassInfo, ClassRole, ClassSamples, Dataset, DecisionRule, MultiLookClassifier, Protocol, SparsityMode,
    Tensor3, ViewDictionary,
};

use crate::config::{combo_channels, ExperimentConfig, MethodSpec, DictKind};
use crate::error::{CliError, Result};
use crate::experiment::{
    is_correct, mean_std, normalize, predicted_label, select_lambda, solver_config, Label, ResultRow, MEAN_TRIAL,
};

/// Ordered views of every object plus ground samples, for one channel
/// combination.
#[derive(Debug, Clone)]
pub struct ViewPool {
    pub objects: Vec<ClassInfo>,
    pub full: Vec<Vec<Tensor3>>,
    pub half: Vec<Vec<Tensor3>>,
    pub ground: Vec<Tensor3>,
}

#[derive(Debug, Clone)]
pub struct LookSample {
    pub object_id: usize,
    pub class: String,
    pub truth: Label,
    pub noise_level: f64,
    /// Full, left and right looks.
    pub looks: [Tensor3; 3],
}

impl LookSample {
    /// Looks of a protocol, in its channel-group order.
    pub fn for_protocol(&self, p: Protocol) -> Vec<Tensor3> {
        match p {
            Protocol::OneLook => vec![self.looks[0].clone()],
            Protocol::TwoLook => vec![self.looks[1].clone(), self.looks[2].clone()],
            Protocol::ThreeLook => self.looks.to_vec(),
        }
    }
}

impl ViewPool {
    pub fn from_dataset(ds: &Dataset, channels: &[usize]) -> Result<Self> {
        let mut objects: Vec<ClassInfo> = Vec::new();
        let mut full: Vec<Vec<(usize, Tensor3)>> = Vec::new();
        let mut half: Vec<Vec<(usize, Tensor3)>> = Vec::new();
        for (i, r) in ds.records().iter().enumerate() {
            if r.split != Split::View {
                continue;
            }
            let c = match objects.iter().position(|o| o.name == r.class) {
                Some(c) => c,
                None => {
                    objects.push(match r.role {
                        SampleRole::Target => ClassInfo::target(r.class.clone()),
                        _ => ClassInfo::confuser(r.class.clone()),
                    });
                    full.push(Vec::new());
                    half.push(Vec::new());
                    objects.len() - 1
                }
            };
            let v = r.view.ok_or_else(|| CliError::Data(format!("view sample {i} has no view index")))?;
            let s = normalize(&ds.sample(i, channels)?);
            match r.set.as_deref() {
                Some(FULL_SET) => full[c].push((v, s)),
                Some(HALF_SET) => half[c].push((v, s)),
                other => return Err(CliError::Data(format!("view sample {i} has unknown set {other:?}"))),
            }
        }
        if objects.is_empty() {
            return Err(CliError::Data("dataset has no view samples (not a multi-look dataset)".into()));
        }
        let order = |sets: Vec<Vec<(usize, Tensor3)>>| -> Vec<Vec<Tensor3>> {
            sets.into_iter()
                .map(|mut v| {
                    v.sort_by_key(|(k, _)| *k);
                    v.into_iter().map(|(_, s)| s).collect()
                })
                .collect()
        };
        let ground = ds
            .select(|r| r.split == Split::Ground)
            .into_iter()
            .map(|i| ds.sample(i, channels).map(|s| normalize(&s)))
            .collect::<tsrc_core::Result<_>>()?;
        Ok(ViewPool {
            objects,
            full: order(full),
            half: order(half),
            ground,
        })
    }

    pub fn target_names(&self) -> Vec<String> {
        self.objects
            .iter()
            .filter(|o| o.role == ClassRole::Target)
            .map(|o| o.name.clone())
            .collect()
    }
}

/// Test objects at `level`, each with its three looks.
pub fn look_samples(ds: &Dataset, channels: &[usize], level: f64, targets: &[String]) -> Result<Vec<LookSample>> {
    let mut out: Vec<(usize, String, SampleRole, [Option<Tensor3>; 3])> = Vec::new();
    for (i, r) in ds.records().iter().enumerate() {
        if r.split != Split::Look || r.noise_level != level {
            continue;
        }
        let id = r.object_id.ok_or_else(|| CliError::Data(format!("look sample {i} has no object id")))?;
        let slot = match r.set.as_deref() {
            Some(LOOK_FULL) => 0,
            Some(LOOK_LEFT) => 1,
            Some(LOOK_RIGHT) => 2,
            other => return Err(CliError::Data(format!("look sample {i} has unknown look {other:?}"))),
        };
        let s = normalize(&ds.sample(i, channels)?);
        match out.iter_mut().find(|o| o.0 == id) {
            Some(o) => o.3[slot] = Some(s),
            None => {
                let mut looks = [None, None, None];
                looks[slot] = Some(s);
                out.push((id, r.class.clone(), r.role, looks));
            }
        }
    }
    out.into_iter()
        .map(|(id, class, role, looks)| {
            let [Some(f), Some(l), Some(r)] = looks else {
                return Err(CliError::Data(format!("object {id} lacks one of its three looks")));
            };
            let truth = match role {
                SampleRole::Target => Label::Target(
                    targets
                        .iter()
                        .position(|t| *t == class)
                        .ok_or_else(|| CliError::Data(format!("look target {class} has no views")))?,
                ),
                _ => Label::Confuser,
            };
            Ok(LookSample {
                object_id: id,
                class,
                truth,
                noise_level: level,
                looks: [f, l, r],
            })
        })
        .collect()
}

/// The compared methods of a protocol: the shifted composite dictionary
/// and, for more than one look, the unshifted stacked comparator.
pub fn multilook_methods(p: Protocol) -> Vec<(String, bool)> {
    match p {
        Protocol::OneLook => vec![(format!("{p}-SM"), true)],
        _ => vec![(format!("{p}-shift"), true), (format!("{p}-stacked"), false)],
    }
}

struct TrialDicts {
    full: ViewDictionary,
    half: ViewDictionary,
    full_classes: Vec<ClassSamples>,
    ground: Vec<Tensor3>,
}

fn trial_dicts(pool: &ViewPool, cfg: &ExperimentConfig, trial: usize, integration: f64) -> Result<TrialDicts> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7121, trial as u64));
    let confusers: Vec<usize> = (0..pool.objects.len())
        .filter(|&c| pool.objects[c].role == ClassRole::Confuser)
        .collect();
    let left_out = (cfg.leave_one_confuser_out && confusers.len() >= 2).then(|| confusers[trial % confusers.len()]);
    let keep: Vec<usize> = (0..pool.objects.len()).filter(|c| Some(*c) != left_out).collect();
    let ground = match cfg.ground_atoms {
        Some(k) if k < pool.ground.len() => {
            let mut idx: Vec<usize> = (0..pool.ground.len()).collect();
            idx.shuffle(&mut rng);
            let mut idx = idx[..k].to_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pool.ground[i].clone()).collect()
        }
        _ => pool.ground.clone(),
    };
    let classes = |sets: &[Vec<Tensor3>]| -> Vec<ClassSamples> {
        keep.iter()
            .map(|&c| ClassSamples {
                info: pool.objects[c].clone(),
                samples: sets[c].clone(),
            })
            .collect()
    };
    let spacing = integration / 2.0;
    let full_classes = classes(&pool.full);
    Ok(TrialDicts {
        full: ViewDictionary::from_views(&full_classes, &ground, spacing, integration)?,
        half: ViewDictionary::from_views(&classes(&pool.half), &ground, spacing, integration / 2.0)?,
        full_classes,
        ground,
    })
}

/// Accuracy of each protocol method per combo, noise level and trial, with
/// a mean row per group. Known confusers are classes of their own; any
/// confuser class or rule counts as a confuser verdict.
pub fn run_multilook(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let integration = ds
        .manifest
        .view_sets
        .iter()
        .find(|s| s.name == FULL_SET)
        .map(|s| s.integration_deg)
        .ok_or_else(|| CliError::Data("dataset has no full-sector view set".into()))?;
    let mut levels: Vec<f64> = ds
        .records()
        .iter()
        .filter(|r| r.split == Split::Look)
        .map(|r| r.noise_level)
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if !cfg.noise_levels.is_empty() {
        if let Some(l) = cfg.noise_levels.iter().find(|l| !levels.contains(l)) {
            return Err(CliError::Data(format!("dataset has no looks at noise level {l}")));
        }
        levels = cfg.noise_levels.clone();
    }
    let nonneg = cfg.methods[0].nonneg;
    let methods = multilook_methods(cfg.protocol);
    let sm = MethodSpec::new(SparsityMode::Sm, nonneg, DictKind::Raw);

    let mut rows = Vec::new();
    for combo in &cfg.channel_combos {
        let names = combo_channels(combo).map_err(|m| CliError::Config {
            field: "channel_combos".into(),
            message: m,
        })?;
        let channels = ds.channel_indices(&names).map_err(|e| CliError::Data(e.to_string()))?;
        let pool = ViewPool::from_dataset(ds, &channels)?;
        let targets = pool.target_names();
        let tests: Vec<Vec<LookSample>> = levels
            .iter()
            .map(|&l| look_samples(ds, &channels, l, &targets))
            .collect::<Result<_>>()?;
        // accuracy[trial][method][level]
        let per_trial: Vec<(f64, Vec<Vec<(usize, usize)>>)> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| -> Result<_> {
                let dicts = trial_dicts(&pool, cfg, t, integration)?;
                let base = solver_config(sm, cfg.lambda_grid[0], cfg);
                let lambda = if cfg.lambda_grid.len() == 1 {
                    cfg.lambda_grid[0]
                } else {
                    select_lambda(
                        &dicts.full_classes,
                        &dicts.ground,
                        &cfg.lambda_grid,
                        cfg.cv_folds,
                        &base,
                        derive_seed(cfg.seed, 0x3100, t as u64),
                    )?
                    .lambda
                };
                let solver = solver_config(sm, lambda, cfg);
                let rule = DecisionRule {
                    eps: cfg.decision.eps,
                    tau: cfg.decision.tau.unwrap_or(f64::INFINITY),
                    shared_dominant: cfg.decision.shared_dominant,
                };
                let counts = methods
                    .iter()
                    .map(|(_, shifted)| {
                        let clf = MultiLookClassifier::new(
                            cfg.protocol,
                            &dicts.full,
                            &dicts.half,
                            integration / 2.0,
                            &solver,
                            rule,
                            *shifted,
                        )?;
                        tests
                            .iter()
                            .map(|set| {
                                let mut correct = 0;
                                for s in set {
                                    let d = clf.classify(&s.for_protocol(cfg.protocol))?;
                                    let p = predicted_label(&d, clf.dictionary(), &targets);
                                    correct += usize::from(is_correct(s.truth, p, cfg.scenario));
                                }
                                Ok((correct, set.len()))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((lambda, counts))
            })
            .collect::<Result<_>>()?;
        for (m, (name, _)) in methods.iter().enumerate() {
            for (li, &level) in levels.iter().enumerate() {
                let mut accs = Vec::new();
                for (t, (lambda, counts)) in per_trial.iter().enumerate() {
                    let (correct, total) = counts[m][li];
                    let acc = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
                    accs.push(acc);
                    rows.push(ResultRow {
                        method: name.clone(),
                        combo: combo.clone(),
                        scenario: cfg.scenario.to_string(),
                        noise_level: level,
                        trial: t.to_string(),
                        accuracy: acc,
                        std: None,
                        correct: Some(correct),
                        total: Some(total),
                        lambda: Some(*lambda),
                    });
                }
                let (mean, std) = mean_std(&accs);
                rows.push(ResultRow {
                    method: name.clone(),
                    combo: combo.clone(),
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
