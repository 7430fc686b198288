//! Discriminative multi-channel dictionary learning.
//!
//! Every channel carries the same per-class fidelity
//!
//! ```text
//! f = Σ_c ½‖Y_c − D X_c‖² + ½‖Y_c − D_c X_c^c‖² + ½ Σ_{j≠c} ‖D_j X_c^j‖² + (w/2)‖X‖²
//! ```
//!
//! (global fit, within-class fit, cross-class suppression, code regularity)
//! and the channels are joined by the structured sparsity penalty `λ g(X)`
//! applied to every sample's code. Codes and atoms are updated in turn; both
//! steps never increase the objective.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassInfo, ClassSamples, StructuredDictionary};
use crate::error::{Error, Result, ShapeAxis};
use crate::fista::{lipschitz_of_gram, Fista, QuadraticModel};
use crate::prox::{ProxSpec, SparsityMode};
use crate::sar::derive_seed;
use crate::tensor::{ColumnPartition, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictLearnConfig {
    pub atoms_per_class: usize,
    pub lambda: f64,
    /// Weight `w` of the quadratic code-regularity term.
    #[serde(default)]
    pub discriminant_weight: f64,
    pub outer_iters: usize,
    pub sparsity_mode: SparsityMode,
    #[serde(default)]
    pub nonneg: bool,
    /// Learn the ground block too instead of keeping raw ground samples.
    #[serde(default)]
    pub learn_ground: bool,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        DictLearnConfig {
            atoms_per_class: 8,
            lambda: 0.01,
            discriminant_weight: 0.0,
            outer_iters: 10,
            sparsity_mode: SparsityMode::Sm,
            nonneg: false,
            learn_ground: false,
            inner_max_iters: 500,
            inner_tol: 1e-8,
            seed: 0,
        }
    }
}

impl DictLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atoms_per_class == 0 {
            return Err(Error::Config("atoms_per_class must be at least 1".into()));
        }
        if self.outer_iters == 0 {
            return Err(Error::Config("outer_iters must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.discriminant_weight >= 0.0) {
            return Err(Error::Config("discriminant_weight must be non-negative".into()));
        }
        if self.inner_max_iters == 0 || !(self.inner_tol > 0.0) {
            return Err(Error::Config("inner solver needs positive iterations and tolerance".into()));
        }
        Ok(())
    }

    fn prox(&self, partition: &ColumnPartition) -> ProxSpec {
        ProxSpec {
            mode: self.sparsity_mode,
            nonneg: self.nonneg,
            partition: Some(partition.clone()),
        }
    }
}

/// Training signals grouped by learning block.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// `d × N × T`, samples ordered by block.
    pub signals: Tensor3,
    /// Block index of every sample column.
    pub labels: Vec<usize>,
    pub partition: ColumnPartition,
}

impl TrainingSet {
    fn block_of_sample(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Result of [`learn`]: the dictionary, the final codes of the training
/// samples (`K × N × T`, learning blocks only) and the objective after
/// initialization and after every outer iteration.
#[derive(Debug, Clone)]
pub struct LearnedDictionary {
    pub dictionary: StructuredDictionary,
    pub codes: Tensor3,
    pub history: Vec<f64>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn check_samples(samples: &[Tensor3], d: usize, channels: usize, what: &str) -> Result<()> {
    for s in samples {
        if s.cols() != 1 {
            return Err(Error::shape(ShapeAxis::Columns, 1, s.cols()));
        }
        if s.rows() != d {
            return Err(Error::shape(ShapeAxis::Rows, d, s.rows()));
        }
        if s.channels() != channels {
            return Err(Error::shape(ShapeAxis::Channels, channels, s.channels()));
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyClass(what.into()));
    }
    Ok(())
}

/// Unit Frobenius norm per channel for every column.
fn normalize_atoms(atoms: &mut Tensor3) {
    for t in 0..atoms.channels() {
        let mut ch = atoms.channel_mut(t);
        for mut col in ch.axis_iter_mut(Axis(1)) {
            let n = col.dot(&col).sqrt();
            if n > 0.0 {
                col.mapv_inplace(|v| v / n);
            }
        }
    }
}

/// Initial atoms: `count` distinct samples of the block, drawn with a
/// stream keyed by the block name, normalized per channel.
fn initial_atoms(samples: &[Tensor3], count: usize, name: &str, seed: u64) -> Result<Tensor3> {
    if samples.len() < count {
        return Err(Error::Config(format!(
            "class {name} has {} samples, fewer than the {count} atoms requested",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, fnv1a(name), 0));
    let mut idx = sample(&mut rng, samples.len(), count).into_vec();
    idx.sort_unstable();
    let picked: Vec<&Tensor3> = idx.iter().map(|&i| &samples[i]).collect();
    let mut atoms = Tensor3::hcat(&picked)?;
    normalize_atoms(&mut atoms);
    Ok(atoms)
}

/// Quadratic model of one sample's fidelity `f_y(x)` in block `c`:
/// Hessian `A + blockdiag(A) + wI`, linear term `b + P_c b`.
fn sample_model(
    gram: &Tensor3,
    gram_block: &Tensor3,
    d: &Tensor3,
    y: &Tensor3,
    class_range: std::ops::Range<usize>,
    w: f64,
    mode: SparsityMode,
) -> Result<QuadraticModel> {
    let mut b = d.transpose_mul(y)?;
    for t in 0..b.channels() {
        let mut ch = b.channel_mut(t);
        for k in class_range.clone() {
            ch[[k, 0]] *= 2.0;
        }
    }
    let mut h = gram.add(gram_block);
    for t in 0..h.channels() {
        let mut ch = h.channel_mut(t);
        for k in 0..ch.nrows() {
            ch[[k, k]] += w;
        }
    }
    let constant = y.frobenius_norm_sq();
    if mode == SparsityMode::Cc {
        let sum = |x: &Tensor3| {
            let mut acc = x.channel(0).to_owned();
            for t in 1..x.channels() {
                acc += &x.channel(t);
            }
            Tensor3::from_channels(vec![acc]).expect("one channel")
        };
        return Ok(QuadraticModel {
            hessian: sum(&h),
            linear: sum(&b),
            constant,
        });
    }
    Ok(QuadraticModel {
        hessian: h,
        linear: b,
        constant,
    })
}

/// `DᵀD` with every off-diagonal block zeroed.
fn block_diagonal(gram: &Tensor3, partition: &ColumnPartition) -> Tensor3 {
    let mut out = Tensor3::zeros(gram.rows(), gram.cols(), gram.channels());
    for t in 0..gram.channels() {
        let src = gram.channel(t);
        let mut dst = out.channel_mut(t);
        for (_, r) in partition.blocks() {
            for i in r.clone() {
                for j in r.clone() {
                    dst[[i, j]] = src[[i, j]];
                }
            }
        }
    }
    out
}

/// The learning objective `J = f + λ g` for dictionary `d` (learning
/// blocks only) and codes `x` (`K × N × T`).
pub fn objective(d: &Tensor3, x: &Tensor3, set: &TrainingSet, cfg: &DictLearnConfig) -> Result<f64> {
    let part = &set.partition;
    part.check_total(d.cols())?;
    let n = set.signals.cols();
    if x.shape() != (d.cols(), n, d.channels()) {
        return Err(Error::Config(format!(
            "codes have shape {:?}, expected {:?}",
            x.shape(),
            (d.cols(), n, d.channels())
        )));
    }
    let prox = cfg.prox(part);
    let mut f = 0.0;
    for t in 0..d.channels() {
        let dt = d.channel(t);
        let xt = x.channel(t);
        let yt = set.signals.channel(t);
        let r = &yt - &dt.dot(&xt);
        f += 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        for i in 0..n {
            let c = set.block_of_sample(i);
            for (id, range) in part.blocks() {
                let j = match id {
                    crate::tensor::BlockId::Class(j) => j,
                    crate::tensor::BlockId::Shared => continue,
                };
                let partial = dt
                    .slice(ndarray::s![.., range.clone()])
                    .dot(&xt.slice(ndarray::s![range.clone(), i]));
                let target: Array1<f64> = if j == c {
                    yt.column(i).to_owned()
                } else {
                    Array1::zeros(d.rows())
                };
                let e = &target - &partial;
                f += 0.5 * e.dot(&e);
            }
        }
        f += 0.5 * cfg.discriminant_weight * xt.iter().map(|v| v * v).sum::<f64>();
    }
    let mut g = 0.0;
    if cfg.lambda > 0.0 {
        for i in 0..n {
            let xi = x.column(i);
            g += match cfg.sparsity_mode {
                SparsityMode::Cc => prox.regularizer(&xi.select_channels(0..1)?)?,
                _ => prox.regularizer(&xi)?,
            };
        }
    }
    Ok(f + cfg.lambda * g)
}

fn update_codes(d: &Tensor3, x: &Tensor3, set: &TrainingSet, cfg: &DictLearnConfig) -> Result<Tensor3> {
    let part = &set.partition;
    let gram = d.gram();
    let gram_block = block_diagonal(&gram, part);
    let prox = cfg.prox(part);
    // the Hessian does not depend on the sample, so neither does L
    let probe = sample_model(
        &gram,
        &gram_block,
        d,
        &set.signals.column(0),
        part.class_range(set.block_of_sample(0)),
        cfg.discriminant_weight,
        cfg.sparsity_mode,
    )?;
    let lipschitz = lipschitz_of_gram(&probe.hessian)?;
    let channels = d.channels();
    let cols: Vec<Tensor3> = (0..set.signals.cols())
        .into_par_iter()
        .map(|i| -> Result<Tensor3> {
            let y = set.signals.column(i);
            let model = sample_model(
                &gram,
                &gram_block,
                d,
                &y,
                part.class_range(set.block_of_sample(i)),
                cfg.discriminant_weight,
                cfg.sparsity_mode,
            )?;
            let x0 = x.column(i);
            let x0 = if cfg.sparsity_mode == SparsityMode::Cc {
                x0.select_channels(0..1)?
            } else {
                x0
            };
            // λ = 0 still runs the projection of the nonneg variant
            let solver = Fista::new(&model, &prox, cfg.lambda, lipschitz, x0);
            let xi = solver.run(cfg.inner_max_iters, cfg.inner_tol)?;
            if cfg.sparsity_mode == SparsityMode::Cc {
                xi.replicate_channels(channels)
            } else {
                Ok(xi)
            }
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor3> = cols.iter().collect();
    Tensor3::hcat(&refs)
}

/// One pass of exact atom updates on channel `t`: with everything else
/// fixed, the objective in atom `k` is `‖x_k‖² − d_kᵀe` on the unit
/// sphere, minimized by `d_k = e/‖e‖` with
/// `e = (Y − DX + d_k x_k)x_kᵀ + (Z_b − D_b X^b + d_k x_k)x_kᵀ`,
/// where `Z_b` keeps only the samples of block `b`.
fn update_atoms_channel(
    d: &mut Array2<f64>,
    x: ndarray::ArrayView2<'_, f64>,
    y: ndarray::ArrayView2<'_, f64>,
    set: &TrainingSet,
) {
    let part = &set.partition;
    let mut r_global = &y - &d.dot(&x);
    for (id, range) in part.blocks() {
        let b = match id {
            crate::tensor::BlockId::Class(b) => b,
            crate::tensor::BlockId::Shared => continue,
        };
        let mut z = y.to_owned();
        for (i, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            if set.block_of_sample(i) != b {
                col.fill(0.0);
            }
        }
        let dsub = d.slice(ndarray::s![.., range.clone()]);
        let xsub = x.slice(ndarray::s![range.clone(), ..]);
        let mut r_block = &z - &dsub.dot(&xsub);
        for k in range {
            let xk = x.row(k);
            let energy = xk.dot(&xk);
            if energy == 0.0 {
                continue;
            }
            let old = d.column(k).to_owned();
            let e = r_global.dot(&xk) + r_block.dot(&xk) + &old * (2.0 * energy);
            let norm = e.dot(&e).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                continue;
            }
            let new = &e / norm;
            let diff = &old - &new;
            // residuals absorb the change of atom k: R += (d_old − d_new) x_k
            for (mut col, &xv) in r_global.axis_iter_mut(Axis(1)).zip(xk.iter()) {
                if xv != 0.0 {
                    col.scaled_add(xv, &diff);
                }
            }
            for (mut col, &xv) in r_block.axis_iter_mut(Axis(1)).zip(xk.iter()) {
                if xv != 0.0 {
                    col.scaled_add(xv, &diff);
                }
            }
            d.column_mut(k).assign(&new);
        }
    }
}

fn update_atoms(d: &Tensor3, x: &Tensor3, set: &TrainingSet) -> Result<Tensor3> {
    let channels: Vec<Array2<f64>> = (0..d.channels())
        .into_par_iter()
        .map(|t| {
            let mut dt = d.channel(t).to_owned();
            update_atoms_channel(&mut dt, x.channel(t), set.signals.channel(t), set);
            dt
        })
        .collect();
    Tensor3::from_channels(channels)
}

/// Runs the alternating minimization from a given dictionary; returns the
/// final atoms, codes and the objective history (initial value first).
pub fn train(d0: Tensor3, set: &TrainingSet, cfg: &DictLearnConfig) -> Result<(Tensor3, Tensor3, Vec<f64>)> {
    cfg.validate()?;
    let mut d = d0;
    let mut x = Tensor3::zeros(d.cols(), set.signals.cols(), d.channels());
    let mut history = vec![objective(&d, &x, set, cfg)?];
    for iter in 0..cfg.outer_iters {
        x = update_codes(&d, &x, set, cfg)?;
        d = update_atoms(&d, &x, set)?;
        let j = objective(&d, &x, set, cfg)?;
        if !j.is_finite() {
            return Err(Error::Diverged { iter: iter + 1 });
        }
        history.push(j);
    }
    Ok((d, x, history))
}

/// Learns `atoms_per_class` atoms for every class. Ground samples become
/// the shared block, raw unless `learn_ground` is set (then they form one
/// more learning block initialized with all of them).
pub fn learn(
    classes: &[ClassSamples],
    ground: &[Tensor3],
    cfg: &DictLearnConfig,
) -> Result<LearnedDictionary> {
    cfg.validate()?;
    let first = classes
        .first()
        .and_then(|c| c.samples.first())
        .ok_or_else(|| Error::EmptyClass("no classes given".into()))?;
    let (dim, channels) = (first.rows(), first.channels());
    for c in classes {
        check_samples(&c.samples, dim, channels, &c.info.name)?;
    }
    if !ground.is_empty() {
        check_samples(ground, dim, channels, "ground")?;
    }

    let mut blocks: Vec<(&str, &[Tensor3], usize)> = classes
        .iter()
        .map(|c| (c.info.name.as_str(), c.samples.as_slice(), cfg.atoms_per_class))
        .collect();
    let learn_ground = cfg.learn_ground && !ground.is_empty();
    if learn_ground {
        blocks.push(("ground", ground, ground.len()));
    }
    let mut atoms = Vec::new();
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    for (b, (name, samples, count)) in blocks.iter().enumerate() {
        atoms.push(initial_atoms(samples, *count, name, cfg.seed)?);
        signals.extend(samples.iter());
        labels.extend(std::iter::repeat_n(b, samples.len()));
    }
    let set = TrainingSet {
        signals: Tensor3::hcat(&signals)?,
        labels,
        partition: ColumnPartition::new(blocks.iter().map(|b| b.2).collect(), 0)?,
    };
    let atom_refs: Vec<&Tensor3> = atoms.iter().collect();
    let (d, codes, history) = train(Tensor3::hcat(&atom_refs)?, &set, cfg)?;

    let class_cols = classes.len() * cfg.atoms_per_class;
    let class_atoms = d.select_columns(0..class_cols)?;
    let (full, shared) = if learn_ground {
        (d.clone(), ground.len())
    } else if ground.is_empty() {
        (class_atoms, 0)
    } else {
        let mut parts = vec![&class_atoms];
        parts.extend(ground.iter());
        (Tensor3::hcat(&parts)?, ground.len())
    };
    let partition = ColumnPartition::new(vec![cfg.atoms_per_class; classes.len()], shared)?;
    let infos: Vec<ClassInfo> = classes.iter().map(|c| c.info.clone()).collect();
    Ok(LearnedDictionary {
        dictionary: StructuredDictionary::new(full, partition, infos)?,
        codes,
        history,
    })
}
