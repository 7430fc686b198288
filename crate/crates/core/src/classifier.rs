//! Generalized SRC with a shared class.
//!
//! A test signal is sparsely coded over `D = [D_1, …, D_C, D_0]`, the shared
//! (ground) contribution `D_0 x^0` is removed, and the class whose block
//! reconstructs the remainder best wins unless one of the confuser rules
//! fires.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ShapeAxis};
use crate::fista::{SolverConfig, SparseCoder};
use crate::tensor::{ColumnPartition, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassRole {
    Target,
    /// A known confuser set; winning it means the verdict is "confuser".
    Confuser,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub role: ClassRole,
}

impl ClassInfo {
    pub fn target(name: impl Into<String>) -> Self {
        ClassInfo {
            name: name.into(),
            role: ClassRole::Target,
        }
    }

    pub fn confuser(name: impl Into<String>) -> Self {
        ClassInfo {
            name: name.into(),
            role: ClassRole::Confuser,
        }
    }
}

/// Training signals (`d × 1 × T` each) of one class.
#[derive(Debug, Clone)]
pub struct ClassSamples {
    pub info: ClassInfo,
    pub samples: Vec<Tensor3>,
}

/// Dictionary `[D_1, …, D_C, D_0]` with unit-norm columns in every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredDictionary {
    atoms: Tensor3,
    partition: ColumnPartition,
    classes: Vec<ClassInfo>,
}

#[derive(Serialize, Deserialize)]
struct DictionaryManifest {
    partition: ColumnPartition,
    classes: Vec<ClassInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

impl StructuredDictionary {
    /// Wraps already-arranged atoms. Columns are normalized per channel.
    pub fn new(atoms: Tensor3, partition: ColumnPartition, classes: Vec<ClassInfo>) -> Result<Self> {
        partition.check_total(atoms.cols())?;
        if classes.len() != partition.num_classes() {
            return Err(Error::Config(format!(
                "{} class descriptions for {} class blocks",
                classes.len(),
                partition.num_classes()
            )));
        }
        Ok(StructuredDictionary {
            atoms: normalize_columns(&atoms),
            partition,
            classes,
        })
    }

    pub fn atoms(&self) -> &Tensor3 {
        &self.atoms
    }

    pub fn partition(&self) -> &ColumnPartition {
        &self.partition
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn signal_len(&self) -> usize {
        self.atoms.rows()
    }

    pub fn channels(&self) -> usize {
        self.atoms.channels()
    }

    pub fn class_block(&self, c: usize) -> Result<Tensor3> {
        self.atoms.select_columns(self.partition.class_range(c))
    }

    /// `None` when the shared block is empty.
    pub fn shared_block(&self) -> Option<Tensor3> {
        let r = self.partition.shared_range();
        (!r.is_empty()).then(|| self.atoms.select_columns(r).unwrap())
    }

    /// Writes `<stem>.t3` (atoms) and `<stem>.json` (partition, classes and
    /// an optional config echo).
    pub fn save(&self, stem: &Path, config: Option<serde_json::Value>) -> Result<()> {
        self.atoms.save(stem.with_extension("t3"))?;
        let manifest = DictionaryManifest {
            partition: self.partition.clone(),
            classes: self.classes.clone(),
            config,
        };
        let f = std::fs::File::create(stem.with_extension("json"))?;
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let atoms = Tensor3::load(stem.with_extension("t3"))?;
        let f = std::fs::File::open(stem.with_extension("json"))?;
        let m: DictionaryManifest = serde_json::from_reader(std::io::BufReader::new(f))?;
        StructuredDictionary::new(atoms, m.partition, m.classes)
    }
}

/// Scales every column of every channel to unit Euclidean norm; zero columns
/// stay zero.
pub fn normalize_columns(atoms: &Tensor3) -> Tensor3 {
    let mut out = atoms.clone();
    for t in 0..out.channels() {
        let mut ch = out.channel_mut(t);
        for mut col in ch.columns_mut() {
            let n = col.dot(&col).sqrt();
            if n > 0.0 {
                col /= n;
            }
        }
    }
    out
}

/// Groups training signals by class and appends the shared (ground) block.
pub fn assemble_dictionary(
    classes: &[ClassSamples],
    ground: &[Tensor3],
) -> Result<StructuredDictionary> {
    if classes.is_empty() {
        return Err(Error::Config("no classes supplied".into()));
    }
    let reference = classes
        .iter()
        .flat_map(|c| c.samples.first())
        .next()
        .ok_or_else(|| Error::EmptyClass(classes[0].info.name.clone()))?;
    let (d, _, t) = reference.shape();
    let mut columns: Vec<&Tensor3> = Vec::new();
    let mut sizes = Vec::with_capacity(classes.len());
    for class in classes {
        if class.samples.is_empty() {
            return Err(Error::EmptyClass(class.info.name.clone()));
        }
        sizes.push(class.samples.len());
        columns.extend(class.samples.iter());
    }
    columns.extend(ground.iter());
    for s in &columns {
        if s.cols() != 1 {
            return Err(Error::shape(ShapeAxis::Columns, 1, s.cols()));
        }
        if s.rows() != d {
            return Err(Error::shape(ShapeAxis::Rows, d, s.rows()));
        }
        if s.channels() != t {
            return Err(Error::shape(ShapeAxis::Channels, t, s.channels()));
        }
    }
    let atoms = Tensor3::hcat(&columns)?;
    let partition = ColumnPartition::new(sizes, ground.len())?;
    StructuredDictionary::new(
        atoms,
        partition,
        classes.iter().map(|c| c.info.clone()).collect(),
    )
}

/// Which confuser rule produced a confuser verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfuserRule {
    /// `min_c r_c > τ`: not sparsely representable.
    UnseenObject,
    /// `‖ȳ‖ < ε`: nothing left once the ground is removed.
    Ground,
    /// Most code energy sits in the shared block.
    SharedDominant,
}

impl fmt::Display for ConfuserRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfuserRule::UnseenObject => "unseen-object",
            ConfuserRule::Ground => "ground",
            ConfuserRule::SharedDominant => "shared-dominant",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Zero-based class index of the winning block.
    Class(usize),
    Confuser(ConfuserRule),
}

#[derive(Debug, Clone)]
pub struct ClassDecision {
    pub verdict: Verdict,
    /// `r_c` per class block.
    pub residuals: Vec<f64>,
    /// `‖D_0 x^0‖_F`.
    pub shared_energy: f64,
    /// `‖ȳ‖_F` with `ȳ = y − D_0 x^0`.
    pub ground_removed_norm: f64,
    pub code: Tensor3,
}

impl ClassDecision {
    pub fn rule_fired(&self) -> Option<ConfuserRule> {
        match self.verdict {
            Verdict::Confuser(r) => Some(r),
            Verdict::Class(_) => None,
        }
    }

    /// True when the verdict is a confuser rule or a known-confuser class.
    pub fn is_confuser(&self, dict: &StructuredDictionary) -> bool {
        match self.verdict {
            Verdict::Confuser(_) => true,
            Verdict::Class(c) => dict.classes[c].role == ClassRole::Confuser,
        }
    }

    pub fn argmin_class(&self) -> usize {
        argmin(&self.residuals)
    }
}

/// Thresholds of the decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    /// Ground threshold ε on `‖ȳ‖`.
    pub eps: f64,
    /// Unseen-object threshold τ on `min_c r_c`.
    pub tau: f64,
    /// Also call a confuser when the shared block carries most code energy.
    pub shared_dominant: bool,
}

impl DecisionRule {
    pub fn new(eps: f64, tau: f64) -> Self {
        DecisionRule {
            eps,
            tau,
            shared_dominant: true,
        }
    }

    /// Plain minimum-residual classification: no confuser rule can fire.
    pub fn residual_only() -> Self {
        DecisionRule {
            eps: 0.0,
            tau: f64::INFINITY,
            shared_dominant: false,
        }
    }

    pub fn with_shared_dominant(mut self, on: bool) -> Self {
        self.shared_dominant = on;
        self
    }
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::new(0.0, f64::INFINITY)
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// `Σ_{k ∈ range} d_k x_k` channel by channel.
pub(crate) fn partial_reconstruction(d: &Tensor3, x: &Tensor3, range: Range<usize>) -> Tensor3 {
    let mut out = Tensor3::zeros(d.rows(), 1, d.channels());
    if range.is_empty() {
        return out;
    }
    for t in 0..d.channels() {
        let dt = d.channel(t);
        let xt = x.channel(t);
        let block = dt.slice(ndarray::s![.., range.clone()]);
        let code = xt.slice(ndarray::s![range.clone(), ..]);
        out.channel_mut(t).assign(&block.dot(&code));
    }
    out
}

/// Applies the decision step to an already computed code.
pub fn decide(
    y: &Tensor3,
    dict: &StructuredDictionary,
    code: Tensor3,
    rule: &DecisionRule,
) -> Result<ClassDecision> {
    let d = dict.atoms();
    let part = dict.partition();
    if code.shape() != (d.cols(), 1, d.channels()) {
        return Err(Error::Config(format!(
            "code shape {:?} does not match dictionary {:?}",
            code.shape(),
            d.shape()
        )));
    }
    let shared = partial_reconstruction(d, &code, part.shared_range());
    let y_bar = y.sub(&shared);
    let residuals: Vec<f64> = (0..part.num_classes())
        .map(|c| {
            y_bar
                .sub(&partial_reconstruction(d, &code, part.class_range(c)))
                .frobenius_norm()
        })
        .collect();
    let ground_removed_norm = y_bar.frobenius_norm();
    let min_r = residuals.iter().copied().fold(f64::INFINITY, f64::min);

    let code_energy = |r: Range<usize>| -> f64 {
        let mut acc = 0.0;
        for t in 0..code.channels() {
            for k in r.clone() {
                acc += code.get(k, 0, t).powi(2);
            }
        }
        acc
    };
    let shared_code = code_energy(part.shared_range());
    let class_code: f64 = (0..part.num_classes()).map(|c| code_energy(part.class_range(c))).sum();

    let verdict = if ground_removed_norm < rule.eps {
        Verdict::Confuser(ConfuserRule::Ground)
    } else if min_r > rule.tau {
        Verdict::Confuser(ConfuserRule::UnseenObject)
    } else if rule.shared_dominant && shared_code > class_code {
        Verdict::Confuser(ConfuserRule::SharedDominant)
    } else {
        Verdict::Class(argmin(&residuals))
    };
    Ok(ClassDecision {
        verdict,
        residuals,
        shared_energy: shared.frobenius_norm(),
        ground_removed_norm,
        code,
    })
}

/// A dictionary bound to a solver configuration; the Gram matrix is built
/// once and shared by every call.
#[derive(Debug, Clone)]
pub struct SrcClassifier {
    dict: StructuredDictionary,
    coder: SparseCoder,
    rule: DecisionRule,
}

impl SrcClassifier {
    pub fn new(dict: StructuredDictionary, cfg: &SolverConfig, rule: DecisionRule) -> Result<Self> {
        let mut cfg = cfg.clone();
        // GT groups always follow the dictionary's own blocks
        if cfg.prox.mode == crate::prox::SparsityMode::Gt {
            cfg.prox.partition = Some(dict.partition().clone());
        }
        let coder = SparseCoder::new(dict.atoms(), cfg)?;
        Ok(SrcClassifier { dict, coder, rule })
    }

    pub fn dictionary(&self) -> &StructuredDictionary {
        &self.dict
    }

    pub fn rule(&self) -> &DecisionRule {
        &self.rule
    }

    pub fn set_rule(&mut self, rule: DecisionRule) {
        self.rule = rule;
    }

    pub fn encode(&self, y: &Tensor3) -> Result<Tensor3> {
        self.coder.encode(y, None)
    }

    pub fn classify(&self, y: &Tensor3) -> Result<ClassDecision> {
        let code = self.coder.encode(y, None)?;
        decide(y, &self.dict, code, &self.rule)
    }

    /// Classifies many signals in parallel; results keep the input order.
    pub fn classify_batch(&self, ys: &[Tensor3]) -> Vec<Result<ClassDecision>> {
        ys.par_iter().map(|y| self.classify(y)).collect()
    }

    /// Splits `y` into the object part `D_o x^o` and the ground part
    /// `D_g x^g`.
    pub fn denoise(&self, y: &Tensor3) -> Result<(Tensor3, Tensor3)> {
        let part = self.dict.partition();
        if part.shared_size() == 0 {
            return Err(Error::Config(
                "denoising needs a non-empty shared (ground) block".into(),
            ));
        }
        let code = self.coder.encode(y, None)?;
        let objects = 0..part.shared_range().start;
        let clean = partial_reconstruction(self.dict.atoms(), &code, objects);
        let ground = partial_reconstruction(self.dict.atoms(), &code, part.shared_range());
        Ok((clean, ground))
    }
}

pub fn classify(
    y: &Tensor3,
    dict: &StructuredDictionary,
    cfg: &SolverConfig,
    rule: &DecisionRule,
) -> Result<ClassDecision> {
    SrcClassifier::new(dict.clone(), cfg, *rule)?.classify(y)
}

pub fn denoise(
    y: &Tensor3,
    dict: &StructuredDictionary,
    cfg: &SolverConfig,
) -> Result<(Tensor3, Tensor3)> {
    SrcClassifier::new(dict.clone(), cfg, DecisionRule::default())?.denoise(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::{ProxSpec, SparsityMode};
    use crate::tensor::channelwise_matmul;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, ch: usize, rng: &mut ChaCha8Rng) -> Tensor3 {
        Tensor3::from_fn(rows, 1, ch, |_, _, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn sm(lambda: f64) -> SolverConfig {
        SolverConfig::new(lambda, ProxSpec::new(SparsityMode::Sm, false))
            .with_max_iters(5000)
            .with_tol(1e-10)
    }

    fn toy_dict(seed: u64, classes: usize, per: usize, ground: usize, d: usize, t: usize) -> StructuredDictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs: Vec<ClassSamples> = (0..classes)
            .map(|c| ClassSamples {
                info: ClassInfo::target(format!("c{c}")),
                samples: (0..per).map(|_| gaussian(d, t, &mut rng)).collect(),
            })
            .collect();
        let g: Vec<Tensor3> = (0..ground).map(|_| gaussian(d, t, &mut rng)).collect();
        assemble_dictionary(&cs, &g).unwrap()
    }

    #[test]
    fn assembly_counts_and_normalizes() {
        let dict = toy_dict(1, 2, 3, 2, 10, 2);
        assert_eq!(dict.atoms().cols(), 8);
        assert_eq!(dict.partition().class_sizes(), &[3, 3]);
        assert_eq!(dict.partition().shared_size(), 2);
        for t in 0..2 {
            for col in dict.atoms().channel(t).columns() {
                assert_abs_diff_eq!(col.dot(&col), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_class_without_ground() {
        let dict = toy_dict(2, 1, 4, 0, 10, 1);
        assert_eq!(dict.partition().shared_size(), 0);
        assert!(dict.shared_block().is_none());
        let y = dict.atoms().column(2);
        let dec = classify(&y, &dict, &sm(1e-4), &DecisionRule::default()).unwrap();
        assert_eq!(dec.shared_energy, 0.0);
        assert_eq!(dec.verdict, Verdict::Class(0));
    }

    #[test]
    fn full_scale_block_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cs: Vec<ClassSamples> = (0..5)
            .map(|c| ClassSamples {
                info: ClassInfo::target(format!("T{}", c + 1)),
                samples: (0..12).map(|_| gaussian(16, 1, &mut rng)).collect(),
            })
            .collect();
        let dict = assemble_dictionary(&cs, &[]).unwrap();
        assert_eq!(dict.partition().class_sizes(), &[12; 5]);
    }

    #[test]
    fn assembly_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ok = ClassSamples {
            info: ClassInfo::target("a"),
            samples: vec![gaussian(6, 2, &mut rng)],
        };
        let empty = ClassSamples {
            info: ClassInfo::target("b"),
            samples: vec![],
        };
        assert!(matches!(
            assemble_dictionary(&[ok.clone(), empty], &[]),
            Err(Error::EmptyClass(name)) if name == "b"
        ));
        let odd = ClassSamples {
            info: ClassInfo::target("c"),
            samples: vec![gaussian(7, 2, &mut rng)],
        };
        assert!(assemble_dictionary(&[ok.clone(), odd], &[]).is_err());
        assert!(assemble_dictionary(&[ok], &[gaussian(6, 3, &mut rng)]).is_err());
    }

    #[test]
    fn self_representation() {
        let dict = toy_dict(6, 3, 4, 0, 20, 2);
        let y = dict.atoms().column(dict.partition().class_range(1).start + 2);
        let dec = classify(&y, &dict, &sm(1e-5), &DecisionRule::default()).unwrap();
        assert_eq!(dec.verdict, Verdict::Class(1));
        assert!(dec.residuals[1] < 1e-3, "{:?}", dec.residuals);
    }

    #[test]
    fn pure_ground_fires_ground_rule() {
        let dict = toy_dict(7, 2, 4, 3, 20, 2);
        let g = dict.shared_block().unwrap();
        let mut y = g.column(0).scaled(0.7);
        y.axpy(0.4, &g.column(2));
        let rule = DecisionRule::new(0.05, f64::INFINITY).with_shared_dominant(false);
        let dec = classify(&y, &dict, &sm(1e-4), &rule).unwrap();
        assert_eq!(dec.verdict, Verdict::Confuser(ConfuserRule::Ground));
    }

    #[test]
    fn orthogonal_signal_is_unseen() {
        let dict = toy_dict(8, 2, 3, 2, 30, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = gaussian(30, 2, &mut rng);
        // project out the dictionary span channel by channel
        let mut y = raw.clone();
        for t in 0..2 {
            let d = dict.atoms().channel(t);
            let m = nalgebra::DMatrix::from_fn(30, 8, |i, j| d[(i, j)]);
            let v = nalgebra::DVector::from_fn(30, |i, _| raw.get(i, 0, t));
            let coef = m.clone().svd(true, true).solve(&v, 1e-12).unwrap();
            let proj = &m * coef;
            for i in 0..30 {
                y.set(i, 0, t, v[i] - proj[i]);
            }
        }
        let norm = y.frobenius_norm();
        let rule = DecisionRule::new(0.0, 0.5 * norm).with_shared_dominant(false);
        let dec = classify(&y, &dict, &sm(1e-3), &rule).unwrap();
        for r in &dec.residuals {
            assert!((r - norm).abs() < 1e-6 * norm);
        }
        assert_eq!(dec.verdict, Verdict::Confuser(ConfuserRule::UnseenObject));
    }

    #[test]
    fn shared_dominant_rule_and_toggle() {
        let dict = toy_dict(10, 2, 4, 3, 20, 2);
        let g = dict.shared_block().unwrap();
        let mut y = g.column(1).scaled(2.0);
        y.axpy(0.2, &dict.atoms().column(0));
        let on = classify(&y, &dict, &sm(1e-3), &DecisionRule::default()).unwrap();
        assert_eq!(on.verdict, Verdict::Confuser(ConfuserRule::SharedDominant));
        let off = DecisionRule::default().with_shared_dominant(false);
        let dec = classify(&y, &dict, &sm(1e-3), &off).unwrap();
        assert_eq!(dec.verdict, Verdict::Class(0));
    }

    #[test]
    fn class_verdict_respects_tau() {
        let dict = toy_dict(11, 3, 3, 1, 15, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let y = gaussian(15, 2, &mut rng);
            let tau = rng.random_range(0.5..5.0);
            let dec = classify(&y, &dict, &sm(0.05), &DecisionRule::new(0.0, tau)).unwrap();
            if let Verdict::Class(c) = dec.verdict {
                assert_eq!(c, dec.argmin_class());
                assert!(dec.residuals[c] <= tau);
            }
        }
    }

    #[test]
    fn known_confuser_class_maps_to_confuser() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cs = vec![
            ClassSamples {
                info: ClassInfo::target("mine"),
                samples: (0..3).map(|_| gaussian(12, 1, &mut rng)).collect(),
            },
            ClassSamples {
                info: ClassInfo::confuser("rock"),
                samples: (0..3).map(|_| gaussian(12, 1, &mut rng)).collect(),
            },
        ];
        let dict = assemble_dictionary(&cs, &[]).unwrap();
        let y = dict.atoms().column(4);
        let dec = classify(&y, &dict, &sm(1e-4), &DecisionRule::default()).unwrap();
        assert_eq!(dec.verdict, Verdict::Class(1));
        assert!(dec.is_confuser(&dict));
    }

    #[test]
    fn permutation_within_block_keeps_decision() {
        let dict = toy_dict(14, 3, 4, 2, 25, 3);
        let atoms = dict.atoms();
        // reverse the columns of class 1
        let r = dict.partition().class_range(1);
        let mut perm: Vec<usize> = (0..atoms.cols()).collect();
        perm[r.clone()].reverse();
        let permuted = Tensor3::from_fn(atoms.rows(), atoms.cols(), atoms.channels(), |i, j, t| {
            atoms.get(i, perm[j], t)
        });
        let pdict = StructuredDictionary::new(permuted, dict.partition().clone(), dict.classes().to_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let mut y = atoms.column(r.start + 1);
            y.axpy(0.3, &gaussian(25, 3, &mut rng));
            let cfg = sm(0.05).with_max_iters(20_000).with_tol(1e-14);
            let a = classify(&y, &dict, &cfg, &DecisionRule::default()).unwrap();
            let b = classify(&y, &pdict, &cfg, &DecisionRule::default()).unwrap();
            assert_eq!(a.verdict, b.verdict);
            for (x, z) in a.residuals.iter().zip(&b.residuals) {
                assert_abs_diff_eq!(x, z, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn scaling_scales_residuals() {
        let dict = toy_dict(16, 3, 3, 2, 18, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y = gaussian(18, 2, &mut rng);
        let cfg = sm(0.1).with_max_iters(20_000).with_tol(1e-14);
        let base = classify(&y, &dict, &cfg, &DecisionRule::residual_only()).unwrap();
        let alpha = 3.5;
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.lambda *= alpha;
        let scaled = classify(&y.scaled(alpha), &dict, &scaled_cfg, &DecisionRule::residual_only()).unwrap();
        assert_eq!(base.argmin_class(), scaled.argmin_class());
        for (a, b) in base.residuals.iter().zip(&scaled.residuals) {
            assert_abs_diff_eq!(alpha * a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_class_thresholded_reconstruction() {
        let dict = toy_dict(18, 1, 5, 0, 12, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let y = gaussian(12, 2, &mut rng);
            let tau = 2.5;
            let dec = classify(&y, &dict, &sm(0.05), &DecisionRule::new(0.0, tau)).unwrap();
            assert_eq!(dec.verdict == Verdict::Class(0), dec.residuals[0] <= tau);
        }
    }

    /// Single-channel SRC written directly against the matrices.
    fn direct_src(y: &[f64], d: &ndarray::Array2<f64>, sizes: &[usize], x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        let mut start = 0;
        for (c, &s) in sizes.iter().enumerate() {
            let mut r = 0.0;
            for i in 0..y.len() {
                let mut rec = 0.0;
                for k in start..start + s {
                    rec += d[(i, k)] * x[k];
                }
                r += (y[i] - rec).powi(2);
            }
            if r < best.0 {
                best = (r, c);
            }
            start += s;
        }
        best.1
    }

    #[test]
    fn cr_single_channel_is_classical_src() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let templates: Vec<Tensor3> = (0..2).map(|_| gaussian(20, 1, &mut rng)).collect();
        let noisy = |c: usize, rng: &mut ChaCha8Rng| {
            let mut s = templates[c].clone();
            s.axpy(0.5, &gaussian(20, 1, rng));
            s
        };
        let cs: Vec<ClassSamples> = (0..2)
            .map(|c| ClassSamples {
                info: ClassInfo::target(format!("g{c}")),
                samples: (0..6).map(|_| noisy(c, &mut rng)).collect(),
            })
            .collect();
        let dict = assemble_dictionary(&cs, &[]).unwrap();
        let cfg = SolverConfig::new(0.05, ProxSpec::new(SparsityMode::Cr, false));
        let clf = SrcClassifier::new(dict.clone(), &cfg, DecisionRule::residual_only()).unwrap();
        let (mut ours, mut direct) = (0, 0);
        for i in 0..40 {
            let truth = i % 2;
            let y = noisy(truth, &mut rng);
            let dec = clf.classify(&y).unwrap();
            let yv: Vec<f64> = y.iter().copied().collect();
            let xv: Vec<f64> = dec.code.iter().copied().collect();
            let d2 = dict.atoms().channel(0).to_owned();
            let dc = direct_src(&yv, &d2, dict.partition().class_sizes(), &xv);
            assert_eq!(dec.verdict, Verdict::Class(dc));
            ours += usize::from(dec.verdict == Verdict::Class(truth));
            direct += usize::from(dc == truth);
        }
        assert_eq!(ours, direct);
    }

    fn planted_denoise_setup() -> (StructuredDictionary, ChaCha8Rng) {
        // object and ground atoms live on disjoint pixel supports
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 40;
        let obj = |rng: &mut ChaCha8Rng| {
            Tensor3::from_fn(d, 1, 2, |i, _, _| if i < 20 { rng.random_range(0.0..1.0) } else { 0.0 })
        };
        let gnd = |rng: &mut ChaCha8Rng| {
            Tensor3::from_fn(d, 1, 2, |i, _, _| if i >= 20 { rng.random_range(0.0..1.0) } else { 0.0 })
        };
        let cs = vec![
            ClassSamples {
                info: ClassInfo::target("t"),
                samples: (0..4).map(|_| obj(&mut rng)).collect(),
            },
            ClassSamples {
                info: ClassInfo::confuser("c"),
                samples: (0..4).map(|_| obj(&mut rng)).collect(),
            },
        ];
        let ground: Vec<Tensor3> = (0..4).map(|_| gnd(&mut rng)).collect();
        (assemble_dictionary(&cs, &ground).unwrap(), rng)
    }

    #[test]
    fn denoise_planted_decompositions() {
        let (dict, mut rng) = planted_denoise_setup();
        let cfg = sm(1e-3);
        let atoms = dict.atoms();
        let clean_y = {
            let mut y = atoms.column(1).scaled(rng.random_range(0.5..1.5));
            y.axpy(0.6, &atoms.column(5));
            y
        };
        let (clean, ground) = denoise(&clean_y, &dict, &cfg).unwrap();
        assert!(ground.frobenius_norm_sq() <= 0.05 * clean_y.frobenius_norm_sq());
        let full = channelwise_matmul(atoms, &classify(&clean_y, &dict, &cfg, &DecisionRule::default()).unwrap().code).unwrap();
        assert_abs_diff_eq!(clean.add(&ground).sub(&full).frobenius_norm(), 0.0, epsilon = 1e-9);

        let ground_y = atoms.column(9).add(&atoms.column(10).scaled(0.5));
        let (clean, _) = denoise(&ground_y, &dict, &cfg).unwrap();
        assert!(clean.frobenius_norm_sq() <= 0.05 * ground_y.frobenius_norm_sq());

        let (c0, g0) = denoise(&Tensor3::zeros(40, 1, 2), &dict, &cfg).unwrap();
        assert_eq!(c0.frobenius_norm(), 0.0);
        assert_eq!(g0.frobenius_norm(), 0.0);
    }

    #[test]
    fn denoise_requires_ground() {
        let dict = toy_dict(22, 2, 3, 0, 10, 1);
        let y = dict.atoms().column(0);
        assert!(denoise(&y, &dict, &sm(0.1)).is_err());
    }

    #[test]
    fn dictionary_save_load() {
        let dict = toy_dict(23, 2, 3, 1, 10, 2);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("dict");
        dict.save(&stem, Some(serde_json::json!({"lambda": 0.1}))).unwrap();
        let back = StructuredDictionary::load(&stem).unwrap();
        assert_eq!(back.partition(), dict.partition());
        assert_eq!(back.classes(), dict.classes());
        assert_abs_diff_eq!(back.atoms().sub(dict.atoms()).frobenius_norm(), 0.0, epsilon = 1e-15);
    }
}
