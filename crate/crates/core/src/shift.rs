//! Multi-look classification with circularly shifted view dictionaries.
//!
//! Each class block holds the object's views ordered by aspect angle. Two
//! consecutive looks of an object at view `j` activate views `j` and `j+1`:
//! a "stair" across channels. Rotating the class blocks of the second look
//! one step to the left moves view `j+1` to index `j`, so the stair becomes
//! a tube and tube sparsity applies unchanged.

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassDecision, ClassSamples, DecisionRule, SrcClassifier, StructuredDictionary};
use crate::classifier::assemble_dictionary;
use crate::error::{Error, Result};
use crate::fista::SolverConfig;
use crate::prox::SparsityMode;
use crate::tensor::{BlockId, Tensor3};

const SPACING_TOL: f64 = 1e-9;

/// Per-class views ordered by aspect angle (column `v` of every class block
/// is the view at `v · spacing`, wrapping around), plus optional shared
/// atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDictionary {
    pub dictionary: StructuredDictionary,
    pub spacing_deg: f64,
    pub integration_deg: f64,
}

impl ViewDictionary {
    pub fn new(dictionary: StructuredDictionary, spacing_deg: f64, integration_deg: f64) -> Result<Self> {
        if !(spacing_deg > 0.0) {
            return Err(Error::Config(format!("view spacing must be positive, got {spacing_deg}")));
        }
        Ok(ViewDictionary {
            dictionary,
            spacing_deg,
            integration_deg,
        })
    }

    /// Assembles the blocks from ordered views and raw ground samples.
    pub fn from_views(
        classes: &[ClassSamples],
        ground: &[Tensor3],
        spacing_deg: f64,
        integration_deg: f64,
    ) -> Result<Self> {
        ViewDictionary::new(assemble_dictionary(classes, ground)?, spacing_deg, integration_deg)
    }

    /// Smallest number of views over the classes.
    pub fn min_views(&self) -> usize {
        self.dictionary.partition().class_sizes().iter().copied().min().unwrap_or(0)
    }
}

/// Channel groups of a composite dictionary: group `g` is `sets[g]` with
/// every class block rotated left by `shifts[g]`; shared blocks are not
/// shifted. Channel index is `g · T₀ + p`.
pub fn compose_shifted(sets: &[(&ViewDictionary, usize)]) -> Result<StructuredDictionary> {
    let (first, _) = sets
        .first()
        .ok_or_else(|| Error::Config("no channel groups requested".into()))?;
    let part = first.dictionary.partition();
    let mut groups = Vec::with_capacity(sets.len());
    for (vd, shift) in sets {
        let d = &vd.dictionary;
        if d.partition() != part || d.classes() != first.dictionary.classes() {
            return Err(Error::Config("view sets have different block layouts".into()));
        }
        if (vd.spacing_deg - first.spacing_deg).abs() > SPACING_TOL {
            return Err(Error::Config(format!(
                "view sets have different spacings ({}° vs {}°)",
                vd.spacing_deg, first.spacing_deg
            )));
        }
        let mut atoms = d.atoms().clone();
        for (id, range) in part.blocks() {
            if let BlockId::Class(c) = id {
                if *shift >= range.len() && *shift > 0 {
                    return Err(Error::Config(format!(
                        "shift {shift} needs more than the {} views of class {}",
                        range.len(),
                        d.classes()[c].name
                    )));
                }
                atoms = atoms.circular_shift_columns(range, *shift as i64)?;
            }
        }
        groups.push(atoms);
    }
    let refs: Vec<&Tensor3> = groups.iter().collect();
    StructuredDictionary::new(
        Tensor3::channel_cat(&refs)?,
        part.clone(),
        first.dictionary.classes().to_vec(),
    )
}

/// Dictionary for `looks` consecutive looks: channel group `ℓ` holds every
/// class block rotated left by `ℓ`.
pub fn build_shift_dictionary(views: &ViewDictionary, looks: usize) -> Result<Tensor3> {
    if looks == 0 {
        return Err(Error::Config("at least one look is required".into()));
    }
    if looks > views.min_views() {
        return Err(Error::Config(format!(
            "{looks} looks exceed the {} views of the smallest class",
            views.min_views()
        )));
    }
    let sets: Vec<(&ViewDictionary, usize)> = (0..looks).map(|l| (views, l)).collect();
    Ok(compose_shifted(&sets)?.atoms().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// One full-sector look.
    #[serde(rename = "1look")]
    OneLook,
    /// Two consecutive half-sector looks.
    #[serde(rename = "2look")]
    TwoLook,
    /// A full-sector look plus two consecutive half-sector looks.
    #[serde(rename = "3look")]
    ThreeLook,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::OneLook, Protocol::TwoLook, Protocol::ThreeLook];

    pub fn looks(self) -> usize {
        match self {
            Protocol::OneLook => 1,
            Protocol::TwoLook => 2,
            Protocol::ThreeLook => 3,
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}look", self.looks())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1look" => Ok(Protocol::OneLook),
            "2look" => Ok(Protocol::TwoLook),
            "3look" => Ok(Protocol::ThreeLook),
            _ => Err(Error::Config(format!("unknown protocol {s:?} (1look, 2look, 3look)"))),
        }
    }
}

/// A protocol's composite dictionary bound to a tube-sparse solver.
#[derive(Debug, Clone)]
pub struct MultiLookClassifier {
    protocol: Protocol,
    inner: SrcClassifier,
}

impl MultiLookClassifier {
    /// `full` holds full-sector views, `half` half-sector views;
    /// `look_spacing_deg` is the angular step between consecutive test
    /// looks and must match the view spacing. With `shifted = false` the
    /// half-sector groups are stacked unrotated (plain tube sparsity on
    /// the stacked looks).
    pub fn new(
        protocol: Protocol,
        full: &ViewDictionary,
        half: &ViewDictionary,
        look_spacing_deg: f64,
        cfg: &SolverConfig,
        rule: DecisionRule,
        shifted: bool,
    ) -> Result<Self> {
        if protocol != Protocol::OneLook && (half.spacing_deg - look_spacing_deg).abs() > SPACING_TOL {
            return Err(Error::Config(format!(
                "look spacing {look_spacing_deg}° differs from view spacing {}°",
                half.spacing_deg
            )));
        }
        let second = usize::from(shifted);
        let dict = match protocol {
            Protocol::OneLook => full.dictionary.clone(),
            Protocol::TwoLook => compose_shifted(&[(half, 0), (half, second)])?,
            Protocol::ThreeLook => compose_shifted(&[(full, 0), (half, 0), (half, second)])?,
        };
        let mut cfg = cfg.clone();
        cfg.prox.mode = SparsityMode::Sm;
        Ok(MultiLookClassifier {
            protocol,
            inner: SrcClassifier::new(dict, &cfg, rule)?,
        })
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn dictionary(&self) -> &StructuredDictionary {
        self.inner.dictionary()
    }

    /// Stacks the looks into channel groups (full look first for 3look),
    /// codes them with tube sparsity and applies the decision rule.
    pub fn classify(&self, looks: &[Tensor3]) -> Result<ClassDecision> {
        if looks.len() != self.protocol.looks() {
            return Err(Error::Config(format!(
                "{} expects {} looks, got {}",
                self.protocol,
                self.protocol.looks(),
                looks.len()
            )));
        }
        let refs: Vec<&Tensor3> = looks.iter().collect();
        self.inner.classify(&Tensor3::channel_cat(&refs)?)
    }
}

pub fn classify_multilook(
    looks: &[Tensor3],
    full: &ViewDictionary,
    half: &ViewDictionary,
    look_spacing_deg: f64,
    cfg: &SolverConfig,
    rule: &DecisionRule,
    protocol: Protocol,
) -> Result<ClassDecision> {
    MultiLookClassifier::new(protocol, full, half, look_spacing_deg, cfg, *rule, true)?.classify(looks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{classify, ClassInfo, Verdict};
    use crate::fista::{lipschitz_constant, Fista, QuadraticModel};
    use crate::prox::{ProxSpec, Proximal};
    use crate::tensor::ColumnPartition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize, t: usize) -> Tensor3 {
        Tensor3::from_fn(r, c, t, |_, _, _| rng.sample(StandardNormal))
    }

    fn view_dict(rng: &mut ChaCha8Rng, dim: usize, views: &[usize], ground: usize, ch: usize) -> ViewDictionary {
        let classes: Vec<ClassSamples> = views
            .iter()
            .enumerate()
            .map(|(c, &v)| ClassSamples {
                info: ClassInfo::target(format!("c{c}")),
                samples: (0..v).map(|_| randn(rng, dim, 1, ch)).collect(),
            })
            .collect();
        let g: Vec<Tensor3> = (0..ground).map(|_| randn(rng, dim, 1, ch)).collect();
        ViewDictionary::from_views(&classes, &g, 15.0, 15.0).unwrap()
    }

    fn assert_close(a: &Tensor3, b: &Tensor3) {
        assert_eq!(a.shape(), b.shape());
        assert!(a.sub(b).frobenius_norm() <= 1e-14, "{a:?} vs {b:?}");
    }

    fn view(vd: &ViewDictionary, class: usize, v: usize) -> Tensor3 {
        let r = vd.dictionary.partition().class_range(class);
        vd.dictionary.atoms().column(r.start + v % r.len())
    }

    #[test]
    fn one_look_is_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vd = view_dict(&mut rng, 10, &[4, 5], 2, 2);
        assert_close(&build_shift_dictionary(&vd, 1).unwrap(), vd.dictionary.atoms());
    }

    #[test]
    fn two_looks_rotate_each_class_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vd = view_dict(&mut rng, 6, &[24, 24], 3, 1);
        let d = build_shift_dictionary(&vd, 2).unwrap();
        assert_eq!(d.channels(), 2);
        let part = vd.dictionary.partition();
        for c in 0..2 {
            let r = part.class_range(c);
            for i in 0..24 {
                assert_close(&d.select_channels(1..2).unwrap().column(r.start + i), &view(&vd, c, i + 1));
            }
        }
        // ground atoms stay in place
        for k in part.shared_range() {
            assert_close(&d.select_channels(1..2).unwrap().column(k), &vd.dictionary.atoms().column(k));
        }
    }

    #[test]
    fn polarization_channels_are_grouped_per_look() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vd = view_dict(&mut rng, 5, &[3], 0, 2);
        let d = build_shift_dictionary(&vd, 3).unwrap();
        assert_eq!(d.channels(), 6);
        for l in 0..3 {
            for p in 0..2 {
                for i in 0..3 {
                    let got = d.select_channels(l * 2 + p..l * 2 + p + 1).unwrap().column(i);
                    let want = view(&vd, 0, i + l).select_channels(p..p + 1).unwrap();
                    assert_close(&got, &want);
                }
            }
        }
    }

    #[test]
    fn too_many_looks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vd = view_dict(&mut rng, 5, &[3, 2], 0, 1);
        assert!(build_shift_dictionary(&vd, 3).is_err());
        assert!(build_shift_dictionary(&vd, 0).is_err());
        assert!(build_shift_dictionary(&vd, 2).is_ok());
    }

    fn dominant_tube(code: &Tensor3) -> usize {
        let norms = code.tube_l2_norms().unwrap();
        (0..norms.len()).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap()
    }

    #[test]
    fn planted_stair_recovers_one_tube_and_rotates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vd = view_dict(&mut rng, 40, &[8, 8, 8], 0, 1);
        let shifted = compose_shifted(&[(&vd, 0), (&vd, 1)]).unwrap();
        let cfg = SolverConfig::new(0.05, ProxSpec::new(SparsityMode::Sm, false));
        let part = vd.dictionary.partition().clone();
        for j in 0..8 {
            let looks: Vec<Tensor3> = (0..2)
                .map(|l| view(&vd, 1, j + l).add(&randn(&mut rng, 40, 1, 1).scaled(0.05)))
                .collect();
            let y = Tensor3::channel_cat(&[&looks[0], &looks[1]]).unwrap();
            let code = crate::fista::tensor_sparse_code(&y, shifted.atoms(), &cfg, None).unwrap();
            // j → j+1 moves the dominant tube by one
            assert_eq!(dominant_tube(&code), part.class_range(1).start + j);
        }
    }

    /// Pairs entry `k` of look 0 with the entry of look `ℓ` that the
    /// shifted dictionary moves onto `k`, then shrinks each group.
    struct StairProx {
        partition: ColumnPartition,
        looks: usize,
    }

    impl StairProx {
        fn partner(&self, k: usize, look: usize) -> usize {
            for c in 0..self.partition.num_classes() {
                let r = self.partition.class_range(c);
                if r.contains(&k) {
                    return r.start + (k - r.start + look) % r.len();
                }
            }
            k
        }

        fn groups(&self) -> Vec<Vec<(usize, usize)>> {
            (0..self.partition.total())
                .map(|k| (0..self.looks).map(|l| (self.partner(k, l), l)).collect())
                .collect()
        }
    }

    impl Proximal for StairProx {
        fn prox(&self, u: &Tensor3, eta: f64) -> Tensor3 {
            let mut out = Tensor3::zeros(u.rows(), 1, u.channels());
            for g in self.groups() {
                let n = g.iter().map(|&(k, t)| u.get(k, 0, t).powi(2)).sum::<f64>().sqrt();
                let s = if n > 0.0 { (1.0 - eta / n).max(0.0) } else { 0.0 };
                for (k, t) in g {
                    out.set(k, 0, t, s * u.get(k, 0, t));
                }
            }
            out
        }

        fn penalty(&self, x: &Tensor3) -> f64 {
            self.groups()
                .iter()
                .map(|g| g.iter().map(|&(k, t)| x.get(k, 0, t).powi(2)).sum::<f64>().sqrt())
                .sum()
        }
    }

    #[test]
    fn stair_problem_equals_tube_problem_on_shifted_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let looks = rng.random_range(2..=3);
            let sizes: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(3..7)).collect();
            let (dim, ground) = (rng.random_range(8..20), rng.random_range(0..3));
            let vd = view_dict(&mut rng, dim, &sizes, ground, 1);
            let part = vd.dictionary.partition().clone();
            let plain = compose_shifted(&vec![(&vd, 0); looks]).unwrap();
            let sets: Vec<(&ViewDictionary, usize)> = (0..looks).map(|l| (&vd, l)).collect();
            let shifted = compose_shifted(&sets).unwrap();
            let y = randn(&mut rng, vd.dictionary.signal_len(), 1, looks);
            let lambda = rng.random_range(0.05..0.5);
            let lip = lipschitz_constant(plain.atoms()).unwrap();

            let stair = StairProx {
                partition: part.clone(),
                looks,
            };
            let m1 = QuadraticModel::least_squares(&y, plain.atoms()).unwrap();
            let x0 = Tensor3::zeros(part.total(), 1, looks);
            let x_stair = Fista::new(&m1, &stair, lambda, lip, x0.clone()).run(20_000, 1e-14).unwrap();

            let tube = ProxSpec::new(SparsityMode::Sm, false);
            let m2 = QuadraticModel::least_squares(&y, shifted.atoms()).unwrap();
            let x_tube = Fista::new(&m2, &tube, lambda, lip, x0).run(20_000, 1e-14).unwrap();

            for l in 0..looks {
                for k in 0..part.total() {
                    let a = x_tube.get(k, 0, l);
                    let b = x_stair.get(stair.partner(k, l), 0, l);
                    assert!((a - b).abs() <= 1e-8, "look {l} atom {k}: {a} vs {b}");
                }
            }
        }
    }

    fn two_sets(rng: &mut ChaCha8Rng, dim: usize, classes: usize, views: usize) -> (ViewDictionary, ViewDictionary) {
        let full = view_dict(rng, dim, &vec![views; classes], 2, 1);
        let half = view_dict(rng, dim, &vec![views; classes], 2, 1);
        (full, half)
    }

    #[test]
    fn one_look_matches_plain_classification() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (full, half) = two_sets(&mut rng, 30, 3, 6);
        let cfg = SolverConfig::new(0.02, ProxSpec::new(SparsityMode::Sm, false));
        let rule = DecisionRule::default();
        for _ in 0..5 {
            let y = randn(&mut rng, 30, 1, 1);
            let a = classify_multilook(&[y.clone()], &full, &half, 15.0, &cfg, &rule, Protocol::OneLook).unwrap();
            let b = classify(&y, &full.dictionary, &cfg, &rule).unwrap();
            assert_eq!(a.verdict, b.verdict);
            assert_eq!(a.residuals, b.residuals);
            assert_eq!(a.code, b.code);
        }
    }

    #[test]
    fn three_look_planted_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (full, half) = two_sets(&mut rng, 60, 3, 8);
        let cfg = SolverConfig::new(1e-9, ProxSpec::new(SparsityMode::Sm, false))
            .with_max_iters(20_000)
            .with_tol(1e-14);
        for j in [0, 3, 7] {
            let looks = [view(&full, 2, j), view(&half, 2, j), view(&half, 2, j + 1)];
            let d = classify_multilook(&looks, &full, &half, 15.0, &cfg, &DecisionRule::default(), Protocol::ThreeLook)
                .unwrap();
            let norm = Tensor3::channel_cat(&looks.iter().collect::<Vec<_>>()).unwrap().frobenius_norm();
            assert!(d.residuals[2] <= 1e-6 * norm, "{:?}", d.residuals);
            assert_eq!(d.verdict, Verdict::Class(2));
        }
    }

    #[test]
    fn shifted_two_look_beats_unshifted_on_planted_looks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 30;
        let (full, half) = two_sets(&mut rng, dim, 4, 12);
        let cfg = SolverConfig::new(0.1, ProxSpec::new(SparsityMode::Sm, false));
        let rule = DecisionRule::residual_only();
        let shifted = MultiLookClassifier::new(Protocol::TwoLook, &full, &half, 15.0, &cfg, rule, true).unwrap();
        let plain = MultiLookClassifier::new(Protocol::TwoLook, &full, &half, 15.0, &cfg, rule, false).unwrap();
        let (mut hit_s, mut hit_p) = (0, 0);
        for _ in 0..200 {
            let c = rng.random_range(0..4);
            let j = rng.random_range(0..12);
            let looks: Vec<Tensor3> = (0..2)
                .map(|l| view(&half, c, j + l).add(&randn(&mut rng, dim, 1, 1).scaled(0.25)))
                .collect();
            hit_s += usize::from(shifted.classify(&looks).unwrap().verdict == Verdict::Class(c));
            hit_p += usize::from(plain.classify(&looks).unwrap().verdict == Verdict::Class(c));
        }
        assert!(hit_s >= hit_p, "shifted {hit_s} unshifted {hit_p}");
    }

    #[test]
    fn protocol_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (full, half) = two_sets(&mut rng, 10, 2, 4);
        let cfg = SolverConfig::new(0.1, ProxSpec::new(SparsityMode::Sm, false));
        let rule = DecisionRule::default();
        let y = randn(&mut rng, 10, 1, 1);
        assert!(classify_multilook(&[y.clone()], &full, &half, 15.0, &cfg, &rule, Protocol::TwoLook).is_err());
        assert!(classify_multilook(&[y.clone(), y.clone()], &full, &half, 10.0, &cfg, &rule, Protocol::TwoLook).is_err());
        assert!(classify_multilook(&[y.clone(), y], &full, &half, 15.0, &cfg, &rule, Protocol::TwoLook).is_ok());
        assert_eq!("3look".parse::<Protocol>().unwrap(), Protocol::ThreeLook);
        assert_eq!(Protocol::TwoLook.to_string(), "2look");
        assert!("4look".parse::<Protocol>().is_err());
        let other = view_dict(&mut rng, 10, &[4, 5], 2, 1);
        assert!(compose_shifted(&[(&full, 0), (&other, 0)]).is_err());
    }
}
