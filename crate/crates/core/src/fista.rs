//! Accelerated proximal gradient (FISTA) for tensor sparse coding:
//!
//! ```text
//! x = argmin_x ½‖y − D x‖²_F + λ g(x)
//! ```
//!
//! The smooth part is kept in Gram form (`A = DᵀD`, `b = Dᵀy`), so one
//! iteration costs `O(K²T)` regardless of the signal length.

use ndarray::{Array1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ShapeAxis};
use crate::prox::{ProxSpec, Proximal, SparsityMode};
use crate::tensor::Tensor3;

/// Multiplier applied on top of the power-iteration estimate of `L`.
pub const LIPSCHITZ_INFLATION: f64 = 1.01;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative iterate change below which the solver stops.
    pub tol: f64,
    pub prox: ProxSpec,
}

impl SolverConfig {
    pub fn new(lambda: f64, prox: ProxSpec) -> Self {
        SolverConfig {
            lambda,
            max_iters: 500,
            tol: 1e-6,
            prox,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        self.prox.validate()
    }
}

/// Channel-wise quadratic `½ Σ_t x⁽ᵗ⁾ᵀ H⁽ᵗ⁾ x⁽ᵗ⁾ − cᵀx + constant`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub hessian: Tensor3,
    pub linear: Tensor3,
    pub constant: f64,
}

impl QuadraticModel {
    /// `½‖y − D x‖²_F` expressed through `A = DᵀD`, `b = Dᵀy`.
    pub fn least_squares(y: &Tensor3, d: &Tensor3) -> Result<Self> {
        check_signal(y, d)?;
        Ok(QuadraticModel {
            hessian: d.gram(),
            linear: d.transpose_mul(y)?,
            constant: 0.5 * y.frobenius_norm_sq(),
        })
    }

    pub fn gradient(&self, x: &Tensor3) -> Tensor3 {
        let mut g = Tensor3::zeros(x.rows(), 1, x.channels());
        for t in 0..x.channels() {
            let hx = self.hessian.channel(t).dot(&x.channel(t).column(0));
            let mut gt = g.channel_mut(t);
            let mut col = gt.column_mut(0);
            col.assign(&hx);
            col -= &self.linear.channel(t).column(0);
        }
        g
    }

    pub fn value(&self, x: &Tensor3) -> f64 {
        let mut v = self.constant;
        for t in 0..x.channels() {
            let xt = x.channel(t);
            let hx = self.hessian.channel(t).dot(&xt);
            let quad: f64 = hx.iter().zip(xt.iter()).map(|(a, b)| a * b).sum();
            let lin: f64 = self
                .linear
                .channel(t)
                .iter()
                .zip(xt.iter())
                .map(|(a, b)| a * b)
                .sum();
            v += 0.5 * quad - lin;
        }
        v
    }
}

fn check_signal(y: &Tensor3, d: &Tensor3) -> Result<()> {
    if y.cols() != 1 {
        return Err(Error::shape(ShapeAxis::Columns, 1, y.cols()));
    }
    if y.rows() != d.rows() {
        return Err(Error::shape(ShapeAxis::Rows, d.rows(), y.rows()));
    }
    if y.channels() != d.channels() {
        return Err(Error::shape(ShapeAxis::Channels, d.channels(), y.channels()));
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration. Stops when the eigen-residual `‖Av − λv‖` drops below
/// `tol·λ` or after `max_iters` steps.
pub fn power_iteration(a: ArrayView2<'_, f64>, tol: f64, max_iters: usize) -> f64 {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Array1<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let w = a.dot(&v);
        lambda = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let residual = (&w - &(&v * lambda)).dot(&(&w - &(&v * lambda))).sqrt();
        v = w / norm;
        if residual <= tol * lambda.abs() {
            // one more Rayleigh quotient with the refined vector
            lambda = v.dot(&a.dot(&v));
            break;
        }
    }
    lambda
}

/// `max_t λ_max(M^(t))` for a stack of symmetric PSD matrices.
pub fn max_channel_eigenvalue(gram: &Tensor3) -> f64 {
    (0..gram.channels())
        .map(|t| power_iteration(gram.channel(t), POWER_TOL, POWER_MAX_ITERS))
        .fold(0.0, f64::max)
}

/// Step-size constant of the least-squares gradient:
/// `max_t λ_max(D^(t)ᵀ D^(t))`, inflated by [`LIPSCHITZ_INFLATION`].
pub fn lipschitz_constant(d: &Tensor3) -> Result<f64> {
    lipschitz_of_gram(&d.gram())
}

pub(crate) fn lipschitz_of_gram(gram: &Tensor3) -> Result<f64> {
    let l = max_channel_eigenvalue(gram);
    if !(l > 0.0) {
        return Err(Error::ZeroDictionary);
    }
    Ok(l * LIPSCHITZ_INFLATION)
}

/// Iteration state of the accelerated scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x_prev: Tensor3,
    pub x_cur: Tensor3,
    /// Extrapolation point the next gradient is taken at.
    pub w: Tensor3,
    pub t_momentum: f64,
    pub iter: usize,
}

/// Step-by-step FISTA on a [`QuadraticModel`] with an arbitrary proximal
/// map.
pub struct Fista<'a, P: Proximal + ?Sized> {
    model: &'a QuadraticModel,
    prox: &'a P,
    lambda: f64,
    lipschitz: f64,
    state: SolverState,
}

impl<'a, P: Proximal + ?Sized> Fista<'a, P> {
    pub fn new(
        model: &'a QuadraticModel,
        prox: &'a P,
        lambda: f64,
        lipschitz: f64,
        x_init: Tensor3,
    ) -> Self {
        Fista {
            model,
            prox,
            lambda,
            lipschitz,
            state: SolverState {
                x_prev: x_init.clone(),
                w: x_init.clone(),
                x_cur: x_init,
                t_momentum: 1.0,
                iter: 0,
            },
        }
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `F(x) = f(x) + λ g(x)`.
    pub fn objective(&self, x: &Tensor3) -> f64 {
        self.model.value(x) + self.lambda * self.prox.penalty(x)
    }

    /// One iteration; returns the relative change of the iterate.
    pub fn step(&mut self) -> Result<f64> {
        let st = &mut self.state;
        let mut u = st.w.clone();
        u.axpy(-1.0 / self.lipschitz, &self.model.gradient(&st.w));
        let x_next = self.prox.prox(&u, self.lambda / self.lipschitz);
        st.iter += 1;
        if !x_next.is_finite() {
            return Err(Error::Diverged { iter: st.iter });
        }
        let t_next = (1.0 + (1.0 + 4.0 * st.t_momentum * st.t_momentum).sqrt()) / 2.0;
        let delta = x_next.sub(&st.x_cur);
        let mut w = x_next.clone();
        w.axpy((st.t_momentum - 1.0) / t_next, &delta);
        let change = delta.frobenius_norm() / st.x_cur.frobenius_norm().max(1e-12);

        st.x_prev = std::mem::replace(&mut st.x_cur, x_next);
        st.w = w;
        st.t_momentum = t_next;
        Ok(change)
    }

    /// Iterates until the relative change drops below `tol` or `max_iters`
    /// steps were taken. Returns whichever of the final iterate and the
    /// starting point has the lower objective.
    pub fn run(mut self, max_iters: usize, tol: f64) -> Result<Tensor3> {
        let x0 = self.state.x_cur.clone();
        for _ in 0..max_iters {
            if self.step()? < tol {
                break;
            }
        }
        let x = self.state.x_cur;
        let f_x = self.model.value(&x) + self.lambda * self.prox.penalty(&x);
        let f_0 = self.model.value(&x0) + self.lambda * self.prox.penalty(&x0);
        Ok(if f_x <= f_0 { x } else { x0 })
    }
}

/// A dictionary prepared for repeated sparse coding: Gram matrix and
/// Lipschitz constant are computed once and shared read-only.
#[derive(Debug, Clone)]
pub struct SparseCoder {
    dictionary: Tensor3,
    cfg: SolverConfig,
    // Gram of the working problem; single channel for CC.
    gram: Tensor3,
    lipschitz: f64,
}

impl SparseCoder {
    pub fn new(dictionary: &Tensor3, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(p) = &cfg.prox.partition {
            p.check_total(dictionary.cols())?;
        }
        let gram = match cfg.prox.mode {
            SparsityMode::Cc => dictionary.stack_channels().gram(),
            _ => dictionary.gram(),
        };
        let lipschitz = lipschitz_of_gram(&gram)?;
        Ok(SparseCoder {
            dictionary: dictionary.clone(),
            cfg,
            gram,
            lipschitz,
        })
    }

    pub fn dictionary(&self) -> &Tensor3 {
        &self.dictionary
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// The quadratic model of `½‖y − D x‖²` in the working variables (the
    /// single shared code for CC).
    pub fn model(&self, y: &Tensor3) -> Result<QuadraticModel> {
        check_signal(y, &self.dictionary)?;
        let linear = match self.cfg.prox.mode {
            SparsityMode::Cc => self
                .dictionary
                .stack_channels()
                .transpose_mul(&y.stack_channels())?,
            _ => self.dictionary.transpose_mul(y)?,
        };
        Ok(QuadraticModel {
            hessian: self.gram.clone(),
            linear,
            constant: 0.5 * y.frobenius_norm_sq(),
        })
    }

    /// Sparse code of `y` (`K × 1 × T`). CC codes are replicated across the
    /// channels.
    pub fn encode(&self, y: &Tensor3, x_init: Option<&Tensor3>) -> Result<Tensor3> {
        let model = self.model(y)?;
        let k = self.dictionary.cols();
        let channels = self.dictionary.channels();
        let is_cc = self.cfg.prox.mode == SparsityMode::Cc;
        let work_channels = if is_cc { 1 } else { channels };
        let x0 = match x_init {
            None => Tensor3::zeros(k, 1, work_channels),
            Some(x) => {
                if x.shape() != (k, 1, channels) {
                    return Err(Error::Config(format!(
                        "x_init has shape {:?}, expected {:?}",
                        x.shape(),
                        (k, 1, channels)
                    )));
                }
                if is_cc {
                    x.select_channels(0..1)?
                } else {
                    x.clone()
                }
            }
        };
        let solver = Fista::new(&model, &self.cfg.prox, self.cfg.lambda, self.lipschitz, x0);
        let x = solver.run(self.cfg.max_iters, self.cfg.tol)?;
        if is_cc {
            x.replicate_channels(channels)
        } else {
            Ok(x)
        }
    }
}

/// Sparse code of `y` over `d` under `cfg` (zero start when `x_init` is
/// `None`).
pub fn tensor_sparse_code(
    y: &Tensor3,
    d: &Tensor3,
    cfg: &SolverConfig,
    x_init: Option<&Tensor3>,
) -> Result<Tensor3> {
    SparseCoder::new(d, cfg.clone())?.encode(y, x_init)
}

/// `½‖y − D x‖²_F + λ g(x)` for a `K × 1 × T` code; the CC regularizer is
/// evaluated on the shared code (channel 0).
pub fn sparse_coding_objective(
    y: &Tensor3,
    d: &Tensor3,
    x: &Tensor3,
    cfg: &SolverConfig,
) -> Result<f64> {
    let r = y.sub(&crate::tensor::channelwise_matmul(d, x)?);
    let g = match cfg.prox.mode {
        SparsityMode::Cc => cfg.prox.regularizer(&x.select_channels(0..1)?)?,
        _ => cfg.prox.regularizer(x)?,
    };
    Ok(0.5 * r.frobenius_norm_sq() + cfg.lambda * g)
}
