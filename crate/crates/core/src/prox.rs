//! Closed-form proximal operators of the four tensor sparsity regularizers.
//!
//! Every operator solves `argmin_x ½‖x − u‖²_F + η·g(x)` for its `g`:
//!
//! | mode | `g(x)`                                   | operator               |
//! |------|------------------------------------------|------------------------|
//! | CR   | `‖x‖₁` (per channel)                     | soft threshold         |
//! | CC   | `‖x‖₁` of the stacked code               | soft threshold         |
//! | SM   | `Σ_k ‖x_k::‖₂` (tubes)                   | tube shrinkage         |
//! | GT   | `Σ_c ‖vec(x^c)‖₂` (partition blocks)     | block shrinkage        |
//!
//! With the non-negativity flag the regularizer also carries the indicator of
//! the non-negative orthant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ColumnPartition, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SparsityMode {
    /// Independent l1 per channel, cumulative residuals.
    #[serde(rename = "CR")]
    Cr,
    /// Channels concatenated into one long vector, shared l1 code.
    #[serde(rename = "CC")]
    Cc,
    /// Simultaneous (tube) sparsity.
    #[serde(rename = "SM")]
    Sm,
    /// Group tensor sparsity over partition blocks.
    #[serde(rename = "GT")]
    Gt,
}

impl SparsityMode {
    pub const ALL: [SparsityMode; 4] = [
        SparsityMode::Cr,
        SparsityMode::Cc,
        SparsityMode::Sm,
        SparsityMode::Gt,
    ];
}

impl fmt::Display for SparsityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SparsityMode::Cr => "CR",
            SparsityMode::Cc => "CC",
            SparsityMode::Sm => "SM",
            SparsityMode::Gt => "GT",
        })
    }
}

impl std::str::FromStr for SparsityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CR" => Ok(SparsityMode::Cr),
            "CC" => Ok(SparsityMode::Cc),
            "SM" => Ok(SparsityMode::Sm),
            "GT" => Ok(SparsityMode::Gt),
            other => Err(Error::Config(format!("unknown sparsity mode `{other}`"))),
        }
    }
}

/// A proximal map together with the regularizer it belongs to.
pub trait Proximal {
    /// `argmin_x ½‖x − u‖²_F + η·g(x)`.
    fn prox(&self, u: &Tensor3, eta: f64) -> Tensor3;

    /// `g(x)`; `+∞` outside the regularizer's domain.
    fn penalty(&self, x: &Tensor3) -> f64;
}

/// Regularizer selection for the sparse coder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxSpec {
    pub mode: SparsityMode,
    pub nonneg: bool,
    /// Block layout; required for GT and ignored otherwise.
    pub partition: Option<ColumnPartition>,
}

impl ProxSpec {
    pub fn new(mode: SparsityMode, nonneg: bool) -> Self {
        ProxSpec {
            mode,
            nonneg,
            partition: None,
        }
    }

    pub fn group(partition: ColumnPartition, nonneg: bool) -> Self {
        ProxSpec {
            mode: SparsityMode::Gt,
            nonneg,
            partition: Some(partition),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.partition) {
            (SparsityMode::Gt, None) => Err(Error::Config(
                "GT sparsity requires a column partition".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Fallible form of [`Proximal::prox`].
    pub fn apply(&self, u: &Tensor3, eta: f64) -> Result<Tensor3> {
        if self.nonneg {
            return prox_nonneg(u, eta, self.mode, self.partition.as_ref());
        }
        match self.mode {
            SparsityMode::Cr | SparsityMode::Cc => Ok(prox_l1(u, eta)),
            SparsityMode::Sm => prox_tube_l2(u, eta),
            SparsityMode::Gt => prox_group_l2(u, eta, self.require_partition()?),
        }
    }

    fn require_partition(&self) -> Result<&ColumnPartition> {
        self.partition
            .as_ref()
            .ok_or_else(|| Error::Config("GT sparsity requires a column partition".into()))
    }

    /// Fallible form of [`Proximal::penalty`].
    pub fn regularizer(&self, x: &Tensor3) -> Result<f64> {
        if self.nonneg && x.iter().any(|&v| v < 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok(match self.mode {
            SparsityMode::Cr | SparsityMode::Cc => x.l1_norm(),
            SparsityMode::Sm => x.tube_l2_norms()?.iter().sum(),
            SparsityMode::Gt => x.group_l2_norms(self.require_partition()?)?.iter().sum(),
        })
    }
}

impl Proximal for ProxSpec {
    fn prox(&self, u: &Tensor3, eta: f64) -> Tensor3 {
        self.apply(u, eta).expect("prox applied to a malformed code tensor")
    }

    fn penalty(&self, x: &Tensor3) -> f64 {
        self.regularizer(x).expect("penalty of a malformed code tensor")
    }
}

fn soft_threshold(u: f64, eta: f64) -> f64 {
    u.signum() * (u.abs() - eta).max(0.0)
}

/// Block shrinkage factor `max(1 − η/‖u‖, 0)`; zero blocks stay zero.
fn shrink_factor(norm: f64, eta: f64) -> f64 {
    if norm <= eta {
        0.0
    } else {
        1.0 - eta / norm
    }
}

/// Elementwise soft threshold `sign(u)·max(|u| − η, 0)`.
pub fn prox_l1(u: &Tensor3, eta: f64) -> Tensor3 {
    u.map(|v| soft_threshold(v, eta))
}

/// Scales every tube `u_k::` by `max(1 − η/‖u_k::‖₂, 0)`.
pub fn prox_tube_l2(u: &Tensor3, eta: f64) -> Result<Tensor3> {
    let norms = u.tube_l2_norms()?;
    let mut out = u.clone();
    for (k, n) in norms.into_iter().enumerate() {
        let f = shrink_factor(n, eta);
        for t in 0..u.channels() {
            out.set(k, 0, t, f * u.get(k, 0, t));
        }
    }
    Ok(out)
}

/// Scales every partition block `u^c` by `max(1 − η/‖vec(u^c)‖₂, 0)`.
pub fn prox_group_l2(u: &Tensor3, eta: f64, part: &ColumnPartition) -> Result<Tensor3> {
    let norms = u.group_l2_norms(part)?;
    let mut out = u.clone();
    for ((_, range), n) in part.blocks().zip(norms) {
        let f = shrink_factor(n, eta);
        for t in 0..u.channels() {
            for k in range.clone() {
                out.set(k, 0, t, f * u.get(k, 0, t));
            }
        }
    }
    Ok(out)
}

/// Proximal map of a regularizer plus the non-negative orthant indicator.
///
/// CR/CC use the one-sided threshold `max(u − η, 0)`. SM/GT clamp to the
/// orthant first and then apply the block shrinkage; shrinkage maps the
/// orthant into itself.
pub fn prox_nonneg(
    u: &Tensor3,
    eta: f64,
    mode: SparsityMode,
    partition: Option<&ColumnPartition>,
) -> Result<Tensor3> {
    match mode {
        SparsityMode::Cr | SparsityMode::Cc => Ok(u.map(|v| (v - eta).max(0.0))),
        SparsityMode::Sm => prox_tube_l2(&u.map(|v| v.max(0.0)), eta),
        SparsityMode::Gt => {
            let part = partition.ok_or_else(|| {
                Error::Config("GT sparsity requires a column partition".into())
            })?;
            prox_group_l2(&u.map(|v| v.max(0.0)), eta, part)
        }
    }
}
