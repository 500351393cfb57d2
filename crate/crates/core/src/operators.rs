//! Control operators on the pulled-down space `R^m`.
//!
//! Vectors live in `L^2` of the empirical measure on the support set, so the
//! inner product is `<a, b> = (1/m) a^T b`. Both operator kinds provided here
//! are self-adjoint for that inner product.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// `g -> b ∘ g`, operator norm `max |b_j|`.
    Diagonal,
    /// `g -> ((1/m) beta^T g) beta`, operator norm `(1/m) |beta|^2`.
    RankOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOperator {
    kind: OperatorKind,
    vector: DVector<f64>,
}

impl ControlOperator {
    /// Diagonal operator with unit operator norm (`max |b_j| = 1`).
    pub fn diagonal(b: DVector<f64>) -> Result<Self> {
        Self::new(OperatorKind::Diagonal, b)
    }

    /// Rank-one operator with unit operator norm (`(1/m) sum beta_j^2 = 1`).
    pub fn rank_one(beta: DVector<f64>) -> Result<Self> {
        Self::new(OperatorKind::RankOne, beta)
    }

    pub fn new(kind: OperatorKind, vector: DVector<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::input("operator vector must be non-empty"));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("operator vector has non-finite entries"));
        }
        let op = Self { kind, vector };
        let norm = op.operator_norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::input(format!(
                "{kind:?} operator must have unit norm, got {norm}"
            )));
        }
        Ok(op)
    }

    /// Rescales an arbitrary non-zero vector to a unit-norm operator.
    pub fn normalized(kind: OperatorKind, mut vector: DVector<f64>) -> Result<Self> {
        let m = vector.len() as f64;
        let norm = match kind {
            OperatorKind::Diagonal => vector.amax(),
            OperatorKind::RankOne => (vector.norm_squared() / m).sqrt(),
        };
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::input("cannot normalize a zero operator vector"));
        }
        vector /= norm;
        Self::new(kind, vector)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn operator_norm(&self) -> f64 {
        match self.kind {
            OperatorKind::Diagonal => self.vector.amax(),
            OperatorKind::RankOne => self.vector.norm_squared() / self.dim() as f64,
        }
    }

    pub fn apply(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), g.len())?;
        Ok(self.apply_unchecked(g))
    }

    /// Adjoint under `<a, b> = (1/m) a^T b`.
    pub fn apply_adjoint(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), g.len())?;
        // Both kinds are symmetric matrices, hence self-adjoint.
        Ok(self.apply_unchecked(g))
    }

    pub(crate) fn apply_unchecked(&self, g: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            OperatorKind::Diagonal => self.vector.component_mul(g),
            OperatorKind::RankOne => {
                let c = self.vector.dot(g) / self.dim() as f64;
                &self.vector * c
            }
        }
    }

    /// `out += scale * B g`.
    pub(crate) fn axpy_apply(&self, scale: f64, g: &DVector<f64>, out: &mut DVector<f64>) {
        match self.kind {
            OperatorKind::Diagonal => {
                for ((o, b), x) in out.iter_mut().zip(self.vector.iter()).zip(g.iter()) {
                    *o += scale * b * x;
                }
            }
            OperatorKind::RankOne => {
                let c = scale * self.vector.dot(g) / self.dim() as f64;
                out.axpy(c, &self.vector, 1.0);
            }
        }
    }
}

/// The ordered list of `q` operators `B_1..B_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorBank {
    ops: Vec<ControlOperator>,
}

impl OperatorBank {
    pub fn new(ops: Vec<ControlOperator>) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::input("operator bank needs at least one operator"))?;
        let m = first.dim();
        for op in &ops {
            check_dim(m, op.dim())?;
        }
        Ok(Self { ops })
    }

    pub fn q(&self) -> usize {
        self.ops.len()
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    pub fn ops(&self) -> &[ControlOperator] {
        &self.ops
    }

    /// `B[u_t] g = sum_i u_{i,t} B_i g`.
    pub fn apply_combination(&self, u_t: &[f64], g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.q(), u_t.len())?;
        check_dim(self.dim(), g.len())?;
        Ok(self.combination_unchecked(u_t, g))
    }

    /// `B*[u_t] g`.
    pub fn apply_adjoint_combination(&self, u_t: &[f64], g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.q(), u_t.len())?;
        check_dim(self.dim(), g.len())?;
        let mut out = DVector::zeros(self.dim());
        for (op, &u) in self.ops.iter().zip(u_t) {
            if u != 0.0 {
                out.axpy(u, &op.apply_adjoint(g)?, 1.0);
            }
        }
        Ok(out)
    }

    pub(crate) fn combination_unchecked(&self, u_t: &[f64], g: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (op, &u) in self.ops.iter().zip(u_t) {
            if u != 0.0 {
                op.axpy_apply(u, g, &mut out);
            }
        }
        out
    }
}

/// Default bank: a diagonal operator and (for `q = 2`) a rank-one operator,
/// built from seeded standard-normal draws and rescaled to unit norm.
pub fn make_operator_bank(seed: u64, m: usize, q: usize) -> Result<OperatorBank> {
    if m == 0 || q == 0 {
        return Err(Error::input("operator bank needs m >= 1 and q >= 1"));
    }
    if q > 2 {
        return Err(Error::input(format!(
            "default operator bank supports q <= 2 (diagonal, rank-one), got q = {q}; pass an explicit operator list"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [OperatorKind::Diagonal, OperatorKind::RankOne];
    let ops = kinds[..q]
        .iter()
        .map(|&kind| {
            let raw = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            ControlOperator::normalized(kind, raw)
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorBank::new(ops)
}
