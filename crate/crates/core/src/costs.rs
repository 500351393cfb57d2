//! Terminal and running costs and their pulled-down gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rkhs::{Points, SupportSet};

/// Observations `(x_i, y_i)` together with their cross-Gram matrix against
/// the support (`m x n`, entry `(j, i) = k(xi_j, x_i)`).
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Points,
    targets: DVector<f64>,
    cross_gram: DMatrix<f64>,
}

impl Batch {
    pub fn new(support: &SupportSet, inputs: Points, targets: DVector<f64>) -> Result<Self> {
        let cross_gram = support.cross_gram(&inputs)?;
        Self::from_parts(inputs, targets, cross_gram)
    }

    pub fn from_parts(inputs: Points, targets: DVector<f64>, cross_gram: DMatrix<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::input("batch must contain at least one observation"));
        }
        check_dim(inputs.len(), targets.len())?;
        check_dim(inputs.len(), cross_gram.ncols())?;
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("batch targets must be finite"));
        }
        Ok(Self {
            inputs,
            targets,
            cross_gram,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn cross_gram(&self) -> &DMatrix<f64> {
        &self.cross_gram
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalKind {
    SquaredError,
    CrossEntropy,
}

/// Intermediate targets `f_t` for the state-tracking running term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunningTarget {
    /// `f_t = y` at every time.
    Labels,
    /// `f_t = start + (t / T) (y - start)`.
    Ramp { start: f64 },
}

impl RunningTarget {
    pub fn values(&self, t: usize, horizon: usize, targets: &DVector<f64>) -> DVector<f64> {
        match *self {
            RunningTarget::Labels => targets.clone(),
            RunningTarget::Ramp { start } => {
                let a = t as f64 / horizon as f64;
                targets.map(|y| start + a * (y - start))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub terminal: TerminalKind,
    pub running_target: Option<RunningTarget>,
    pub control_penalty: f64,
}

impl CostModel {
    pub fn new(terminal: TerminalKind, running_target: Option<RunningTarget>, control_penalty: f64) -> Result<Self> {
        if !(control_penalty >= 0.0 && control_penalty.is_finite()) {
            return Err(Error::input(format!(
                "control penalty must be finite and nonnegative, got {control_penalty}"
            )));
        }
        Ok(Self {
            terminal,
            running_target,
            control_penalty,
        })
    }

    pub fn terminal_only(terminal: TerminalKind) -> Self {
        Self {
            terminal,
            running_target: None,
            control_penalty: 0.0,
        }
    }

    pub fn has_running_cost(&self) -> bool {
        self.running_target.is_some() || self.control_penalty > 0.0
    }
}

/// Running cost at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningTerms {
    pub value: f64,
    pub source: DVector<f64>,
    pub control_grad: DVector<f64>,
}

pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^h) - y h`, stable for large `|h|`.
pub fn logistic_loss(h: f64, y: f64) -> f64 {
    (-h.abs()).exp().ln_1p() + h.max(0.0) - y * h
}

pub(crate) fn check_binary(targets: &DVector<f64>) -> Result<()> {
    match targets.iter().position(|&y| y != 0.0 && y != 1.0) {
        Some(i) => Err(Error::input(format!(
            "cross-entropy needs 0/1 targets, row {i} has {}",
            targets[i]
        ))),
        None => Ok(()),
    }
}

pub fn terminal_cost(kind: TerminalKind, h_values: &DVector<f64>, batch: &Batch) -> Result<f64> {
    check_dim(batch.len(), h_values.len())?;
    let n = batch.len() as f64;
    let y = batch.targets();
    match kind {
        TerminalKind::SquaredError => Ok((h_values - y).norm_squared() / n),
        TerminalKind::CrossEntropy => {
            check_binary(y)?;
            Ok(h_values.iter().zip(y.iter()).map(|(&h, &t)| logistic_loss(h, t)).sum::<f64>() / n)
        }
    }
}

/// `g*_T`, the terminal-cost derivative pulled down to the support.
pub fn terminal_gradient_at_support(
    kind: TerminalKind,
    h_values: &DVector<f64>,
    batch: &Batch,
) -> Result<DVector<f64>> {
    check_dim(batch.len(), h_values.len())?;
    let n = batch.len() as f64;
    let y = batch.targets();
    let weights = match kind {
        TerminalKind::SquaredError => (h_values - y) * (2.0 / n),
        TerminalKind::CrossEntropy => {
            check_binary(y)?;
            DVector::from_iterator(
                y.len(),
                h_values.iter().zip(y.iter()).map(|(&h, &t)| (sigmoid(h) - t) / n),
            )
        }
    };
    Ok(batch.cross_gram() * weights)
}

/// Value, adjoint source and control gradient of the running cost at time `t`.
pub fn running_cost_and_grads(
    model: &CostModel,
    t: usize,
    horizon: usize,
    h_values: &DVector<f64>,
    u_t: &[f64],
    batch: &Batch,
) -> Result<RunningTerms> {
    check_dim(batch.len(), h_values.len())?;
    if t >= horizon {
        return Err(Error::input(format!("running cost time {t} outside 0..{horizon}")));
    }
    let m = batch.cross_gram().nrows();
    let lam = model.control_penalty;
    let u = DVector::from_column_slice(u_t);
    let mut value = lam * u.norm_squared();
    let control_grad = u * (2.0 * lam);
    let source = match &model.running_target {
        Some(target) => {
            let f_t = target.values(t, horizon, batch.targets());
            let r = h_values - f_t;
            let n = batch.len() as f64;
            value += r.norm_squared() / n;
            batch.cross_gram() * (r * (2.0 / n))
        }
        None => DVector::zeros(m),
    };
    Ok(RunningTerms {
        value,
        source,
        control_grad,
    })
}
