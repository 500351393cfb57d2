//! Control fitting: gradient descent, iterative regression and its enhanced
//! variant with a final unregularised linearised step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::costs::{
    check_binary, logistic_loss, running_cost_and_grads, sigmoid, terminal_cost, terminal_gradient_at_support, Batch,
    CostModel, TerminalKind,
};
use crate::data::stream_rng;
use crate::error::{check_dim, Error, Result};
use crate::operators::{ControlOperator, OperatorBank, OperatorKind};
use crate::propagation::{
    adjoint_solve, adjoint_transitions, control_jacobian_from_cross_gram, cost_gradient, forward_solve,
    sensitivity_weights, AdjointBundle, ControlMatrix, Trajectory,
};
use crate::rkhs::{KernelSpec, Points, SupportSet};

const STREAM_INIT: u64 = 11;
const STREAM_BATCH: u64 = 12;

/// Relative singular-value cutoff for unregularised least squares.
pub const MIN_NORM_CUTOFF: f64 = 1e-10;

const NEWTON_MAX_STEPS: usize = 50;
const NEWTON_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    GradientDescent,
    IterativeRegression,
    EnhancedIterativeRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Gradient descent also stops once the minibatch gradient sup-norm drops below this.
    pub grad_tol: Option<f64>,
    pub init_mean: f64,
    pub init_std: f64,
    pub seed: u64,
    /// Iterations between full-training-set cost checkpoints.
    pub check_every: usize,
}

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            learning_rate: 0.01,
            lambda: 1e-3,
            batch_size: 300,
            max_iterations: 100,
            rel_tol: 1e-8,
            grad_tol: None,
            init_mean: 0.0,
            init_std: 1.0,
            seed: 0,
            check_every: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.algorithm == Algorithm::GradientDescent && !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
        {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return bad(format!("rel_tol must be >= 0, got {}", self.rel_tol));
        }
        if self.batch_size == 0 || self.check_every == 0 {
            return bad("batch_size and check_every must be positive".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite() && self.init_mean.is_finite()) {
            return bad("init mean must be finite and init std finite and >= 0".into());
        }
        Ok(())
    }
}

/// Operators, support and initial value shared by every control.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub bank: OperatorBank,
    pub support: Arc<SupportSet>,
    pub offset: f64,
    pub horizon: usize,
}

impl ControlSystem {
    pub fn new(bank: OperatorBank, support: Arc<SupportSet>, offset: f64, horizon: usize) -> Result<Self> {
        check_dim(support.len(), bank.dim())?;
        if horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        if !offset.is_finite() {
            return Err(Error::input("offset must be finite"));
        }
        Ok(Self {
            bank,
            support,
            offset,
            horizon,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.support.kernel()
    }

    pub fn solve(&self, control: &ControlMatrix) -> Result<Trajectory> {
        forward_solve(control, &self.bank, &self.support, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    RelativeTolerance,
    GradientTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub control: ControlMatrix,
    pub initial_control: ControlMatrix,
    pub system: ControlSystem,
    pub trajectory: Trajectory,
    /// Cost on each iteration's minibatch, before that iteration's update.
    pub history: Vec<f64>,
    /// Full training cost after every `check_every` iterations.
    pub checkpoints: Vec<Checkpoint>,
    /// Sup-norm of each regression step.
    pub step_norms: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    weights: DVector<f64>,
}

impl FittedModel {
    fn from_control(
        system: ControlSystem,
        control: ControlMatrix,
        initial_control: ControlMatrix,
        iterations: usize,
    ) -> Result<Self> {
        let trajectory = system.solve(&control)?;
        let weights = trajectory.weights(trajectory.horizon())?;
        Ok(Self {
            control,
            initial_control,
            system,
            trajectory,
            history: Vec::new(),
            checkpoints: Vec::new(),
            step_norms: Vec::new(),
            iterations,
            stop_reason: StopReason::MaxIterations,
            weights,
        })
    }

    /// Kernel-expansion weights of `h_T`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        expansion_at(&self.system, &self.weights, x)
    }

    pub fn predict_points(&self, xs: &Points) -> Result<DVector<f64>> {
        expansion_at_points(&self.system, &self.weights, xs)
    }
}

fn expansion_at(system: &ControlSystem, w: &DVector<f64>, x: &[f64]) -> Result<f64> {
    let kappa = system.support.kernel_section(x)?;
    Ok(system.offset + kappa.dot(w) / system.support.len() as f64)
}

fn expansion_at_points(system: &ControlSystem, w: &DVector<f64>, xs: &Points) -> Result<DVector<f64>> {
    let cross = system.support.cross_gram(xs)?;
    Ok(expansion_from_cross_gram(system, w, &cross))
}

fn expansion_from_cross_gram(system: &ControlSystem, w: &DVector<f64>, cross: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::from_element(cross.ncols(), system.offset);
    out.gemv_tr(1.0 / system.support.len() as f64, cross, w, 1.0);
    out
}

/// Terminal costs on the final minibatch of the enhanced algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalStep {
    pub cost_before: f64,
    pub cost_after: f64,
}

/// `h_T(u) + D_u h_T(u) beta`.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub base: FittedModel,
    pub beta: DMatrix<f64>,
    pub adjoint: AdjointBundle,
    pub final_step: Option<FinalStep>,
    sensitivity: DMatrix<f64>,
    weights: DVector<f64>,
}

impl LinearizedModel {
    pub fn new(base: FittedModel, beta: DMatrix<f64>) -> Result<Self> {
        let adjoint = adjoint_transitions(&base.control, &base.system.bank, &base.system.support)?;
        Self::with_adjoint(base, beta, adjoint)
    }

    fn with_adjoint(base: FittedModel, beta: DMatrix<f64>, adjoint: AdjointBundle) -> Result<Self> {
        if beta.shape() != base.control.entries().shape() {
            return Err(Error::input(format!(
                "beta has shape {:?}, control has {:?}",
                beta.shape(),
                base.control.entries().shape()
            )));
        }
        let horizon = base.trajectory.horizon();
        let sensitivity = sensitivity_weights(&base.trajectory, &adjoint, &base.system.bank, horizon)?;
        let beta_flat = DVector::from_column_slice(beta.as_slice());
        let weights = base.weights() + &sensitivity * beta_flat;
        Ok(Self {
            base,
            beta,
            adjoint,
            final_step: None,
            sensitivity,
            weights,
        })
    }

    /// Same base model, different linearisation step.
    pub fn with_beta(&self, beta: DMatrix<f64>) -> Result<Self> {
        Self::with_adjoint(self.base.clone(), beta, self.adjoint.clone())
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `W` with `D_{u_{i,s}} h_T(x) = (1/m) kappa(x)^T W[:, s q + i]`.
    pub fn sensitivity(&self) -> &DMatrix<f64> {
        &self.sensitivity
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        expansion_at(&self.base.system, &self.weights, x)
    }

    pub fn predict_points(&self, xs: &Points) -> Result<DVector<f64>> {
        expansion_at_points(&self.base.system, &self.weights, xs)
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Fitted(FittedModel),
    Linearized(LinearizedModel),
}

impl Model {
    pub fn base(&self) -> &FittedModel {
        match self {
            Model::Fitted(m) => m,
            Model::Linearized(l) => &l.base,
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        match self {
            Model::Fitted(m) => m.weights(),
            Model::Linearized(l) => l.weights(),
        }
    }

    pub fn dim(&self) -> usize {
        self.base().system.support.dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        expansion_at(&self.base().system, self.weights(), x)
    }

    pub fn predict_points(&self, xs: &Points) -> Result<DVector<f64>> {
        expansion_at_points(&self.base().system, self.weights(), xs)
    }
}

pub fn predict(model: &Model, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

fn fitting_error(iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Fitting {
        iteration,
        source: Box::new(e),
    }
}

/// Total cost `F(h_T) + sum_t L_t(h_t, u_t)` of a solved trajectory.
pub fn trajectory_cost(traj: &Trajectory, cost: &CostModel, batch: &Batch) -> Result<f64> {
    let horizon = traj.horizon();
    let mut value = terminal_cost(cost.terminal, &traj.values_at(batch.cross_gram(), horizon)?, batch)?;
    if cost.has_running_cost() {
        for t in 0..horizon {
            let h = if cost.running_target.is_some() {
                traj.values_at(batch.cross_gram(), t)?
            } else {
                DVector::zeros(batch.len())
            };
            value += running_cost_and_grads(cost, t, horizon, &h, traj.control().column(t), batch)?.value;
        }
    }
    Ok(value)
}

pub fn evaluate_cost(control: &ControlMatrix, system: &ControlSystem, cost: &CostModel, batch: &Batch) -> Result<f64> {
    trajectory_cost(&system.solve(control)?, cost, batch)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DMatrix<f64>,
    pub trajectory: Trajectory,
}

/// Cost and its exact gradient in the control via one forward and one adjoint solve.
pub fn cost_and_gradient(
    control: &ControlMatrix,
    system: &ControlSystem,
    cost: &CostModel,
    batch: &Batch,
) -> Result<Evaluation> {
    let traj = system.solve(control)?;
    let horizon = traj.horizon();
    let cross = batch.cross_gram();
    let h_t = traj.values_at(cross, horizon)?;
    let mut value = terminal_cost(cost.terminal, &h_t, batch)?;
    let terminal = terminal_gradient_at_support(cost.terminal, &h_t, batch)?;

    let mut sources = None;
    let mut control_grad = None;
    if cost.has_running_cost() {
        let m = system.support.len();
        let mut src = Vec::with_capacity(horizon);
        let mut cg = DMatrix::zeros(control.q(), horizon);
        for t in 0..horizon {
            let h = if cost.running_target.is_some() {
                traj.values_at(cross, t)?
            } else {
                DVector::zeros(batch.len())
            };
            let terms = running_cost_and_grads(cost, t, horizon, &h, control.column(t), batch)?;
            value += terms.value;
            cg.set_column(t, &terms.control_grad);
            src.push(if cost.running_target.is_some() { terms.source } else { DVector::zeros(m) });
        }
        sources = Some(src);
        control_grad = Some(cg);
    }
    let bundle = adjoint_transitions(control, &system.bank, &system.support)?;
    let costate = adjoint_solve(&bundle, &terminal, sources.as_deref())?;
    let gradient = cost_gradient(&traj, &costate, &system.bank, control_grad.as_ref())?;
    Ok(Evaluation {
        value,
        gradient,
        trajectory: traj,
    })
}

/// `u^(0)` with i.i.d. `N(mean, std^2)` entries.
pub fn initial_control(q: usize, horizon: usize, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Result<ControlMatrix> {
    let flat: Vec<f64> = (0..q * horizon)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + std * z
        })
        .collect();
    ControlMatrix::from_flat(q, horizon, &flat)
}

/// Uniform minibatches with replacement; batches at least as large as the
/// training set are the whole set in order.
struct Sampler {
    rng: ChaCha8Rng,
    size: usize,
}

impl Sampler {
    fn new(seed: u64, size: usize) -> Self {
        Self {
            rng: stream_rng(seed, STREAM_BATCH),
            size,
        }
    }

    fn next(&mut self, full: &Batch) -> Result<Batch> {
        let n = full.len();
        if self.size >= n {
            return Ok(full.clone());
        }
        let idx: Vec<usize> = (0..self.size).map(|_| self.rng.random_range(0..n)).collect();
        Batch::from_parts(
            full.inputs().select(&idx),
            DVector::from_iterator(idx.len(), idx.iter().map(|&i| full.targets()[i])),
            full.cross_gram().select_columns(idx.iter()),
        )
    }
}

fn check_inputs(config: &OptimizerConfig, cost: &CostModel, train: &Batch, system: &ControlSystem) -> Result<()> {
    config.validate()?;
    check_dim(system.support.len(), train.cross_gram().nrows())?;
    if cost.terminal == TerminalKind::CrossEntropy {
        check_binary(train.targets())?;
    }
    Ok(())
}

fn start_control(config: &OptimizerConfig, system: &ControlSystem) -> Result<ControlMatrix> {
    let mut rng = stream_rng(config.seed, STREAM_INIT);
    initial_control(system.bank.q(), system.horizon, config.init_mean, config.init_std, &mut rng)
}

/// Records a full-training checkpoint and reports whether the relative change
/// against the previous one fell below `rel_tol`.
fn checkpoint(
    checkpoints: &mut Vec<Checkpoint>,
    iteration: usize,
    control: &ControlMatrix,
    system: &ControlSystem,
    cost: &CostModel,
    train: &Batch,
    rel_tol: f64,
) -> Result<bool> {
    let c = evaluate_cost(control, system, cost, train)?;
    let converged = checkpoints
        .last()
        .is_some_and(|prev| (prev.cost - c).abs() / prev.cost.abs().max(f64::MIN_POSITIVE) < rel_tol);
    checkpoints.push(Checkpoint { iteration, cost: c });
    Ok(converged)
}

/// Minibatch gradient descent `u <- u - alpha DE(u)`.
pub fn fit_sgd(config: &OptimizerConfig, cost: &CostModel, train: &Batch, system: &ControlSystem) -> Result<FittedModel> {
    check_inputs(config, cost, train, system)?;
    let u0 = start_control(config, system)?;
    let mut u = u0.clone();
    let mut sampler = Sampler::new(config.seed, config.batch_size);
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut done = 0;
    for iter in 0..config.max_iterations {
        let batch = sampler.next(train)?;
        let eval = cost_and_gradient(&u, system, cost, &batch).map_err(fitting_error(iter))?;
        history.push(eval.value);
        let gmax = eval.gradient.amax();
        if !gmax.is_finite() {
            return Err(fitting_error(iter)(Error::Divergence {
                step: system.horizon,
                norm: gmax,
            }));
        }
        if config.grad_tol.is_some_and(|tol| gmax < tol) {
            stop = StopReason::GradientTolerance;
            break;
        }
        u = ControlMatrix::new(u.entries() - eval.gradient * config.learning_rate).map_err(fitting_error(iter))?;
        done = iter + 1;
        if done % config.check_every == 0
            && checkpoint(&mut checkpoints, done, &u, system, cost, train, config.rel_tol).map_err(fitting_error(iter))?
        {
            stop = StopReason::RelativeTolerance;
            break;
        }
    }
    let mut model = FittedModel::from_control(system.clone(), u, u0, done).map_err(fitting_error(done))?;
    model.history = history;
    model.checkpoints = checkpoints;
    model.stop_reason = stop;
    Ok(model)
}

/// Stacked quadratic terms `(1/n) ||c + A beta||^2` of the regression subproblem.
struct Quadratic {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

fn vstack(parts: &[(DMatrix<f64>, DVector<f64>)], p: usize) -> Option<Quadratic> {
    if parts.is_empty() {
        return None;
    }
    let rows: usize = parts.iter().map(|(a, _)| a.nrows()).sum();
    let mut a = DMatrix::zeros(rows, p);
    let mut c = DVector::zeros(rows);
    let mut r = 0;
    for (pa, pc) in parts {
        a.rows_mut(r, pa.nrows()).copy_from(pa);
        c.rows_mut(r, pc.len()).copy_from(pc);
        r += pa.nrows();
    }
    Some(Quadratic { a, c })
}

/// Solves the linearised subproblem at the current trajectory; returns the
/// step and the terminal cost before and after it.
fn regression_step(
    traj: &Trajectory,
    bundle: &AdjointBundle,
    system: &ControlSystem,
    cost: &CostModel,
    batch: &Batch,
    lambda: f64,
) -> Result<(DVector<f64>, FinalStep)> {
    let horizon = traj.horizon();
    let q = system.bank.q();
    let p = q * horizon;
    let n = batch.len() as f64;
    let cross = batch.cross_gram();
    let jt = control_jacobian_from_cross_gram(traj, bundle, &system.bank, cross, horizon)?;
    let ht = traj.values_at(cross, horizon)?;
    let y = batch.targets();

    let mut parts = Vec::new();
    if cost.terminal == TerminalKind::SquaredError {
        parts.push((jt.clone(), &ht - y));
    }
    if let Some(target) = &cost.running_target {
        for t in 1..horizon {
            let jac = control_jacobian_from_cross_gram(traj, bundle, &system.bank, cross, t)?;
            let r = traj.values_at(cross, t)? - target.values(t, horizon, y);
            parts.push((jac, r));
        }
    }
    if cost.control_penalty > 0.0 {
        let w = (n * cost.control_penalty).sqrt();
        let u = DVector::from_column_slice(traj.control().as_flat());
        parts.push((DMatrix::identity(p, p) * w, u * w));
    }
    let quad = vstack(&parts, p);

    let beta = match cost.terminal {
        TerminalKind::SquaredError => {
            let quad = quad.expect("squared error always contributes rows");
            ridge_scaled(&quad.a, &quad.c, lambda, n, MIN_NORM_CUTOFF)?
        }
        TerminalKind::CrossEntropy => logistic_newton(&jt, &ht, y, lambda, quad.as_ref(), n)?,
    };
    let after = &ht + &jt * &beta;
    let step = FinalStep {
        cost_before: terminal_cost(cost.terminal, &ht, batch)?,
        cost_after: terminal_cost(cost.terminal, &after, batch)?,
    };
    Ok((beta, step))
}

struct RegressionRun {
    model: FittedModel,
    sampler: Sampler,
}

fn run_regression(
    config: &OptimizerConfig,
    cost: &CostModel,
    train: &Batch,
    system: &ControlSystem,
) -> Result<RegressionRun> {
    check_inputs(config, cost, train, system)?;
    let u0 = start_control(config, system)?;
    let mut u = u0.clone();
    let mut sampler = Sampler::new(config.seed, config.batch_size);
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step_norms = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut done = 0;
    for iter in 0..config.max_iterations {
        let mut step = || -> Result<(f64, DVector<f64>)> {
            let batch = sampler.next(train)?;
            let traj = system.solve(&u)?;
            let value = trajectory_cost(&traj, cost, &batch)?;
            let bundle = adjoint_transitions(&u, &system.bank, &system.support)?;
            let (beta, _) = regression_step(&traj, &bundle, system, cost, &batch, config.lambda)?;
            Ok((value, beta))
        };
        let (value, beta) = step().map_err(fitting_error(iter))?;
        history.push(value);
        step_norms.push(beta.amax());
        u = u.shifted(beta.as_slice()).map_err(fitting_error(iter))?;
        done = iter + 1;
        if done % config.check_every == 0
            && checkpoint(&mut checkpoints, done, &u, system, cost, train, config.rel_tol).map_err(fitting_error(iter))?
        {
            stop = StopReason::RelativeTolerance;
            break;
        }
    }
    let mut model = FittedModel::from_control(system.clone(), u, u0, done).map_err(fitting_error(done))?;
    model.history = history;
    model.checkpoints = checkpoints;
    model.step_norms = step_norms;
    model.stop_reason = stop;
    Ok(RegressionRun { model, sampler })
}

/// Iterative regression: `u <- u + beta` with `beta` from the ridge-regularised
/// linearised subproblem on a fresh minibatch.
pub fn fit_iterative_regression(
    config: &OptimizerConfig,
    cost: &CostModel,
    train: &Batch,
    system: &ControlSystem,
) -> Result<FittedModel> {
    Ok(run_regression(config, cost, train, system)?.model)
}

/// Iterative regression followed by one unregularised step, kept as a
/// linearisation instead of being applied to the control.
pub fn fit_enhanced(
    config: &OptimizerConfig,
    cost: &CostModel,
    train: &Batch,
    system: &ControlSystem,
) -> Result<LinearizedModel> {
    let RegressionRun { model, mut sampler } = run_regression(config, cost, train, system)?;
    let iteration = model.iterations;
    let mut finish = || -> Result<LinearizedModel> {
        let batch = sampler.next(train)?;
        let bundle = adjoint_transitions(&model.control, &system.bank, &system.support)?;
        let (beta, step) = regression_step(&model.trajectory, &bundle, system, cost, &batch, 0.0)?;
        let beta = DMatrix::from_column_slice(system.bank.q(), system.horizon, beta.as_slice());
        let mut lin = LinearizedModel::with_adjoint(model.clone(), beta, bundle)?;
        lin.final_step = Some(step);
        Ok(lin)
    };
    finish().map_err(fitting_error(iteration))
}

/// Dispatches on `config.algorithm`.
pub fn fit(config: &OptimizerConfig, cost: &CostModel, train: &Batch, system: &ControlSystem) -> Result<Model> {
    match config.algorithm {
        Algorithm::GradientDescent => fit_sgd(config, cost, train, system).map(Model::Fitted),
        Algorithm::IterativeRegression => fit_iterative_regression(config, cost, train, system).map(Model::Fitted),
        Algorithm::EnhancedIterativeRegression => fit_enhanced(config, cost, train, system).map(Model::Linearized),
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input(format!("{name} has non-finite entries")))
    }
}

/// Minimum-norm solution of `a x = b`, treating singular values below
/// `rel_cutoff * sigma_max` as zero.
pub fn min_norm_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> Result<DVector<f64>> {
    check_dim(a.nrows(), b.len())?;
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    svd.solve(b, rel_cutoff * smax).map_err(|e| Error::input(e.to_string()))
}

/// Minimises `(1/n) ||c + A beta||^2 + lambda ||beta||^2` for an explicit `n`.
fn ridge_scaled(a: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, n: f64, cutoff: f64) -> Result<DVector<f64>> {
    if lambda == 0.0 {
        return min_norm_least_squares(a, &-c, cutoff);
    }
    let p = a.ncols();
    let gram = a.tr_mul(a) / n + DMatrix::identity(p, p) * lambda;
    let rhs = -a.tr_mul(c) / n;
    match gram.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => min_norm_least_squares(&gram, &rhs, cutoff),
    }
}

/// `argmin_beta (1/n) ||residual + J beta||^2 + lambda ||beta||^2` with `n` the
/// number of rows; minimum-norm when `lambda = 0` and `J` is rank deficient.
pub fn solve_ridge_subproblem(j: &DMatrix<f64>, residual: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_dim(j.nrows(), residual.len())?;
    check_finite("jacobian", j.as_slice())?;
    check_finite("residual", residual.as_slice())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if j.nrows() == 0 {
        return Err(Error::input("subproblem needs at least one row"));
    }
    ridge_scaled(j, residual, lambda, j.nrows() as f64, MIN_NORM_CUTOFF)
}

fn logistic_newton(
    j: &DMatrix<f64>,
    offsets: &DVector<f64>,
    labels: &DVector<f64>,
    lambda: f64,
    quad: Option<&Quadratic>,
    n: f64,
) -> Result<DVector<f64>> {
    let p = j.ncols();
    let objective = |beta: &DVector<f64>| {
        let z = offsets + j * beta;
        let mut f = z.iter().zip(labels.iter()).map(|(&z, &y)| logistic_loss(z, y)).sum::<f64>() / n;
        if let Some(qd) = quad {
            f += (&qd.c + &qd.a * beta).norm_squared() / n;
        }
        f + lambda * beta.norm_squared()
    };
    let mut beta = DVector::zeros(p);
    for _ in 0..NEWTON_MAX_STEPS {
        let z = offsets + j * &beta;
        let s = z.map(sigmoid);
        let mut grad = j.tr_mul(&(&s - labels)) / n + &beta * (2.0 * lambda);
        let curv = DVector::from_iterator(s.len(), s.iter().map(|&v| v * (1.0 - v) / n));
        let mut weighted = j.clone();
        for (mut row, &c) in weighted.row_iter_mut().zip(curv.iter()) {
            row *= c;
        }
        let mut hess = j.tr_mul(&weighted) + DMatrix::identity(p, p) * (2.0 * lambda);
        if let Some(qd) = quad {
            grad += qd.a.tr_mul(&(&qd.c + &qd.a * &beta)) * (2.0 / n);
            hess += qd.a.tr_mul(&qd.a) * (2.0 / n);
        }
        if grad.amax() < NEWTON_GRAD_TOL {
            break;
        }
        let mut dir = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&-&grad),
            None => min_norm_least_squares(&hess, &-&grad, 1e-12)?,
        };
        let mut slope = grad.dot(&dir);
        if slope.is_nan() || slope >= 0.0 {
            dir = -&grad;
            slope = -grad.norm_squared();
        }
        let f0 = objective(&beta);
        let mut t = 1.0;
        while objective(&(&beta + &dir * t)) > f0 + 1e-4 * t * slope && t > 1e-12 {
            t *= 0.5;
        }
        let next = &beta + &dir * t;
        if next == beta {
            break;
        }
        beta = next;
    }
    check_finite("logistic step", beta.as_slice())?;
    Ok(beta)
}

/// `argmin_beta (1/n) sum_i [log(1 + e^{a_i + J_i beta}) - y_i (a_i + J_i beta)] + lambda ||beta||^2`
/// by damped Newton iterations.
pub fn solve_logistic_subproblem(
    j: &DMatrix<f64>,
    offsets: &DVector<f64>,
    labels: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_dim(j.nrows(), offsets.len())?;
    check_dim(j.nrows(), labels.len())?;
    check_finite("jacobian", j.as_slice())?;
    check_finite("offsets", offsets.as_slice())?;
    check_binary(labels)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if j.nrows() == 0 {
        return Err(Error::input("subproblem needs at least one row"));
    }
    logistic_newton(j, offsets, labels, lambda, None, j.nrows() as f64)
}

/// Plain-data form of a model: everything needed to rebuild its predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kernel_scale: f64,
    pub offset: f64,
    pub support: Points,
    pub operators: Vec<OperatorSpec>,
    pub q: usize,
    pub horizon: usize,
    /// Column-major control, entry `(i, t)` at `t * q + i`.
    pub control: Vec<f64>,
    /// Linearisation step in the same layout as `control`.
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub vector: Vec<f64>,
}

impl Model {
    pub fn to_spec(&self) -> ModelSpec {
        let base = self.base();
        let sys = &base.system;
        ModelSpec {
            kernel_scale: sys.kernel().scale(),
            offset: sys.offset,
            support: sys.support.points().clone(),
            operators: sys
                .bank
                .ops()
                .iter()
                .map(|op| OperatorSpec {
                    kind: op.kind(),
                    vector: op.vector().as_slice().to_vec(),
                })
                .collect(),
            q: base.control.q(),
            horizon: base.control.horizon(),
            control: base.control.as_flat().to_vec(),
            beta: match self {
                Model::Fitted(_) => None,
                Model::Linearized(l) => Some(l.beta.as_slice().to_vec()),
            },
        }
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let support = Points::new(spec.support.dim(), spec.support.as_flat().to_vec())?;
        let support = Arc::new(SupportSet::new(support, KernelSpec::new(spec.kernel_scale)?)?);
        let ops = spec
            .operators
            .iter()
            .map(|o| ControlOperator::new(o.kind, DVector::from_vec(o.vector.clone())))
            .collect::<Result<Vec<_>>>()?;
        let bank = OperatorBank::new(ops)?;
        let system = ControlSystem::new(bank, support, spec.offset, spec.horizon)?;
        let control = ControlMatrix::from_flat(spec.q, spec.horizon, &spec.control)?;
        let base = FittedModel::from_control(system, control.clone(), control, 0)?;
        match &spec.beta {
            None => Ok(Model::Fitted(base)),
            Some(b) => {
                check_dim(spec.q * spec.horizon, b.len())?;
                let beta = DMatrix::from_column_slice(spec.q, spec.horizon, b);
                Ok(Model::Linearized(LinearizedModel::new(base, beta)?))
            }
        }
    }
}
