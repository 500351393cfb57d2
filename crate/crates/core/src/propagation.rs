//! Forward and adjoint propagation of the pulled-down control system.
//!
//! With `K` the support Gram matrix and `B[u_t] = sum_i u_{i,t} B_i`, the
//! state `g_t in R^m` (values of `h_t` on the support) follows
//!
//! ```text
//! g_{t+1} = g_t + (1/m) K B[u_t] g_t,        g_0 = offset * 1
//! ```
//!
//! and the costate runs backwards through the transitions
//! `M_s = I + (1/m) K B*[u_s]`:
//!
//! ```text
//! g*_s = M_s g*_{s+1} + l_s,                 g*_T = terminal
//! ```
//!
//! where `l_s` is the pulled-down running-cost gradient at time `s`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::OperatorBank;
use crate::rkhs::{Points, RkhsFunction, SupportSet};

/// States with a sup-norm above this abort the forward solve.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// The `q x T` control grid; column `t` is `u_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMatrix {
    entries: DMatrix<f64>,
}

impl ControlMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::input(format!(
                "control matrix must be at least 1x1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("control matrix has non-finite entries"));
        }
        Ok(Self { entries })
    }

    pub fn zeros(q: usize, horizon: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(q, horizon))
    }

    /// Builds a control from its column-major flattening (index `t * q + i`).
    pub fn from_flat(q: usize, horizon: usize, flat: &[f64]) -> Result<Self> {
        check_dim(q * horizon, flat.len())?;
        Self::new(DMatrix::from_column_slice(q, horizon, flat))
    }

    pub fn q(&self) -> usize {
        self.entries.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `u_t` as a slice of length `q`.
    pub fn column(&self, t: usize) -> &[f64] {
        let q = self.q();
        &self.entries.as_slice()[t * q..(t + 1) * q]
    }

    /// Column-major flattening; entry `(i, t)` sits at `t * q + i`.
    pub fn as_flat(&self) -> &[f64] {
        self.entries.as_slice()
    }

    /// `self + step`, where `step` uses the same flattening as [`Self::as_flat`].
    pub fn shifted(&self, step: &[f64]) -> Result<Self> {
        check_dim(self.entries.len(), step.len())?;
        let flat: Vec<f64> = self.as_flat().iter().zip(step).map(|(u, b)| u + b).collect();
        Self::from_flat(self.q(), self.horizon(), &flat)
    }
}

/// Solution of the forward system for one control.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    driven: Vec<DVector<f64>>,
    control: ControlMatrix,
    support: Arc<SupportSet>,
    offset: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.driven.len()
    }

    /// `g_0..g_T`.
    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// `B[u_t] g_t` for `t = 0..T-1`.
    pub fn driven(&self) -> &[DVector<f64>] {
        &self.driven
    }

    pub fn control(&self) -> &ControlMatrix {
        &self.control
    }

    pub fn support(&self) -> &Arc<SupportSet> {
        &self.support
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Kernel-expansion weights of `h_t`: `sum_{s<t} B[u_s] g_s`.
    pub fn weights(&self, t: usize) -> Result<DVector<f64>> {
        if t > self.horizon() {
            return Err(Error::input(format!(
                "time index {t} outside 0..={}",
                self.horizon()
            )));
        }
        let mut w = DVector::zeros(self.support.len());
        for d in &self.driven[..t] {
            w += d;
        }
        Ok(w)
    }

    /// Values `h_t(x_i)` at every column of an `m x n` cross-Gram matrix.
    pub fn values_at(&self, cross_gram: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        h_function(self, t)?.eval_cross_gram(cross_gram)
    }
}

pub fn forward_solve(
    control: &ControlMatrix,
    bank: &OperatorBank,
    support: &Arc<SupportSet>,
    offset: f64,
) -> Result<Trajectory> {
    check_dim(bank.q(), control.q())?;
    check_dim(support.len(), bank.dim())?;
    if !offset.is_finite() {
        return Err(Error::input("initial offset must be finite"));
    }
    let m = support.len();
    let inv_m = 1.0 / m as f64;
    let gram = support.gram();
    let horizon = control.horizon();

    let mut states = Vec::with_capacity(horizon + 1);
    let mut driven = Vec::with_capacity(horizon);
    states.push(DVector::from_element(m, offset));
    for t in 0..horizon {
        let g = &states[t];
        let d = bank.combination_unchecked(control.column(t), g);
        let mut next = g.clone();
        next.gemv(inv_m, gram, &d, 1.0);
        let norm = next.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step: t + 1, norm });
        }
        driven.push(d);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        driven,
        control: control.clone(),
        support: Arc::clone(support),
        offset,
    })
}

/// `h_t` as a kernel expansion over the support.
pub fn h_function(traj: &Trajectory, t: usize) -> Result<RkhsFunction> {
    let w = traj.weights(t)?;
    RkhsFunction::new(traj.offset, w, Arc::clone(&traj.support))
}

/// Backward transitions `M_s` and, on demand, the products
/// `P_s = M_s M_{s+1} ... M_{T-1}` (with `P_T = I`).
#[derive(Debug, Clone)]
pub struct AdjointBundle {
    transitions: Vec<DMatrix<f64>>,
    products: OnceLock<Vec<DMatrix<f64>>>,
}

impl AdjointBundle {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn dim(&self) -> usize {
        self.transitions.first().map_or(0, |m| m.nrows())
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    /// `P_0..P_T`, computed right-to-left on first access.
    pub fn terminal_products(&self) -> &[DMatrix<f64>] {
        self.products.get_or_init(|| {
            let horizon = self.horizon();
            let m = self.dim();
            let mut out = vec![DMatrix::identity(m, m); horizon + 1];
            for s in (0..horizon).rev() {
                out[s] = &self.transitions[s] * &out[s + 1];
            }
            out
        })
    }
}

pub fn adjoint_transitions(
    control: &ControlMatrix,
    bank: &OperatorBank,
    support: &SupportSet,
) -> Result<AdjointBundle> {
    check_dim(bank.q(), control.q())?;
    check_dim(support.len(), bank.dim())?;
    let m = support.len();
    let inv_m = 1.0 / m as f64;
    let gram = support.gram();
    let transitions = (0..control.horizon())
        .map(|s| {
            let u = control.column(s);
            // As a matrix, B* = B^T, so row i of K B* is (B K_{:,i})^T.
            let mut out = DMatrix::identity(m, m);
            for i in 0..m {
                let col: DVector<f64> = gram.column(i).into_owned();
                let row = bank.combination_unchecked(u, &col);
                for j in 0..m {
                    out[(i, j)] += inv_m * row[j];
                }
            }
            out
        })
        .collect();
    Ok(AdjointBundle {
        transitions,
        products: OnceLock::new(),
    })
}

/// `g*_0..g*_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub costates: Vec<DVector<f64>>,
}

/// Backward recursion `g*_s = M_s g*_{s+1} + l_s`. Pass `None` for zero sources.
pub fn adjoint_solve(
    bundle: &AdjointBundle,
    terminal: &DVector<f64>,
    sources: Option<&[DVector<f64>]>,
) -> Result<CostateTrajectory> {
    let horizon = bundle.horizon();
    check_dim(bundle.dim(), terminal.len())?;
    if let Some(src) = sources {
        check_dim(horizon, src.len())?;
        for l in src {
            check_dim(terminal.len(), l.len())?;
        }
    }
    let mut costates = vec![DVector::zeros(terminal.len()); horizon + 1];
    costates[horizon] = terminal.clone();
    for s in (0..horizon).rev() {
        let mut next = &bundle.transitions[s] * &costates[s + 1];
        if let Some(src) = sources {
            next += &src[s];
        }
        costates[s] = next;
    }
    Ok(CostateTrajectory { costates })
}

/// Source-free costates through the cached products: `g*_t = P_t g*_T`.
pub fn adjoint_solve_via_products(
    bundle: &AdjointBundle,
    terminal: &DVector<f64>,
) -> Result<CostateTrajectory> {
    check_dim(bundle.dim(), terminal.len())?;
    let costates = bundle
        .terminal_products()
        .iter()
        .map(|p| p * terminal)
        .collect();
    Ok(CostateTrajectory { costates })
}

/// `DE(u)_{i,t} = (1/m) g*_{t+1}^T B_i g_t + running_control_grad[i, t]`.
pub fn cost_gradient(
    traj: &Trajectory,
    costate: &CostateTrajectory,
    bank: &OperatorBank,
    running_control_grad: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let horizon = traj.horizon();
    check_dim(horizon + 1, costate.costates.len())?;
    check_dim(bank.q(), traj.control.q())?;
    if let Some(rc) = running_control_grad {
        if rc.shape() != (bank.q(), horizon) {
            return Err(Error::input(format!(
                "running control gradient has shape {:?}, expected ({}, {horizon})",
                rc.shape(),
                bank.q()
            )));
        }
    }
    let inv_m = 1.0 / traj.support.len() as f64;
    let mut grad = DMatrix::zeros(bank.q(), horizon);
    for t in 0..horizon {
        let adj = &costate.costates[t + 1];
        for (i, op) in bank.ops().iter().enumerate() {
            grad[(i, t)] = inv_m * adj.dot(&op.apply_unchecked(&traj.states[t]));
        }
    }
    if let Some(rc) = running_control_grad {
        grad += rc;
    }
    Ok(grad)
}

/// Weights `W` (`m x qT`) such that `D_{u_{i,s}} h_t(x) = (1/m) kappa(x)^T W[:, s q + i]`.
///
/// Column `(i, s)` equals `(M_{s+1} ... M_{t-1})^T B_i g_s`, i.e. the
/// costate with terminal `kappa(x)` contracted against `B_i g_s` before the
/// query point is known. Columns with `s >= t` are zero.
pub fn sensitivity_weights(
    traj: &Trajectory,
    bundle: &AdjointBundle,
    bank: &OperatorBank,
    t: usize,
) -> Result<DMatrix<f64>> {
    let horizon = traj.horizon();
    if t > horizon {
        return Err(Error::input(format!("time index {t} outside 0..={horizon}")));
    }
    check_dim(horizon, bundle.horizon())?;
    check_dim(traj.support.len(), bundle.dim())?;
    let q = bank.q();
    let m = traj.support.len();
    let mut out = DMatrix::zeros(m, q * horizon);
    if t == 0 {
        return Ok(out);
    }
    // Sweep r = 0..t-1: push the columns for s < r through M_r^T, then add
    // the fresh columns B_i g_r. Each column s ends up with
    // M_{t-1}^T ... M_{s+1}^T B_i g_s.
    let mut active = DMatrix::<f64>::zeros(m, 0);
    for r in 0..t {
        if active.ncols() > 0 {
            active = bundle.transitions[r].tr_mul(&active);
        }
        let base = active.ncols();
        active = active.resize_horizontally(base + q, 0.0);
        for (i, op) in bank.ops().iter().enumerate() {
            active.set_column(base + i, &op.apply_unchecked(&traj.states[r]));
        }
    }
    out.columns_mut(0, q * t).copy_from(&active);
    Ok(out)
}

/// `n x qT` matrix of `D_{u_{i,s}} h_t(x_k)` for an `m x n` cross-Gram matrix.
pub fn control_jacobian_from_cross_gram(
    traj: &Trajectory,
    bundle: &AdjointBundle,
    bank: &OperatorBank,
    cross_gram: &DMatrix<f64>,
    t: usize,
) -> Result<DMatrix<f64>> {
    check_dim(traj.support.len(), cross_gram.nrows())?;
    let w = sensitivity_weights(traj, bundle, bank, t)?;
    Ok(cross_gram.tr_mul(&w) / traj.support.len() as f64)
}

pub fn control_jacobian(
    traj: &Trajectory,
    bundle: &AdjointBundle,
    bank: &OperatorBank,
    query_points: &Points,
    t: usize,
) -> Result<DMatrix<f64>> {
    let cross = traj.support.cross_gram(query_points)?;
    control_jacobian_from_cross_gram(traj, bundle, bank, &cross, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_operator_bank, ControlOperator};
    use crate::rkhs::{eval_function, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        support: Arc<SupportSet>,
        bank: OperatorBank,
        control: ControlMatrix,
    }

    fn random_instance(seed: u64, m: usize, horizon: usize, d: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Points::new(d, (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let support = Arc::new(SupportSet::new(pts, KernelSpec::new(1.0).unwrap()).unwrap());
        let bank = make_operator_bank(seed + 1, m, 2).unwrap();
        let flat: Vec<f64> = (0..2 * horizon).map(|_| rng.random_range(-1.0..1.0)).collect();
        let control = ControlMatrix::from_flat(2, horizon, &flat).unwrap();
        Instance { support, bank, control }
    }

    fn scalar_instance() -> Instance {
        let pts = Points::from_scalars(&[0.0]).unwrap();
        let support = Arc::new(SupportSet::new(pts, KernelSpec::new(1.0).unwrap()).unwrap());
        let bank = OperatorBank::new(vec![ControlOperator::diagonal(DVector::from_element(1, 1.0)).unwrap()]).unwrap();
        let control = ControlMatrix::from_flat(1, 2, &[0.5, 0.5]).unwrap();
        Instance { support, bank, control }
    }

    /// Explicit product `prod_s (I + (1/m) K B[u_s]) g_0`, building each
    /// `B[u_s]` as a dense matrix from its definition.
    fn product_form(inst: &Instance, offset: f64, t: usize) -> DVector<f64> {
        let m = inst.support.len();
        let k = inst.support.gram();
        let mut g = DVector::from_element(m, offset);
        for s in 0..t {
            let u = inst.control.column(s);
            let mut b = DMatrix::zeros(m, m);
            for (op, &ui) in inst.bank.ops().iter().zip(u) {
                let v = op.vector();
                let dense = match op.kind() {
                    crate::operators::OperatorKind::Diagonal => DMatrix::from_diagonal(v),
                    crate::operators::OperatorKind::RankOne => v * v.transpose() / m as f64,
                };
                b += dense * ui;
            }
            let step = DMatrix::identity(m, m) + k * b / m as f64;
            g = step * g;
        }
        g
    }

    #[test]
    fn zero_control_keeps_state() {
        let inst = random_instance(1, 4, 3, 2);
        let zero = ControlMatrix::zeros(2, 3).unwrap();
        let traj = forward_solve(&zero, &inst.bank, &inst.support, 1.3).unwrap();
        for g in traj.states() {
            assert_eq!(g, &DVector::from_element(4, 1.3));
        }
    }

    #[test]
    fn scalar_forward_solution() {
        let inst = scalar_instance();
        let traj = forward_solve(&inst.control, &inst.bank, &inst.support, 1.0).unwrap();
        let g: Vec<f64> = traj.states().iter().map(|v| v[0]).collect();
        assert_eq!(g, vec![1.0, 1.5, 2.25]);
        let h2 = h_function(&traj, 2).unwrap();
        assert_eq!(eval_function(&h2, &[0.0]).unwrap(), 2.25);
    }

    #[test]
    fn forward_matches_product_form() {
        for seed in 0..10 {
            let inst = random_instance(seed, 5, 4, 2);
            let traj = forward_solve(&inst.control, &inst.bank, &inst.support, 0.8).unwrap();
            for t in 0..=4 {
                let diff = (&traj.states()[t] - product_form(&inst, 0.8, t)).amax();
                assert!(diff < 1e-11, "seed {seed} t {t}: {diff}");
            }
        }
    }

    #[test]
    fn forward_rejects_mismatch_and_detects_divergence() {
        let inst = random_instance(2, 4, 3, 1);
        let bad = ControlMatrix::zeros(3, 3).unwrap();
        assert!(forward_solve(&bad, &inst.bank, &inst.support, 1.0).is_err());

        // 1001^4 is the first power above the limit.
        let huge = ControlMatrix::new(DMatrix::from_element(1, 40, 1e3)).unwrap();
        let s = scalar_instance();
        match forward_solve(&huge, &s.bank, &s.support, 1.0) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 4),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn h_at_support_equals_state() {
        let inst = random_instance(3, 6, 5, 2);
        let traj = forward_solve(&inst.control, &inst.bank, &inst.support, 1.0).unwrap();
        for t in 0..=5 {
            let h = h_function(&traj, t).unwrap();
            for j in 0..6 {
                let v = eval_function(&h, inst.support.points().row(j)).unwrap();
                assert!((v - traj.states()[t][j]).abs() < 1e-10);
            }
        }
        let h0 = h_function(&traj, 0).unwrap();
        assert_eq!(h0.weights, DVector::zeros(6));
        assert!(h_function(&traj, 6).is_err());
    }

    #[test]
    fn transitions_scalar_and_zero() {
        let s = scalar_instance();
        let b = adjoint_transitions(&s.control, &s.bank, &s.support).unwrap();
        assert_eq!(b.transitions()[0][(0, 0)], 1.5);
        assert_eq!(b.transitions()[1][(0, 0)], 1.5);
        assert_eq!(b.terminal_products()[0][(0, 0)], 2.25);
        assert_eq!(b.terminal_products()[2][(0, 0)], 1.0);

        let inst = random_instance(4, 5, 3, 2);
        let zero = ControlMatrix::zeros(2, 3).unwrap();
        let b = adjoint_transitions(&zero, &inst.bank, &inst.support).unwrap();
        for m in b.transitions().iter().chain(b.terminal_products()) {
            assert_eq!(m, &DMatrix::identity(5, 5));
        }
    }

    #[test]
    fn transition_matches_definition() {
        let inst = random_instance(5, 5, 3, 2);
        let b = adjoint_transitions(&inst.control, &inst.bank, &inst.support).unwrap();
        let k = inst.support.gram();
        for s in 0..3 {
            // Column j of K B*[u_s] is K B*[u_s] e_j.
            let mut dense = DMatrix::identity(5, 5);
            for j in 0..5 {
                let mut e = DVector::zeros(5);
                e[j] = 1.0;
                let col = k * inst.bank.apply_adjoint_combination(inst.control.column(s), &e).unwrap() / 5.0;
                for i in 0..5 {
                    dense[(i, j)] += col[i];
                }
            }
            assert!((&b.transitions()[s] - dense).amax() < 1e-14);
        }
    }

    #[test]
    fn products_follow_recursion() {
        let inst = random_instance(6, 5, 4, 2);
        let b = adjoint_transitions(&inst.control, &inst.bank, &inst.support).unwrap();
        let p = b.terminal_products();
        for s in 0..4 {
            assert!((&p[s] - &b.transitions()[s] * &p[s + 1]).amax() < 1e-13);
        }
    }

    #[test]
    fn adjoint_solve_cases() {
        let inst = random_instance(7, 5, 4, 2);
        let b = adjoint_transitions(&inst.control, &inst.bank, &inst.support).unwrap();
        let zero = adjoint_solve(&b, &DVector::zeros(5), None).unwrap();
        assert!(zero.costates.iter().all(|c| c.amax() == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let term = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let direct = adjoint_solve(&b, &term, None).unwrap();
        let psi = adjoint_solve_via_products(&b, &term).unwrap();
        for (a, c) in direct.costates.iter().zip(&psi.costates) {
            assert!((a - c).amax() < 1e-12);
        }

        let s = scalar_instance();
        let b = adjoint_transitions(&s.control, &s.bank, &s.support).unwrap();
        let g = adjoint_solve(&b, &DVector::from_element(1, 2.0), None).unwrap();
        let v: Vec<f64> = g.costates.iter().map(|c| c[0]).collect();
        assert_eq!(v, vec![4.5, 3.0, 2.0]);
    }

    #[test]
    fn psi_representation_with_sources() {
        // g*_t = P_t g*_T + P_t sum_{s>=t} P_s^{-1} l_s with explicit inverses.
        for seed in 0..5 {
            let inst = random_instance(10 + seed, 4, 5, 2);
            let b = adjoint_transitions(&inst.control, &inst.bank, &inst.support).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let term = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let src: Vec<_> = (0..5).map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0))).collect();
            let direct = adjoint_solve(&b, &term, Some(&src)).unwrap();
            let p = b.terminal_products();
            for t in 0..=5 {
                let mut acc = DVector::zeros(4);
                for (s, l) in src.iter().enumerate().skip(t) {
                    acc += p[s].clone().try_inverse().unwrap() * l;
                }
                let via_psi = &p[t] * (&term + acc);
                assert!((&direct.costates[t] - via_psi).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn scalar_gradient_closed_form() {
        // E(u) = (1 + u_0)^2 (1 + u_1)^2 with one observation at the support point.
        let s = scalar_instance();
        let zero = ControlMatrix::zeros(1, 2).unwrap();
        let traj = forward_solve(&zero, &s.bank, &s.support, 1.0).unwrap();
        let b = adjoint_transitions(&zero, &s.bank, &s.support).unwrap();
        // g*_T = 2 k(x, xi) (h_T(x) - 0) = 2.
        let costate = adjoint_solve(&b, &DVector::from_element(1, 2.0), None).unwrap();
        let g = cost_gradient(&traj, &costate, &s.bank, None).unwrap();
        assert!((g[(0, 0)] - 2.0).abs() < 1e-12 && (g[(0, 1)] - 2.0).abs() < 1e-12);

        let zero_costate = CostateTrajectory { costates: vec![DVector::zeros(1); 3] };
        assert_eq!(cost_gradient(&traj, &zero_costate, &s.bank, None).unwrap(), DMatrix::zeros(1, 2));
        let short = CostateTrajectory { costates: vec![DVector::zeros(1); 2] };
        assert!(cost_gradient(&traj, &short, &s.bank, None).is_err());
    }

    #[test]
    fn jacobian_zero_at_t0_and_causal() {
        let inst = random_instance(9, 5, 4, 2);
        let traj = forward_solve(&inst.control, &inst.bank, &inst.support, 1.0).unwrap();
        let b = adjoint_transitions(&inst.control, &inst.bank, &inst.support).unwrap();
        let q = Points::from_rows(&[[0.1, 0.2], [1.0, -1.0], [-0.5, 0.3]]).unwrap();
        assert_eq!(control_jacobian(&traj, &b, &inst.bank, &q, 0).unwrap(), DMatrix::zeros(3, 8));
        for t in 0..=4 {
            let j = control_jacobian(&traj, &b, &inst.bank, &q, t).unwrap();
            for col in 2 * t..8 {
                assert!(j.column(col).iter().all(|&v| v == 0.0));
            }
        }
        assert!(control_jacobian(&traj, &b, &inst.bank, &q, 5).is_err());
    }

    #[test]
    fn jacobian_matches_costate_route() {
        // Each entry via an explicit backward solve from kappa(x) on [0, t].
        let inst = random_instance(12, 5, 4, 2);
        let traj = forward_solve(&inst.control, &inst.bank, &inst.support, 1.0).unwrap();
        let b = adjoint_transitions(&inst.control, &inst.bank, &inst.support).unwrap();
        let x = [0.3, -0.4];
        let q = Points::from_rows(&[x]).unwrap();
        let kappa = inst.support.kernel_section(&x).unwrap();
        for t in 1..=4 {
            let j = control_jacobian(&traj, &b, &inst.bank, &q, t).unwrap();
            let mut adj = vec![DVector::zeros(5); t + 1];
            adj[t] = kappa.clone();
            for s in (0..t).rev() {
                adj[s] = &b.transitions()[s] * &adj[s + 1];
            }
            for s in 0..t {
                for (i, op) in inst.bank.ops().iter().enumerate() {
                    let e = adj[s + 1].dot(&op.apply(&traj.states()[s]).unwrap()) / 5.0;
                    assert!((j[(0, 2 * s + i)] - e).abs() < 1e-13);
                }
            }
        }
    }
}
