//! Gaussian kernel, Gram matrices and kernel expansions over a support set.
//!
//! A function in the learned family is stored as a constant offset plus a
//! weight vector over the support points:
//!
//! ```text
//! h(x) = offset + (1/m) * sum_j k(x, xi_j) * w_j
//! ```
//!
//! The `1/m` factor is the empirical inner product on the support set and is
//! applied at evaluation time, so the weights are exactly the accumulated
//! operator outputs produced by the forward solver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Two support points closer than this (Euclidean) are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// A set of `len` points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("points must have dimension >= 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::input(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::input("empty point list"))?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim(dim, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Self::new(dim, data)
    }

    /// Points on the real line.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }
}

/// Gaussian kernel `exp(-|x - y|^2 / (2 s^2))` with width `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    scale: f64,
}

impl KernelSpec {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::input(format!(
                "kernel scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / (2.0 * self.scale * self.scale)).exp()
    }
}

pub fn kernel_eval(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok(spec.eval_unchecked(x, y))
}

/// Matrix with entry `(i, j) = k(xs_i, ys_j)`.
pub fn gram_matrix(xs: &Points, ys: &Points, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::input("gram matrix of an empty point list"));
    }
    check_dim(xs.dim(), ys.dim())?;
    // Filled row by row in parallel, then transposed from the row-major buffer.
    let (n, p) = (xs.len(), ys.len());
    let mut buf = vec![0.0; n * p];
    buf.par_chunks_mut(p).enumerate().for_each(|(i, out)| {
        let x = xs.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = spec.eval_unchecked(x, ys.row(j));
        }
    });
    Ok(DMatrix::from_row_slice(n, p, &buf))
}

/// The `m` support points and their cached Gram matrix.
#[derive(Debug, Clone)]
pub struct SupportSet {
    points: Points,
    kernel: KernelSpec,
    gram: DMatrix<f64>,
}

impl SupportSet {
    /// Builds the support set, rejecting duplicate points.
    pub fn new(points: Points, kernel: KernelSpec) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("support set must contain at least one point"));
        }
        for i in 0..points.len() {
            for j in 0..i {
                let d2: f64 = points
                    .row(i)
                    .iter()
                    .zip(points.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2.sqrt() <= DUPLICATE_TOLERANCE {
                    return Err(Error::input(format!(
                        "support points {j} and {i} coincide"
                    )));
                }
            }
        }
        let gram = gram_matrix(&points, &points, &kernel)?;
        Ok(Self {
            points,
            kernel,
            gram,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `kappa(x) = (k(x, xi_1), ..., k(x, xi_m))`.
    pub fn kernel_section(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(DVector::from_iterator(
            self.len(),
            self.points.rows().map(|xi| self.kernel.eval_unchecked(x, xi)),
        ))
    }

    /// `m x n` matrix whose column `i` is `kappa(x_i)`.
    pub fn cross_gram(&self, xs: &Points) -> Result<DMatrix<f64>> {
        gram_matrix(&self.points, xs, &self.kernel)
    }
}

/// `offset + (1/m) * sum_j k(x, xi_j) w_j`.
#[derive(Debug, Clone)]
pub struct RkhsFunction {
    pub offset: f64,
    pub weights: DVector<f64>,
    pub support: Arc<SupportSet>,
}

impl RkhsFunction {
    pub fn new(offset: f64, weights: DVector<f64>, support: Arc<SupportSet>) -> Result<Self> {
        check_dim(support.len(), weights.len())?;
        Ok(Self {
            offset,
            weights,
            support,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.support.kernel()
    }

    /// Evaluations at every column of a precomputed cross-Gram matrix.
    pub fn eval_cross_gram(&self, cross_gram: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim(self.support.len(), cross_gram.nrows())?;
        let m = self.support.len() as f64;
        let mut out = cross_gram.tr_mul(&self.weights) / m;
        out.add_scalar_mut(self.offset);
        Ok(out)
    }
}

pub fn eval_function(f: &RkhsFunction, x: &[f64]) -> Result<f64> {
    let kappa = f.support.kernel_section(x)?;
    Ok(f.offset + kappa.dot(&f.weights) / f.support.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Points {
        Points::new(d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_is_one_on_the_diagonal() {
        let spec = KernelSpec::new(0.37).unwrap();
        let x = [1.5, -2.0, 0.25];
        assert_eq!(kernel_eval(&x, &x, &spec).unwrap(), 1.0);
    }

    #[test]
    fn kernel_is_symmetric_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = KernelSpec::new(1.3).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(
                kernel_eval(&x, &y, &spec).unwrap().to_bits(),
                kernel_eval(&y, &x, &spec).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn kernel_closed_form_value() {
        // exp(-pi^2 / (2 * 10^1.4)), evaluated with mpmath at 30 digits.
        let expected = 0.821_635_827_666_115_1;
        let spec = KernelSpec::new(10f64.powf(0.7)).unwrap();
        let got = kernel_eval(&[0.0], &[std::f64::consts::PI], &spec).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got}");
    }

    #[test]
    fn kernel_rejects_mismatched_dims_and_bad_scale() {
        let spec = KernelSpec::new(1.0).unwrap();
        assert!(kernel_eval(&[0.0, 1.0], &[0.0], &spec).is_err());
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::new(-1.0).is_err());
        assert!(KernelSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn gram_of_single_point() {
        let spec = KernelSpec::new(2.0).unwrap();
        let p = Points::from_rows(&[[0.3, 0.4]]).unwrap();
        let g = gram_matrix(&p, &p, &spec).unwrap();
        assert_eq!(g, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = KernelSpec::new(0.8).unwrap();
        let p = random_points(&mut rng, 10, 2);
        let g = gram_matrix(&p, &p, &spec).unwrap();
        assert_eq!(g, g.transpose());
        let eig = g.clone().symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10);
        for i in 0..10 {
            assert_eq!(g[(i, i)], 1.0);
        }
    }

    #[test]
    fn rectangular_gram_matches_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KernelSpec::new(1.1).unwrap();
        let xs = random_points(&mut rng, 2, 3);
        let ys = random_points(&mut rng, 3, 3);
        let g = gram_matrix(&xs, &ys, &spec).unwrap();
        assert_eq!(g.shape(), (2, 3));
        for i in 0..2 {
            for j in 0..3 {
                let sq: f64 = (0..3).map(|k| (xs.row(i)[k] - ys.row(j)[k]).powi(2)).sum();
                assert_eq!(g[(i, j)], (-sq / (2.0 * 1.1 * 1.1)).exp());
            }
        }
    }

    #[test]
    fn gram_rejects_empty() {
        let spec = KernelSpec::new(1.0).unwrap();
        let empty = Points::new(2, vec![]).unwrap();
        let p = Points::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(gram_matrix(&empty, &p, &spec).is_err());
    }

    #[test]
    fn support_rejects_duplicates() {
        let spec = KernelSpec::new(1.0).unwrap();
        let p = Points::from_rows(&[[0.0, 1.0], [2.0, 2.0], [0.0, 1.0 + 1e-14]]).unwrap();
        assert!(SupportSet::new(p, spec).is_err());
    }

    #[test]
    fn eval_zero_weights_is_offset() {
        let spec = KernelSpec::new(1.0).unwrap();
        let s = Arc::new(SupportSet::new(Points::from_scalars(&[0.0, 1.0, 2.0]).unwrap(), spec).unwrap());
        let f = RkhsFunction::new(1.0, DVector::zeros(3), s).unwrap();
        for x in [-4.0, 0.0, 0.5, 9.0] {
            assert_eq!(eval_function(&f, &[x]).unwrap(), 1.0);
        }
    }

    #[test]
    fn eval_single_support_point() {
        let spec = KernelSpec::new(0.5).unwrap();
        let s = Arc::new(SupportSet::new(Points::from_scalars(&[0.7]).unwrap(), spec).unwrap());
        let f = RkhsFunction::new(0.0, DVector::from_element(1, 3.0), s).unwrap();
        assert_eq!(eval_function(&f, &[0.7]).unwrap(), 3.0);
        assert!(eval_function(&f, &[0.7, 1.0]).is_err());
    }

    #[test]
    fn eval_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = KernelSpec::new(0.9).unwrap();
        let pts = random_points(&mut rng, 10, 2);
        let s = Arc::new(SupportSet::new(pts.clone(), spec).unwrap());
        let w = DVector::from_fn(10, |_, _| rng.random_range(-2.0..2.0));
        let f = RkhsFunction::new(0.4, w.clone(), s).unwrap();
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut acc = 0.0;
        for j in 0..10 {
            let xi = pts.row(j);
            let sq = (x[0] - xi[0]).powi(2) + (x[1] - xi[1]).powi(2);
            acc += (-sq / (2.0 * 0.81)).exp() * w[j];
        }
        let expected = 0.4 + acc / 10.0;
        assert!((eval_function(&f, &x).unwrap() - expected).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn eval_is_linear_in_weights(seed in any::<u64>(), offset in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = KernelSpec::new(1.0).unwrap();
            let s = Arc::new(SupportSet::new(random_points(&mut rng, 6, 2), spec).unwrap());
            let w1 = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
            let w2 = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let f = |w: DVector<f64>| eval_function(&RkhsFunction::new(offset, w, s.clone()).unwrap(), &x).unwrap();
            let lhs = f(&w1 + &w2);
            let rhs = f(w1) + f(w2) - offset;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
