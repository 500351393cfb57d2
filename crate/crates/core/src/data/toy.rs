use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{stream_rng, Dataset, Task};
use crate::error::{Error, Result};
use crate::rkhs::Points;

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::input("sample count must be positive"))
    } else {
        Ok(())
    }
}

/// `y = sin(x)` with `x` uniform on `[-pi, pi]`.
pub fn toy_sine(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let mut rng = stream_rng(seed, 0);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..=PI)).collect();
    let ys = DVector::from_iterator(n, xs.iter().map(|x| x.sin()));
    Dataset::new(Points::from_scalars(&xs)?, ys, Task::Regression)
}

pub fn linear3(x: &[f64]) -> f64 {
    0.5 * x[0] - 0.2 * x[1] + 0.1 * x[2]
}

/// `y = 0.5 x_1 - 0.2 x_2 + 0.1 x_3` with `x` uniform on `[-3, 3]^3`.
pub fn toy_linear3(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let mut rng = stream_rng(seed, 0);
    let data: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-3.0..=3.0)).collect();
    let pts = Points::new(3, data)?;
    let ys = DVector::from_iterator(n, pts.rows().map(linear3));
    Dataset::new(pts, ys, Task::Regression)
}

/// Two unit-covariance Gaussian classes centred at `+-separation/2` in every
/// coordinate, labels drawn as fair coin flips.
pub fn two_gaussians(n: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    if dim == 0 {
        return Err(Error::input("dimension must be positive"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_bool(0.5);
        let centre = if label { separation / 2.0 } else { -separation / 2.0 };
        for _ in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(centre + z);
        }
        labels.push(f64::from(label));
    }
    Dataset::new(Points::new(dim, data)?, DVector::from_vec(labels), Task::BinaryClassification)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_values_and_domain() {
        assert_eq!(0.0f64.sin(), 0.0);
        assert_eq!((PI / 2.0).sin(), 1.0);
        let ds = toy_sine(500, 7).unwrap();
        for (x, y) in ds.inputs.rows().zip(ds.targets.iter()) {
            assert!(x[0].abs() <= PI);
            assert_eq!(*y, x[0].sin());
        }
        assert_eq!(ds, toy_sine(500, 7).unwrap());
        assert_ne!(ds, toy_sine(500, 8).unwrap());
    }

    #[test]
    fn linear3_values_and_domain() {
        assert!((linear3(&[1.0, 1.0, 1.0]) - 0.4).abs() < 1e-15);
        assert_eq!(linear3(&[0.0, 0.0, 0.0]), 0.0);
        let ds = toy_linear3(300, 1).unwrap();
        assert!(ds.inputs.as_flat().iter().all(|v| v.abs() <= 3.0));
        assert!(toy_linear3(0, 1).is_err());
    }

    #[test]
    fn gaussian_classes_are_balanced_and_separated() {
        let ds = two_gaussians(4000, 5, 2.0, 3).unwrap();
        let ones = ds.targets.sum();
        assert!((ones / 4000.0 - 0.5).abs() < 0.05);
        let mut mean1 = 0.0;
        for (x, y) in ds.inputs.rows().zip(ds.targets.iter()) {
            if *y == 1.0 {
                mean1 += x[0];
            }
        }
        assert!((mean1 / ones - 1.0).abs() < 0.1);
    }
}
