//! Datasets, support sampling and data generators.

mod csv;
mod heston;
mod toy;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rkhs::{KernelSpec, Points, SupportSet, DUPLICATE_TOLERANCE};

pub use self::csv::{load_csv, write_csv, CsvOptions};
pub use self::heston::{
    black_scholes_call, generate_heston_grid, heston_fft_price, heston_mc_price, FftSettings, HestonParams,
    HestonRanges, DEFAULT_SPOT, HESTON_FEATURES,
};
pub use self::toy::{toy_linear3, toy_sine, two_gaussians};

/// A generator seeded by `seed` on an independent ChaCha stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population mean and standard deviation; constant features keep scale 1.
    pub fn fit(points: &Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("cannot standardize an empty point set"));
        }
        let d = points.dim();
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for row in points.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in points.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn transform(&self, points: &Points) -> Result<Points> {
        check_dim(self.dim(), points.dim())?;
        let mut out = points.clone();
        for i in 0..out.len() {
            self.transform_row(out.row_mut(i));
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, points: &Points) -> Result<Points> {
        check_dim(self.dim(), points.dim())?;
        let mut out = points.clone();
        for i in 0..out.len() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Points,
    pub targets: DVector<f64>,
    pub task: Task,
    pub feature_stats: Option<FeatureStats>,
}

impl Dataset {
    pub fn new(inputs: Points, targets: DVector<f64>, task: Task) -> Result<Self> {
        check_dim(inputs.len(), targets.len())?;
        if inputs.is_empty() {
            return Err(Error::input("dataset must contain at least one row"));
        }
        if let Some(i) = targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::input(format!("target in row {i} is not finite")));
        }
        if task == Task::BinaryClassification {
            if let Some(i) = targets.iter().position(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::Schema(format!(
                    "classification label in row {i} is {}, expected 0 or 1",
                    targets[i]
                )));
            }
        }
        Ok(Self {
            inputs,
            targets,
            task,
            feature_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(indices),
            targets: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.targets[i])),
            task: self.task,
            feature_stats: self.feature_stats.clone(),
        }
    }

    /// Applies `stats` to the inputs and records them.
    pub fn standardized_with(&self, stats: &FeatureStats) -> Result<Self> {
        Ok(Self {
            inputs: stats.transform(&self.inputs)?,
            targets: self.targets.clone(),
            task: self.task,
            feature_stats: Some(stats.clone()),
        })
    }

    /// Inputs in original units, undoing any recorded standardization.
    pub fn raw_inputs(&self) -> Result<Points> {
        match &self.feature_stats {
            Some(stats) => stats.inverse_transform(&self.inputs),
            None => Ok(self.inputs.clone()),
        }
    }

    /// Seeded shuffle into disjoint train and test parts.
    pub fn split(&self, train_size: usize, test_size: usize, seed: u64) -> Result<(Self, Self)> {
        if train_size == 0 || test_size == 0 || train_size + test_size > self.len() {
            return Err(Error::Config(format!(
                "cannot split {} rows into {train_size} train and {test_size} test rows",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok((
            self.select(&idx[..train_size]),
            self.select(&idx[train_size..train_size + test_size]),
        ))
    }
}

/// Draws `m` pairwise-distinct support points from `inputs` without replacement.
pub fn sample_support(inputs: &Points, m: usize, kernel: KernelSpec, seed: u64) -> Result<SupportSet> {
    if m == 0 {
        return Err(Error::input("support size must be positive"));
    }
    let mut idx: Vec<usize> = (0..inputs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tol2 = DUPLICATE_TOLERANCE * DUPLICATE_TOLERANCE;
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for i in idx {
        let x = inputs.row(i);
        let clash = chosen.iter().any(|&j| {
            let d2: f64 = x.iter().zip(inputs.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 <= tol2
        });
        if !clash {
            chosen.push(i);
            if chosen.len() == m {
                return SupportSet::new(inputs.select(&chosen), kernel);
            }
        }
    }
    Err(Error::input(format!(
        "requested {m} support points but only {} distinct inputs are available",
        chosen.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_is_a_permutation_when_m_equals_n() {
        let pts = Points::from_scalars(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = sample_support(&pts, 5, KernelSpec::new(1.0).unwrap(), 3).unwrap();
        let mut v: Vec<f64> = s.points().as_flat().to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn support_deterministic_and_skips_duplicates() {
        let pts = Points::from_scalars(&[0.0, 0.0, 1.0, 1.0, 1.0 + 1e-14, 2.0, 2.0]).unwrap();
        let k = KernelSpec::new(1.0).unwrap();
        for seed in 0..20 {
            let s = sample_support(&pts, 3, k, seed).unwrap();
            let mut v: Vec<f64> = s.points().as_flat().to_vec();
            v.sort_by(f64::total_cmp);
            assert!(v[1] - v[0] > 1e-12 && v[2] - v[1] > 1e-12);
            assert_eq!(s.points(), sample_support(&pts, 3, k, seed).unwrap().points());
        }
        assert!(sample_support(&pts, 4, k, 0).is_err());
    }

    #[test]
    fn feature_stats_standardize() {
        let pts = Points::from_rows(&[[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]]).unwrap();
        let st = FeatureStats::fit(&pts).unwrap();
        assert_eq!(st.std[1], 1.0);
        let z = st.transform(&pts).unwrap();
        let back = st.inverse_transform(&z).unwrap();
        for (a, b) in back.as_flat().iter().zip(pts.as_flat()) {
            assert!((a - b).abs() < 1e-14);
        }
        let col: Vec<f64> = z.rows().map(|r| r[0]).collect();
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let ds = toy_sine(20, 1).unwrap();
        let (a, b) = ds.split(12, 8, 5).unwrap();
        assert_eq!((a.len(), b.len()), (12, 8));
        for x in b.inputs.rows() {
            assert!(a.inputs.rows().all(|y| y != x));
        }
        assert_eq!(ds.split(12, 8, 5).unwrap().0, a);
        assert!(ds.split(15, 8, 5).is_err());
    }

    #[test]
    fn classification_labels_validated() {
        let pts = Points::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(Dataset::new(pts.clone(), DVector::from_vec(vec![0.0, 1.0]), Task::BinaryClassification).is_ok());
        let err = Dataset::new(pts, DVector::from_vec(vec![0.0, 2.0]), Task::BinaryClassification).unwrap_err();
        assert_eq!(err.class(), "schema");
    }
}
