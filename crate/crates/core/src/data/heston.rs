//! Heston call prices: a damped-transform FFT engine, a Monte Carlo oracle and
//! the constant-volatility closed form.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{stream_rng, Dataset, Task};
use crate::error::{Error, Result};
use crate::rkhs::Points;

pub const DEFAULT_SPOT: f64 = 100.0;

/// Feature order of generated grids.
pub const HESTON_FEATURES: [&str; 8] = ["strike", "maturity", "rate", "kappa", "theta", "rho", "sigma", "v0"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub kappa: f64,
    pub theta: f64,
    pub rho: f64,
    pub sigma: f64,
    pub v0: f64,
    pub spot: f64,
}

impl HestonParams {
    /// Builds parameters from a row ordered as [`HESTON_FEATURES`].
    pub fn from_features(row: &[f64], spot: f64) -> Self {
        Self {
            strike: row[0],
            maturity: row[1],
            rate: row[2],
            kappa: row[3],
            theta: row[4],
            rho: row[5],
            sigma: row[6],
            v0: row[7],
            spot,
        }
    }

    pub fn features(&self) -> [f64; 8] {
        [
            self.strike,
            self.maturity,
            self.rate,
            self.kappa,
            self.theta,
            self.rho,
            self.sigma,
            self.v0,
        ]
    }

    pub fn describe(&self) -> String {
        format!(
            "K={} T={} r={} kappa={} theta={} rho={} sigma={} v0={} S0={}",
            self.strike, self.maturity, self.rate, self.kappa, self.theta, self.rho, self.sigma, self.v0, self.spot
        )
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Pricing {
            params: self.describe(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features().iter().chain([&self.spot]).any(|v| !v.is_finite()) {
            return Err(self.fail("non-finite parameter"));
        }
        let positive = [
            ("strike", self.strike),
            ("maturity", self.maturity),
            ("kappa", self.kappa),
            ("sigma", self.sigma),
            ("v0", self.v0),
            ("spot", self.spot),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v <= 0.0) {
            return Err(self.fail(format!("{name} must be positive")));
        }
        if self.theta < 0.0 {
            return Err(self.fail("theta must be nonnegative"));
        }
        if self.rho.abs() > 1.0 {
            return Err(self.fail("rho must lie in [-1, 1]"));
        }
        Ok(())
    }

    /// `2 kappa theta >= sigma^2`; violations are allowed.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FftSettings {
    /// Damping exponent applied to the call price in log-strike.
    pub alpha: f64,
    pub nodes: usize,
    /// Spacing of the frequency grid.
    pub eta: f64,
}

impl Default for FftSettings {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            nodes: 4096,
            eta: 0.25,
        }
    }
}

impl FftSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("fft alpha must be positive, got {}", self.alpha)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("fft eta must be positive, got {}", self.eta)));
        }
        if self.nodes < 8 {
            return Err(Error::Config(format!("fft needs at least 8 nodes, got {}", self.nodes)));
        }
        Ok(())
    }

    /// Log-strike spacing of the output grid.
    pub fn log_strike_step(&self) -> f64 {
        2.0 * PI / (self.nodes as f64 * self.eta)
    }
}

/// `ln(1 + z) / z`, accurate near zero.
fn log1p_over(z: Complex64) -> Complex64 {
    if z.norm() < 1e-5 {
        Complex64::new(1.0, 0.0) - z / 2.0 + z * z / 3.0
    } else {
        (Complex64::new(1.0, 0.0) + z).ln() / z
    }
}

/// Characteristic function of `ln S_T`, arranged so that no term divides by
/// `sigma^2` and the complex logarithm stays on its principal branch.
fn char_fn(u: Complex64, p: &HestonParams) -> Complex64 {
    let i = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    let s2 = p.sigma * p.sigma;
    let t = p.maturity;
    let a = p.kappa - i * (p.rho * p.sigma) * u;
    let w = i * u + u * u;
    let d = (a * a + w * s2).sqrt();
    let apd = a + d;
    // (a - d) / sigma^2 and g = (a - d) / (a + d)
    let amd_s2 = -w / apd;
    let g = amd_s2 * s2 / apd;
    let e = (-d * t).exp();
    let z_s2 = amd_s2 / apd * (one - e) / (one - g);
    let log_term_s2 = z_s2 * log1p_over(z_s2 * s2);
    let c = p.kappa * p.theta * (amd_s2 * t - 2.0 * log_term_s2);
    let dv = p.v0 * amd_s2 * (one - e) / (one - g * e);
    (i * u * (p.spot.ln() + p.rate * t) + c + dv).exp()
}

fn lagrange4(xs: [f64; 4], ys: [f64; 4], x: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..4 {
        let mut l = 1.0;
        for k in 0..4 {
            if k != j {
                l *= (x - xs[k]) / (xs[j] - xs[k]);
            }
        }
        acc += l * ys[j];
    }
    acc
}

/// European call price by the damped-transform FFT, interpolated in log-strike.
pub fn heston_fft_price(p: &HestonParams, grid: &FftSettings) -> Result<f64> {
    p.validate()?;
    grid.validate()?;
    let n = grid.nodes;
    let eta = grid.eta;
    let alpha = grid.alpha;
    let lambda = grid.log_strike_step();
    let b = p.spot.ln() - n as f64 * lambda / 2.0;
    let i = Complex64::i();
    let disc = (-p.rate * p.maturity).exp();

    let mut buf: Vec<Complex64> = (0..n)
        .map(|j| {
            let u = eta * j as f64;
            let v = Complex64::new(u, -(alpha + 1.0));
            let denom = Complex64::new(alpha * alpha + alpha - u * u, (2.0 * alpha + 1.0) * u);
            let psi = disc * char_fn(v, p) / denom;
            let simpson = if j == 0 {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (-i * b * u).exp() * psi * (eta * simpson / 3.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let k = p.strike.ln();
    let pos = (k - b) / lambda;
    let base = pos.floor() as i64 - 1;
    if base < 0 || base + 3 >= n as i64 {
        return Err(Error::Config(format!(
            "log-strike {k:.4} outside the fft grid [{b:.4}, {:.4}]; decrease eta to widen it",
            b + lambda * (n - 1) as f64
        )));
    }
    let base = base as usize;
    let mut xs = [0.0; 4];
    let mut ys = [0.0; 4];
    for o in 0..4 {
        let kn = b + lambda * (base + o) as f64;
        xs[o] = kn;
        ys[o] = (-alpha * kn).exp() / PI * buf[base + o].re;
    }
    let price = lagrange4(xs, ys, k);
    if !price.is_finite() {
        return Err(p.fail("fft price is not finite"));
    }
    Ok(price)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Constant-volatility call price.
pub fn black_scholes_call(spot: f64, strike: f64, maturity: f64, rate: f64, vol: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * maturity) / sd;
    let d2 = d1 - sd;
    spot * normal_cdf(d1) - strike * (-rate * maturity).exp() * normal_cdf(d2)
}

const MC_BLOCK: usize = 4096;

/// Full-truncation Euler Monte Carlo; returns the price and its standard error.
///
/// Paths are simulated in fixed blocks of 4096, block `b` drawing from ChaCha
/// stream `b`, so results are independent of the thread count.
pub fn heston_mc_price(p: &HestonParams, paths: usize, steps: usize, seed: u64) -> Result<(f64, f64)> {
    p.validate()?;
    if paths < 2 || steps == 0 {
        return Err(Error::input("monte carlo needs at least 2 paths and 1 step"));
    }
    let dt = p.maturity / steps as f64;
    let sq_dt = dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).max(0.0).sqrt();
    let disc = (-p.rate * p.maturity).exp();
    let blocks = paths.div_ceil(MC_BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(blk as u64);
            let count = MC_BLOCK.min(paths - blk * MC_BLOCK);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let mut x = p.spot.ln();
                let mut v = p.v0;
                for _ in 0..steps {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    let vp = v.max(0.0);
                    let sv = vp.sqrt() * sq_dt;
                    x += (p.rate - 0.5 * vp) * dt + sv * z1;
                    v += p.kappa * (p.theta - vp) * dt + p.sigma * sv * (p.rho * z1 + rho_c * z2);
                }
                let pay = disc * (x.exp() - p.strike).max(0.0);
                s1 += pay;
                s2 += pay * pay;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    let n = paths as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Sampling box for generated grids, one `(low, high)` pair per feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonRanges {
    pub bounds: [(f64, f64); 8],
    pub spot: f64,
}

impl Default for HestonRanges {
    fn default() -> Self {
        Self {
            bounds: [
                (50.0, 150.0),
                (11.0 / 12.0, 1.0),
                (0.015, 0.025),
                (1.5, 2.5),
                (0.5, 0.7),
                (-0.7, -0.5),
                (0.02, 0.1),
                (0.02, 0.1),
            ],
            spot: DEFAULT_SPOT,
        }
    }
}

impl HestonRanges {
    pub fn contains(&self, row: &[f64]) -> bool {
        row.iter().zip(&self.bounds).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

/// `count` parameter tuples drawn uniformly in `ranges`, each priced by the FFT engine.
pub fn generate_heston_grid(ranges: &HestonRanges, count: usize, seed: u64, grid: &FftSettings) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::input("grid size must be positive"));
    }
    if ranges.bounds.iter().any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
        return Err(Error::Config("every range needs low <= high".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut data = Vec::with_capacity(8 * count);
    for _ in 0..count {
        for &(lo, hi) in &ranges.bounds {
            data.push(if lo == hi { lo } else { rng.random_range(lo..=hi) });
        }
    }
    let prices: Vec<f64> = data
        .par_chunks(8)
        .map(|row| heston_fft_price(&HestonParams::from_features(row, ranges.spot), grid))
        .collect::<Result<_>>()?;
    Dataset::new(Points::new(8, data)?, DVector::from_vec(prices), Task::Regression)
}
