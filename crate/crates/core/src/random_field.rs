//! Stochastic germ sampling and the log-normal diffusivity fields.
//!
//! Every field in the catalog is log-linear in the germ:
//! `κ(x, y) = s · exp(Σ_k a_k(x) y_k)`. [`RandomField::log_linear_form`]
//! exposes `(s, a(x))`, which is what the assemblers tabulate at quadrature
//! points.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Independent random stream families. Each purpose draws from its own keyed
/// stream, so e.g. gradient and Hessian mini-batches never share germs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Gradient,
    Hessian,
    Monitor,
    Pilot,
    Evaluation,
    Initialization,
    Other(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Gradient => 0x6772_6164,
            Purpose::Hessian => 0x6865_7373,
            Purpose::Monitor => 0x6d6f_6e69,
            Purpose::Pilot => 0x7069_6c6f,
            Purpose::Evaluation => 0x6576_616c,
            Purpose::Initialization => 0x696e_6974,
            Purpose::Other(t) => t.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x6f74_6865,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based germ generator: the germ for `(seed, iteration, index,
/// purpose)` is a pure function of that tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GermSampler {
    dim: usize,
    seed: u64,
}

impl GermSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// ChaCha8 generator keyed by the full counter tuple.
    pub fn stream(&self, iteration: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut h = splitmix64(self.seed ^ splitmix64(purpose.tag()));
        h = splitmix64(h ^ iteration);
        h = splitmix64(h ^ index.rotate_left(32));
        for (n, chunk) in key.chunks_exact_mut(8).enumerate() {
            h = splitmix64(h.wrapping_add(n as u64));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    pub fn sample_germ(&self, iteration: u64, index: u64, purpose: Purpose) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(iteration, index, purpose, &mut out);
        out
    }

    pub fn sample_into(&self, iteration: u64, index: u64, purpose: Purpose, out: &mut [f64]) {
        let mut rng = self.stream(iteration, index, purpose);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
}

/// `κ(x, Y) = exp(β V(x, Y))` with
/// `V = n_V^{-1/2} Σ_k A_k cos(2πkx/l) + B_k sin(2πkx/l)` and germ layout
/// `(A_1, …, A_{n_V}, B_1, …, B_{n_V})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigLogNormalField {
    pub beta: f64,
    pub harmonics: usize,
    pub period: f64,
}

impl TrigLogNormalField {
    pub fn new(beta: f64, harmonics: usize, period: f64) -> Result<Self> {
        if harmonics == 0 {
            return Err(Error::InvalidConfig("n_V must be at least 1".into()));
        }
        if !(period > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidConfig("invalid trigonometric field parameters".into()));
        }
        Ok(Self {
            beta,
            harmonics,
            period,
        })
    }

    pub fn germ_dim(&self) -> usize {
        2 * self.harmonics
    }

    /// `V(x, y)`.
    pub fn potential(&self, x: f64, y: &[f64]) -> f64 {
        let n = self.harmonics;
        let mut v = 0.0;
        for k in 1..=n {
            let arg = 2.0 * PI * k as f64 * x / self.period;
            v += y[k - 1] * arg.cos() + y[n + k - 1] * arg.sin();
        }
        v / (n as f64).sqrt()
    }

    /// Covariance kernel of `V`.
    pub fn covariance(&self, x1: f64, x2: f64) -> f64 {
        let n = self.harmonics;
        (1..=n)
            .map(|k| (2.0 * PI * k as f64 * (x2 - x1) / self.period).cos())
            .sum::<f64>()
            / n as f64
    }
}

/// `κ(Y) = exp(0.2 (Y_1 + Y_2))`, constant in space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousLogNormalField {
    pub coefficient: f64,
}

impl Default for HomogeneousLogNormalField {
    fn default() -> Self {
        Self { coefficient: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RandomField {
    TrigLogNormal(TrigLogNormalField),
    Homogeneous(HomogeneousLogNormalField),
    /// `factor · κ_inner`.
    Scaled(Box<RandomField>, f64),
}

impl RandomField {
    /// Smallest germ dimension the field reads from.
    pub fn min_germ_dim(&self) -> usize {
        match self {
            RandomField::TrigLogNormal(f) => f.germ_dim(),
            RandomField::Homogeneous(_) => 2,
            RandomField::Scaled(inner, _) => inner.min_germ_dim(),
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        RandomField::Scaled(Box::new(self), factor)
    }

    /// `(s, a)` with `κ(x, y) = s · exp(a · y)`; `a` is written into
    /// `loadings` (length ≥ [`min_germ_dim`](Self::min_germ_dim), extra
    /// entries zeroed).
    pub fn log_linear_form(&self, x: f64, loadings: &mut [f64]) -> f64 {
        match self {
            RandomField::TrigLogNormal(f) => {
                loadings.fill(0.0);
                let n = f.harmonics;
                let c = f.beta / (n as f64).sqrt();
                for k in 1..=n {
                    let arg = 2.0 * PI * k as f64 * x / f.period;
                    loadings[k - 1] = c * arg.cos();
                    loadings[n + k - 1] = c * arg.sin();
                }
                1.0
            }
            RandomField::Homogeneous(f) => {
                loadings.fill(0.0);
                loadings[0] = f.coefficient;
                loadings[1] = f.coefficient;
                1.0
            }
            RandomField::Scaled(inner, factor) => factor * inner.log_linear_form(x, loadings),
        }
    }

    /// `κ(x, y)`.
    pub fn eval_kappa(&self, x: f64, y: &[f64]) -> f64 {
        match self {
            RandomField::TrigLogNormal(f) => (f.beta * f.potential(x, y)).exp(),
            RandomField::Homogeneous(f) => (f.coefficient * (y[0] + y[1])).exp(),
            RandomField::Scaled(inner, factor) => factor * inner.eval_kappa(x, y),
        }
    }

    /// `κ(x, E[Y]) = κ(x, 0)`.
    pub fn kappa_at_mean(&self, x: f64) -> f64 {
        let zeros = vec![0.0; self.min_germ_dim()];
        self.eval_kappa(x, &zeros)
    }

    /// `∇_y κ(x, 0)` padded to `dim` components.
    pub fn kappa_gradient_at_mean(&self, x: f64, dim: usize) -> Vec<f64> {
        let mut a = vec![0.0; dim.max(self.min_germ_dim())];
        let s = self.log_linear_form(x, &mut a);
        a.truncate(dim);
        a.iter_mut().for_each(|v| *v *= s);
        a
    }
}

/// Empirical extremes of κ over an `x`-grid and a batch of germs. The
/// log-normal fields have no uniform bounds; this only reports what was seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaRange {
    pub min: f64,
    pub max: f64,
}

pub fn kappa_range(
    field: &RandomField,
    xs: &[f64],
    sampler: &GermSampler,
    n_samples: usize,
) -> KappaRange {
    let mut range = KappaRange {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };
    for s in 0..n_samples {
        let y = sampler.sample_germ(0, s as u64, Purpose::Evaluation);
        for &x in xs {
            let k = field.eval_kappa(x, &y);
            range.min = range.min.min(k);
            range.max = range.max.max(k);
        }
    }
    range
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig(beta: f64) -> RandomField {
        RandomField::TrigLogNormal(TrigLogNormalField::new(beta, 2, 10.0).unwrap())
    }

    #[test]
    fn sampler_is_deterministic_and_purpose_separated() {
        let s = GermSampler::new(4, 99);
        let a = s.sample_germ(3, 17, Purpose::Gradient);
        assert_eq!(a, s.sample_germ(3, 17, Purpose::Gradient));
        assert_ne!(a, s.sample_germ(3, 17, Purpose::Hessian));
        assert_ne!(a, s.sample_germ(4, 17, Purpose::Gradient));
        assert_ne!(a, s.sample_germ(3, 18, Purpose::Gradient));
        assert_ne!(a, GermSampler::new(4, 100).sample_germ(3, 17, Purpose::Gradient));
    }

    #[test]
    fn marginals_are_standard_normal() {
        let s = GermSampler::new(4, 1);
        let n = 1_000_000;
        let mut sum = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        let mut y = [0.0; 4];
        for i in 0..n {
            s.sample_into(0, i, Purpose::Evaluation, &mut y);
            for k in 0..4 {
                sum[k] += y[k];
                sq[k] += y[k] * y[k];
            }
        }
        let nf = n as f64;
        for k in 0..4 {
            let mean = sum[k] / nf;
            let var = sq[k] / nf - mean * mean;
            assert!(mean.abs() < 5.0 / nf.sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() < 5.0 * (2.0 / nf).sqrt(), "var {var}");
        }
    }

    #[test]
    fn kappa_examples() {
        let f = RandomField::TrigLogNormal(TrigLogNormalField::new(0.1, 2, 10.0).unwrap());
        for x in [-5.0, -1.3, 0.0, 2.7] {
            assert_eq!(f.eval_kappa(x, &[0.0; 4]), 1.0);
            assert_eq!(f.kappa_at_mean(x), 1.0);
            assert_eq!(f.kappa_at_mean(x), f.eval_kappa(x, &[0.0; 4]));
        }
        let v = f.eval_kappa(0.0, &[1.0, 1.0, 0.0, 0.0]);
        assert!((v - (2f64.sqrt() / 10.0).exp()).abs() < 1e-15);
        let h = RandomField::Homogeneous(HomogeneousLogNormalField::default());
        assert_eq!(h.kappa_at_mean(1.0), 1.0);
        assert!((h.eval_kappa(3.0, &[0.5, 1.0]) - 0.3f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_mean() {
        let h = RandomField::Homogeneous(HomogeneousLogNormalField::default());
        assert_eq!(h.kappa_gradient_at_mean(0.3, 4), vec![0.2, 0.2, 0.0, 0.0]);
        let f = trig(0.1);
        let g = f.kappa_gradient_at_mean(0.0, 4);
        let c = 0.1 / 2f64.sqrt();
        assert!((g[0] - c).abs() < 1e-15 && (g[1] - c).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
        assert!(g[3].abs() < 1e-15);
        // central differences
        for x in [-4.1, 0.7, 3.3] {
            let g = f.kappa_gradient_at_mean(x, 4);
            for k in 0..4 {
                let mut yp = [0.0; 4];
                let mut ym = [0.0; 4];
                yp[k] = 1e-6;
                ym[k] = -1e-6;
                let fd = (f.eval_kappa(x, &yp) - f.eval_kappa(x, &ym)) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn log_linear_form_reproduces_kappa() {
        let f = trig(0.3).scaled(2.0);
        let y = [0.4, -1.1, 0.9, 2.0];
        let mut a = [0.0; 4];
        for x in [-2.0, 0.1, 4.9] {
            let s = f.log_linear_form(x, &mut a);
            let k = s * a.iter().zip(&y).map(|(a, y)| a * y).sum::<f64>().exp();
            assert!((k - f.eval_kappa(x, &y)).abs() < 1e-13);
        }
    }

    #[test]
    fn potential_covariance_and_stationarity() {
        let field = TrigLogNormalField::new(0.1, 2, 10.0).unwrap();
        let s = GermSampler::new(4, 5);
        let n = 100_000;
        // pairs sharing lag 1.5
        let pairs: Vec<(f64, f64)> = (0..10).map(|k| (-4.0 + 0.6 * k as f64, -2.5 + 0.6 * k as f64)).collect();
        let mut acc = vec![(0.0f64, 0.0f64); pairs.len()];
        for i in 0..n {
            let y = s.sample_germ(0, i, Purpose::Evaluation);
            for (p, &(x1, x2)) in pairs.iter().enumerate() {
                let prod = field.potential(x1, &y) * field.potential(x2, &y);
                acc[p].0 += prod;
                acc[p].1 += prod * prod;
            }
        }
        let expect = field.covariance(0.0, 1.5);
        for (p, &(x1, x2)) in pairs.iter().enumerate() {
            assert!((field.covariance(x1, x2) - expect).abs() < 1e-12);
            let mean = acc[p].0 / n as f64;
            let se = ((acc[p].1 / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - expect).abs() < 5.0 * se, "pair {p}: {mean} vs {expect}");
        }
    }

    #[test]
    fn kappa_is_positive_but_unbounded_in_practice() {
        let f = trig(0.4);
        let xs: Vec<f64> = (0..21).map(|k| -5.0 + 0.5 * k as f64).collect();
        let r = kappa_range(&f, &xs, &GermSampler::new(4, 3), 2000);
        assert!(r.min > 0.0);
        assert!(r.min < 1.0 && r.max > 1.0);
    }
}
