//! Post-hoc analysis of a coefficient vector: Monte Carlo energy and error
//! estimates, empirical CDFs of `u_c` at one or two points, deterministic
//! per-germ reference solves and log-log rate fits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{Assembler, CoefficientVector, HessianStage};
use crate::fem1d::Mesh1D;
use crate::problem::Setup;
use crate::quadrature::{gauss_hermite, gauss_legendre};
use crate::random_field::{GermSampler, Purpose};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub sample_count: usize,
}

impl EnergyEstimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            standard_error: (var / n as f64).sqrt(),
            sample_count: n,
        })
    }

    pub fn std_dev(&self) -> f64 {
        self.standard_error * (self.sample_count as f64).sqrt()
    }
}

/// Germs `0..n` of `(sampler, iteration, purpose)`, computed in parallel and
/// returned in index order.
pub(crate) fn map_germs<T, F>(
    sampler: &GermSampler,
    iteration: u64,
    purpose: Purpose,
    n: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|s| {
            let y = sampler.sample_germ(iteration, s as u64, purpose);
            f(&y)
        })
        .collect()
}

/// Per-germ energies of `u_c` on a given stream.
pub fn energy_samples(
    asm: &Assembler,
    c: &CoefficientVector,
    sampler: &GermSampler,
    iteration: u64,
    purpose: Purpose,
    n: usize,
) -> Result<Vec<f64>> {
    map_germs(sampler, iteration, purpose, n, |y| asm.energy_sample(c, y))
}

pub fn estimate_energy_with(asm: &Assembler, c: &CoefficientVector, n_samples: usize, seed: u64) -> Result<EnergyEstimate> {
    let sampler = GermSampler::new(asm.germ_dim(), seed);
    EnergyEstimate::from_samples(&energy_samples(asm, c, &sampler, 0, Purpose::Evaluation, n_samples)?)
}

/// Monte Carlo estimate of `J(c)`.
pub fn estimate_energy(setup: &Setup, c: &CoefficientVector, n_samples: usize, seed: u64) -> Result<EnergyEstimate> {
    estimate_energy_with(&Assembler::new(setup)?, c, n_samples, seed)
}

/// Monte Carlo estimate of `E(u*)` from the closed-form per-germ solution,
/// integrated on a fine composite Gauss–Legendre grid that does not use the
/// finite element mesh.
pub fn exact_energy_mc(setup: &Setup, n_samples: usize, seed: u64) -> Result<EnergyEstimate> {
    let problem = &setup.problem;
    problem.exact_solution.ok_or(Error::MissingExactSolution)?;
    let panels = ((problem.length * 40.0).ceil() as usize).max(64);
    let (gx, gw) = gauss_legendre(8);
    let width = problem.length / panels as f64;
    let mut xs = Vec::with_capacity(panels * gx.len());
    let mut ws = Vec::with_capacity(panels * gx.len());
    for p in 0..panels {
        let a = problem.lower() + p as f64 * width;
        for (xi, wi) in gx.iter().zip(&gw) {
            xs.push(a + 0.5 * width * (xi + 1.0));
            ws.push(0.5 * width * wi);
        }
    }
    let sampler = GermSampler::new(setup.basis.dim(), seed);
    let samples = map_germs(&sampler, 0, Purpose::Evaluation, n_samples, |y| {
        let u = problem.exact_values(&xs, y)?;
        let du = problem.exact_derivatives(&xs, y)?;
        let mut acc = 0.0;
        for q in 0..xs.len() {
            let kappa = problem.field.eval_kappa(xs[q], y);
            acc += ws[q] * problem.energy_density(xs[q], u[q], du[q], y, kappa);
        }
        Ok(acc)
    })?;
    EnergyEstimate::from_samples(&samples)
}

/// Monte Carlo estimate of `E[(u*(x, Y) - u_c(x, Y))²]`.
pub fn pointwise_l2_error(
    setup: &Setup,
    c: &CoefficientVector,
    x: f64,
    n_samples: usize,
    seed: u64,
) -> Result<EnergyEstimate> {
    setup.problem.exact_solution.ok_or(Error::MissingExactSolution)?;
    let asm = Assembler::new(setup)?;
    let sampler = GermSampler::new(asm.germ_dim(), seed);
    let samples = map_germs(&sampler, 0, Purpose::Evaluation, n_samples, |y| {
        let exact = setup.problem.exact_values(&[x], y)?[0];
        let approx = asm.solution_at(c, y, &[x])?[0];
        Ok((exact - approx).powi(2))
    })?;
    EnergyEstimate::from_samples(&samples)
}

/// Least-squares projection of the exact solution's nodal interpolant onto
/// `V_M ⊗ S_N`, fitted on `n_samples` sampled germs.
pub fn project_exact_solution(setup: &Setup, n_samples: usize, seed: u64) -> Result<CoefficientVector> {
    let problem = &setup.problem;
    problem.exact_solution.ok_or(Error::MissingExactSolution)?;
    let m = setup.mesh.interior();
    let nb = setup.basis.len();
    if n_samples < nb {
        return Err(Error::TooFewSamples {
            needed: nb,
            got: n_samples,
        });
    }
    let interior = &setup.mesh.nodes()[1..=m];
    let sampler = GermSampler::new(setup.basis.dim(), seed);
    let rows = map_germs(&sampler, 0, Purpose::Evaluation, n_samples, |y| {
        Ok((setup.basis.eval_all(y)?, problem.exact_values(interior, y)?))
    })?;
    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    let mut rhs = DMatrix::<f64>::zeros(nb, m);
    for (psi, u) in &rows {
        for a in 0..nb {
            for b in 0..nb {
                gram[(a, b)] += psi[a] * psi[b];
            }
            for i in 0..m {
                rhs[(a, i)] += psi[a] * u[i];
            }
        }
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("projection Gram matrix".into()))?;
    let sol = chol.solve(&rhs);
    let mut c = CoefficientVector::zeros(m, nb);
    for j in 0..nb {
        for i in 0..m {
            c.set(i, j, sol[(j, i)]);
        }
    }
    Ok(c)
}

/// Empirical (joint) CDF on a threshold grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfEstimate {
    pub points: Vec<f64>,
    /// One threshold axis per point.
    pub thresholds: Vec<Vec<f64>>,
    /// Row-major over the threshold axes (last axis fastest).
    pub probabilities: Vec<f64>,
    pub sample_count: usize,
}

impl CdfEstimate {
    /// Empirical CDF of per-sample value tuples `values[s][d]`.
    pub fn from_values(points: &[f64], thresholds: &[Vec<f64>], values: &[Vec<f64>]) -> Result<Self> {
        let d = points.len();
        if d == 0 || d > 2 || thresholds.len() != d {
            return Err(Error::InvalidConfig(
                "a CDF needs one or two points, each with a threshold axis".into(),
            ));
        }
        if values.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = values.len() as f64;
        let probabilities = if d == 1 {
            let mut sorted: Vec<f64> = values.iter().map(|v| v[0]).collect();
            sorted.sort_by(f64::total_cmp);
            thresholds[0]
                .iter()
                .map(|&t| sorted.partition_point(|&v| v <= t) as f64 / n)
                .collect()
        } else {
            let (t0, t1) = (&thresholds[0], &thresholds[1]);
            let mut counts = vec![0usize; t0.len() * t1.len()];
            for v in values {
                for (a, &ta) in t0.iter().enumerate() {
                    if v[0] > ta {
                        continue;
                    }
                    for (b, &tb) in t1.iter().enumerate() {
                        if v[1] <= tb {
                            counts[a * t1.len() + b] += 1;
                        }
                    }
                }
            }
            counts.iter().map(|&k| k as f64 / n).collect()
        };
        Ok(Self {
            points: points.to_vec(),
            thresholds: thresholds.to_vec(),
            probabilities,
            sample_count: values.len(),
        })
    }
}

/// `u_c(x_d, y_s)` for `d` over `points`, `s` over `0..n_samples`.
pub fn sample_solution_values(
    asm: &Assembler,
    c: &CoefficientVector,
    points: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let sampler = GermSampler::new(asm.germ_dim(), seed);
    map_germs(&sampler, 0, Purpose::Evaluation, n_samples, |y| asm.solution_at(c, y, points))
}

/// `u*(x_d, y_s)` on the same germ stream as [`sample_solution_values`].
pub fn sample_exact_values(setup: &Setup, points: &[f64], n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = GermSampler::new(setup.basis.dim(), seed);
    map_germs(&sampler, 0, Purpose::Evaluation, n_samples, |y| {
        setup.problem.exact_values(points, y)
    })
}

/// Empirical CDF of `u_c` at one or two points.
pub fn empirical_cdf(
    setup: &Setup,
    c: &CoefficientVector,
    points: &[f64],
    thresholds: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<CdfEstimate> {
    let asm = Assembler::new(setup)?;
    let values = sample_solution_values(&asm, c, points, n_samples, seed)?;
    CdfEstimate::from_values(points, thresholds, &values)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn kolmogorov_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Deterministic solves of one sampled linear problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    /// FEM nodal values on all `M + 2` nodes.
    pub fem: Vec<f64>,
    /// Closed-form solution at the same nodes, when one is known.
    pub closed_form: Option<Vec<f64>>,
}

/// FEM solve of `-(κ(·, y) u')' = 0` with the instance's boundary data.
pub fn reference_solve_linear(setup: &Setup, y: &[f64]) -> Result<ReferenceSolution> {
    if !setup.problem.is_linear() || !setup.problem.source.is_none() {
        return Err(Error::NotLinear);
    }
    let asm = Assembler::new(setup)?;
    let m = setup.mesh.interior();
    let zero = asm.zero_coefficients();
    let (a, _) = asm.spatial_hessian(&zero, y, HessianStage::Linear)?;
    // Residual of the lifting alone, read off the Ψ_0 block of the gradient.
    let g = asm.gradient_sample(&zero, y)?;
    let psi0 = setup.basis.eval_all(y)?[0];
    let rhs: Vec<f64> = g.data[..m].iter().map(|v| -v / psi0).collect();
    let interior = a
        .cholesky_solve(&rhs)
        .ok_or_else(|| Error::Singular("stiffness matrix".into()))?;
    let mut fem = Vec::with_capacity(m + 2);
    fem.push(setup.problem.boundary.left_value);
    fem.extend(interior);
    fem.push(setup.problem.boundary.right_value);
    let closed_form = match setup.problem.exact_solution {
        Some(_) => Some(setup.problem.exact_values(setup.mesh.nodes(), y)?),
        None => None,
    };
    Ok(ReferenceSolution { fem, closed_form })
}

/// Max nodal error of the FEM solve against the closed form.
pub fn reference_nodal_error(setup: &Setup, y: &[f64]) -> Result<f64> {
    let r = reference_solve_linear(setup, y)?;
    let exact = r.closed_form.ok_or(Error::MissingExactSolution)?;
    Ok(r.fem.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Least-squares fit of `log(J_n - J*)` against `log n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// Some records in range had a non-positive gap and were dropped.
    pub truncated: bool,
}

pub fn fit_convergence_rate(records: &[(usize, f64)], j_star: f64, n_range: (usize, usize)) -> Result<RateFit> {
    let mut truncated = false;
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|(n, _)| *n >= n_range.0 && *n <= n_range.1 && *n > 0)
        .filter_map(|&(n, j)| {
            let gap = j - j_star;
            if gap > 0.0 && gap.is_finite() {
                Some(((n as f64).ln(), gap.ln()))
            } else {
                truncated = true;
                None
            }
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: pts.len(),
        });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        points_used: pts.len(),
        truncated,
    })
}

/// `J(c) = J(0) + g₀ · c + ½ cᵀ H c` for a linear problem, with the
/// expectation over the germ taken by tensor Gauss–Hermite quadrature.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub energy_at_zero: f64,
    pub gradient_at_zero: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl QuadraticModel {
    pub fn build(asm: &Assembler, points_per_dim: usize) -> Result<Self> {
        let setup = asm.setup();
        if !setup.problem.is_linear() {
            return Err(Error::NotLinear);
        }
        let k = asm.germ_dim();
        let total = points_per_dim
            .checked_pow(k as u32)
            .filter(|&t| t <= 1 << 22)
            .ok_or_else(|| Error::InvalidConfig("tensor quadrature too large".into()))?;
        let (gx, gw) = gauss_hermite(points_per_dim);
        let m = asm.spatial();
        let nb = asm.stochastic();
        let dim = asm.dim();
        let zero = asm.zero_coefficients();
        let mut j0 = 0.0;
        let mut g0 = DVector::<f64>::zeros(dim);
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut y = vec![0.0; k];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for yk in y.iter_mut() {
                let q = rem % points_per_dim;
                rem /= points_per_dim;
                *yk = gx[q];
                w *= gw[q];
            }
            j0 += w * asm.energy_sample(&zero, &y)?;
            let g = asm.gradient_sample(&zero, &y)?;
            for (a, v) in g0.iter_mut().zip(&g.data) {
                *a += w * v;
            }
            let (t, psi) = asm.spatial_hessian(&zero, &y, HessianStage::Linear)?;
            for a in 0..nb {
                for b in 0..nb {
                    let pab = w * psi[a] * psi[b];
                    for i in 0..m {
                        h[(a * m + i, b * m + i)] += pab * t.diag[i];
                        if i + 1 < m {
                            h[(a * m + i, b * m + i + 1)] += pab * t.off[i];
                            h[(a * m + i + 1, b * m + i)] += pab * t.off[i];
                        }
                    }
                }
            }
        }
        Ok(Self {
            energy_at_zero: j0,
            gradient_at_zero: g0,
            hessian: h,
        })
    }

    pub fn energy(&self, c: &[f64]) -> f64 {
        let c = DVector::from_column_slice(c);
        self.energy_at_zero + self.gradient_at_zero.dot(&c) + 0.5 * c.dot(&(&self.hessian * &c))
    }

    pub fn minimizer(&self) -> Result<Vec<f64>> {
        let chol = self
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("expected Hessian".into()))?;
        Ok((-chol.solve(&self.gradient_at_zero)).as_slice().to_vec())
    }

    pub fn min_energy(&self) -> Result<f64> {
        Ok(self.energy(&self.minimizer()?))
    }
}

/// Nodal interpolation error helper for refinement studies: FEM error
/// of the sampled linear problem on meshes with `interior` nodes.
pub fn fem_refinement_errors(setup: &Setup, y: &[f64], interiors: &[usize]) -> Result<Vec<(f64, f64)>> {
    interiors
        .iter()
        .map(|&m| {
            let mesh = Mesh1D::new(setup.problem.length, m)?;
            let s = Setup::new(setup.problem.clone(), mesh, setup.basis.clone())?;
            Ok((s.mesh.h(), reference_nodal_error(&s, y)?))
        })
        .collect()
}
