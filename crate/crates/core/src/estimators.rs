//! Single-germ estimators of the gradient and of the block-diagonal Hessian
//! of `J(c) = E[∫_D ½ κ |u_c'|² + F(x, u_c, Y) + s u_c dx]`, and their
//! control-variate variants.
//!
//! `u_c(x, y) = w(x) + Σ_{i,j} c_{ij} φ_i(x) Ψ_j(y)` where `w` lifts the
//! boundary data. The coefficient vector is stored `j`-major: block `j`
//! holds `c_{1j}, …, c_{Mj}`. Every estimator first collapses the
//! stochastic basis, `v_i(y) = Σ_j c_{ij} Ψ_j(y)`, so per-sample work is a
//! deterministic 1D assembly followed by an outer product with `Ψ(y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{QuadratureRule, DEFAULT_QUADRATURE_POINTS};
use crate::linalg::SymTridiagonal;
use crate::pc_basis::MomentTable;
use crate::problem::Setup;
use crate::random_field::{GermSampler, Purpose};

/// Coefficients `c_{ij}` of `u_c`, `j`-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    spatial: usize,
    stochastic: usize,
    data: Vec<f64>,
}

impl CoefficientVector {
    pub fn zeros(spatial: usize, stochastic: usize) -> Self {
        Self {
            spatial,
            stochastic,
            data: vec![0.0; spatial * stochastic],
        }
    }

    pub fn from_vec(spatial: usize, stochastic: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != spatial * stochastic {
            return Err(Error::DimensionMismatch {
                what: "coefficient vector",
                expected: spatial * stochastic,
                actual: data.len(),
            });
        }
        Ok(Self {
            spatial,
            stochastic,
            data,
        })
    }

    /// `M`.
    pub fn spatial(&self) -> usize {
        self.spatial
    }

    /// `N + 1`.
    pub fn stochastic(&self) -> usize {
        self.stochastic
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat position of `c_{i+1, j}` (`i` is zero-based here).
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        j * self.spatial + i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.offset(i, j);
        self.data[k] = value;
    }

    /// Spatial coefficients multiplying `Ψ_j`.
    pub fn block(&self, j: usize) -> &[f64] {
        &self.data[j * self.spatial..(j + 1) * self.spatial]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Control-variate flavour for the diffusion part of the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    #[default]
    None,
    /// `κ̃₀(x, Y) = κ(x, E[Y])`.
    Order0,
    /// `κ̃₁(x, Y) = κ(x, E[Y]) + ∇_y κ(x, E[Y]) · Y`.
    Order1,
}

impl CvMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CvMode::None => "none",
            CvMode::Order0 => "order0",
            CvMode::Order1 => "order1",
        }
    }
}

/// Which parts of the Hessian estimator enter a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianStage {
    /// `Ψ_j² A(y)` only.
    Linear,
    /// `Ψ_j² (A(y) + B(c, y))`.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub data: Vec<f64>,
    /// Germ of a single-sample estimate; `None` for batch averages.
    pub germ: Option<Vec<f64>>,
    pub cv_mode: CvMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlockSample {
    /// The `N + 1` diagonal `M × M` blocks.
    pub blocks: Vec<SymTridiagonal>,
    pub germ: Option<Vec<f64>>,
    pub stage: HessianStage,
}

/// Per-component multipliers `λ*` for `X̃ = X + λ (Z - E[Z])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariateState {
    pub mode: CvMode,
    pub lambda: Vec<f64>,
    pub pilot_size: usize,
}

impl ControlVariateState {
    pub fn disabled() -> Self {
        Self {
            mode: CvMode::None,
            lambda: Vec::new(),
            pilot_size: 0,
        }
    }

    pub fn with_lambda(mode: CvMode, lambda: Vec<f64>) -> Self {
        Self {
            mode,
            lambda,
            pilot_size: 0,
        }
    }
}

/// Diffusion and reaction parts of the spatial residual for one germ.
#[derive(Debug, Clone)]
struct Residuals {
    psi: Vec<f64>,
    /// `∫ κ u' φ_i'`.
    diffusion: Vec<f64>,
    /// `∫ (f(u) + s) φ_i`.
    reaction: Vec<f64>,
    /// `∫ κ̃ u' φ_i'` when a control variate is requested.
    surrogate: Option<Vec<f64>>,
}

/// Precomputed tables for one [`Setup`]: quadrature, field loadings at the
/// quadrature points, moment tables and the surrogate stiffness operators
/// used by the control variates.
#[derive(Debug, Clone)]
pub struct Assembler {
    setup: Setup,
    rule: QuadratureRule,
    moments: MomentTable,
    germ_dim: usize,
    scale: Vec<f64>,
    loadings: Vec<f64>,
    /// `∫ κ(x, 0) φ_a' φ_b'` over all `M + 2` nodes.
    mean_stiffness: SymTridiagonal,
    /// `∫ ∂_{y_k} κ(x, 0) φ_a' φ_b'`, one per germ component.
    slope_stiffness: Vec<SymTridiagonal>,
}

impl Assembler {
    pub fn new(setup: &Setup) -> Result<Self> {
        Self::with_quadrature(setup, DEFAULT_QUADRATURE_POINTS)
    }

    pub fn with_quadrature(setup: &Setup, q: usize) -> Result<Self> {
        let rule = setup.mesh.quadrature(q)?;
        let germ_dim = setup.basis.dim();
        let width = germ_dim.max(setup.problem.field.min_germ_dim());
        let mut scale = Vec::with_capacity(rule.len());
        let mut loadings = Vec::with_capacity(rule.len() * germ_dim);
        let mut buf = vec![0.0; width];
        for &x in rule.points() {
            scale.push(setup.problem.field.log_linear_form(x, &mut buf));
            loadings.extend_from_slice(&buf[..germ_dim]);
        }
        let nodes = setup.mesh.interior() + 2;
        let h = setup.mesh.h();
        let mut mean_stiffness = SymTridiagonal::zeros(nodes);
        let mut slope_stiffness = vec![SymTridiagonal::zeros(nodes); germ_dim];
        for p in 0..rule.len() {
            let e = rule.element_of(p);
            let base = rule.weights()[p] / (h * h);
            let add = |t: &mut SymTridiagonal, coef: f64| {
                t.diag[e] += base * coef;
                t.diag[e + 1] += base * coef;
                t.off[e] -= base * coef;
            };
            add(&mut mean_stiffness, scale[p]);
            for (k, t) in slope_stiffness.iter_mut().enumerate() {
                add(t, scale[p] * loadings[p * germ_dim + k]);
            }
        }
        Ok(Self {
            setup: setup.clone(),
            moments: setup.basis.moment_table(),
            rule,
            germ_dim,
            scale,
            loadings,
            mean_stiffness,
            slope_stiffness,
        })
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn moments(&self) -> &MomentTable {
        &self.moments
    }

    pub fn spatial(&self) -> usize {
        self.setup.mesh.interior()
    }

    pub fn stochastic(&self) -> usize {
        self.setup.basis.len()
    }

    pub fn germ_dim(&self) -> usize {
        self.germ_dim
    }

    pub fn dim(&self) -> usize {
        self.spatial() * self.stochastic()
    }

    pub fn zero_coefficients(&self) -> CoefficientVector {
        CoefficientVector::zeros(self.spatial(), self.stochastic())
    }

    fn check(&self, c: &CoefficientVector, y: &[f64]) -> Result<()> {
        if c.spatial() != self.spatial() || c.stochastic() != self.stochastic() {
            return Err(Error::DimensionMismatch {
                what: "coefficient vector",
                expected: self.dim(),
                actual: c.len(),
            });
        }
        if y.len() != self.germ_dim {
            return Err(Error::DimensionMismatch {
                what: "germ",
                expected: self.germ_dim,
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Nodal values of `u_c(·, y)` on all `M + 2` nodes, boundary data
    /// included, together with `Ψ(y)`.
    pub fn nodal_values(&self, c: &CoefficientVector, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(c, y)?;
        let m = self.spatial();
        let psi = self.setup.basis.eval_all(y)?;
        let mut nodal = vec![0.0; m + 2];
        nodal[0] = self.setup.problem.boundary.left_value;
        nodal[m + 1] = self.setup.problem.boundary.right_value;
        for (j, &pj) in psi.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for (v, &cij) in nodal[1..=m].iter_mut().zip(c.block(j)) {
                *v += cij * pj;
            }
        }
        Ok((nodal, psi))
    }

    /// `u_c(x, y)` at the given points.
    pub fn solution_at(&self, c: &CoefficientVector, y: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
        let (nodal, _) = self.nodal_values(c, y)?;
        xs.iter().map(|&x| self.setup.mesh.interpolate(&nodal, x)).collect()
    }

    /// `log(κ/s)` at every quadrature point.
    fn exponents(&self, y: &[f64]) -> Vec<f64> {
        let k = self.germ_dim;
        self.loadings
            .chunks_exact(k)
            .map(|a| a.iter().zip(y).map(|(a, y)| a * y).sum())
            .collect()
    }

    /// `κ(x_p, y)` at every quadrature point.
    pub fn kappa_at_points(&self, y: &[f64]) -> Vec<f64> {
        self.exponents(y)
            .iter()
            .zip(&self.scale)
            .map(|(e, s)| s * e.exp())
            .collect()
    }

    fn residuals(&self, c: &CoefficientVector, y: &[f64], cv: CvMode) -> Result<Residuals> {
        let (nodal, psi) = self.nodal_values(c, y)?;
        let m = self.spatial();
        let h = self.setup.mesh.h();
        let problem = &self.setup.problem;
        let exps = self.exponents(y);
        let mut diffusion = vec![0.0; m + 2];
        let mut reaction = vec![0.0; m + 2];
        let mut surrogate = (cv != CvMode::None).then(|| vec![0.0; m + 2]);
        let with_reaction = !problem.nonlinearity.is_none() || !problem.source.is_none();
        for p in 0..self.rule.len() {
            let e = self.rule.element_of(p);
            let w = self.rule.weights()[p];
            let kappa = self.scale[p] * exps[p].exp();
            let x = self.rule.points()[p];
            if !kappa.is_finite() {
                return Err(Error::NonFinite { what: "diffusivity", x });
            }
            let du = (nodal[e + 1] - nodal[e]) / h;
            let flux = w * kappa * du / h;
            diffusion[e] -= flux;
            diffusion[e + 1] += flux;
            if let Some(sur) = surrogate.as_mut() {
                let kt = match cv {
                    CvMode::Order0 => self.scale[p],
                    _ => self.scale[p] * (1.0 + exps[p]),
                };
                let flux = w * kt * du / h;
                sur[e] -= flux;
                sur[e + 1] += flux;
            }
            if with_reaction {
                let (l, r) = self.rule.shape(p);
                let u = nodal[e] * l + nodal[e + 1] * r;
                let g = problem.nonlinearity.value(x, u, y) + problem.source.eval(x, y, kappa);
                if !g.is_finite() {
                    return Err(Error::NonFinite { what: "reaction term", x });
                }
                reaction[e] += w * g * l;
                reaction[e + 1] += w * g * r;
            }
        }
        let interior = |v: Vec<f64>| v[1..=m].to_vec();
        Ok(Residuals {
            psi,
            diffusion: interior(diffusion),
            reaction: interior(reaction),
            surrogate: surrogate.map(interior),
        })
    }

    fn outer(&self, spatial: &[f64], psi: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for &pj in psi {
            out.extend(spatial.iter().map(|r| r * pj));
        }
        out
    }

    /// Unbiased single-germ gradient `g(c, y)`.
    pub fn gradient_sample(&self, c: &CoefficientVector, y: &[f64]) -> Result<GradientSample> {
        let r = self.residuals(c, y, CvMode::None)?;
        let total: Vec<f64> = r.diffusion.iter().zip(&r.reaction).map(|(a, b)| a + b).collect();
        Ok(GradientSample {
            data: self.outer(&total, &r.psi),
            germ: Some(y.to_vec()),
            cv_mode: CvMode::None,
        })
    }

    /// Diffusion part `g¹` and its surrogate `Z` for one germ.
    pub fn diffusion_and_surrogate(
        &self,
        c: &CoefficientVector,
        y: &[f64],
        mode: CvMode,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mode = if mode == CvMode::None { CvMode::Order0 } else { mode };
        let r = self.residuals(c, y, mode)?;
        let z = r.surrogate.as_deref().unwrap_or(&[]);
        Ok((self.outer(&r.diffusion, &r.psi), self.outer(z, &r.psi)))
    }

    /// `E[Z]` for the surrogate of mode `mode`, from the moment tables.
    pub fn surrogate_mean(&self, c: &CoefficientVector, mode: CvMode) -> Vec<f64> {
        let m = self.spatial();
        let nb = self.stochastic();
        let mut mean = vec![0.0; self.dim()];
        if mode == CvMode::None {
            return mean;
        }
        // Nodal vectors per stochastic index, with the lifting on Ψ_0.
        let full = |j: usize| {
            let mut v = vec![0.0; m + 2];
            v[1..=m].copy_from_slice(c.block(j));
            if j == 0 {
                v[0] = self.setup.problem.boundary.left_value;
                v[m + 1] = self.setup.problem.boundary.right_value;
            }
            v
        };
        let nodal: Vec<Vec<f64>> = (0..nb).map(full).collect();
        for (j, v) in nodal.iter().enumerate() {
            let t = self.mean_stiffness.matvec(v);
            let norm = self.moments.pair_moment(j, j);
            for i in 0..m {
                mean[j * m + i] += norm * t[i + 1];
            }
        }
        if mode == CvMode::Order1 {
            for (k, stiff) in self.slope_stiffness.iter().enumerate() {
                let entries = self.moments.linear_entries(k);
                if entries.is_empty() {
                    continue;
                }
                let products: Vec<Vec<f64>> = nodal.iter().map(|v| stiff.matvec(v)).collect();
                for &(a, b, val) in entries {
                    for i in 0..m {
                        mean[a * m + i] += val * products[b][i + 1];
                    }
                }
            }
        }
        mean
    }

    /// Gradient with the diffusion part replaced by `X + λ (Z - E[Z])`.
    /// `surrogate_mean` must be [`Self::surrogate_mean`] at the same `c`.
    pub fn cv_gradient_sample_with_mean(
        &self,
        c: &CoefficientVector,
        y: &[f64],
        state: &ControlVariateState,
        surrogate_mean: &[f64],
    ) -> Result<GradientSample> {
        if state.mode == CvMode::None {
            return self.gradient_sample(c, y);
        }
        if state.lambda.len() != self.dim() || surrogate_mean.len() != self.dim() {
            return Err(Error::MissingPilot);
        }
        let r = self.residuals(c, y, state.mode)?;
        let z = r.surrogate.as_ref().expect("surrogate requested");
        let m = self.spatial();
        let mut data = Vec::with_capacity(self.dim());
        for (j, &pj) in r.psi.iter().enumerate() {
            for i in 0..m {
                let k = j * m + i;
                let x = r.diffusion[i] * pj;
                let zz = z[i] * pj;
                data.push(x + state.lambda[k] * (zz - surrogate_mean[k]) + r.reaction[i] * pj);
            }
        }
        Ok(GradientSample {
            data,
            germ: Some(y.to_vec()),
            cv_mode: state.mode,
        })
    }

    pub fn cv_gradient_sample(
        &self,
        c: &CoefficientVector,
        y: &[f64],
        state: &ControlVariateState,
    ) -> Result<GradientSample> {
        let mean = self.surrogate_mean(c, state.mode);
        self.cv_gradient_sample_with_mean(c, y, state, &mean)
    }

    /// Tridiagonal `A(y)` (and `+ B(c, y)` for [`HessianStage::Full`]) on
    /// the interior nodes, plus `Ψ(y)`.
    pub fn spatial_hessian(
        &self,
        c: &CoefficientVector,
        y: &[f64],
        stage: HessianStage,
    ) -> Result<(SymTridiagonal, Vec<f64>)> {
        let (nodal, psi) = self.nodal_values(c, y)?;
        let m = self.spatial();
        let h = self.setup.mesh.h();
        let problem = &self.setup.problem;
        let exps = self.exponents(y);
        let nonlinear = stage == HessianStage::Full && !problem.nonlinearity.is_none();
        let mut t = SymTridiagonal::zeros(m + 2);
        for p in 0..self.rule.len() {
            let e = self.rule.element_of(p);
            let w = self.rule.weights()[p];
            let x = self.rule.points()[p];
            let kappa = self.scale[p] * exps[p].exp();
            if !kappa.is_finite() {
                return Err(Error::NonFinite { what: "diffusivity", x });
            }
            let a = w * kappa / (h * h);
            t.diag[e] += a;
            t.diag[e + 1] += a;
            t.off[e] -= a;
            if nonlinear {
                let (l, r) = self.rule.shape(p);
                let u = nodal[e] * l + nodal[e + 1] * r;
                let d = problem.nonlinearity.derivative(x, u, y);
                if !d.is_finite() {
                    return Err(Error::NonFinite { what: "reaction derivative", x });
                }
                t.diag[e] += w * d * l * l;
                t.diag[e + 1] += w * d * r * r;
                t.off[e] += w * d * l * r;
            }
        }
        let interior = SymTridiagonal::from_parts(t.diag[1..=m].to_vec(), t.off[1..m].to_vec());
        Ok((interior, psi))
    }

    /// Diagonal blocks `Ψ_j(y)² (A(y) [+ B(c, y)])` of the Hessian estimator.
    pub fn hessian_block_sample(
        &self,
        c: &CoefficientVector,
        y: &[f64],
        stage: HessianStage,
    ) -> Result<HessianBlockSample> {
        let (t, psi) = self.spatial_hessian(c, y, stage)?;
        Ok(HessianBlockSample {
            blocks: psi.iter().map(|p| t.scaled(p * p)).collect(),
            germ: Some(y.to_vec()),
            stage,
        })
    }

    /// `∫_D ½ κ |u_c'|² + F(x, u_c, y) + s u_c dx` for one germ.
    pub fn energy_sample(&self, c: &CoefficientVector, y: &[f64]) -> Result<f64> {
        let (nodal, _) = self.nodal_values(c, y)?;
        let h = self.setup.mesh.h();
        let problem = &self.setup.problem;
        let exps = self.exponents(y);
        let mut total = 0.0;
        for p in 0..self.rule.len() {
            let e = self.rule.element_of(p);
            let x = self.rule.points()[p];
            let (l, r) = self.rule.shape(p);
            let u = nodal[e] * l + nodal[e + 1] * r;
            let du = (nodal[e + 1] - nodal[e]) / h;
            let kappa = self.scale[p] * exps[p].exp();
            total += self.rule.weights()[p] * problem.energy_density(x, u, du, y, kappa);
        }
        if !total.is_finite() {
            return Err(Error::NonFinite {
                what: "energy",
                x: f64::NAN,
            });
        }
        Ok(total)
    }

    /// Pilot estimate of `λ* = -Cov(X, Z) / Var(Z)` per gradient component,
    /// where `X` is the diffusion part of the gradient and `Z` its surrogate.
    /// Components whose surrogate has zero pilot variance get `λ = 0`.
    pub fn estimate_cv_lambda(
        &self,
        c: &CoefficientVector,
        mode: CvMode,
        pilot_size: usize,
        sampler: &GermSampler,
        round: u64,
    ) -> Result<ControlVariateState> {
        if mode == CvMode::None {
            return Ok(ControlVariateState::disabled());
        }
        if pilot_size < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: pilot_size,
            });
        }
        let n = self.dim();
        // Welford co-moments.
        let mut mean_x = vec![0.0; n];
        let mut mean_z = vec![0.0; n];
        let mut cxz = vec![0.0; n];
        let mut czz = vec![0.0; n];
        let mut y = vec![0.0; self.germ_dim];
        for s in 0..pilot_size {
            sampler.sample_into(round, s as u64, Purpose::Pilot, &mut y);
            let (x, z) = self.diffusion_and_surrogate(c, &y, mode)?;
            let count = (s + 1) as f64;
            for k in 0..n {
                let dx = x[k] - mean_x[k];
                let dz = z[k] - mean_z[k];
                mean_x[k] += dx / count;
                mean_z[k] += dz / count;
                cxz[k] += dx * (z[k] - mean_z[k]);
                czz[k] += dz * (z[k] - mean_z[k]);
            }
        }
        let lambda = cxz
            .iter()
            .zip(&czz)
            .zip(&mean_z)
            .map(|((&cov, &var), &mz)| {
                let tiny = 1e-14 * (1.0 + mz * mz) * pilot_size as f64;
                if var > tiny {
                    -cov / var
                } else {
                    0.0
                }
            })
            .collect();
        Ok(ControlVariateState {
            mode,
            lambda,
            pilot_size,
        })
    }
}

/// Batch members that can be averaged.
pub trait Averageable: Clone {
    fn same_shape(&self, other: &Self) -> bool;
    fn accumulate(&mut self, other: &Self);
    fn scale(&mut self, factor: f64);
    fn clear_germ(&mut self);
}

impl Averageable for GradientSample {
    fn same_shape(&self, other: &Self) -> bool {
        self.data.len() == other.data.len() && self.cv_mode == other.cv_mode
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    fn clear_germ(&mut self) {
        self.germ = None;
    }
}

impl Averageable for HessianBlockSample {
    fn same_shape(&self, other: &Self) -> bool {
        self.stage == other.stage
            && self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.dim() == b.dim())
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_scaled(1.0, b);
        }
    }

    fn scale(&mut self, factor: f64) {
        self.blocks.iter_mut().for_each(|b| b.scale(factor));
    }

    fn clear_germ(&mut self) {
        self.germ = None;
    }
}

/// Arithmetic mean of a batch, summed in index order.
pub fn minibatch_average<T: Averageable>(samples: &[T]) -> Result<T> {
    let (first, rest) = samples.split_first().ok_or(Error::EmptyBatch)?;
    let mut acc = first.clone();
    for s in rest {
        if !acc.same_shape(s) {
            return Err(Error::InconsistentBatch);
        }
        acc.accumulate(s);
    }
    if samples.len() > 1 {
        acc.scale(1.0 / samples.len() as f64);
    }
    acc.clear_germ();
    Ok(acc)
}

pub fn gradient_sample(setup: &Setup, c: &CoefficientVector, y: &[f64]) -> Result<GradientSample> {
    Assembler::new(setup)?.gradient_sample(c, y)
}

pub fn hessian_block_sample(
    setup: &Setup,
    c: &CoefficientVector,
    y: &[f64],
    stage: HessianStage,
) -> Result<HessianBlockSample> {
    Assembler::new(setup)?.hessian_block_sample(c, y, stage)
}

pub fn cv_gradient_sample(
    setup: &Setup,
    c: &CoefficientVector,
    y: &[f64],
    state: &ControlVariateState,
) -> Result<GradientSample> {
    Assembler::new(setup)?.cv_gradient_sample(c, y, state)
}

pub fn estimate_cv_lambda(
    setup: &Setup,
    c: &CoefficientVector,
    mode: CvMode,
    pilot_size: usize,
    seed: u64,
) -> Result<ControlVariateState> {
    let asm = Assembler::new(setup)?;
    let sampler = GermSampler::new(asm.germ_dim(), seed);
    asm.estimate_cv_lambda(c, mode, pilot_size, &sampler, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_linear_homogeneous, builtin_semilinear_nonhomogeneous_field};

    fn random_c(asm: &Assembler, seed: u64, scale: f64) -> CoefficientVector {
        let s = GermSampler::new(asm.dim(), seed);
        let v = s.sample_germ(0, 0, Purpose::Initialization);
        CoefficientVector::from_vec(asm.spatial(), asm.stochastic(), v.iter().map(|x| x * scale).collect()).unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero_gradient_for_linear_homogeneous() {
        let setup = builtin_linear_homogeneous(0.1, 2, 10.0, 8, 2).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let g = asm.gradient_sample(&asm.zero_coefficients(), &[0.3, -1.0, 0.2, 2.0]).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_germ_gradient_is_stiffness_action() {
        let setup = builtin_linear_homogeneous(0.1, 2, 10.0, 7, 2).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let m = asm.spatial();
        let h = setup.mesh.h();
        let mut c = asm.zero_coefficients();
        let spatial: Vec<f64> = (0..m).map(|i| (i as f64 * 0.7).sin()).collect();
        for (i, v) in spatial.iter().enumerate() {
            c.set(i, 0, *v);
        }
        let g = asm.gradient_sample(&c, &[0.0; 4]).unwrap();
        for i in 0..m {
            let left = if i > 0 { spatial[i - 1] } else { 0.0 };
            let right = if i + 1 < m { spatial[i + 1] } else { 0.0 };
            let expect = (2.0 * spatial[i] - left - right) / h;
            assert!((g.data[i] - expect).abs() < 1e-10);
        }
        // Ψ_j(0) = 0 for odd total degree
        assert!(g.data[m..2 * m].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hessian_blocks_at_mean_germ() {
        let setup = builtin_linear_homogeneous(0.2, 2, 10.0, 6, 1).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let h = setup.mesh.h();
        let hs = asm
            .hessian_block_sample(&asm.zero_coefficients(), &[0.0; 4], HessianStage::Linear)
            .unwrap();
        let b0 = &hs.blocks[0];
        for v in &b0.diag {
            assert!((v - 2.0 / h).abs() < 1e-12);
        }
        for v in &b0.off {
            assert!((v + 1.0 / h).abs() < 1e-12);
        }
        // Ψ_1(0) = 0
        assert!(hs.blocks[1].diag.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_hessian_is_independent_of_c() {
        let setup = builtin_linear_homogeneous(0.2, 2, 10.0, 6, 2).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let y = [0.3, 1.2, -0.7, 0.1];
        let a = asm.hessian_block_sample(&random_c(&asm, 1, 1.0), &y, HessianStage::Full).unwrap();
        let b = asm.hessian_block_sample(&random_c(&asm, 2, 1.0), &y, HessianStage::Full).unwrap();
        assert_eq!(a.blocks, b.blocks);
    }

    #[test]
    fn full_stage_adds_reaction_mass() {
        let setup = builtin_semilinear_nonhomogeneous_field(0.1, 2, 12.0, 10, 1).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let y = [0.0; 4];
        let c = asm.zero_coefficients();
        let (lin, _) = asm.spatial_hessian(&c, &y, HessianStage::Linear).unwrap();
        let (full, _) = asm.spatial_hessian(&c, &y, HessianStage::Full).unwrap();
        let h = setup.mesh.h();
        // cos(0) = 1: consistent mass matrix h/6 (4, 1)
        for i in 0..10 {
            assert!((full.diag[i] - lin.diag[i] - 2.0 * h / 3.0).abs() < 1e-12);
        }
        for i in 0..9 {
            assert!((full.off[i] - lin.off[i] - h / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lambda_reproduces_plain_gradient() {
        let setup = builtin_linear_homogeneous(0.1, 2, 10.0, 5, 2).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let c = random_c(&asm, 3, 1.0);
        let y = [0.5, -0.4, 1.1, 0.2];
        let plain = asm.gradient_sample(&c, &y).unwrap();
        for mode in [CvMode::Order0, CvMode::Order1] {
            let state = ControlVariateState::with_lambda(mode, vec![0.0; asm.dim()]);
            let cv = asm.cv_gradient_sample(&c, &y, &state).unwrap();
            for (a, b) in cv.data.iter().zip(&plain.data) {
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
        let missing = ControlVariateState::with_lambda(CvMode::Order1, vec![]);
        assert_eq!(asm.cv_gradient_sample(&c, &y, &missing), Err(Error::MissingPilot));
    }

    #[test]
    fn constant_surrogate_gives_zero_lambda() {
        // At c = 0 on a zero-data problem both X and Z vanish identically.
        let setup = builtin_linear_homogeneous(0.1, 2, 10.0, 5, 1).unwrap();
        let asm = Assembler::new(&setup).unwrap();
        let sampler = GermSampler::new(4, 1);
        let st = asm
            .estimate_cv_lambda(&asm.zero_coefficients(), CvMode::Order1, 50, &sampler, 0)
            .unwrap();
        assert!(st.lambda.iter().all(|&l| l == 0.0));
        assert!(asm
            .estimate_cv_lambda(&asm.zero_coefficients(), CvMode::Order1, 1, &sampler, 0)
            .is_err());
    }

    #[test]
    fn pilot_is_deterministic() {
        let setup = builtin_linear_homogeneous(0.1, 2, 10.0, 5, 1).unwrap();
        let a = estimate_cv_lambda(&setup, &CoefficientVector::from_vec(5, 5, vec![0.3; 25]).unwrap(), CvMode::Order0, 40, 7).unwrap();
        let b = estimate_cv_lambda(&setup, &CoefficientVector::from_vec(5, 5, vec![0.3; 25]).unwrap(), CvMode::Order0, 40, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minibatch_average_basics() {
        let g = |v: Vec<f64>| GradientSample {
            data: v,
            germ: Some(vec![0.0]),
            cv_mode: CvMode::None,
        };
        let same = vec![g(vec![0.1, 0.7]); 3];
        let avg = minibatch_average(&same).unwrap();
        assert!((avg.data[0] - 0.1).abs() < 1e-15 && (avg.data[1] - 0.7).abs() < 1e-15);
        assert!(avg.germ.is_none());
        let pair = minibatch_average(&[g(vec![1.0, 2.0]), g(vec![3.0, -2.0])]).unwrap();
        assert_eq!(pair.data, vec![2.0, 0.0]);
        assert_eq!(minibatch_average::<GradientSample>(&[]), Err(Error::EmptyBatch));
        assert_eq!(
            minibatch_average(&[g(vec![1.0]), g(vec![1.0, 2.0])]),
            Err(Error::InconsistentBatch)
        );
    }
}
