//! Semilinear problem instances `-(κ u')' + f(x, u, Y) + s(x, Y) = 0` on
//! `[-l/2, l/2]` with Dirichlet data, and the energy integrand
//! `½ κ |u'|² + F(x, u, Y) + s(x, Y) u` whose expected integral they
//! minimise.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem1d::{LiftingFunction, Mesh1D};
use crate::pc_basis::{generate_basis, PcBasisSet};
use crate::quadrature::gauss_legendre;
use crate::random_field::{HomogeneousLogNormalField, RandomField, TrigLogNormalField};

/// Scalar function of `(x, u, y)`.
pub type PointFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// User-supplied reaction term: value, antiderivative in `u`, derivative in `u`.
#[derive(Clone)]
pub struct CustomNonlinearity {
    pub value: PointFn,
    pub antiderivative: PointFn,
    pub derivative: PointFn,
    pub delta_lower_bound: Option<f64>,
}

#[derive(Clone, Default)]
pub enum Nonlinearity {
    #[default]
    None,
    /// `f = sin u`, `F = -cos u`, `∂_u f = cos u`.
    Sine,
    Custom(CustomNonlinearity),
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::None => write!(f, "None"),
            Nonlinearity::Sine => write!(f, "Sine"),
            Nonlinearity::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Nonlinearity {
    pub fn is_none(&self) -> bool {
        matches!(self, Nonlinearity::None)
    }

    #[inline]
    pub fn value(&self, x: f64, u: f64, y: &[f64]) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sine => u.sin(),
            Nonlinearity::Custom(c) => (c.value)(x, u, y),
        }
    }

    #[inline]
    pub fn antiderivative(&self, x: f64, u: f64, y: &[f64]) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sine => -u.cos(),
            Nonlinearity::Custom(c) => (c.antiderivative)(x, u, y),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64, u: f64, y: &[f64]) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sine => u.cos(),
            Nonlinearity::Custom(c) => (c.derivative)(x, u, y),
        }
    }

    /// Uniform lower bound `δ` on `∂_u f`, when one exists. `cos u` has none
    /// that is positive.
    pub fn delta_lower_bound(&self) -> Option<f64> {
        match self {
            Nonlinearity::None => Some(0.0),
            Nonlinearity::Sine => None,
            Nonlinearity::Custom(c) => c.delta_lower_bound,
        }
    }

    /// `(sup |f|, Lipschitz constant of f in u)` when known.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Nonlinearity::None => Some((0.0, 0.0)),
            Nonlinearity::Sine => Some((1.0, 1.0)),
            Nonlinearity::Custom(_) => None,
        }
    }
}

/// Source term that does not depend on `u`. Receives `(x, y, κ(x, y))`.
#[derive(Clone, Default)]
pub enum SourceTerm {
    #[default]
    None,
    /// `-π² sin(πx) - sin(sin(πx)/κ)`, which makes `sin(πx)/κ` exact for
    /// `-(κu')' + sin u + s = 0` with spatially constant κ.
    ManufacturedSine,
    Custom(Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTerm::None => write!(f, "None"),
            SourceTerm::ManufacturedSine => write!(f, "ManufacturedSine"),
            SourceTerm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl SourceTerm {
    pub fn is_none(&self) -> bool {
        matches!(self, SourceTerm::None)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: &[f64], kappa: f64) -> f64 {
        match self {
            SourceTerm::None => 0.0,
            SourceTerm::ManufacturedSine => {
                let s = (PI * x).sin();
                -PI * PI * s - (s / kappa).sin()
            }
            SourceTerm::Custom(g) => g(x, y, kappa),
        }
    }
}

/// Known per-germ solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    Zero,
    /// Solution of `-(κu')' = 0` with the instance's boundary data:
    /// `u = a + (b - a) ∫_{-l/2}^x κ⁻¹ / ∫_D κ⁻¹`.
    FluxQuotient,
    /// `sin(πx) / κ(y)` for a spatially constant field.
    ManufacturedSine,
}

// Composite Gauss–Legendre for the κ⁻¹ integrals.
const FLUX_PANELS_PER_UNIT: f64 = 16.0;
const FLUX_POINTS: usize = 8;

/// Semilinear PDE data.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub length: f64,
    pub field: RandomField,
    pub nonlinearity: Nonlinearity,
    pub source: SourceTerm,
    pub boundary: LiftingFunction,
    pub exact_solution: Option<ExactSolution>,
    pub exact_energy: Option<f64>,
}

impl ProblemInstance {
    pub fn lower(&self) -> f64 {
        -0.5 * self.length
    }

    pub fn upper(&self) -> f64 {
        0.5 * self.length
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_none()
    }

    /// Pointwise energy density `½ κ |u'|² + F(x, u, y) + s u`.
    #[inline]
    pub fn energy_density(&self, x: f64, u: f64, du: f64, y: &[f64], kappa: f64) -> f64 {
        0.5 * kappa * du * du
            + self.nonlinearity.antiderivative(x, u, y)
            + self.source.eval(x, y, kappa) * u
    }

    /// Exact solution values at `xs` for germ `y`.
    pub fn exact_values(&self, xs: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let exact = self.exact_solution.ok_or(Error::MissingExactSolution)?;
        Ok(match exact {
            ExactSolution::Zero => vec![0.0; xs.len()],
            ExactSolution::ManufacturedSine => xs
                .iter()
                .map(|&x| (PI * x).sin() / self.field.eval_kappa(x, y))
                .collect(),
            ExactSolution::FluxQuotient => {
                let total = self.inverse_kappa_integral(self.upper(), y);
                let (a, b) = (self.boundary.left_value, self.boundary.right_value);
                xs.iter()
                    .map(|&x| a + (b - a) * self.inverse_kappa_integral(x, y) / total)
                    .collect()
            }
        })
    }

    /// Spatial derivative of the exact solution.
    pub fn exact_derivatives(&self, xs: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let exact = self.exact_solution.ok_or(Error::MissingExactSolution)?;
        Ok(match exact {
            ExactSolution::Zero => vec![0.0; xs.len()],
            ExactSolution::ManufacturedSine => xs
                .iter()
                .map(|&x| PI * (PI * x).cos() / self.field.eval_kappa(x, y))
                .collect(),
            ExactSolution::FluxQuotient => {
                let total = self.inverse_kappa_integral(self.upper(), y);
                let flux = (self.boundary.right_value - self.boundary.left_value) / total;
                xs.iter().map(|&x| flux / self.field.eval_kappa(x, y)).collect()
            }
        })
    }

    /// `∫_{-l/2}^{x} κ(s, y)⁻¹ ds`.
    pub fn inverse_kappa_integral(&self, x: f64, y: &[f64]) -> f64 {
        let lo = self.lower();
        let span = x - lo;
        if span <= 0.0 {
            return 0.0;
        }
        let panels = ((span * FLUX_PANELS_PER_UNIT).ceil() as usize).max(4);
        let (gx, gw) = gauss_legendre(FLUX_POINTS);
        let width = span / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let a = lo + p as f64 * width;
            for (xi, wi) in gx.iter().zip(&gw) {
                let s = a + 0.5 * width * (xi + 1.0);
                acc += 0.5 * width * wi / self.field.eval_kappa(s, y);
            }
        }
        acc
    }
}

/// A problem together with its discretisation.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: ProblemInstance,
    pub mesh: Mesh1D,
    pub basis: PcBasisSet,
}

impl Setup {
    pub fn new(problem: ProblemInstance, mesh: Mesh1D, basis: PcBasisSet) -> Result<Self> {
        if basis.dim() < problem.field.min_germ_dim() {
            return Err(Error::InvalidConfig(format!(
                "germ dimension {} is smaller than the field needs ({})",
                basis.dim(),
                problem.field.min_germ_dim()
            )));
        }
        if (mesh.length() - problem.length).abs() > 1e-12 * problem.length {
            return Err(Error::InvalidConfig("mesh and problem domains differ".into()));
        }
        Ok(Self {
            problem,
            mesh,
            basis,
        })
    }

    /// Same setup with the diffusivity multiplied by `factor`.
    pub fn with_scaled_field(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.problem.field = s.problem.field.clone().scaled(factor);
        s
    }
}

fn trig_setup(problem: ProblemInstance, harmonics: usize, m: usize, p: usize) -> Result<Setup> {
    let mesh = Mesh1D::new(problem.length, m)?;
    let basis = generate_basis(2 * harmonics, p)?;
    Setup::new(problem, mesh, basis)
}

/// Linear problem, zero source, zero boundary, trigonometric log-normal
/// field. Minimiser `c* = 0`, `J(c*) = 0`.
pub fn builtin_linear_homogeneous(
    beta: f64,
    harmonics: usize,
    length: f64,
    m: usize,
    p: usize,
) -> Result<Setup> {
    let problem = ProblemInstance {
        name: "linear-homogeneous".into(),
        length,
        field: RandomField::TrigLogNormal(TrigLogNormalField::new(beta, harmonics, length)?),
        nonlinearity: Nonlinearity::None,
        source: SourceTerm::None,
        boundary: LiftingFunction::new(0.0, 0.0),
        exact_solution: Some(ExactSolution::Zero),
        exact_energy: Some(0.0),
    };
    trig_setup(problem, harmonics, m, p)
}

/// Linear problem with boundary data `u(-l/2) = 0`, `u(l/2) = 1`.
pub fn builtin_linear_nonhomogeneous(
    beta: f64,
    harmonics: usize,
    length: f64,
    m: usize,
    p: usize,
) -> Result<Setup> {
    let problem = ProblemInstance {
        name: "linear-nonhomogeneous".into(),
        length,
        field: RandomField::TrigLogNormal(TrigLogNormalField::new(beta, harmonics, length)?),
        nonlinearity: Nonlinearity::None,
        source: SourceTerm::None,
        boundary: LiftingFunction::new(0.0, 1.0),
        exact_solution: Some(ExactSolution::FluxQuotient),
        exact_energy: None,
    };
    trig_setup(problem, harmonics, m, p)
}

/// `sin u` reaction with `κ(Y) = exp(0.2(Y_1 + Y_2))` and a source chosen so
/// that `u* = sin(πx)/κ(Y)` is exact. Needs an even integer `l`.
pub fn builtin_semilinear_homogeneous_field(length: f64, m: usize, p: usize) -> Result<Setup> {
    if length.fract() != 0.0 || (length as i64) % 2 != 0 || length <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "domain length must be an even integer so sin(πx) vanishes on the boundary, got {length}"
        )));
    }
    let problem = ProblemInstance {
        name: "semilinear-homogeneous-field".into(),
        length,
        field: RandomField::Homogeneous(HomogeneousLogNormalField::default()),
        nonlinearity: Nonlinearity::Sine,
        source: SourceTerm::ManufacturedSine,
        boundary: LiftingFunction::new(0.0, 0.0),
        exact_solution: Some(ExactSolution::ManufacturedSine),
        exact_energy: None,
    };
    let mesh = Mesh1D::new(length, m)?;
    let basis = generate_basis(2, p)?;
    Setup::new(problem, mesh, basis)
}

/// `sin u` reaction with the trigonometric field, zero data; `u* = 0` and
/// `E(u*) = ∫_D -cos 0 = -l`.
pub fn builtin_semilinear_nonhomogeneous_field(
    beta: f64,
    harmonics: usize,
    length: f64,
    m: usize,
    p: usize,
) -> Result<Setup> {
    let problem = ProblemInstance {
        name: "semilinear-nonhomogeneous-field".into(),
        length,
        field: RandomField::TrigLogNormal(TrigLogNormalField::new(beta, harmonics, length)?),
        nonlinearity: Nonlinearity::Sine,
        source: SourceTerm::None,
        boundary: LiftingFunction::new(0.0, 0.0),
        exact_solution: Some(ExactSolution::Zero),
        exact_energy: Some(-length),
    };
    trig_setup(problem, harmonics, m, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_field::{GermSampler, Purpose};
    use rand::{Rng, SeedableRng};

    #[test]
    fn sine_nonlinearity_derivatives_match_finite_differences() {
        let nl = Nonlinearity::Sine;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let y = [0.0; 2];
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-5.0..5.0);
            let u: f64 = rng.random_range(-6.0..6.0);
            let h = 1e-6;
            let df = (nl.antiderivative(x, u + h, &y) - nl.antiderivative(x, u - h, &y)) / (2.0 * h);
            let f = nl.value(x, u, &y);
            assert!((df - f).abs() <= 1e-6 * f.abs().max(1e-3), "{df} {f}");
            let dd = (nl.value(x, u + h, &y) - nl.value(x, u - h, &y)) / (2.0 * h);
            let d = nl.derivative(x, u, &y);
            assert!((dd - d).abs() <= 1e-6 * d.abs().max(1e-3));
        }
        assert_eq!(nl.bounds(), Some((1.0, 1.0)));
        assert_eq!(nl.delta_lower_bound(), None);
    }

    #[test]
    fn builtin_shapes() {
        let s = builtin_linear_homogeneous(0.1, 2, 10.0, 10, 3).unwrap();
        assert_eq!(s.basis.len(), 35);
        assert_eq!(s.mesh.interior(), 10);
        assert_eq!(s.problem.exact_values(&[0.3], &[0.1; 4]).unwrap(), vec![0.0]);
        let s = builtin_semilinear_nonhomogeneous_field(0.1, 2, 12.0, 50, 3).unwrap();
        assert_eq!(s.problem.exact_energy, Some(-12.0));
        assert!(builtin_semilinear_homogeneous_field(11.0, 10, 2).is_err());
        assert!(builtin_semilinear_homogeneous_field(12.5, 10, 2).is_err());
        assert!(builtin_semilinear_homogeneous_field(12.0, 10, 2).is_ok());
    }

    #[test]
    fn flux_quotient_solution() {
        let s = builtin_linear_nonhomogeneous(0.3, 2, 10.0, 20, 2).unwrap();
        let p = &s.problem;
        // κ ≡ 1 at the mean germ
        let xs = [-5.0, -2.0, 0.0, 4.0, 5.0];
        let u = p.exact_values(&xs, &[0.0; 4]).unwrap();
        for (x, u) in xs.iter().zip(&u) {
            assert!((u - (x + 5.0) / 10.0).abs() < 1e-12);
        }
        let sampler = GermSampler::new(4, 9);
        for i in 0..20 {
            let y = sampler.sample_germ(0, i, Purpose::Evaluation);
            let u = p.exact_values(&[-5.0, 5.0], &y).unwrap();
            assert!(u[0].abs() < 1e-14 && (u[1] - 1.0).abs() < 1e-12);
            // κ u' constant in x: difference quotient of the cumulative integral
            let fluxes: Vec<f64> = (0..9)
                .map(|k| {
                    let x = -4.0 + k as f64;
                    let h = 1e-4;
                    let v = p.exact_values(&[x - h, x + h], &y).unwrap();
                    p.field.eval_kappa(x, &y) * (v[1] - v[0]) / (2.0 * h)
                })
                .collect();
            let analytic = p.exact_derivatives(&[0.0], &y).unwrap()[0] * p.field.eval_kappa(0.0, &y);
            for f in fluxes {
                assert!((f - analytic).abs() < 1e-8, "{f} {analytic}");
            }
        }
    }

    #[test]
    fn manufactured_solution_value() {
        let s = builtin_semilinear_homogeneous_field(12.0, 10, 2).unwrap();
        let y = [0.7, -0.2];
        let u = s.problem.exact_values(&[0.5], &y).unwrap()[0];
        assert!((u - 1.0 / (0.2f64 * 0.5).exp()).abs() < 1e-14);
    }
}
