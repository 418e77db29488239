//! Uniform linear finite elements on `[-l/2, l/2]`.
//!
//! The mesh has `M + 2` equispaced nodes `x_0 = -l/2, …, x_{M+1} = l/2` and
//! `M + 1` elements. The free (interior) hat functions are `φ_1, …, φ_M`;
//! element `e` spans `[x_e, x_{e+1}]` and carries the two local shape
//! functions of nodes `e` and `e + 1`.

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Default Gauss–Legendre points per element.
pub const DEFAULT_QUADRATURE_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    length: f64,
    interior: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Mesh1D {
    /// Mesh of `[-length/2, length/2]` with `interior` free hat functions.
    pub fn new(length: f64, interior: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidConfig(format!("domain length must be positive, got {length}")));
        }
        if interior == 0 {
            return Err(Error::InvalidConfig("mesh needs at least one interior node".into()));
        }
        let h = length / (interior + 1) as f64;
        let lo = -0.5 * length;
        let mut nodes: Vec<f64> = (0..interior + 2).map(|k| lo + k as f64 * h).collect();
        nodes[interior + 1] = 0.5 * length;
        Ok(Self {
            length,
            interior,
            h,
            nodes,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of free basis functions `M`.
    pub fn interior(&self) -> usize {
        self.interior
    }

    pub fn elements(&self) -> usize {
        self.interior + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn lower(&self) -> f64 {
        self.nodes[0]
    }

    pub fn upper(&self) -> f64 {
        self.nodes[self.interior + 1]
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let tol = 1e-12 * self.length;
        if x.is_nan() || x < self.lower() - tol || x > self.upper() + tol {
            return Err(Error::OutOfDomain {
                x,
                lo: self.lower(),
                hi: self.upper(),
            });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.interior {
            return Err(Error::BasisIndex {
                index: i,
                max: self.interior,
            });
        }
        Ok(())
    }

    /// Element containing `x`; nodes belong to the element on their left.
    pub fn locate(&self, x: f64) -> Result<usize> {
        self.check_domain(x)?;
        let t = (x - self.lower()) / self.h;
        let e = t.ceil() as isize - 1;
        Ok(e.clamp(0, self.interior as isize) as usize)
    }

    /// Hat function `φ_i(x)`, `1 ≤ i ≤ M`.
    pub fn eval_phi(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        self.check_domain(x)?;
        let r = ((x - self.nodes[i]) / self.h).abs();
        Ok((1.0 - r).max(0.0))
    }

    /// `φ_i'(x)`; at a node the left-element value is returned.
    pub fn eval_dphi(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        let e = self.locate(x)?;
        Ok(if e + 1 == i {
            1.0 / self.h
        } else if e == i {
            -1.0 / self.h
        } else {
            0.0
        })
    }

    /// Interpolate nodal values (length `M + 2`, boundary nodes included).
    pub fn interpolate(&self, nodal: &[f64], x: f64) -> Result<f64> {
        if nodal.len() != self.interior + 2 {
            return Err(Error::DimensionMismatch {
                what: "nodal values",
                expected: self.interior + 2,
                actual: nodal.len(),
            });
        }
        let e = self.locate(x)?;
        let t = ((x - self.nodes[e]) / self.h).clamp(0.0, 1.0);
        Ok(nodal[e] * (1.0 - t) + nodal[e + 1] * t)
    }

    /// Element-wise Gauss–Legendre rule with `q` points per element.
    pub fn quadrature(&self, q: usize) -> Result<QuadratureRule> {
        quadrature_points(self, q)
    }
}

/// Gauss–Legendre points mapped onto every element, with the two local
/// shape-function values at each point.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    per_element: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    // Value of the left/right local shape function at each point.
    left: Vec<f64>,
    right: Vec<f64>,
}

pub fn quadrature_points(mesh: &Mesh1D, q: usize) -> Result<QuadratureRule> {
    if q == 0 {
        return Err(Error::InvalidConfig("quadrature needs at least one point per element".into()));
    }
    let (ref_x, ref_w) = gauss_legendre(q);
    let n = mesh.elements() * q;
    let mut rule = QuadratureRule {
        per_element: q,
        points: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        left: Vec::with_capacity(n),
        right: Vec::with_capacity(n),
    };
    let h = mesh.h();
    for e in 0..mesh.elements() {
        let a = mesh.nodes()[e];
        for (&xi, &wi) in ref_x.iter().zip(&ref_w) {
            let t = 0.5 * (xi + 1.0);
            rule.points.push(a + t * h);
            rule.weights.push(0.5 * h * wi);
            rule.left.push(1.0 - t);
            rule.right.push(t);
        }
    }
    Ok(rule)
}

impl QuadratureRule {
    pub fn per_element(&self) -> usize {
        self.per_element
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Left/right local shape values at point `p`.
    #[inline]
    pub fn shape(&self, p: usize) -> (f64, f64) {
        (self.left[p], self.right[p])
    }

    #[inline]
    pub fn element_of(&self, p: usize) -> usize {
        p / self.per_element
    }

    /// `∫_D g(x) dx`.
    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }
}

/// Piecewise-linear extension of Dirichlet data: the boundary hat functions
/// scaled by the boundary values. Zero on every interior node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftingFunction {
    pub left_value: f64,
    pub right_value: f64,
}

impl LiftingFunction {
    pub fn new(left_value: f64, right_value: f64) -> Self {
        Self {
            left_value,
            right_value,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.left_value == 0.0 && self.right_value == 0.0
    }

    pub fn eval(&self, mesh: &Mesh1D, x: f64) -> Result<f64> {
        let mut nodal = vec![0.0; mesh.interior() + 2];
        nodal[0] = self.left_value;
        nodal[mesh.interior() + 1] = self.right_value;
        mesh.interpolate(&nodal, x)
    }
}
