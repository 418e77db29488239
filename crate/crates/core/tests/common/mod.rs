//! Term-by-term reference implementations shared by the integration tests.
#![allow(dead_code)]

use sgd_pce::estimators::CoefficientVector;
use sgd_pce::problem::Setup;

const GL4_X: [f64; 4] = [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
const GL4_W: [f64; 4] = [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];

pub fn hermite(n: usize, y: f64) -> f64 {
    let (mut a, mut b) = (1.0, y);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = y * b - k as f64 * a;
        a = b;
        b = c;
    }
    b
}

pub fn psi(setup: &Setup, j: usize, y: &[f64]) -> f64 {
    setup.basis.indices()[j]
        .degrees()
        .iter()
        .zip(y)
        .map(|(&d, &v)| hermite(d, v))
        .product()
}

pub fn hat(setup: &Setup, i: usize, x: f64) -> (f64, f64) {
    let h = setup.mesh.h();
    let xi = setup.mesh.lower() + i as f64 * h;
    let r = (x - xi) / h;
    if r.abs() >= 1.0 {
        (0.0, 0.0)
    } else if r < 0.0 {
        (1.0 + r, 1.0 / h)
    } else {
        (1.0 - r, -1.0 / h)
    }
}

/// Quadrature points `(x, w)` inside each element, never on a node.
pub fn points(setup: &Setup) -> Vec<(f64, f64)> {
    let h = setup.mesh.h();
    let mut out = vec![];
    for e in 0..setup.mesh.elements() {
        let a = setup.mesh.lower() + e as f64 * h;
        for (x, w) in GL4_X.iter().zip(GL4_W) {
            out.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

/// `(u_c, u_c')` built term by term over all `(i, j)` pairs.
pub fn naive_solution(setup: &Setup, c: &CoefficientVector, y: &[f64], x: f64) -> (f64, f64) {
    let m = setup.mesh.interior();
    let b = &setup.problem.boundary;
    let t = (x - setup.mesh.lower()) / setup.mesh.h();
    let (mut u, mut du) = (0.0, 0.0);
    if t < 1.0 {
        u += b.left_value * (1.0 - t);
        du -= b.left_value / setup.mesh.h();
    }
    if t > m as f64 {
        u += b.right_value * (t - m as f64);
        du += b.right_value / setup.mesh.h();
    }
    for j in 0..setup.basis.len() {
        let p = psi(setup, j, y);
        for i in 1..=m {
            let (phi, dphi) = hat(setup, i, x);
            u += c.get(i - 1, j) * phi * p;
            du += c.get(i - 1, j) * dphi * p;
        }
    }
    (u, du)
}

pub fn naive_gradient(setup: &Setup, c: &CoefficientVector, y: &[f64]) -> Vec<f64> {
    let m = setup.mesh.interior();
    let nb = setup.basis.len();
    let pr = &setup.problem;
    let mut g = vec![0.0; m * nb];
    for j in 0..nb {
        for i in 1..=m {
            let mut acc = 0.0;
            for (x, w) in points(setup) {
                let (u, du) = naive_solution(setup, c, y, x);
                let kappa = pr.field.eval_kappa(x, y);
                let (phi, dphi) = hat(setup, i, x);
                let react = pr.nonlinearity.value(x, u, y) + pr.source.eval(x, y, kappa);
                acc += w * (kappa * du * dphi + react * phi);
            }
            g[j * m + i - 1] = acc * psi(setup, j, y);
        }
    }
    g
}
