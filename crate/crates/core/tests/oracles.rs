//! Independent reference computations for the tensor-factorised
//! estimators, the FEM solve and the PC moment tables.

mod common;

use common::{hat, naive_gradient, naive_solution, points, psi};
use sgd_pce::estimators::{Assembler, HessianStage};
use sgd_pce::evaluation::{fem_refinement_errors, reference_solve_linear};
use sgd_pce::problem::{
    builtin_linear_nonhomogeneous, builtin_semilinear_homogeneous_field, builtin_semilinear_nonhomogeneous_field,
    Setup,
};
use sgd_pce::quadrature::gauss_hermite;
use sgd_pce::sgd::Initialization;

fn small_setups() -> Vec<Setup> {
    vec![
        builtin_semilinear_nonhomogeneous_field(0.4, 1, 12.0, 5, 2).unwrap(),
        builtin_linear_nonhomogeneous(0.5, 1, 10.0, 5, 2).unwrap(),
        builtin_semilinear_homogeneous_field(12.0, 5, 2).unwrap(),
    ]
}

#[test]
fn gradient_matches_naive_double_loop() {
    for setup in small_setups() {
        assert_eq!((setup.mesh.interior(), setup.basis.len()), (5, 6));
        let asm = Assembler::new(&setup).unwrap();
        let c = Initialization::Gaussian { std: 0.7 }.coefficients(5, 6, 3);
        for y in [[0.3, -1.2], [1.7, 0.4], [-0.9, -2.1]] {
            let fast = asm.gradient_sample(&c, &y).unwrap().data;
            let slow = naive_gradient(&setup, &c, &y);
            let scale = slow.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (k, (a, b)) in fast.iter().zip(&slow).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-12 * scale.max(1.0),
                    "{} component {k}: {a} vs {b}",
                    setup.problem.name
                );
            }
        }
    }
}

#[test]
fn hessian_blocks_match_naive_assembly() {
    let setup = builtin_semilinear_nonhomogeneous_field(0.4, 1, 12.0, 5, 2).unwrap();
    let asm = Assembler::new(&setup).unwrap();
    let c = Initialization::Gaussian { std: 0.7 }.coefficients(5, 6, 4);
    let y = [0.8, -0.5];
    let pr = &setup.problem;
    for stage in [HessianStage::Linear, HessianStage::Full] {
        let blocks = asm.hessian_block_sample(&c, &y, stage).unwrap().blocks;
        for (j, block) in blocks.iter().enumerate() {
            let dense = block.to_dense();
            let p2 = psi(&setup, j, &y).powi(2);
            for a in 1..=5 {
                for b in 1..=5 {
                    let mut acc = 0.0;
                    for (x, w) in points(&setup) {
                        let (u, _) = naive_solution(&setup, &c, &y, x);
                        let kappa = pr.field.eval_kappa(x, &y);
                        let (pa, da) = hat(&setup, a, x);
                        let (pb, db) = hat(&setup, b, x);
                        acc += w * kappa * da * db;
                        if stage == HessianStage::Full {
                            acc += w * pr.nonlinearity.derivative(x, u, &y) * pa * pb;
                        }
                    }
                    let want = p2 * acc;
                    let got = dense[(a - 1, b - 1)];
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{stage:?} j={j} ({a},{b}): {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn linear_hessian_is_gradient_jacobian() {
    // For a linear problem g(c) is affine in c, so a difference quotient is exact
    // up to rounding.
    let setup = builtin_linear_nonhomogeneous(0.5, 1, 10.0, 5, 2).unwrap();
    let asm = Assembler::new(&setup).unwrap();
    let c = Initialization::Gaussian { std: 0.5 }.coefficients(5, 6, 9);
    let y = [0.2, 1.1];
    let blocks = asm.hessian_block_sample(&c, &y, HessianStage::Linear).unwrap().blocks;
    let g0 = asm.gradient_sample(&c, &y).unwrap().data;
    for j in 0..6 {
        for a in 0..5 {
            let mut cp = c.clone();
            cp.set(a, j, c.get(a, j) + 1.0);
            let g1 = asm.gradient_sample(&cp, &y).unwrap().data;
            let dense = blocks[j].to_dense();
            for b in 0..5 {
                let fd = g1[j * 5 + b] - g0[j * 5 + b];
                assert!((fd - dense[(b, a)]).abs() < 1e-10, "j={j} ({a},{b})");
            }
        }
    }
}

#[test]
fn fem_nodal_error_decays_quadratically() {
    let setup = builtin_linear_nonhomogeneous(0.5, 2, 10.0, 9, 1).unwrap();
    let y = [0.9, -1.3, 0.4, 1.8];
    let rec = fem_refinement_errors(&setup, &y, &[9, 19, 39, 79, 159]).unwrap();
    let (lx, ly): (Vec<f64>, Vec<f64>) = rec.iter().map(|(h, e)| (h.ln(), e.ln())).unzip();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((1.8..=2.2).contains(&slope), "slope {slope}, errors {rec:?}");
}

#[test]
fn fem_matches_closed_form_for_constant_field() {
    let setup = builtin_linear_nonhomogeneous(0.5, 2, 10.0, 99, 1).unwrap();
    let r = reference_solve_linear(&setup, &[0.0; 4]).unwrap();
    let closed = r.closed_form.unwrap();
    for (k, (&a, &b)) in r.fem.iter().zip(&closed).enumerate() {
        let x = setup.mesh.nodes()[k];
        assert!((a - b).abs() < 1e-6, "node {k}");
        assert!((b - (x + 5.0) / 10.0).abs() < 1e-6);
    }
}

#[test]
fn moment_tables_match_gauss_hermite() {
    let basis = sgd_pce::pc_basis::generate_basis(2, 3).unwrap();
    let table = basis.moment_table();
    let (gx, gw) = gauss_hermite(12);
    let norm: f64 = gw.iter().sum();
    let nb = basis.len();
    let eval = |y: &[f64]| basis.eval_all(y).unwrap();
    let mut pair = vec![0.0; nb * nb];
    let mut lin = vec![0.0; 2 * nb * nb];
    for (x1, w1) in gx.iter().zip(&gw) {
        for (x2, w2) in gx.iter().zip(&gw) {
            let w = w1 * w2 / (norm * norm);
            let p = eval(&[*x1, *x2]);
            for a in 0..nb {
                for b in 0..nb {
                    pair[a * nb + b] += w * p[a] * p[b];
                    lin[a * nb + b] += w * x1 * p[a] * p[b];
                    lin[nb * nb + a * nb + b] += w * x2 * p[a] * p[b];
                }
            }
        }
    }
    for a in 0..nb {
        for b in 0..nb {
            assert!((table.pair_moment(a, b) - pair[a * nb + b]).abs() < 1e-10, "E[psi{a} psi{b}]");
            for k in 0..2 {
                let got = table.linear_moment(k, a, b);
                let want = lin[k * nb * nb + a * nb + b];
                assert!((got - want).abs() < 1e-10, "E[y{k} psi{a} psi{b}]: {got} vs {want}");
            }
        }
    }
}
