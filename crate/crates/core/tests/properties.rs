use proptest::prelude::*;

use sgd_pce::cli::config::{ExperimentConfig, ExperimentId};
use sgd_pce::cli::output::{hex_float, parse_hex_float};
use sgd_pce::estimators::{Assembler, CvMode};
use sgd_pce::problem::{
    builtin_linear_homogeneous, builtin_linear_nonhomogeneous, builtin_semilinear_homogeneous_field,
    builtin_semilinear_nonhomogeneous_field, Setup,
};
use sgd_pce::sgd::{first_order_run, run, run_with, HessianMode, Initialization, LearningRateSchedule, SgdConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn doubling_the_field_leaves_iterates_unchanged() {
    let setup = builtin_linear_homogeneous(0.2, 2, 10.0, 10, 2).unwrap();
    let doubled = setup.with_scaled_field(2.0);
    let mut cfg = SgdConfig::new(40, 64, 512, LearningRateSchedule::new(2.0, 2.0));
    cfg.cv_mode = CvMode::Order1;
    cfg.initialization = Initialization::Gaussian { std: 0.5 };
    cfg.monitor_samples = 0;
    cfg.record_coefficients = true;
    cfg.seed = 4;
    let a = run(&setup, &cfg).unwrap().trajectory;
    let b = run(&doubled, &cfg).unwrap().trajectory;
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let (ca, cb) = (ra.coefficients.as_ref().unwrap(), rb.coefficients.as_ref().unwrap());
        let diff: f64 = ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = ca.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-2 * norm, "n = {}: {diff} vs {norm}", ra.n);
    }
}

#[test]
fn second_order_beats_first_order_by_three_decades() {
    let setup = builtin_linear_homogeneous(0.1, 2, 10.0, 50, 3).unwrap();
    let mut cfg = SgdConfig::new(500, 128, 64, LearningRateSchedule::new(5.0, 2.0));
    cfg.cv_mode = CvMode::Order1;
    cfg.initialization = Initialization::Gaussian { std: 0.1 };
    cfg.monitor_samples = 2000;
    cfg.record_stride = 500;
    cfg.seed = 1;
    let second = run(&setup, &cfg).unwrap().trajectory.final_energy().unwrap().mean;
    let first = match first_order_run(&setup, &cfg) {
        Ok(o) => o.trajectory.final_energy().unwrap().mean,
        Err(_) => f64::INFINITY,
    };
    assert!(first.is_nan() || first > 1e3 * second, "first-order {first:e}, second-order {second:e}");
}

fn median_energy_decreases(setup: &Setup, cfg: &SgdConfig, window: std::ops::RangeInclusive<usize>) {
    let asm = Assembler::new(setup).unwrap();
    let mut per_n: Vec<Vec<f64>> = vec![vec![]; cfg.n_iterations + 1];
    for seed in 0..20 {
        let mut c = cfg.clone();
        c.seed = seed;
        let traj = run_with(&asm, &c).unwrap().trajectory;
        for (n, e) in traj.energy_series() {
            per_n[n].push(e);
        }
    }
    for n in window {
        let (a, b) = (median(per_n[n].clone()), median(per_n[n + 1].clone()));
        assert!(b < a, "{}: median at n = {} is {b}, at n = {n} is {a}", setup.problem.name, n + 1);
    }
}

#[test]
fn median_energy_decreases_on_builtin_problems() {
    let mut base = SgdConfig::new(30, 64, 64, LearningRateSchedule::new(2.0, 2.0));
    base.initialization = Initialization::Gaussian { std: 0.2 };
    base.monitor_samples = 2000;
    let staged = SgdConfig {
        hessian_mode: HessianMode::LinearThenFull { n_switch: 5 },
        ..base.clone()
    };
    median_energy_decreases(&builtin_linear_homogeneous(0.2, 1, 10.0, 10, 2).unwrap(), &base, 1..=29);
    median_energy_decreases(&builtin_linear_nonhomogeneous(0.2, 1, 10.0, 10, 2).unwrap(), &base, 1..=29);
    median_energy_decreases(&builtin_semilinear_homogeneous_field(12.0, 20, 2).unwrap(), &staged, 6..=29);
    median_energy_decreases(
        &builtin_semilinear_nonhomogeneous_field(0.2, 1, 12.0, 10, 2).unwrap(),
        &staged,
        6..=29,
    );
}

fn id_strategy() -> impl Strategy<Value = ExperimentId> {
    prop::sample::select(ExperimentId::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        id in id_strategy(),
        seed in any::<u64>(),
        iters in 0usize..5000,
        ng in 1usize..1024,
        beta in 0.0f64..2.0,
        rates in prop::collection::vec(0.01f64..1e3, 0..6),
        cv in prop::sample::select(vec![CvMode::None, CvMode::Order0, CvMode::Order1]),
        switch in prop::option::of(0usize..100),
        std in prop::option::of(0.0f64..3.0),
        max_rate in prop::option::of(1e-3f64..10.0),
    ) {
        let mut cfg = ExperimentConfig::defaults(id);
        cfg.seed = seed;
        cfg.sgd.seed = seed;
        cfg.sgd.n_iterations = iters.max(100);
        cfg.sgd.batch_gradient = ng;
        cfg.sgd.cv_mode = cv;
        cfg.problem.beta = beta;
        cfg.study.rates = rates;
        cfg.sgd.hessian_mode = match switch {
            Some(n_switch) => HessianMode::LinearThenFull { n_switch },
            None => HessianMode::Full,
        };
        cfg.sgd.initialization = match std {
            Some(std) => Initialization::Gaussian { std },
            None => Initialization::Zero,
        };
        cfg.sgd.schedule.max_rate = max_rate;
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hex_float_round_trips(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        let back = parse_hex_float(&hex_float(v)).unwrap();
        if v.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
