//! Mini-batch SGD with block-diagonal Hessian scaling:
//! `c_{n+1} = c_n - η_n H̄_b(c_n)⁻¹ ḡ(c_n)`, with `H̄_b` the batch average of
//! the diagonal blocks `Ψ_j² (A + B)` of the Hessian estimator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::estimators::{
    minibatch_average, Assembler, CoefficientVector, ControlVariateState, CvMode, GradientSample,
    HessianBlockSample, HessianStage,
};
use crate::evaluation::{energy_samples, map_germs, EnergyEstimate};
use crate::linalg::SymTridiagonal;
use crate::problem::Setup;
use crate::random_field::{GermSampler, Purpose};

/// `η_n = β / (γ + n)`, optionally clipped from above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRateSchedule {
    pub beta_lr: f64,
    pub gamma_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rate: Option<f64>,
}

impl LearningRateSchedule {
    pub fn new(beta_lr: f64, gamma_lr: f64) -> Self {
        Self {
            beta_lr,
            gamma_lr,
            max_rate: None,
        }
    }

    pub fn with_max_rate(mut self, max_rate: f64) -> Self {
        self.max_rate = Some(max_rate);
        self
    }

    /// Step size at iteration `n ≥ 1`.
    pub fn rate(&self, n: usize) -> f64 {
        let eta = self.beta_lr / (self.gamma_lr + n as f64);
        match self.max_rate {
            Some(cap) => eta.min(cap),
            None => eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_lr > 0.0) || !self.beta_lr.is_finite() {
            return Err(Error::InvalidConfig("learning-rate numerator must be positive".into()));
        }
        if !(self.gamma_lr + 1.0 > 0.0) || !self.gamma_lr.is_finite() {
            return Err(Error::InvalidConfig("learning-rate offset must exceed -1".into()));
        }
        if self.max_rate.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::InvalidConfig("maximum learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Which preconditioner is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HessianMode {
    /// Identity: plain mini-batch SGD.
    None,
    /// Linear part only for `n ≤ n_switch`, full Hessian afterwards.
    LinearThenFull { n_switch: usize },
    Full,
}

impl HessianMode {
    pub fn stage(&self, n: usize) -> Option<HessianStage> {
        match *self {
            HessianMode::None => None,
            HessianMode::Full => Some(HessianStage::Full),
            HessianMode::LinearThenFull { n_switch } if n <= n_switch => Some(HessianStage::Linear),
            HessianMode::LinearThenFull { .. } => Some(HessianStage::Full),
        }
    }
}

/// Starting point `c_1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Initialization {
    #[default]
    Zero,
    /// Independent `N(0, std²)` entries drawn from the run's seed.
    Gaussian { std: f64 },
}

impl Initialization {
    pub fn coefficients(&self, spatial: usize, stochastic: usize, seed: u64) -> CoefficientVector {
        let mut c = CoefficientVector::zeros(spatial, stochastic);
        if let Initialization::Gaussian { std } = *self {
            let sampler = GermSampler::new(c.len(), seed);
            let z = sampler.sample_germ(0, 0, Purpose::Initialization);
            for (v, z) in c.as_mut_slice().iter_mut().zip(z) {
                *v = std * z;
            }
        }
        c
    }
}

fn default_ridge() -> f64 {
    1e-8
}

fn default_pilot() -> usize {
    1000
}

fn default_monitor() -> usize {
    10_000
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub n_iterations: usize,
    pub batch_gradient: usize,
    pub batch_hessian: usize,
    pub schedule: LearningRateSchedule,
    #[serde(default)]
    pub cv_mode: CvMode,
    /// Pilot batch for the control-variate multipliers.
    #[serde(default = "default_pilot")]
    pub cv_pilot: usize,
    /// Re-estimate the multipliers every this many iterations (`0`: once).
    #[serde(default)]
    pub cv_refresh: usize,
    pub hessian_mode: HessianMode,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    pub seed: u64,
    #[serde(default)]
    pub initialization: Initialization,
    /// Germs in the common monitoring batch (`0` disables monitoring).
    #[serde(default = "default_monitor")]
    pub monitor_samples: usize,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub record_coefficients: bool,
}

impl SgdConfig {
    pub fn new(n_iterations: usize, batch_gradient: usize, batch_hessian: usize, schedule: LearningRateSchedule) -> Self {
        Self {
            n_iterations,
            batch_gradient,
            batch_hessian,
            schedule,
            cv_mode: CvMode::None,
            cv_pilot: default_pilot(),
            cv_refresh: 0,
            hessian_mode: HessianMode::Full,
            ridge: default_ridge(),
            seed: 0,
            initialization: Initialization::Zero,
            monitor_samples: default_monitor(),
            record_stride: default_stride(),
            record_coefficients: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_gradient == 0 || self.batch_hessian == 0 || self.record_stride == 0 {
            return Err(Error::InvalidConfig("batch sizes and record stride must be at least 1".into()));
        }
        if let HessianMode::LinearThenFull { n_switch } = self.hessian_mode {
            if n_switch > self.n_iterations {
                return Err(Error::InvalidConfig(format!(
                    "n_switch = {n_switch} exceeds n_iterations = {}",
                    self.n_iterations
                )));
            }
        }
        if self.cv_mode != CvMode::None && self.cv_pilot < 2 {
            return Err(Error::InvalidConfig("control-variate pilot needs at least 2 samples".into()));
        }
        if self.monitor_samples == 1 {
            return Err(Error::InvalidConfig("monitoring needs 0 or at least 2 samples".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidConfig("ridge must be finite and non-negative".into()));
        }
        if let Initialization::Gaussian { std } = self.initialization {
            if !(std >= 0.0) || !std.is_finite() {
                return Err(Error::InvalidConfig("initialization std must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// `0` for the starting point.
    pub n: usize,
    pub rate: f64,
    pub energy: Option<EnergyEstimate>,
    /// Norm of the averaged gradient used in the update.
    pub gradient_norm: Option<f64>,
    pub fallbacks: usize,
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub initial: Option<IterationRecord>,
    /// Every `record_stride`-th iteration.
    pub records: Vec<IterationRecord>,
    pub total_fallbacks: usize,
}

impl Trajectory {
    pub fn final_energy(&self) -> Option<EnergyEstimate> {
        self.records
            .last()
            .or(self.initial.as_ref())
            .and_then(|r| r.energy)
    }

    pub fn energy_series(&self) -> Vec<(usize, f64)> {
        self.initial
            .iter()
            .chain(&self.records)
            .filter_map(|r| r.energy.map(|e| (r.n, e.mean)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SgdOutcome {
    pub trajectory: Trajectory,
    pub coefficients: CoefficientVector,
}

/// Where a run stopped producing finite numbers.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub iteration: usize,
    pub seed: u64,
    pub block: Option<usize>,
    pub reason: String,
    pub trajectory: Trajectory,
}

#[derive(Debug, Error)]
pub enum SgdError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("diverged at iteration {} (seed {}, block {:?}): {}", .0.iteration, .0.seed, .0.block, .0.reason)]
    Diverged(Box<Divergence>),
}

impl SgdError {
    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            SgdError::Diverged(d) => Some(&d.trajectory),
            SgdError::Setup(_) => None,
        }
    }
}

/// Output of [`precondition_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreconditionedStep {
    pub step: Vec<f64>,
    pub fallbacks: usize,
    pub fallback_blocks: Vec<usize>,
}

/// Per block `j`, solves `(B_j + ridge · tr(B_j)/M · I) s_j = g_j`; blocks
/// that are not positive definite fall back to `s_j = g_j`.
pub fn precondition_solve(blocks: &HessianBlockSample, g: &GradientSample, ridge: f64) -> PreconditionedStep {
    let nb = blocks.blocks.len();
    let m = if nb == 0 { 0 } else { g.data.len() / nb };
    let mut step = Vec::with_capacity(g.data.len());
    let mut fallback_blocks = Vec::new();
    for (j, b) in blocks.blocks.iter().enumerate() {
        let rhs = &g.data[j * m..(j + 1) * m];
        let shift = ridge * b.trace() / m as f64;
        let solved = if shift != 0.0 {
            let mut r = b.clone();
            r.add_scaled(shift, &SymTridiagonal::identity(m));
            r.cholesky_solve(rhs)
        } else {
            b.cholesky_solve(rhs)
        };
        match solved {
            Some(s) if s.iter().all(|v| v.is_finite()) => step.extend(s),
            _ => {
                fallback_blocks.push(j);
                step.extend_from_slice(rhs);
            }
        }
    }
    PreconditionedStep {
        step,
        fallbacks: fallback_blocks.len(),
        fallback_blocks,
    }
}

struct Runner<'a> {
    asm: &'a Assembler,
    config: &'a SgdConfig,
    sampler: GermSampler,
    trajectory: Trajectory,
}

impl Runner<'_> {
    fn diverged(&mut self, iteration: usize, block: Option<usize>, reason: String) -> SgdError {
        SgdError::Diverged(Box::new(Divergence {
            iteration,
            seed: self.config.seed,
            block,
            reason,
            trajectory: std::mem::take(&mut self.trajectory),
        }))
    }

    fn monitor(&self, c: &CoefficientVector) -> Result<Option<EnergyEstimate>> {
        if self.config.monitor_samples == 0 {
            return Ok(None);
        }
        let samples = energy_samples(self.asm, c, &self.sampler, 0, Purpose::Monitor, self.config.monitor_samples)?;
        EnergyEstimate::from_samples(&samples).map(Some)
    }

    fn record(&mut self, n: usize, rate: f64, c: &CoefficientVector, gnorm: Option<f64>, fallbacks: usize) -> std::result::Result<(), SgdError> {
        let energy = match self.monitor(c) {
            Ok(e) => e,
            Err(err) => return Err(self.diverged(n, None, format!("monitoring failed: {err}"))),
        };
        if energy.is_some_and(|e| !e.mean.is_finite()) {
            return Err(self.diverged(n, None, "monitored energy is not finite".into()));
        }
        let rec = IterationRecord {
            n,
            rate,
            energy,
            gradient_norm: gnorm,
            fallbacks,
            coefficients: self.config.record_coefficients.then(|| c.as_slice().to_vec()),
        };
        if n == 0 {
            self.trajectory.initial = Some(rec);
        } else {
            self.trajectory.records.push(rec);
        }
        Ok(())
    }

    fn run(mut self, mut c: CoefficientVector) -> std::result::Result<SgdOutcome, SgdError> {
        let cfg = self.config;
        let asm = self.asm;
        self.record(0, 0.0, &c, None, 0)?;
        let mut cv = ControlVariateState::disabled();
        for n in 1..=cfg.n_iterations {
            let it = n as u64;
            let refresh = cfg.cv_refresh > 0 && (n - 1) % cfg.cv_refresh == 0;
            if cfg.cv_mode != CvMode::None && (n == 1 || refresh) {
                cv = asm
                    .estimate_cv_lambda(&c, cfg.cv_mode, cfg.cv_pilot, &self.sampler, it)
                    .map_err(|e| self.diverged(n, None, format!("control-variate pilot failed: {e}")))?;
            }
            let zmean = asm.surrogate_mean(&c, cv.mode);
            let grads = map_germs(&self.sampler, it, Purpose::Gradient, cfg.batch_gradient, |y| {
                asm.cv_gradient_sample_with_mean(&c, y, &cv, &zmean)
            })
            .map_err(|e| self.diverged(n, None, format!("gradient evaluation failed: {e}")))?;
            let g = minibatch_average(&grads)?;
            let gnorm = g.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (step, fallbacks) = match cfg.hessian_mode.stage(n) {
                None => (g.data, 0),
                Some(stage) => {
                    let hs = map_germs(&self.sampler, it, Purpose::Hessian, cfg.batch_hessian, |y| {
                        asm.hessian_block_sample(&c, y, stage)
                    })
                    .map_err(|e| self.diverged(n, None, format!("Hessian evaluation failed: {e}")))?;
                    let h = minibatch_average(&hs)?;
                    let s = precondition_solve(&h, &g, cfg.ridge);
                    (s.step, s.fallbacks)
                }
            };
            self.trajectory.total_fallbacks += fallbacks;
            let rate = cfg.schedule.rate(n);
            let m = asm.spatial();
            for (k, (ci, si)) in c.as_mut_slice().iter_mut().zip(&step).enumerate() {
                *ci -= rate * si;
                if !ci.is_finite() {
                    let block = Some(k / m);
                    return Err(self.diverged(n, block, "non-finite coefficient after update".into()));
                }
            }
            if n % cfg.record_stride == 0 {
                self.record(n, rate, &c, Some(gnorm), fallbacks)?;
            }
        }
        Ok(SgdOutcome {
            trajectory: self.trajectory,
            coefficients: c,
        })
    }
}

/// Runs the preconditioned iteration from the configured starting point.
pub fn run_with(asm: &Assembler, config: &SgdConfig) -> std::result::Result<SgdOutcome, SgdError> {
    config.validate()?;
    let c = config
        .initialization
        .coefficients(asm.spatial(), asm.stochastic(), config.seed);
    run_from(asm, config, c)
}

/// Runs from an explicit starting point.
pub fn run_from(
    asm: &Assembler,
    config: &SgdConfig,
    c: CoefficientVector,
) -> std::result::Result<SgdOutcome, SgdError> {
    config.validate()?;
    if c.spatial() != asm.spatial() || c.stochastic() != asm.stochastic() {
        return Err(Error::DimensionMismatch {
            what: "initial coefficients",
            expected: asm.dim(),
            actual: c.len(),
        }
        .into());
    }
    let runner = Runner {
        asm,
        config,
        sampler: GermSampler::new(asm.germ_dim(), config.seed),
        trajectory: Trajectory::default(),
    };
    runner.run(c)
}

pub fn run(setup: &Setup, config: &SgdConfig) -> std::result::Result<SgdOutcome, SgdError> {
    run_with(&Assembler::new(setup)?, config)
}

/// [`run`] with the identity preconditioner.
pub fn first_order_run(setup: &Setup, config: &SgdConfig) -> std::result::Result<SgdOutcome, SgdError> {
    let mut cfg = config.clone();
    cfg.hessian_mode = HessianMode::None;
    run(setup, &cfg)
}
