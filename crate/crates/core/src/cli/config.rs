//! Experiment configuration: TOML text, per-experiment defaults, and
//! `key.path=value` overrides.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::CvMode;
use crate::problem::{
    builtin_linear_homogeneous, builtin_linear_nonhomogeneous, builtin_semilinear_homogeneous_field,
    builtin_semilinear_nonhomogeneous_field, Setup,
};
use crate::sgd::{HessianMode, Initialization, LearningRateSchedule, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Table1,
    Table2,
    Table3,
    FigConvergence,
    FigCdf,
    FigStagedHessian,
    FigBatchStudy,
    Solve,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::Table1,
        ExperimentId::Table2,
        ExperimentId::Table3,
        ExperimentId::FigConvergence,
        ExperimentId::FigCdf,
        ExperimentId::FigStagedHessian,
        ExperimentId::FigBatchStudy,
        ExperimentId::Solve,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Table1 => "table1",
            ExperimentId::Table2 => "table2",
            ExperimentId::Table3 => "table3",
            ExperimentId::FigConvergence => "fig-convergence",
            ExperimentId::FigCdf => "fig-cdf",
            ExperimentId::FigStagedHessian => "fig-staged-hessian",
            ExperimentId::FigBatchStudy => "fig-batch-study",
            ExperimentId::Solve => "solve",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    LinearHomogeneous,
    LinearNonhomogeneous,
    SemilinearHomogeneousField,
    SemilinearNonhomogeneousField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Field strength `β` (ignored by the homogeneous field).
    pub beta: f64,
    /// Harmonics `n_V` of the trigonometric field.
    pub n_v: usize,
    /// Domain length `l`.
    pub length: f64,
    /// Interior finite element nodes `M`.
    pub m: usize,
    /// Total PC degree `p`.
    pub p: usize,
    /// Germ dimension `K`; derived from the field when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl ProblemConfig {
    pub fn germ_dim(&self) -> usize {
        match self.kind {
            ProblemKind::SemilinearHomogeneousField => 2,
            _ => 2 * self.n_v,
        }
    }

    pub fn build(&self) -> Result<Setup> {
        if let Some(k) = self.k {
            if k != self.germ_dim() {
                return Err(Error::InvalidConfig(format!(
                    "problem.k = {k} but the field needs K = {}",
                    self.germ_dim()
                )));
            }
        }
        let (b, n, l, m, p) = (self.beta, self.n_v, self.length, self.m, self.p);
        match self.kind {
            ProblemKind::LinearHomogeneous => builtin_linear_homogeneous(b, n, l, m, p),
            ProblemKind::LinearNonhomogeneous => builtin_linear_nonhomogeneous(b, n, l, m, p),
            ProblemKind::SemilinearHomogeneousField => builtin_semilinear_homogeneous_field(l, m, p),
            ProblemKind::SemilinearNonhomogeneousField => builtin_semilinear_nonhomogeneous_field(b, n, l, m, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Monte Carlo samples for post-run energies, errors and CDFs.
    pub n_mc: usize,
    /// Evaluation points.
    pub points: Vec<f64>,
    /// Threshold grid size per point.
    pub n_thresholds: usize,
}

/// Experiment-specific sweeps and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub betas: Vec<f64>,
    /// Learning-rate numerators; each run uses `η = rate / (rate_offset + n)`.
    pub rates: Vec<f64>,
    pub rate_offset: f64,
    pub orders: Vec<usize>,
    /// `[N_g, N_h]` pairs.
    pub batches: Vec<[usize; 2]>,
    pub n_switch: usize,
    /// Independent seeds per configuration (`seed, seed + 1, …`).
    pub seeds: usize,
    /// `[i, j]` of the gradient component (`i` 1-based, `j` 0-based).
    pub component: [usize; 2],
    /// Standard deviation of the fixed random coefficient vector.
    pub fixed_c_std: f64,
    /// A run converges when its final energy gap is at most this fraction
    /// of its initial gap.
    pub convergence_reduction: f64,
    /// Absolute energy tolerance used by the staged-Hessian flag.
    pub energy_tolerance: f64,
    /// Evaluation point on the companion problem.
    pub companion_point: f64,
    /// Second problem for experiments with two panels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion: Option<CompanionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompanionConfig {
    pub problem: ProblemConfig,
    /// Its `seed` is replaced by the experiment seed.
    pub sgd: SgdConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            betas: vec![],
            rates: vec![],
            rate_offset: 2.0,
            orders: vec![],
            batches: vec![],
            n_switch: 100,
            seeds: 1,
            component: [1, 0],
            fixed_c_std: 1.0,
            convergence_reduction: 1e-3,
            energy_tolerance: 1e-3,
            companion_point: 0.5,
            companion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub problem: ProblemConfig,
    pub sgd: SgdConfig,
    pub evaluation: EvaluationConfig,
    pub study: StudyConfig,
}

fn table2_problem() -> ProblemConfig {
    ProblemConfig {
        kind: ProblemKind::LinearHomogeneous,
        beta: 0.1,
        n_v: 2,
        length: 10.0,
        m: 50,
        p: 3,
        k: Some(4),
    }
}

fn table2_sgd() -> SgdConfig {
    let mut s = SgdConfig::new(500, 128, 64, LearningRateSchedule::new(5.0, 2.0));
    s.cv_mode = CvMode::Order1;
    s.initialization = Initialization::Gaussian { std: 0.1 };
    s.record_stride = 10;
    s
}

fn section52_problem(p: usize) -> ProblemConfig {
    ProblemConfig {
        kind: ProblemKind::SemilinearHomogeneousField,
        beta: 0.0,
        n_v: 1,
        length: 12.0,
        m: 100,
        p,
        k: Some(2),
    }
}

fn section52_sgd() -> SgdConfig {
    let mut s = SgdConfig::new(1000, 100, 100, LearningRateSchedule::new(10.0, 0.0));
    s.record_stride = 100;
    s
}

fn section52_companion(record_stride: usize, monitor_samples: usize) -> CompanionConfig {
    let mut sgd = section52_sgd();
    sgd.record_stride = record_stride;
    sgd.monitor_samples = monitor_samples;
    CompanionConfig {
        problem: section52_problem(3),
        sgd,
    }
}

fn section53_problem(beta: f64) -> ProblemConfig {
    ProblemConfig {
        kind: ProblemKind::SemilinearNonhomogeneousField,
        beta,
        n_v: 2,
        length: 12.0,
        m: 50,
        p: 3,
        k: Some(4),
    }
}

fn section53_sgd() -> SgdConfig {
    let mut s = SgdConfig::new(500, 128, 64, LearningRateSchedule::new(5.0, 2.0));
    s.hessian_mode = HessianMode::LinearThenFull { n_switch: 100 };
    s.initialization = Initialization::Gaussian { std: 0.1 };
    s.record_stride = 10;
    s
}

fn evaluation(points: Vec<f64>) -> EvaluationConfig {
    EvaluationConfig {
        n_mc: 100_000,
        points,
        n_thresholds: 41,
    }
}

impl ExperimentConfig {
    /// Settings that reproduce the corresponding table or figure.
    pub fn defaults(id: ExperimentId) -> Self {
        let seed = 1;
        let mut study = StudyConfig::default();
        let (problem, sgd, eval) = match id {
            ExperimentId::Table1 => {
                study.betas = vec![0.05, 0.1, 0.2, 0.4];
                let mut problem = table2_problem();
                problem.m = 10;
                let mut sgd = table2_sgd();
                sgd.n_iterations = 0;
                (problem, sgd, evaluation(vec![]))
            }
            ExperimentId::Table2 => {
                study.rates = vec![1.0, 2.0, 5.0, 10.0, 100.0];
                (table2_problem(), table2_sgd(), evaluation(vec![]))
            }
            ExperimentId::Table3 => {
                study.orders = vec![0, 1, 2, 3];
                (section52_problem(3), section52_sgd(), evaluation(vec![0.5]))
            }
            ExperimentId::FigConvergence => {
                study.rates = vec![1.0, 5.0, 10.0];
                study.rate_offset = 0.0;
                let mut sgd = table2_sgd();
                sgd.record_stride = 5;
                study.companion = Some(section52_companion(10, 2000));
                (table2_problem(), sgd, evaluation(vec![]))
            }
            ExperimentId::FigCdf => {
                let mut problem = table2_problem();
                problem.kind = ProblemKind::LinearNonhomogeneous;
                let mut sgd = table2_sgd();
                sgd.schedule = LearningRateSchedule::new(10.0, 0.0);
                sgd.cv_mode = CvMode::None;
                sgd.initialization = Initialization::Zero;
                sgd.record_stride = 50;
                study.companion = Some(section52_companion(100, 0));
                (problem, sgd, evaluation(vec![-4.0, 2.0]))
            }
            ExperimentId::FigStagedHessian => (section53_problem(0.1), section53_sgd(), evaluation(vec![])),
            ExperimentId::FigBatchStudy => {
                study.betas = vec![0.3, 0.4];
                study.batches = vec![[128, 64], [128, 128], [256, 64], [256, 128]];
                (section53_problem(0.4), section53_sgd(), evaluation(vec![]))
            }
            ExperimentId::Solve => (table2_problem(), table2_sgd(), evaluation(vec![0.0])),
        };
        let mut cfg = Self {
            experiment: id,
            seed,
            output: None,
            problem,
            sgd,
            evaluation: eval,
            study,
        };
        cfg.sgd.seed = seed;
        cfg
    }

    /// Defaults for `id`, overlaid with `text` (may be empty) and then with
    /// `key.path=value` overrides.
    pub fn load(id: ExperimentId, text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(Self::defaults(id))
            .map_err(|e| Error::InvalidConfig(format!("cannot serialise defaults: {e}")))?;
        if let Some(text) = text {
            let file: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config file: {e}")))?;
            if let Some(exp) = file.get("experiment") {
                if exp.as_str() != Some(id.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "config file is for experiment {exp}, but `{id}` was requested"
                    )));
                }
            }
            merge(&mut value, toml::Value::Table(file));
        }
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let mut cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.sgd.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.sgd.seed != self.seed {
            return Err(Error::InvalidConfig("sgd.seed must equal the top-level seed".into()));
        }
        if self.evaluation.n_mc < 2 {
            return Err(Error::InvalidConfig("evaluation.n_mc must be at least 2".into()));
        }
        if let Some(c) = &self.study.companion {
            c.sgd.validate()?;
        }
        if self.study.seeds == 0 {
            return Err(Error::InvalidConfig("study.seeds must be at least 1".into()));
        }
        if self.study.component[0] == 0 || self.study.component[0] > self.problem.m {
            return Err(Error::InvalidConfig(format!(
                "study.component spatial index must be in 1..={}",
                self.problem.m
            )));
        }
        if self.problem.m == 0 || !(self.problem.length > 0.0) {
            return Err(Error::InvalidConfig("problem.m and problem.length must be positive".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; `value` is read as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{spec}` is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key `{path}`")));
    }
    let mut node = root;
    for (depth, key) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{}` is not a table", keys[..depth].join("."))))?;
        if depth + 1 == keys.len() {
            table.insert((*key).to_string(), value);
            return Ok(());
        }
        node = table
            .entry((*key).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}
