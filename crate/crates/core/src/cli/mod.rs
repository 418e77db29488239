//! Configuration-driven experiment runner.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

use crate::error::Result;
pub use config::{ExperimentConfig, ExperimentId};
pub use experiments::{run_experiment, Check, Report};
use output::{coefficients_to_string, write_file, Metadata};

pub fn metadata(cfg: &ExperimentConfig) -> Metadata {
    Metadata {
        experiment: cfg.experiment.as_str().into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

/// Writes every table as `<stem>.csv`, the checks as `checks.csv`, the
/// coefficients (if any) as `coefficients.txt`, and the resolved config as
/// `config.toml`. Returns the written paths.
pub fn write_report(cfg: &ExperimentConfig, report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    let meta = metadata(cfg);
    let mut written = vec![];
    let mut emit = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
        Ok(())
    };
    for (stem, table) in &report.tables {
        emit(format!("{stem}.csv"), table.render(&meta)?)?;
    }
    emit("checks.csv".into(), report.checks_table().render(&meta)?)?;
    if let Some(c) = &report.coefficients {
        emit("coefficients.txt".into(), coefficients_to_string(c, &meta))?;
    }
    emit("config.toml".into(), cfg.to_toml()?)?;
    Ok(written)
}
