//! Effective run configuration: flags over a TOML file over defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use opffr::design::BasisForm;
use opffr::model::{FitConfig, DEFAULT_NODES};
use opffr::solver::{log_grid, DEFAULT_FUDGE};

use crate::error::CliError;
use crate::numfmt::g17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rescale {
    /// Map each axis affinely onto [0,1] from the observed argument range.
    Auto,
    /// Arguments must already lie in [0,1].
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Auto,
    Representer,
    Reduced,
}

impl From<Basis> for BasisForm {
    fn from(b: Basis) -> Self {
        match b {
            Basis::Auto => BasisForm::Auto,
            Basis::Representer => BasisForm::Representer,
            Basis::Reduced => BasisForm::Reduced,
        }
    }
}

/// Flags shared by every command that fits.
#[derive(Args, Clone, Debug, Default)]
pub struct FitFlags {
    /// Gauss-Legendre nodes on the response axis.
    #[arg(long)]
    pub t_nodes: Option<usize>,
    /// Gauss-Legendre nodes on the predictor axis.
    #[arg(long)]
    pub s_nodes: Option<usize>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Number of log-spaced grid points.
    #[arg(long)]
    pub lambda_count: Option<usize>,
    /// GCV fudge factor α ≥ 1.
    #[arg(long)]
    pub fudge: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub rescale: Option<Rescale>,
    #[arg(long, value_enum)]
    pub basis: Option<Basis>,
    /// TOML file with any of the keys above (underscored).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    t_nodes: Option<usize>,
    s_nodes: Option<usize>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    lambda_count: Option<usize>,
    fudge: Option<f64>,
    seed: Option<u64>,
    rescale: Option<Rescale>,
    basis: Option<Basis>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub t_nodes: usize,
    pub s_nodes: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub fudge: f64,
    pub seed: u64,
    pub rescale: Rescale,
    pub basis: Basis,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_nodes: DEFAULT_NODES,
            s_nodes: DEFAULT_NODES,
            lambda_min: 1e-8,
            lambda_max: 1e2,
            lambda_count: 40,
            fudge: DEFAULT_FUDGE,
            seed: 1,
            rescale: Rescale::Auto,
            basis: Basis::Auto,
        }
    }
}

fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn resolve(flags: &FitFlags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let d = Self::default();
        let cfg = Self {
            t_nodes: flags.t_nodes.or(file.t_nodes).unwrap_or(d.t_nodes),
            s_nodes: flags.s_nodes.or(file.s_nodes).unwrap_or(d.s_nodes),
            lambda_min: flags.lambda_min.or(file.lambda_min).unwrap_or(d.lambda_min),
            lambda_max: flags.lambda_max.or(file.lambda_max).unwrap_or(d.lambda_max),
            lambda_count: flags.lambda_count.or(file.lambda_count).unwrap_or(d.lambda_count),
            fudge: flags.fudge.or(file.fudge).unwrap_or(d.fudge),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            rescale: flags.rescale.or(file.rescale).unwrap_or(d.rescale),
            basis: flags.basis.or(file.basis).unwrap_or(d.basis),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.t_nodes == 0 || self.s_nodes == 0 || self.lambda_count == 0 {
            return Err(CliError::Input("node and grid counts must be positive".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(CliError::Input(format!(
                "lambda bounds must satisfy 0 < lambda_min < lambda_max, got {} and {}",
                g17(self.lambda_min),
                g17(self.lambda_max)
            )));
        }
        if !(self.fudge >= 1.0 && self.fudge.is_finite()) {
            return Err(CliError::Input(format!("fudge must be >= 1, got {}", g17(self.fudge))));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        Ok(FitConfig {
            t_nodes: self.t_nodes,
            s_nodes: self.s_nodes,
            lambda_grid: log_grid(self.lambda_min, self.lambda_max, self.lambda_count)?,
            fudge: self.fudge,
            basis: self.basis.into(),
        })
    }

    /// `key=value` pairs for the comment header of output files.
    pub fn echo(&self) -> String {
        let name = |v: &dyn std::fmt::Debug| format!("{v:?}").to_lowercase();
        format!(
            "t_nodes={} s_nodes={} lambda_min={} lambda_max={} lambda_count={} fudge={} seed={} rescale={} basis={}",
            self.t_nodes,
            self.s_nodes,
            g17(self.lambda_min),
            g17(self.lambda_max),
            self.lambda_count,
            g17(self.fudge),
            self.seed,
            name(&self.rescale),
            name(&self.basis)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = std::env::temp_dir().join(format!("opffr-cfg-{}.toml", std::process::id()));
        std::fs::write(&dir, "t_nodes = 12\nfudge = 1.2\nrescale = \"off\"\n").unwrap();
        let flags = FitFlags {
            t_nodes: Some(8),
            config: Some(dir.clone()),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(c.t_nodes, 8);
        assert_eq!(c.fudge, 1.2);
        assert_eq!(c.rescale, Rescale::Off);
        assert_eq!(c.s_nodes, DEFAULT_NODES);
    }

    #[test]
    fn rejects_bad_bounds() {
        let flags = FitFlags {
            lambda_min: Some(1.0),
            lambda_max: Some(0.1),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&flags).is_err());
    }
}
