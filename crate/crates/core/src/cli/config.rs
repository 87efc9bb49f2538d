//! Run configuration: a flat TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::CliError;
use crate::mfsim::SimConfig;
use crate::model::{calibrated_defaults, default_a_max, validate, ModelParams, ValidatedParams};
use crate::numerics::DEFAULT_INTERVALS;
use crate::principal::{ContractKind, PrincipalKind};

pub const DEFAULT_SWEEP_R_P: [f64; 5] = [0.0, 3e-3, 6e-3, 1.2e-2, 3e-2];
pub const DEFAULT_SWEEP_SHARE: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_VARIANCE_SHARE: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 20240601;

/// Keys accepted in a run configuration file. Model fields given here
/// override the base model (calibrated defaults or `model_file`).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model_file: Option<PathBuf>,
    pub variance_share: Option<f64>,

    pub d: Option<usize>,
    pub rho: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub sigma_circ: Option<f64>,
    pub a_max: Option<f64>,
    pub b_min: Option<f64>,
    pub r_a: Option<f64>,
    pub r_p: Option<f64>,
    pub theta: Option<f64>,
    pub horizon: Option<f64>,
    pub x0: Option<f64>,
    pub delta: Option<f64>,
    pub kappa: Option<f64>,

    pub sweep_r_p: Option<Vec<f64>>,
    pub sweep_variance_share: Option<Vec<f64>>,
    pub grid: Option<usize>,

    pub n_particles: Option<usize>,
    pub n_common: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub antithetic: Option<bool>,
    pub sim_kind: Option<ContractKind>,
    pub sim_principal: Option<PrincipalKind>,

    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // A relative model file is resolved against the config file's directory.
        if let (Some(mf), Some(dir)) = (cfg.model_file.as_mut(), path.parent()) {
            if mf.is_relative() {
                *mf = dir.join(&*mf);
            }
        }
        Ok(cfg)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub share: Option<f64>,
    pub r_p: Option<f64>,
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub n_particles: Option<usize>,
    pub n_common: Option<usize>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub config: SimConfig,
    pub kind: ContractKind,
    pub principal: PrincipalKind,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    file: ConfigFile,
    share: Option<f64>,
    pub model: ValidatedParams,
    pub sweep_r_p: Vec<f64>,
    pub sweep_variance_share: Vec<f64>,
    pub grid: usize,
    pub sim: SimSettings,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(file: ConfigFile, ov: &Overrides) -> Result<Self, CliError> {
        let share = ov.share.or(file.variance_share);
        let model = build_model(&file, share, ov.r_p)?;
        let sweep_r_p = match ov.r_p {
            Some(r) => vec![r],
            None => file.sweep_r_p.clone().unwrap_or_else(|| DEFAULT_SWEEP_R_P.to_vec()),
        };
        let sweep_variance_share = match ov.share {
            Some(s) => vec![s],
            None => file
                .sweep_variance_share
                .clone()
                .unwrap_or_else(|| DEFAULT_SWEEP_SHARE.to_vec()),
        };
        if sweep_r_p.is_empty() || sweep_variance_share.is_empty() {
            return Err(CliError::Config("sweep lists must not be empty".into()));
        }
        let grid = ov.grid.or(file.grid).unwrap_or(DEFAULT_INTERVALS);
        let mut config = SimConfig::standard(model.horizon, DEFAULT_SEED);
        config.n_particles = ov.n_particles.or(file.n_particles).unwrap_or(config.n_particles);
        config.n_common = ov.n_common.or(file.n_common).unwrap_or(config.n_common);
        config.dt = ov.dt.or(file.dt).unwrap_or(config.dt);
        config.seed = ov.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        config.antithetic = file.antithetic.unwrap_or(false);
        let sim = SimSettings {
            config,
            kind: file.sim_kind.unwrap_or(ContractKind::New),
            principal: file.sim_principal.unwrap_or_else(|| PrincipalKind::for_params(&model)),
        };
        let out = ov
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            file,
            share,
            model,
            sweep_r_p,
            sweep_variance_share,
            grid,
            sim,
            out,
        })
    }

    /// The model at another variance share and principal risk aversion,
    /// resolved exactly as the base model is.
    pub fn model_at(&self, share: f64, r_p: f64) -> Result<ValidatedParams, CliError> {
        build_model(&self.file, Some(share), Some(r_p))
    }

    pub fn variance_share(&self) -> Option<f64> {
        self.share
    }
}

fn build_model(file: &ConfigFile, share: Option<f64>, r_p: Option<f64>) -> Result<ValidatedParams, CliError> {
    let mut m = match &file.model_file {
        Some(path) => {
            let base = ModelParams::from_file(path)?;
            match share {
                Some(s) => base.with_variance_share(s)?,
                None => base,
            }
        }
        None => {
            let mut base = calibrated_defaults(share.unwrap_or(DEFAULT_VARIANCE_SHARE))?;
            if file.a_max.is_none() {
                let delta = file.delta.unwrap_or(base.delta);
                let horizon = file.horizon.unwrap_or(base.horizon);
                base.a_max = default_a_max(delta, horizon);
            }
            base
        }
    };
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = &file.$f { m.$f = v.clone(); } )* };
    }
    apply!(d, rho, lambda, eta, sigma, sigma_circ, a_max, b_min, r_a, r_p, theta, horizon, x0, delta, kappa);
    if let Some(r) = r_p {
        m.r_p = r;
    }
    Ok(validate(m)?)
}
