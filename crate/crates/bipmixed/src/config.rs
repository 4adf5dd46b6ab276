//! Run configuration for the command-line tools: a sectioned JSON file whose
//! entries are all optional and overlay the built-in defaults; command-line
//! flags overlay the file in turn.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{FitOptions, Method};
use crate::error::{Error, Result};
use crate::hyper::{Hyperparameters, IgPrior, ImportanceCollapse};
use crate::io::read_json;

/// Environment variable consulted for the default worker-pool size when
/// neither a flag nor the config file sets one.
pub const WORKERS_ENV: &str = "BIPMIXED_WORKERS";

/// Where inputs come from and how they are preprocessed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest of the training dataset.
    pub train: Option<PathBuf>,
    pub standardize: Option<bool>,
}

/// Model structure and priors.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// "bipmixed", "bip", or "pca2step".
    pub method: Option<String>,
    pub rank: Option<usize>,
    pub tau2: Option<f64>,
    pub q_eta: Option<f64>,
    pub q_gamma: Option<f64>,
    pub sigma_beta2: Option<f64>,
    pub sigma_mu2: Option<f64>,
    pub ig_site: Option<IgPrior>,
    pub ig_family: Option<IgPrior>,
    pub ig_residual: Option<IgPrior>,
    pub ig_feature: Option<IgPrior>,
    pub random_effects: Option<bool>,
    pub covariates_in_outcome: Option<bool>,
    pub as_printed: Option<bool>,
    pub beta_conjugate: Option<bool>,
    pub importance_collapse: Option<ImportanceCollapse>,
    /// Move the covariates in as an extra view for the no-random-effects
    /// baseline.
    pub bip_covariates_as_view: Option<bool>,
    /// Collapse the two-step baseline's nesting to family-only intercepts.
    pub pca2step_family_only: Option<bool>,
}

/// Chain length and reproducibility settings.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iters: Option<usize>,
    pub burn: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub mh_moves_per_component: Option<usize>,
    /// Worker-pool size; flags and then this entry beat the environment
    /// variable.
    pub workers: Option<usize>,
}

/// Settings of the averaging step at prediction time.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    /// Selection configurations retained for model averaging.
    pub max_models: Option<usize>,
}

/// Where results land and how verbose they are.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Dump full kept-state traces next to the summaries.
    pub trace: Option<bool>,
}

/// The full sectioned run configuration.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub prediction: PredictionConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Read a config file; unknown or ill-typed fields report their path.
    pub fn load(path: &Path) -> Result<RunConfig> {
        read_json(path)
    }

    /// Overlay this configuration onto default hyperparameters and validate
    /// the result.
    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::default();
        let m = &self.model;
        if let Some(v) = m.rank {
            h.r = v;
        }
        if let Some(v) = m.tau2 {
            h.tau2 = v;
        }
        if let Some(v) = m.q_eta {
            h.q_eta = v;
        }
        if let Some(v) = m.q_gamma {
            h.q_gamma = v;
        }
        if let Some(v) = m.sigma_beta2 {
            h.sigma_beta2 = v;
        }
        if let Some(v) = m.sigma_mu2 {
            h.sigma_mu2 = v;
        }
        if let Some(v) = m.ig_site {
            h.ig_site = v;
        }
        if let Some(v) = m.ig_family {
            h.ig_family = v;
        }
        if let Some(v) = m.ig_residual {
            h.ig_residual = v;
        }
        if let Some(v) = m.ig_feature {
            h.ig_feature = v;
        }
        if let Some(v) = m.random_effects {
            h.random_effects_enabled = v;
        }
        if let Some(v) = m.covariates_in_outcome {
            h.covariates_in_outcome = v;
        }
        if let Some(v) = m.as_printed {
            h.as_printed = v;
        }
        if let Some(v) = m.beta_conjugate {
            h.beta_conjugate = v;
        }
        if let Some(v) = m.importance_collapse {
            h.importance_collapse = v;
        }
        if let Some(v) = self.data.standardize {
            h.standardize = v;
        }
        if let Some(v) = self.mcmc.iters {
            h.n_iter = v;
        }
        if let Some(v) = self.mcmc.burn {
            h.n_burn = v;
        }
        if let Some(v) = self.mcmc.thin {
            h.thin = v;
        }
        if let Some(v) = self.mcmc.seed {
            h.seed = v;
        }
        if self.mcmc.mh_moves_per_component.is_some() {
            h.mh_moves_per_component = self.mcmc.mh_moves_per_component;
        }
        if let Some(v) = self.prediction.max_models {
            h.max_bma_models = v;
        }
        h.validate()?;
        Ok(h)
    }

    /// The method named in the model section; defaults to the full model.
    pub fn method(&self) -> Result<Method> {
        match &self.model.method {
            Some(name) => name.parse(),
            None => Ok(Method::Bipmixed),
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            bip_covariates_as_view: self.model.bip_covariates_as_view.unwrap_or(false),
            pca2step_family_only: self.model.pca2step_family_only.unwrap_or(false),
        }
    }
}

/// Resolve the worker-pool size: explicit flag, then config entry, then the
/// environment variable; None leaves the pool at its library default.
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if config.is_some() {
        return Ok(config);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(text) => {
            let n: usize = text.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "{WORKERS_ENV} must be a positive integer, got {text:?}"
                ))
            })?;
            if n == 0 {
                return Err(Error::Config(format!("{WORKERS_ENV} must be positive")));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_through() {
        let config = RunConfig::default();
        let h = config.hyperparameters().unwrap();
        let d = Hyperparameters::default();
        assert_eq!(h.r, d.r);
        assert_eq!(h.n_iter, d.n_iter);
        assert_eq!(h.thin, 1);
        assert_eq!(config.method().unwrap(), Method::Bipmixed);
        assert!(!config.fit_options().pca2step_family_only);
    }

    #[test]
    fn sections_overlay_defaults() {
        let text = r#"{
            "data": {"standardize": false},
            "model": {"method": "pca2step", "rank": 2, "q_eta": 0.2,
                      "ig_family": {"shape": 1.0, "scale": 2.0},
                      "pca2step_family_only": true},
            "mcmc": {"iters": 100, "burn": 50, "seed": 9},
            "prediction": {"max_models": 5},
            "output": {"trace": true}
        }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        let h = config.hyperparameters().unwrap();
        assert_eq!(h.r, 2);
        assert_eq!(h.q_eta, 0.2);
        assert_eq!(h.ig_family, IgPrior::new(1.0, 2.0));
        assert!(!h.standardize);
        assert_eq!(h.n_iter, 100);
        assert_eq!(h.seed, 9);
        assert_eq!(h.max_bma_models, 5);
        assert_eq!(config.method().unwrap(), Method::Pca2Step);
        assert!(config.fit_options().pca2step_family_only);
        assert_eq!(config.output.trace, Some(true));
    }

    #[test]
    fn bad_field_reports_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"mcmc": {"iters": "many"}}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("mcmc.iters"), "got: {err}");

        std::fs::write(&path, r#"{"model": {"rnak": 3}}"#).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("rnak"), "got: {err}");
    }

    #[test]
    fn invalid_values_fail_validation() {
        let config: RunConfig =
            serde_json::from_str(r#"{"mcmc": {"iters": 10, "burn": 20}}"#).unwrap();
        assert!(matches!(config.hyperparameters(), Err(Error::Config(_))));
    }

    #[test]
    fn worker_resolution_priority() {
        assert_eq!(resolve_workers(Some(3), Some(5)).unwrap(), Some(3));
        assert_eq!(resolve_workers(None, Some(5)).unwrap(), Some(5));
        // Environment interaction is exercised in the CLI tests to keep this
        // process's environment untouched.
    }
}
