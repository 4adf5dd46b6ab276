//! Sampler hyperparameters and run settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape/scale pair of an inverse-gamma prior.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct IgPrior {
    pub shape: f64,
    pub scale: f64,
}

impl IgPrior {
    pub const fn new(shape: f64, scale: f64) -> Self {
        IgPrior { shape, scale }
    }
}

/// How per-feature importance scores collapse the per-component inclusion
/// probabilities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceCollapse {
    /// max over components of MPP(eta_lj); the default.
    #[default]
    MaxComponent,
    /// 1 - prod over components of (1 - MPP(eta_lj)).
    AnyComponent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Latent rank. Zero is allowed and drops the factor part entirely,
    /// leaving the nested random-effects regression.
    pub r: usize,
    /// Slab variance multiplier of the loading prior.
    pub tau2: f64,
    /// Prior inclusion probability of a feature within an active component.
    pub q_eta: f64,
    /// Prior activation probability of a component.
    pub q_gamma: f64,
    /// Prior variance of fixed-effect coefficients.
    pub sigma_beta2: f64,
    /// Prior variance of the grand mean.
    pub sigma_mu2: f64,
    pub ig_site: IgPrior,
    pub ig_family: IgPrior,
    pub ig_residual: IgPrior,
    pub ig_feature: IgPrior,
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Models kept for Bayesian model averaging at prediction time.
    pub max_bma_models: usize,
    /// When false: no site/family effects; the outcome keeps only the grand
    /// mean, covariates, and the factor part.
    pub random_effects_enabled: bool,
    /// When false, covariates present in the data are ignored by the outcome
    /// regression.
    pub covariates_in_outcome: bool,
    /// Standardize view (and covariate) columns before fitting.
    pub standardize: bool,
    /// Reproduce the printed forms of the site-effect conditional and the
    /// site-variance scale, which omit the grand mean. The default applies
    /// the prior-consistent centering.
    pub as_printed: bool,
    /// Use the conjugate precision for fixed effects (the exact conditional
    /// of the N(0, sigma_beta2 I) prior). Off reproduces a recipe whose
    /// precision swaps the two scales (W'W / sigma_beta2 + I / sigma2);
    /// paired with the data term's 1/sigma2, that inflates the posterior
    /// mean by roughly sigma_beta2/sigma2 whenever covariates carry signal,
    /// so it is an opt-in reproduction switch, not a usable default.
    pub beta_conjugate: bool,
    /// Selection proposals per component per sweep; None picks the view's
    /// feature count (3 for the outcome view).
    pub mh_moves_per_component: Option<usize>,
    pub importance_collapse: ImportanceCollapse,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            r: 4,
            tau2: 1.0,
            q_eta: 0.05,
            q_gamma: 0.5,
            sigma_beta2: 100.0,
            sigma_mu2: 100.0,
            ig_site: IgPrior::new(0.01, 0.01),
            ig_family: IgPrior::new(0.01, 0.01),
            ig_residual: IgPrior::new(0.01, 0.01),
            ig_feature: IgPrior::new(0.01, 0.01),
            n_iter: 5000,
            n_burn: 2500,
            thin: 1,
            seed: 0,
            max_bma_models: 50,
            random_effects_enabled: true,
            covariates_in_outcome: true,
            standardize: true,
            as_printed: false,
            beta_conjugate: true,
            mh_moves_per_component: None,
            importance_collapse: ImportanceCollapse::default(),
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("tau2", self.tau2),
            ("sigma_beta2", self.sigma_beta2),
            ("sigma_mu2", self.sigma_mu2),
            ("ig_site.shape", self.ig_site.shape),
            ("ig_site.scale", self.ig_site.scale),
            ("ig_family.shape", self.ig_family.shape),
            ("ig_family.scale", self.ig_family.scale),
            ("ig_residual.shape", self.ig_residual.shape),
            ("ig_residual.scale", self.ig_residual.scale),
            ("ig_feature.shape", self.ig_feature.shape),
            ("ig_feature.scale", self.ig_feature.scale),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, q) in [("q_eta", self.q_eta), ("q_gamma", self.q_gamma)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config(format!(
                    "{name} must lie strictly between 0 and 1, got {q}"
                )));
            }
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be positive".into()));
        }
        if self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "n_burn ({}) must be below n_iter ({})",
                self.n_burn, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.max_bma_models == 0 {
            return Err(Error::Config("max_bma_models must be at least 1".into()));
        }
        if let Some(m) = self.mh_moves_per_component {
            if m == 0 {
                return Err(Error::Config(
                    "mh_moves_per_component must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}
