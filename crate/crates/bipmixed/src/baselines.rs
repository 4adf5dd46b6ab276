//! Reference methods run against the full model in the benchmark: the same
//! sampler without random effects, and a two-step pipeline that extracts
//! principal-component scores first and fits a random-intercept outcome model
//! second. A serializable archive wraps any fitted method behind one predict
//! call.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, Scaler};
use crate::error::{Error, Result};
use crate::hyper::Hyperparameters;
use crate::io::{read_json, write_json};
use crate::predict::FittedModel;
use crate::sampler::fit;

/// Methods the benchmark can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bipmixed,
    Bip,
    Pca2Step,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Bipmixed => "bipmixed",
            Method::Bip => "bip",
            Method::Pca2Step => "pca2step",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bipmixed" => Ok(Method::Bipmixed),
            "bip" => Ok(Method::Bip),
            "pca2step" | "pca" => Ok(Method::Pca2Step),
            other => Err(Error::Config(format!(
                "unknown method {other:?}; expected bipmixed, bip, or pca2step"
            ))),
        }
    }
}

/// Method-specific switches used by the benchmark runner and the CLI.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct FitOptions {
    /// For the no-random-effects baseline: move the covariates out of the
    /// outcome model and in as an extra feature view.
    #[serde(default)]
    pub bip_covariates_as_view: bool,
    /// For the two-step baseline: collapse the nesting to family intercepts
    /// under a single pseudo-site instead of the full two levels.
    #[serde(default)]
    pub pca2step_family_only: bool,
}

/// Re-home the covariate block as an additional feature view.
pub fn append_covariates_view(data: &MultiViewDataset) -> Result<MultiViewDataset> {
    let w = data
        .covariates
        .as_ref()
        .filter(|w| w.ncols() > 0)
        .ok_or_else(|| Error::EmptyInput("no covariates to move into a view".into()))?;
    let mut out = data.clone();
    out.views.push(w.clone());
    out.view_names.push("covariates".into());
    out.feature_names.push(data.covariate_names.clone());
    out.covariates = None;
    out.covariate_names = Vec::new();
    Ok(out)
}

/// Fit the factorization with the random-effect structure switched off: the
/// outcome keeps only its grand mean beside the fixed and factor effects.
/// `covariates_as_view` additionally moves any covariates into the feature
/// side, leaving the outcome model without fixed effects.
pub fn fit_bip(
    data: &MultiViewDataset,
    hyper: &Hyperparameters,
    covariates_as_view: bool,
) -> Result<FittedModel> {
    let mut hyper = hyper.clone();
    hyper.random_effects_enabled = false;
    if covariates_as_view {
        let moved = append_covariates_view(data)?;
        let mut model = fit(&moved, &hyper)?;
        model.covariates_as_view = true;
        Ok(model)
    } else {
        fit(data, &hyper)
    }
}

/// The two-step baseline: principal-component scores of the concatenated
/// standardized views feed a random-intercept outcome model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pca2StepModel {
    /// Standardization fitted on the training views.
    pub scaler: Scaler,
    /// Column widths of the training views, for validating new data.
    pub view_dims: Vec<usize>,
    /// Orthonormal projection directions, total-features x rank.
    pub directions: DMatrix<f64>,
    /// Random-intercept outcome model over the projected scores.
    pub inner: FittedModel,
    /// Whether the nesting was collapsed to family-only.
    pub family_only: bool,
}

fn concat_standardized(scaler: &Scaler, views: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let n = views.first().map(|v| v.nrows()).unwrap_or(0);
    let total: usize = views.iter().map(|v| v.ncols()).sum();
    let mut z = DMatrix::zeros(n, total);
    let mut at = 0;
    for (m, view) in views.iter().enumerate() {
        let std = scaler.transform_view(m, view)?;
        z.view_mut((0, at), (n, view.ncols())).copy_from(&std);
        at += view.ncols();
    }
    Ok(z)
}

/// Leading right-singular directions of `z`, sign-fixed so each direction's
/// largest-magnitude entry is positive.
pub fn principal_directions(z: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let max_rank = z.nrows().min(z.ncols());
    if rank == 0 || rank > max_rank {
        return Err(Error::Config(format!(
            "rank {rank} out of range for a {}x{} score matrix",
            z.nrows(),
            z.ncols()
        )));
    }
    let svd = z.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SingularSystem("SVD of concatenated views".into()))?;
    let mut directions = DMatrix::zeros(z.ncols(), rank);
    for k in 0..rank {
        let row = v_t.row(k);
        let mut lead = 0;
        for j in 1..row.len() {
            if row[j].abs() > row[lead].abs() {
                lead = j;
            }
        }
        let sign = if row[lead] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..row.len() {
            directions[(j, k)] = sign * row[j];
        }
    }
    Ok(directions)
}

fn scores_dataset(
    scores: DMatrix<f64>,
    outcome: DVector<f64>,
    site: Vec<String>,
    family: Vec<String>,
    family_only: bool,
) -> MultiViewDataset {
    let site = if family_only {
        vec!["all".to_string(); site.len()]
    } else {
        site
    };
    let covariate_names = (0..scores.ncols())
        .map(|k| format!("pc{}", k + 1))
        .collect();
    MultiViewDataset {
        views: Vec::new(),
        view_names: Vec::new(),
        feature_names: Vec::new(),
        covariates: Some(scores),
        covariate_names,
        outcome,
        site,
        family,
    }
}

/// Fit the two-step baseline. The outcome stage reuses the sampler with the
/// factor side empty and near-flat fixed-effect priors, so the score
/// coefficients are regression estimates rather than shrunken ones, and the
/// intercepts keep the full family-within-site structure unless
/// `family_only` collapses the site level.
pub fn fit_pca2step(
    data: &MultiViewDataset,
    hyper: &Hyperparameters,
    family_only: bool,
) -> Result<Pca2StepModel> {
    data.validate()?;
    if data.views.is_empty() {
        return Err(Error::EmptyInput(
            "two-step baseline needs feature views".into(),
        ));
    }
    let scaler = if hyper.standardize {
        Scaler::fit(data)?
    } else {
        Scaler::identity(data)
    };
    let z = concat_standardized(&scaler, &data.views)?;
    let directions = principal_directions(&z, hyper.r)?;
    let scores = &z * &directions;

    let mut inner_hyper = hyper.clone();
    inner_hyper.r = 0;
    inner_hyper.standardize = false;
    inner_hyper.random_effects_enabled = true;
    inner_hyper.covariates_in_outcome = true;
    inner_hyper.beta_conjugate = true;
    inner_hyper.sigma_beta2 = 1e4;
    let inner_data = scores_dataset(
        scores,
        data.outcome.clone(),
        data.site.clone(),
        data.family.clone(),
        family_only,
    );
    let inner = fit(&inner_data, &inner_hyper)?;
    Ok(Pca2StepModel {
        scaler,
        view_dims: data.views.iter().map(|v| v.ncols()).collect(),
        directions,
        inner,
        family_only,
    })
}

impl Pca2StepModel {
    /// Project new rows onto the training directions and score them through
    /// the outcome model. Unseen families fall back to their site intercept
    /// (or the pooled intercept when the model is family-only).
    pub fn predict(&self, data: &MultiViewDataset) -> Result<DVector<f64>> {
        data.validate()?;
        if data.views.len() != self.view_dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "model was trained on {} views, data has {}",
                self.view_dims.len(),
                data.views.len()
            )));
        }
        for (m, (view, &dim)) in data.views.iter().zip(&self.view_dims).enumerate() {
            if view.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "view {m} has {} features, model expects {dim}",
                    view.ncols()
                )));
            }
        }
        let z = concat_standardized(&self.scaler, &data.views)?;
        let scores = &z * &self.directions;
        let synthetic = scores_dataset(
            scores,
            data.outcome.clone(),
            data.site.clone(),
            data.family.clone(),
            self.family_only,
        );
        self.inner.predict_bma(&synthetic)
    }
}

/// A fitted model of any method, ready to archive as JSON and reload for
/// prediction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArchive {
    Factor(FittedModel),
    TwoStep(Pca2StepModel),
}

impl ModelArchive {
    /// Which benchmark method produced this model.
    pub fn method(&self) -> Method {
        match self {
            ModelArchive::Factor(m) => {
                if m.hyper.random_effects_enabled {
                    Method::Bipmixed
                } else {
                    Method::Bip
                }
            }
            ModelArchive::TwoStep(_) => Method::Pca2Step,
        }
    }

    pub fn predict(&self, data: &MultiViewDataset) -> Result<DVector<f64>> {
        match self {
            ModelArchive::Factor(m) => m.predict_bma(data),
            ModelArchive::TwoStep(m) => m.predict(data),
        }
    }

    /// Posterior inclusion probabilities per feature view, when the method
    /// has them. A view synthesized from the covariates is not feature
    /// selection and is excluded.
    pub fn mpp_feature(&self) -> Option<&[DMatrix<f64>]> {
        match self {
            ModelArchive::Factor(m) if !m.summary.mpp_feature.is_empty() => {
                let views = m.summary.mpp_feature.as_slice();
                Some(if m.covariates_as_view {
                    &views[..views.len() - 1]
                } else {
                    views
                })
            }
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Load an archive and restore the label lookups that are not stored.
    pub fn load(path: &Path) -> Result<Self> {
        let mut archive: ModelArchive = read_json(path)?;
        match &mut archive {
            ModelArchive::Factor(m) => m.hierarchy.rebuild_lookups(),
            ModelArchive::TwoStep(m) => m.inner.hierarchy.rebuild_lookups(),
        }
        Ok(archive)
    }
}

/// Fit one benchmark method.
pub fn fit_method(
    method: Method,
    data: &MultiViewDataset,
    hyper: &Hyperparameters,
    options: &FitOptions,
) -> Result<ModelArchive> {
    match method {
        Method::Bipmixed => {
            let mut hyper = hyper.clone();
            hyper.random_effects_enabled = true;
            Ok(ModelArchive::Factor(fit(data, &hyper)?))
        }
        Method::Bip => Ok(ModelArchive::Factor(fit_bip(
            data,
            hyper,
            options.bip_covariates_as_view,
        )?)),
        Method::Pca2Step => Ok(ModelArchive::TwoStep(fit_pca2step(
            data,
            hyper,
            options.pca2step_family_only,
        )?)),
    }
}
