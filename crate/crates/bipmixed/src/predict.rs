//! Out-of-sample prediction: per-model loading re-estimation from the
//! posterior mean latent matrix, latent scores for new rows, random-effect
//! lookup by family and site, and model averaging over the most visited
//! selection configurations.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, Scaler};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyIndex;
use crate::hyper::Hyperparameters;
use crate::posterior::PosteriorSummary;
use crate::sampler::FitDiagnostics;
use crate::state::SelectionConfig;

/// Loadings re-estimated under one selection configuration: per-view
/// r-by-p matrices plus the outcome loadings, all exactly zero off the
/// configuration's active pattern.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelLoadings {
    pub views: Vec<DMatrix<f64>>,
    pub alpha: DVector<f64>,
}

/// A finished fit: everything prediction needs, serializable as one archive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedModel {
    pub hyper: Hyperparameters,
    pub scaler: Scaler,
    pub hierarchy: HierarchyIndex,
    pub view_dims: Vec<usize>,
    pub covariate_dim: usize,
    /// Set when fitting moved the covariates in as the last feature view;
    /// data arriving with covariates gets the same rearrangement.
    #[serde(default)]
    pub covariates_as_view: bool,
    pub summary: PosteriorSummary,
    /// Loadings per registry entry, same order as `summary.registry`.
    pub models: Vec<ModelLoadings>,
    pub diagnostics: FitDiagnostics,
}

/// Re-estimate loadings under one configuration from the posterior mean
/// latent matrix: for each view the active-component block solves
/// (U'U + I) a = U' x_j, with entries zeroed wherever the configuration
/// excludes the feature. The outcome column does the same against the
/// residual outcome (y with fixed and random effects subtracted).
pub fn estimate_loadings(
    config: &SelectionConfig,
    u_bar: &DMatrix<f64>,
    views_x: &[DMatrix<f64>],
    outcome_resid: &DVector<f64>,
) -> Result<ModelLoadings> {
    let r = u_bar.ncols();
    if config.views.len() != views_x.len() {
        return Err(Error::DimensionMismatch(format!(
            "configuration covers {} views, data has {}",
            config.views.len(),
            views_x.len()
        )));
    }

    let solve_block = |comps: &[usize], rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let k = comps.len();
        let mut s = DMatrix::<f64>::identity(k, k);
        for (a, &la) in comps.iter().enumerate() {
            for (b, &lb) in comps.iter().enumerate() {
                s[(a, b)] += u_bar.column(la).dot(&u_bar.column(lb));
            }
        }
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::SingularSystem("loading re-estimation Gram".into()))?;
        Ok(chol.solve(rhs))
    };

    let mut views = Vec::with_capacity(views_x.len());
    for (m, x) in views_x.iter().enumerate() {
        let p = x.ncols();
        let (comp_active, feat_active) = &config.views[m];
        let comps: Vec<usize> = (0..r).filter(|&l| comp_active[l]).collect();
        let mut a_hat = DMatrix::<f64>::zeros(r, p);
        if !comps.is_empty() {
            let mut rhs = DMatrix::<f64>::zeros(comps.len(), p);
            for (a, &l) in comps.iter().enumerate() {
                rhs.set_row(a, &(u_bar.column(l).transpose() * x));
            }
            let sol = solve_block(&comps, &rhs)?;
            for j in 0..p {
                for (a, &l) in comps.iter().enumerate() {
                    if feat_active[l * p + j] {
                        a_hat[(l, j)] = sol[(a, j)];
                    }
                }
            }
        }
        views.push(a_hat);
    }

    let comps: Vec<usize> = (0..r).filter(|&l| config.outcome[l]).collect();
    let mut alpha = DVector::<f64>::zeros(r);
    if !comps.is_empty() {
        let mut rhs = DMatrix::<f64>::zeros(comps.len(), 1);
        for (a, &l) in comps.iter().enumerate() {
            rhs[(a, 0)] = u_bar.column(l).dot(outcome_resid);
        }
        let sol = solve_block(&comps, &rhs)?;
        for (a, &l) in comps.iter().enumerate() {
            alpha[l] = sol[(a, 0)];
        }
    }

    Ok(ModelLoadings { views, alpha })
}

/// Latent scores for new rows under one model's loadings: solve
/// (A D A' + I_r) u = A D x for every row, where D holds reciprocal
/// posterior mean feature variances and only the non-outcome views enter.
/// Components with all-zero loadings get exactly zero scores.
pub fn estimate_u_new(
    model: &ModelLoadings,
    feat_var_hat: &[DVector<f64>],
    x_new: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    if x_new.is_empty() {
        return Err(Error::EmptyInput("no views supplied for scoring".into()));
    }
    let n_new = x_new[0].nrows();
    let r = model.alpha.len();
    if r == 0 {
        return Ok(DMatrix::zeros(n_new, 0));
    }
    let mut s = DMatrix::<f64>::identity(r, r);
    let mut bt = DMatrix::<f64>::zeros(n_new, r);
    for (m, x) in x_new.iter().enumerate() {
        let a = &model.views[m];
        if a.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "view {m}: loadings cover {} features, data has {}",
                a.ncols(),
                x.ncols()
            )));
        }
        if x.nrows() != n_new {
            return Err(Error::DimensionMismatch(format!(
                "view {m} has {} rows, expected {n_new}",
                x.nrows()
            )));
        }
        let scaled = DMatrix::from_fn(r, a.ncols(), |l, j| a[(l, j)] / feat_var_hat[m][j]);
        s += &scaled * a.transpose();
        bt += x * scaled.transpose();
    }
    let chol =
        Cholesky::new(s).ok_or_else(|| Error::SingularSystem("latent scoring system".into()))?;
    Ok(chol.solve(&bt.transpose()).transpose())
}

impl FittedModel {
    /// Standardize new views with the training scaler, checking counts.
    fn standardized_views(&self, data: &MultiViewDataset) -> Result<Vec<DMatrix<f64>>> {
        if data.views.len() != self.view_dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "model was fit on {} views, data has {}",
                self.view_dims.len(),
                data.views.len()
            )));
        }
        data.views
            .iter()
            .enumerate()
            .map(|(m, x)| self.scaler.transform_view(m, x))
            .collect()
    }

    /// Fixed-effect contribution for new rows; zero when the model carries
    /// no covariates.
    fn fixed_part(&self, data: &MultiViewDataset) -> Result<DVector<f64>> {
        let n = data.n_rows();
        if self.covariate_dim == 0 {
            return Ok(DVector::zeros(n));
        }
        let w = data.covariates.as_ref().ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "model was fit with {} covariates, data has none",
                self.covariate_dim
            ))
        })?;
        let w_std = self.scaler.transform_covariates(w)?;
        Ok(&w_std * &self.summary.beta_hat)
    }

    /// The random-effect contribution per row. With random effects enabled,
    /// rows of a known family get its effect (after checking the family
    /// still sits in the stated site); rows of a new family fall back to
    /// their site's effect; an unknown site is an error. Without random
    /// effects every row gets the grand mean.
    fn random_part(&self, data: &MultiViewDataset) -> Result<DVector<f64>> {
        let n = data.n_rows();
        if !self.hyper.random_effects_enabled {
            return Ok(DVector::from_element(n, self.summary.mu_hat));
        }
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let site = &data.site[i];
            let family = &data.family[i];
            let s = self
                .hierarchy
                .site_index(site)
                .ok_or_else(|| Error::UnknownSite(site.clone()))?;
            out[i] = match self.hierarchy.family_index(family) {
                Some(f) => {
                    let trained = self.hierarchy.site_of_family(f);
                    if trained != s {
                        return Err(Error::CrossSiteFamily {
                            family: family.clone(),
                            first: self.hierarchy.site_id(trained).to_string(),
                            second: site.clone(),
                        });
                    }
                    self.summary.theta_hat[f]
                }
                None => self.summary.xi_hat[s],
            };
        }
        Ok(out)
    }

    fn predict_weighted(
        &self,
        data: &MultiViewDataset,
        weights: &[(usize, f64)],
    ) -> Result<DVector<f64>> {
        if self.models.is_empty() {
            return Err(Error::EmptyModel);
        }
        let folded;
        let data = if self.covariates_as_view && data.covariates.is_some() {
            folded = crate::baselines::append_covariates_view(data)?;
            &folded
        } else {
            data
        };
        if data.views.len() != self.view_dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "model was fit on {} views, data has {}",
                self.view_dims.len(),
                data.views.len()
            )));
        }
        let mut y_hat = self.fixed_part(data)? + self.random_part(data)?;
        // Without views or without factors there is no factor contribution
        // for new rows.
        if !self.view_dims.is_empty() && self.summary.u_bar.ncols() > 0 {
            let views_std = self.standardized_views(data)?;
            for &(k, w) in weights {
                let model = self.models.get(k).ok_or_else(|| {
                    Error::Config(format!(
                        "model index {k} out of range ({})",
                        self.models.len()
                    ))
                })?;
                let u_new = estimate_u_new(model, &self.summary.feat_var_hat, &views_std)?;
                y_hat += (&u_new * &model.alpha) * w;
            }
        }
        Ok(y_hat)
    }

    /// Prediction under a single retained configuration (by registry index).
    pub fn predict_single_model(&self, k: usize, data: &MultiViewDataset) -> Result<DVector<f64>> {
        self.predict_weighted(data, &[(k, 1.0)])
    }

    /// Model-averaged prediction over the retained configurations, weighted
    /// by visit frequency renormalized over what was kept.
    pub fn predict_bma(&self, data: &MultiViewDataset) -> Result<DVector<f64>> {
        let total: f64 = self.summary.registry.iter().map(|e| e.frequency).sum();
        if total <= 0.0 {
            return Err(Error::EmptyModel);
        }
        let weights: Vec<(usize, f64)> = self
            .summary
            .registry
            .iter()
            .enumerate()
            .map(|(k, e)| (k, e.frequency / total))
            .collect();
        self.predict_weighted(data, &weights)
    }
}
