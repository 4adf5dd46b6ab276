//! The Metropolis-within-Gibbs driver: one sweep updates selection
//! indicators (outcome view first), loadings, feature variances, the latent
//! matrix, and the outcome block, in that order. Kept sweeps stream into the
//! posterior accumulator; the finished fit carries everything prediction
//! needs.

pub mod outcome;
pub mod views;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, Scaler};
use crate::error::{Error, Result};
use crate::hierarchy::build_hierarchy;
use crate::hyper::Hyperparameters;
use crate::posterior::Accumulator;
use crate::predict::{estimate_loadings, FittedModel, ModelLoadings};
use crate::rng::{substream, Stream};
use crate::state::ChainState;
use outcome::{outcome_sweep, row_effects, OutcomeContext};
use views::{
    gibbs_update_alpha, gibbs_update_feature_variances, gibbs_update_latent, gibbs_update_loadings,
    mh_update_outcome_selection, mh_update_view_selection, MhStats,
};

/// Counters and invariant probes recorded over a whole fit.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub mh_views: MhStats,
    pub mh_outcome: MhStats,
    /// Largest gap between the incrementally tracked marginal log
    /// likelihoods and a recomputation, probed every hundred sweeps.
    pub max_coherence_drift: f64,
    pub n_sweeps: usize,
    pub n_kept: usize,
}

/// One kept sweep's monitored quantities, recorded when tracing is on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    pub residual_var: f64,
    pub site_var: f64,
    pub family_var_mean: f64,
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Active components per view, then active (component, feature) pairs
    /// per view.
    pub view_components: Vec<usize>,
    pub view_features: Vec<usize>,
    pub outcome_components: usize,
}

impl TraceRow {
    fn record(sweep: usize, state: &ChainState) -> TraceRow {
        let family_var_mean = if state.outcome.family_var.len() > 0 {
            state.outcome.family_var.mean()
        } else {
            0.0
        };
        TraceRow {
            sweep,
            residual_var: state.outcome.residual_var,
            site_var: state.outcome.site_var,
            family_var_mean,
            mu: state.outcome.grand_mean,
            alpha: state.outcome.loadings.iter().copied().collect(),
            beta: state.outcome.fixed_effects.iter().copied().collect(),
            view_components: state
                .views
                .iter()
                .map(|v| v.comp_active.iter().filter(|&&a| a).count())
                .collect(),
            view_features: state
                .views
                .iter()
                .map(|v| v.feat_active.iter().filter(|&&a| a).count())
                .collect(),
            outcome_components: state.outcome.comp_active.iter().filter(|&&a| a).count(),
        }
    }
}

/// Fit the model to a dataset. The outcome stays in its original units;
/// views (and covariates) are standardized unless disabled. Reproducible
/// from the seed alone, independent of the worker count.
pub fn fit(data: &MultiViewDataset, hyper: &Hyperparameters) -> Result<FittedModel> {
    fit_impl(data, hyper, &mut |_, _| {})
}

/// Run the sampler, also recording one [`TraceRow`] per kept sweep.
pub fn fit_traced(
    data: &MultiViewDataset,
    hyper: &Hyperparameters,
) -> Result<(FittedModel, Vec<TraceRow>)> {
    let mut trace = Vec::new();
    let model = fit_impl(data, hyper, &mut |sweep, state| {
        trace.push(TraceRow::record(sweep, state));
    })?;
    Ok((model, trace))
}

fn fit_impl(
    data: &MultiViewDataset,
    hyper: &Hyperparameters,
    on_kept: &mut dyn FnMut(usize, &ChainState),
) -> Result<FittedModel> {
    hyper.validate()?;
    data.validate()?;
    if hyper.r > 64 {
        return Err(Error::Config(format!(
            "rank {} exceeds the supported maximum of 64",
            hyper.r
        )));
    }
    let hierarchy = build_hierarchy(&data.site, &data.family)?;
    let scaler = if hyper.standardize {
        Scaler::fit(data)?
    } else {
        Scaler::identity(data)
    };
    let transformed = scaler.transform(data)?;
    let views_x = transformed.views;
    let covariates_owned = if hyper.covariates_in_outcome {
        transformed.covariates
    } else {
        None
    };
    let w_ref = covariates_owned.as_ref().filter(|w| w.ncols() > 0);

    let y = data.outcome.clone();
    let n = y.len();
    let ctx = OutcomeContext {
        y: &y,
        w: w_ref,
        hierarchy: &hierarchy,
    };

    let views_p: Vec<usize> = views_x.iter().map(|x| x.ncols()).collect();
    let mut init_rng = substream(hyper.seed, Stream::Init, 0, 0);
    let mut state = ChainState::init(&views_p, w_ref, &y, &hierarchy, hyper, &mut init_rng)?;
    let mut chain_rng = substream(hyper.seed, Stream::Selection, 0, 0);

    let mut acc = Accumulator::new(&state);
    let mut diag = FitDiagnostics::default();

    for sweep in 1..=hyper.n_iter {
        let sweep_u = sweep as u64;
        let check = sweep % 100 == 0;

        // Outcome residual with the factor part excluded: what outcome-view
        // selection, the outcome loadings, and the latent update all see.
        let w_beta = match w_ref {
            Some(w) if state.outcome.fixed_effects.len() > 0 => w * &state.outcome.fixed_effects,
            _ => DVector::zeros(n),
        };
        let z_theta = row_effects(&state, &hierarchy, hyper.random_effects_enabled);
        let resid = &y - &w_beta - &z_theta;

        let report = mh_update_outcome_selection(
            &mut state.outcome,
            &state.latent,
            &resid,
            hyper,
            &mut chain_rng,
        )?;
        diag.mh_outcome.absorb(&report.stats);
        for (m, view) in state.views.iter_mut().enumerate() {
            let report = mh_update_view_selection(
                view,
                &state.latent,
                &views_x[m],
                hyper,
                &mut chain_rng,
                check,
            )?;
            diag.mh_views.absorb(&report.stats);
            if let Some(d) = report.coherence_drift {
                diag.max_coherence_drift = diag.max_coherence_drift.max(d);
            }
        }

        gibbs_update_alpha(
            &mut state.outcome,
            &state.latent,
            &resid,
            hyper.tau2,
            sweep_u,
            hyper.seed,
        )?;
        for (m, view) in state.views.iter_mut().enumerate() {
            gibbs_update_loadings(
                view,
                &state.latent,
                &views_x[m],
                hyper.tau2,
                sweep_u,
                (m + 1) as u64,
                hyper.seed,
            )?;
        }
        for (m, view) in state.views.iter_mut().enumerate() {
            gibbs_update_feature_variances(
                view,
                &state.latent,
                &views_x[m],
                hyper.tau2,
                hyper.ig_feature,
                sweep_u,
                (m + 1) as u64,
                hyper.seed,
            )?;
        }
        gibbs_update_latent(
            &mut state.latent,
            &state.views,
            &views_x,
            &state.outcome,
            &resid,
            sweep_u,
            hyper.seed,
        )?;

        outcome_sweep(&mut state, &ctx, hyper, sweep_u, hyper.seed, &mut chain_rng)?;

        if sweep > hyper.n_burn && (sweep - hyper.n_burn - 1) % hyper.thin == 0 {
            acc.absorb(&state);
            on_kept(sweep, &state);
        }
    }

    diag.n_sweeps = hyper.n_iter;
    diag.n_kept = acc.n_kept();
    let summary = acc.finish(hyper.max_bma_models);

    // Residual outcome at the posterior means, the target the outcome
    // loadings are re-estimated against per retained configuration.
    let mut resid_hat = y.clone();
    if let Some(w) = w_ref {
        if summary.beta_hat.len() > 0 {
            resid_hat -= w * &summary.beta_hat;
        }
    }
    if hyper.random_effects_enabled {
        for i in 0..n {
            resid_hat[i] -= summary.theta_hat[hierarchy.family_of_row(i)];
        }
    } else {
        resid_hat.add_scalar_mut(-summary.mu_hat);
    }

    let models: Vec<ModelLoadings> = summary
        .registry
        .iter()
        .map(|entry| estimate_loadings(&entry.config, &summary.u_bar, &views_x, &resid_hat))
        .collect::<Result<Vec<_>>>()?;

    Ok(FittedModel {
        hyper: hyper.clone(),
        scaler,
        hierarchy,
        view_dims: views_p,
        covariate_dim: w_ref.map_or(0, |w| w.ncols()),
        covariates_as_view: false,
        summary,
        models,
        diagnostics: diag,
    })
}
