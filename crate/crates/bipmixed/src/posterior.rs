//! Posterior summaries accumulated over kept sweeps: marginal inclusion
//! probabilities, parameter means, variance-component intervals, and the
//! visited-model registry that drives model averaging.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::state::{ChainState, SelectionConfig};

/// Mean and central 95% interval of one scalar's kept draws.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VarSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// One visited selection configuration with its visit share among kept
/// sweeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegistryEntry {
    /// Stable id of the configuration (hash of the full indicator string).
    pub id: u64,
    pub config: SelectionConfig,
    /// Visit count divided by the number of kept sweeps; entries sum to at
    /// most one after truncation to the retained models.
    pub frequency: f64,
}

/// Everything the chain reports after burn-in and thinning.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_kept: usize,
    /// Per view: r-by-p marginal posterior inclusion probabilities of the
    /// feature indicators.
    pub mpp_feature: Vec<DMatrix<f64>>,
    /// Per view: marginal activation probability of each component.
    pub mpp_component: Vec<Vec<f64>>,
    /// Outcome-view component activation probabilities.
    pub mpp_outcome_component: Vec<f64>,
    /// Posterior mean latent matrix, n-by-r.
    pub u_bar: DMatrix<f64>,
    /// Per view: posterior mean feature noise variances.
    pub feat_var_hat: Vec<DVector<f64>>,
    /// Posterior mean outcome loadings (diagnostic; prediction re-estimates
    /// per retained model).
    pub alpha_hat: DVector<f64>,
    pub beta_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub xi_hat: DVector<f64>,
    pub mu_hat: f64,
    pub residual_var: VarSummary,
    pub site_var: VarSummary,
    /// Per-site family-effect variances.
    pub family_var: Vec<VarSummary>,
    /// Most-visited configurations, non-increasing frequency, truncated to
    /// the model-averaging budget.
    pub registry: Vec<RegistryEntry>,
}

/// Linear-interpolation empirical quantile of an already sorted slice.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(mut draws: Vec<f64>) -> VarSummary {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    VarSummary {
        mean,
        lower: empirical_quantile(&draws, 0.025),
        upper: empirical_quantile(&draws, 0.975),
    }
}

/// Streaming accumulator over kept sweeps.
pub struct Accumulator {
    n_kept: usize,
    r: usize,
    view_ps: Vec<usize>,
    mpp_feature: Vec<DMatrix<f64>>,
    mpp_component: Vec<Vec<f64>>,
    mpp_outcome_component: Vec<f64>,
    u_sum: DMatrix<f64>,
    feat_var_sum: Vec<DVector<f64>>,
    alpha_sum: DVector<f64>,
    beta_sum: DVector<f64>,
    theta_sum: DVector<f64>,
    xi_sum: DVector<f64>,
    mu_sum: f64,
    sigma2_draws: Vec<f64>,
    site_var_draws: Vec<f64>,
    family_var_draws: Vec<Vec<f64>>,
    registry: HashMap<Vec<u64>, u64>,
}

impl Accumulator {
    pub fn new(state: &ChainState) -> Self {
        let r = state.rank();
        let view_ps: Vec<usize> = state.views.iter().map(|v| v.p()).collect();
        Accumulator {
            n_kept: 0,
            r,
            view_ps: view_ps.clone(),
            mpp_feature: view_ps.iter().map(|&p| DMatrix::zeros(r, p)).collect(),
            mpp_component: view_ps.iter().map(|_| vec![0.0; r]).collect(),
            mpp_outcome_component: vec![0.0; r],
            u_sum: DMatrix::zeros(state.n_rows(), r),
            feat_var_sum: view_ps.iter().map(|&p| DVector::zeros(p)).collect(),
            alpha_sum: DVector::zeros(r),
            beta_sum: DVector::zeros(state.outcome.fixed_effects.len()),
            theta_sum: DVector::zeros(state.outcome.family_effects.len()),
            xi_sum: DVector::zeros(state.outcome.site_effects.len()),
            mu_sum: 0.0,
            sigma2_draws: Vec::new(),
            site_var_draws: Vec::new(),
            family_var_draws: vec![Vec::new(); state.outcome.family_var.len()],
            registry: HashMap::new(),
        }
    }

    pub fn absorb(&mut self, state: &ChainState) {
        self.n_kept += 1;
        for (m, view) in state.views.iter().enumerate() {
            let p = view.p();
            for l in 0..self.r {
                if view.comp_active[l] {
                    self.mpp_component[m][l] += 1.0;
                }
                for j in 0..p {
                    if view.feat_active[l * p + j] {
                        self.mpp_feature[m][(l, j)] += 1.0;
                    }
                }
            }
            self.feat_var_sum[m] += &view.feat_var;
        }
        for l in 0..self.r {
            if state.outcome.comp_active[l] {
                self.mpp_outcome_component[l] += 1.0;
            }
        }
        self.u_sum += &state.latent;
        self.alpha_sum += &state.outcome.loadings;
        self.beta_sum += &state.outcome.fixed_effects;
        self.theta_sum += &state.outcome.family_effects;
        self.xi_sum += &state.outcome.site_effects;
        self.mu_sum += state.outcome.grand_mean;
        self.sigma2_draws.push(state.outcome.residual_var);
        self.site_var_draws.push(state.outcome.site_var);
        for (s, draws) in self.family_var_draws.iter_mut().enumerate() {
            draws.push(state.outcome.family_var[s]);
        }
        *self
            .registry
            .entry(state.selection_snapshot().packed_bits())
            .or_insert(0) += 1;
    }

    pub fn n_kept(&self) -> usize {
        self.n_kept
    }

    /// Close the accumulation: divide sums, summarize variance draws, rank
    /// the registry by visit count (ties broken by the packed key so the
    /// order never depends on hash-map iteration), and keep the top
    /// `max_models`.
    pub fn finish(self, max_models: usize) -> PosteriorSummary {
        let k = self.n_kept.max(1) as f64;
        let mut entries: Vec<(Vec<u64>, u64)> = self.registry.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_models);
        let registry = entries
            .into_iter()
            .map(|(words, count)| {
                let config = SelectionConfig::from_packed(&words, self.r, &self.view_ps);
                RegistryEntry {
                    id: config.stable_hash(),
                    config,
                    frequency: count as f64 / k,
                }
            })
            .collect();

        PosteriorSummary {
            n_kept: self.n_kept,
            mpp_feature: self.mpp_feature.into_iter().map(|m| m / k).collect(),
            mpp_component: self
                .mpp_component
                .into_iter()
                .map(|v| v.into_iter().map(|c| c / k).collect())
                .collect(),
            mpp_outcome_component: self
                .mpp_outcome_component
                .into_iter()
                .map(|c| c / k)
                .collect(),
            u_bar: self.u_sum / k,
            feat_var_hat: self.feat_var_sum.into_iter().map(|v| v / k).collect(),
            alpha_hat: self.alpha_sum / k,
            beta_hat: self.beta_sum / k,
            theta_hat: self.theta_sum / k,
            xi_hat: self.xi_sum / k,
            mu_hat: self.mu_sum / k,
            residual_var: summarize(self.sigma2_draws),
            site_var: summarize(self.site_var_draws),
            family_var: self.family_var_draws.into_iter().map(summarize).collect(),
            registry,
        }
    }
}
