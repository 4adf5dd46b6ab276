//! Outcome-side Gibbs updates: fixed effects, the nested family-within-site
//! random effects, their variance components, the grand mean, and the
//! residual variance with the outcome loadings integrated out.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dist::{draw_inv_gamma, draw_normal, draw_standard_normal};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyIndex;
use crate::hyper::{Hyperparameters, IgPrior};
use crate::rng::{substream, Stream};
use crate::state::ChainState;

/// Immutable per-fit outcome data handed to the sweep.
pub struct OutcomeContext<'a> {
    /// Outcome vector in its original units.
    pub y: &'a DVector<f64>,
    /// Standardized covariates, when present and enabled.
    pub w: Option<&'a DMatrix<f64>>,
    pub hierarchy: &'a HierarchyIndex,
}

/// Draw the fixed effects. `resid` is the outcome minus every other mean
/// component. The default precision is W'W / sigma_beta2 + I / sigma2; the
/// conjugate flag swaps the two scales so the prior variance multiplies the
/// identity instead.
pub fn gibbs_beta(
    w: &DMatrix<f64>,
    resid: &DVector<f64>,
    sigma2: f64,
    sigma_beta2: f64,
    conjugate: bool,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let p = w.ncols();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let wtw = w.transpose() * w;
    let prec = if conjugate {
        wtw / sigma2 + DMatrix::identity(p, p) / sigma_beta2
    } else {
        wtw / sigma_beta2 + DMatrix::identity(p, p) / sigma2
    };
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::SingularSystem("fixed-effect precision".into()))?;
    let mean = chol.solve(&(w.transpose() * resid / sigma2));
    let z = DVector::from_fn(p, |_, _| draw_standard_normal(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::SingularSystem("fixed-effect Cholesky factor".into()))?;
    Ok(mean + noise)
}

/// Draw every family effect. For family f in site s with n_f rows, the
/// conditional has variance (1 / family_var_s + n_f / sigma2)^{-1} and mean
/// that variance times (xi_s / family_var_s + sum of residuals / sigma2),
/// where `resid` is the outcome minus fixed effects and the factor part.
pub fn gibbs_theta(
    resid: &DVector<f64>,
    hierarchy: &HierarchyIndex,
    site_effects: &DVector<f64>,
    family_var: &DVector<f64>,
    sigma2: f64,
    sweep: u64,
    master: u64,
) -> DVector<f64> {
    let draws: Vec<f64> = (0..hierarchy.n_families())
        .into_par_iter()
        .map(|f| {
            let s = hierarchy.site_of_family(f);
            let rows = hierarchy.family_rows(f);
            let sum: f64 = rows.iter().map(|&i| resid[i]).sum();
            let prec = 1.0 / family_var[s] + rows.len() as f64 / sigma2;
            let var = 1.0 / prec;
            let mean = var * (site_effects[s] / family_var[s] + sum / sigma2);
            let mut rng = substream(master, Stream::Outcome, sweep, f as u64);
            draw_normal(&mut rng, mean, var)
        })
        .collect();
    DVector::from_vec(draws)
}

/// Draw every site effect given the family effects it governs. The centered
/// form shrinks toward the grand mean; the printed variant omits that prior
/// pull.
pub fn gibbs_xi(
    family_effects: &DVector<f64>,
    hierarchy: &HierarchyIndex,
    mu: f64,
    site_var: f64,
    family_var: &DVector<f64>,
    centered: bool,
    rng: &mut impl Rng,
) -> DVector<f64> {
    DVector::from_fn(hierarchy.n_sites(), |s, _| {
        let fams = hierarchy.families_in_site(s);
        let sum: f64 = fams.iter().map(|&f| family_effects[f]).sum();
        let prec = 1.0 / site_var + fams.len() as f64 / family_var[s];
        let var = 1.0 / prec;
        let prior_pull = if centered { mu / site_var } else { 0.0 };
        let mean = var * (sum / family_var[s] + prior_pull);
        draw_normal(rng, mean, var)
    })
}

/// Draw the per-site family-effect variances: inverse gamma with shape
/// a + n_s / 2 over that site's family count and scale b plus half the sum
/// of squared deviations of its family effects from the site effect.
pub fn gibbs_family_var(
    family_effects: &DVector<f64>,
    site_effects: &DVector<f64>,
    hierarchy: &HierarchyIndex,
    prior: IgPrior,
    rng: &mut impl Rng,
) -> DVector<f64> {
    DVector::from_fn(hierarchy.n_sites(), |s, _| {
        let fams = hierarchy.families_in_site(s);
        let ss: f64 = fams
            .iter()
            .map(|&f| (family_effects[f] - site_effects[s]).powi(2))
            .sum();
        draw_inv_gamma(
            rng,
            prior.shape + 0.5 * fams.len() as f64,
            prior.scale + 0.5 * ss,
        )
    })
}

/// Draw the site-effect variance. The centered form measures deviations from
/// the grand mean; the printed variant uses raw site effects.
pub fn gibbs_site_var(
    site_effects: &DVector<f64>,
    mu: f64,
    prior: IgPrior,
    centered: bool,
    rng: &mut impl Rng,
) -> f64 {
    let center = if centered { mu } else { 0.0 };
    let ss: f64 = site_effects.iter().map(|&x| (x - center).powi(2)).sum();
    draw_inv_gamma(
        rng,
        prior.shape + 0.5 * site_effects.len() as f64,
        prior.scale + 0.5 * ss,
    )
}

/// Draw the grand mean from the site effects it centers.
pub fn gibbs_mu(
    site_effects: &DVector<f64>,
    sigma_mu2: f64,
    site_var: f64,
    rng: &mut impl Rng,
) -> f64 {
    let n_s = site_effects.len() as f64;
    let var = 1.0 / (1.0 / sigma_mu2 + n_s / site_var);
    let mean = var * site_effects.sum() / site_var;
    draw_normal(rng, mean, var)
}

/// Grand-mean draw without random effects: conjugate against the residual
/// outcome directly.
pub fn gibbs_mu_direct(
    resid: &DVector<f64>,
    sigma_mu2: f64,
    sigma2: f64,
    rng: &mut impl Rng,
) -> f64 {
    let n = resid.len() as f64;
    let var = 1.0 / (1.0 / sigma_mu2 + n / sigma2);
    let mean = var * resid.sum() / sigma2;
    draw_normal(rng, mean, var)
}

/// resid' (U_active U_active' + I)^{-1} resid evaluated through the k-by-k
/// Woodbury identity, where U_active keeps the latent columns the outcome
/// view selects.
pub fn collapsed_quad(resid: &DVector<f64>, u: &DMatrix<f64>, comp_active: &[bool]) -> f64 {
    let comps: Vec<usize> = (0..u.ncols()).filter(|&l| comp_active[l]).collect();
    let base = resid.norm_squared();
    if comps.is_empty() {
        return base;
    }
    let k = comps.len();
    let mut m = DMatrix::<f64>::identity(k, k);
    for (a, &la) in comps.iter().enumerate() {
        for (b, &lb) in comps.iter().enumerate() {
            m[(a, b)] += u.column(la).dot(&u.column(lb));
        }
    }
    let v = DVector::from_iterator(k, comps.iter().map(|&l| u.column(l).dot(resid)));
    let chol = Cholesky::new(m).expect("ridged Gram is positive definite");
    base - v.dot(&chol.solve(&v))
}

/// Draw the residual variance with the outcome loadings integrated out:
/// inverse gamma with shape a + n/2 and scale b plus half the collapsed
/// quadratic form of `resid` (outcome minus fixed and random effects).
pub fn gibbs_sigma2(
    resid: &DVector<f64>,
    u: &DMatrix<f64>,
    comp_active: &[bool],
    prior: IgPrior,
    rng: &mut impl Rng,
) -> f64 {
    let quad = collapsed_quad(resid, u, comp_active);
    draw_inv_gamma(
        rng,
        prior.shape + 0.5 * resid.len() as f64,
        prior.scale + 0.5 * quad,
    )
}

/// The random-effect contribution per row: the family effect with random
/// effects enabled, otherwise the grand mean.
pub fn row_effects(state: &ChainState, hierarchy: &HierarchyIndex, enabled: bool) -> DVector<f64> {
    let n = state.n_rows();
    if enabled {
        DVector::from_fn(n, |i, _| {
            state.outcome.family_effects[hierarchy.family_of_row(i)]
        })
    } else {
        DVector::from_element(n, state.outcome.grand_mean)
    }
}

/// One outcome-side sweep in fixed order: fixed effects, family effects,
/// site effects, family variances, site variance, grand mean, residual
/// variance. Without random effects the middle blocks collapse to a direct
/// grand-mean update and the effect vectors stay pinned (families at zero,
/// sites at the grand mean).
pub fn outcome_sweep(
    state: &mut ChainState,
    ctx: &OutcomeContext,
    hyper: &Hyperparameters,
    sweep: u64,
    master: u64,
    rng: &mut impl Rng,
) -> Result<()> {
    let n = ctx.y.len();
    let u_alpha = &state.latent * &state.outcome.loadings;
    let centered = !hyper.as_printed;

    let mut w_beta = match ctx.w {
        Some(w) if state.outcome.fixed_effects.len() > 0 => w * &state.outcome.fixed_effects,
        _ => DVector::zeros(n),
    };

    if hyper.random_effects_enabled {
        let mut z_theta = row_effects(state, ctx.hierarchy, true);

        if let Some(w) = ctx.w {
            if w.ncols() > 0 && hyper.covariates_in_outcome {
                let resid = ctx.y - &z_theta - &u_alpha;
                state.outcome.fixed_effects = gibbs_beta(
                    w,
                    &resid,
                    state.outcome.residual_var,
                    hyper.sigma_beta2,
                    hyper.beta_conjugate,
                    rng,
                )?;
                w_beta = w * &state.outcome.fixed_effects;
            }
        }

        let resid = ctx.y - &w_beta - &u_alpha;
        state.outcome.family_effects = gibbs_theta(
            &resid,
            ctx.hierarchy,
            &state.outcome.site_effects,
            &state.outcome.family_var,
            state.outcome.residual_var,
            sweep,
            master,
        );
        z_theta = row_effects(state, ctx.hierarchy, true);

        state.outcome.site_effects = gibbs_xi(
            &state.outcome.family_effects,
            ctx.hierarchy,
            state.outcome.grand_mean,
            state.outcome.site_var,
            &state.outcome.family_var,
            centered,
            rng,
        );

        state.outcome.family_var = gibbs_family_var(
            &state.outcome.family_effects,
            &state.outcome.site_effects,
            ctx.hierarchy,
            hyper.ig_family,
            rng,
        );

        state.outcome.site_var = gibbs_site_var(
            &state.outcome.site_effects,
            state.outcome.grand_mean,
            hyper.ig_site,
            centered,
            rng,
        );

        state.outcome.grand_mean = gibbs_mu(
            &state.outcome.site_effects,
            hyper.sigma_mu2,
            state.outcome.site_var,
            rng,
        );

        let resid = ctx.y - &w_beta - &z_theta;
        state.outcome.residual_var = gibbs_sigma2(
            &resid,
            &state.latent,
            &state.outcome.comp_active,
            hyper.ig_residual,
            rng,
        );
    } else {
        let mu_vec = DVector::from_element(n, state.outcome.grand_mean);

        if let Some(w) = ctx.w {
            if w.ncols() > 0 && hyper.covariates_in_outcome {
                let resid = ctx.y - &mu_vec - &u_alpha;
                state.outcome.fixed_effects = gibbs_beta(
                    w,
                    &resid,
                    state.outcome.residual_var,
                    hyper.sigma_beta2,
                    hyper.beta_conjugate,
                    rng,
                )?;
                w_beta = w * &state.outcome.fixed_effects;
            }
        }

        let resid = ctx.y - &w_beta - &u_alpha;
        state.outcome.grand_mean =
            gibbs_mu_direct(&resid, hyper.sigma_mu2, state.outcome.residual_var, rng);

        let mu_vec = DVector::from_element(n, state.outcome.grand_mean);
        let resid = ctx.y - &w_beta - &mu_vec;
        state.outcome.residual_var = gibbs_sigma2(
            &resid,
            &state.latent,
            &state.outcome.comp_active,
            hyper.ig_residual,
            rng,
        );

        state.outcome.family_effects.fill(0.0);
        state.outcome.site_effects.fill(state.outcome.grand_mean);
    }

    Ok(())
}
