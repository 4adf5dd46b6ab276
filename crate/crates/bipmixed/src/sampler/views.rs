//! Factor-side updates: Metropolis-Hastings moves on the inclusion
//! indicators (with loadings integrated out), and Gibbs draws of loadings,
//! per-feature noise variances, and the latent matrix.
//!
//! Every parallel unit (a feature column, a latent row) draws from its own
//! counter-based substream keyed by sweep and index, so results do not
//! depend on the worker count or iteration order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dist::{draw_inv_gamma, draw_standard_normal};
use crate::error::Result;
use crate::hyper::{Hyperparameters, IgPrior};
use crate::marglik::{active_mask, MarglikWorkspace};
use crate::rng::{substream, Stream};
use crate::state::{OutcomeState, ViewState};

const ABSENT: usize = usize::MAX;

/// Index set with O(1) insert, remove, and uniform choice; one pair per
/// component tracks which features are in and out of it.
struct IndexList {
    items: Vec<usize>,
    pos: Vec<usize>,
}

impl IndexList {
    fn new(p: usize) -> Self {
        IndexList {
            items: Vec::new(),
            pos: vec![ABSENT; p],
        }
    }

    fn insert(&mut self, j: usize) {
        debug_assert_eq!(self.pos[j], ABSENT);
        self.pos[j] = self.items.len();
        self.items.push(j);
    }

    fn remove(&mut self, j: usize) {
        let at = self.pos[j];
        debug_assert_ne!(at, ABSENT);
        let last = self.items.len() - 1;
        self.items.swap(at, last);
        self.pos[self.items[at]] = at;
        self.items.pop();
        self.pos[j] = ABSENT;
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn choose(&self, rng: &mut impl Rng) -> Option<usize> {
        if self.items.is_empty() {
            None
        } else {
            Some(self.items[rng.random_range(0..self.items.len())])
        }
    }
}

/// Counts of proposals and acceptances per move type: component flips,
/// within-component feature flips, and active/inactive feature swaps.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MhStats {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl MhStats {
    pub fn absorb(&mut self, other: &MhStats) {
        for t in 0..3 {
            self.proposed[t] += other.proposed[t];
            self.accepted[t] += other.accepted[t];
        }
    }
}

/// Result of one selection sweep over a view.
pub struct MhSweepReport {
    pub stats: MhStats,
    /// Sum over features of the marginal log likelihood at the final state.
    pub total_loglik: f64,
    /// Largest absolute gap between the incrementally tracked per-feature
    /// log likelihoods and a recomputation, when the check ran.
    pub coherence_drift: Option<f64>,
}

fn accept(rng: &mut impl Rng, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Per-sweep selection context for one view: the marginal-likelihood
/// workspace, per-feature active masks and current log likelihoods, and the
/// per-component in/out index lists for swap proposals.
struct SelectionContext {
    ws: MarglikWorkspace,
    masks: Vec<u64>,
    loglik: Vec<f64>,
    active: Vec<IndexList>,
    inactive: Vec<IndexList>,
}

impl SelectionContext {
    fn new(u: &DMatrix<f64>, x: &DMatrix<f64>, view: &ViewState, tau2: f64) -> Self {
        let r = u.ncols();
        let p = view.p();
        let mut ws = MarglikWorkspace::new(u, x, tau2);
        let mut masks = Vec::with_capacity(p);
        let mut loglik = Vec::with_capacity(p);
        let mut active: Vec<IndexList> = (0..r).map(|_| IndexList::new(p)).collect();
        let mut inactive: Vec<IndexList> = (0..r).map(|_| IndexList::new(p)).collect();
        for j in 0..p {
            let mask = active_mask((0..r).map(|l| view.feat_active[l * p + j]));
            loglik.push(ws.loglik(j, mask, view.feat_var[j]));
            masks.push(mask);
            for l in 0..r {
                if mask >> l & 1 == 1 {
                    active[l].insert(j);
                } else {
                    inactive[l].insert(j);
                }
            }
        }
        SelectionContext {
            ws,
            masks,
            loglik,
            active,
            inactive,
        }
    }

    /// Toggle feature (l, j), keeping masks, lists, the tracked likelihood,
    /// and the spike zeros in sync.
    fn set_feature(&mut self, view: &mut ViewState, l: usize, j: usize, on: bool) {
        let p = view.p();
        debug_assert_ne!(view.feat_active[l * p + j], on);
        view.feat_active[l * p + j] = on;
        if on {
            self.masks[j] |= 1 << l;
            self.active[l].insert(j);
            self.inactive[l].remove(j);
        } else {
            view.loadings[(l, j)] = 0.0;
            self.masks[j] &= !(1 << l);
            self.active[l].remove(j);
            self.inactive[l].insert(j);
        }
        self.loglik[j] = self.ws.loglik(j, self.masks[j], view.feat_var[j]);
    }

    fn total(&self) -> f64 {
        self.loglik.iter().sum()
    }

    /// Recompute every tracked log likelihood and report the largest drift.
    fn coherence_drift(&mut self, view: &ViewState) -> f64 {
        let p = view.p();
        let mut worst = 0.0f64;
        for j in 0..p {
            debug_assert_eq!(
                self.masks[j],
                active_mask((0..view.loadings.nrows()).map(|l| view.feat_active[l * p + j]))
            );
            let fresh = self.ws.loglik(j, self.masks[j], view.feat_var[j]);
            worst = worst.max((fresh - self.loglik[j]).abs());
        }
        worst
    }
}

/// One selection sweep over a non-outcome view: for each component in index
/// order, `moves` proposals drawn uniformly from the three move types.
/// Loadings stay integrated out, so acceptance depends only on marginal
/// likelihood differences and the selection prior odds.
pub fn mh_update_view_selection(
    view: &mut ViewState,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut impl Rng,
    check_coherence: bool,
) -> Result<MhSweepReport> {
    let r = u.ncols();
    let p = view.p();
    let mut stats = MhStats::default();
    if r == 0 || p == 0 {
        return Ok(MhSweepReport {
            stats,
            total_loglik: 0.0,
            coherence_drift: None,
        });
    }
    let moves = hyper.mh_moves_per_component.unwrap_or(p);
    let gamma_logit = (hyper.q_gamma / (1.0 - hyper.q_gamma)).ln();
    let eta_logit = (hyper.q_eta / (1.0 - hyper.q_eta)).ln();

    let mut ctx = SelectionContext::new(u, x, view, hyper.tau2);
    for l in 0..r {
        let bit = 1u64 << l;
        for _ in 0..moves {
            match rng.random_range(0..3u8) {
                0 => {
                    // Component flip. Deactivation removes every feature the
                    // component carries; activation draws a fresh inclusion
                    // row, whose proposal mass cancels against the prior.
                    stats.proposed[0] += 1;
                    if view.comp_active[l] {
                        let affected = ctx.active[l].items.clone();
                        let mut delta = 0.0;
                        for &j in &affected {
                            delta += ctx.ws.loglik(j, ctx.masks[j] & !bit, view.feat_var[j])
                                - ctx.loglik[j];
                        }
                        if accept(rng, delta - gamma_logit) {
                            stats.accepted[0] += 1;
                            view.comp_active[l] = false;
                            for &j in &affected {
                                ctx.set_feature(view, l, j, false);
                            }
                        }
                    } else {
                        let row: Vec<usize> = (0..p)
                            .filter(|_| rng.random::<f64>() < hyper.q_eta)
                            .collect();
                        let mut delta = 0.0;
                        for &j in &row {
                            delta += ctx.ws.loglik(j, ctx.masks[j] | bit, view.feat_var[j])
                                - ctx.loglik[j];
                        }
                        if accept(rng, delta + gamma_logit) {
                            stats.accepted[0] += 1;
                            view.comp_active[l] = true;
                            for &j in &row {
                                ctx.set_feature(view, l, j, true);
                            }
                        }
                    }
                }
                1 => {
                    // Feature flip within an active component; identity when
                    // the component is inactive.
                    if !view.comp_active[l] {
                        continue;
                    }
                    stats.proposed[1] += 1;
                    let j = rng.random_range(0..p);
                    let adding = !view.feat_active[l * p + j];
                    let new_mask = ctx.masks[j] ^ bit;
                    let delta = ctx.ws.loglik(j, new_mask, view.feat_var[j]) - ctx.loglik[j];
                    let prior = if adding { eta_logit } else { -eta_logit };
                    if accept(rng, delta + prior) {
                        stats.accepted[1] += 1;
                        ctx.set_feature(view, l, j, adding);
                    }
                }
                _ => {
                    // Swap one carried feature for one not carried; the
                    // selection prior and the proposal are both symmetric.
                    if !view.comp_active[l]
                        || ctx.active[l].len() == 0
                        || ctx.inactive[l].len() == 0
                    {
                        continue;
                    }
                    stats.proposed[2] += 1;
                    let j_out = ctx.active[l].choose(rng).unwrap();
                    let j_in = ctx.inactive[l].choose(rng).unwrap();
                    let delta = ctx
                        .ws
                        .loglik(j_out, ctx.masks[j_out] & !bit, view.feat_var[j_out])
                        - ctx.loglik[j_out]
                        + ctx
                            .ws
                            .loglik(j_in, ctx.masks[j_in] | bit, view.feat_var[j_in])
                        - ctx.loglik[j_in];
                    if accept(rng, delta) {
                        stats.accepted[2] += 1;
                        ctx.set_feature(view, l, j_out, false);
                        ctx.set_feature(view, l, j_in, true);
                    }
                }
            }
        }
    }

    let coherence_drift = check_coherence.then(|| ctx.coherence_drift(view));
    Ok(MhSweepReport {
        stats,
        total_loglik: ctx.total(),
        coherence_drift,
    })
}

/// Selection sweep over the outcome view: component flips only, since the
/// single outcome column ties the feature indicator to the component one.
/// `resid` is the outcome minus fixed and random effects.
pub fn mh_update_outcome_selection(
    outcome: &mut OutcomeState,
    u: &DMatrix<f64>,
    resid: &DVector<f64>,
    hyper: &Hyperparameters,
    rng: &mut impl Rng,
) -> Result<MhSweepReport> {
    let r = u.ncols();
    let mut stats = MhStats::default();
    if r == 0 {
        return Ok(MhSweepReport {
            stats,
            total_loglik: 0.0,
            coherence_drift: None,
        });
    }
    let moves = hyper.mh_moves_per_component.unwrap_or(3);
    let gamma_logit = (hyper.q_gamma / (1.0 - hyper.q_gamma)).ln();
    let x = DMatrix::from_column_slice(resid.len(), 1, resid.as_slice());
    let mut ws = MarglikWorkspace::new(u, &x, hyper.tau2);
    let mut mask = active_mask(outcome.comp_active.iter().copied());
    let mut cur = ws.loglik(0, mask, outcome.residual_var);
    for l in 0..r {
        let bit = 1u64 << l;
        for _ in 0..moves {
            stats.proposed[0] += 1;
            let deactivating = outcome.comp_active[l];
            let proposal = ws.loglik(0, mask ^ bit, outcome.residual_var);
            let prior = if deactivating {
                -gamma_logit
            } else {
                gamma_logit
            };
            if accept(rng, proposal - cur + prior) {
                stats.accepted[0] += 1;
                mask ^= bit;
                cur = proposal;
                outcome.comp_active[l] = !deactivating;
                if deactivating {
                    outcome.loadings[l] = 0.0;
                }
            }
        }
    }
    Ok(MhSweepReport {
        stats,
        total_loglik: cur,
        coherence_drift: None,
    })
}

/// Gibbs draw of a view's loadings given selection: for each feature, the
/// active subvector has posterior precision (U_A' U_A + I / tau2) / sigma_j^2
/// and mean solving that system against U_A' x_j; inactive entries stay
/// exactly zero.
pub fn gibbs_update_loadings(
    view: &mut ViewState,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    tau2: f64,
    sweep: u64,
    view_tag: u64,
    master: u64,
) -> Result<()> {
    let r = u.ncols();
    let p = view.p();
    if r == 0 || p == 0 {
        return Ok(());
    }
    let gram = u.transpose() * u;
    let utx = u.transpose() * x;
    let feat_active = &view.feat_active;
    let feat_var = &view.feat_var;
    view.loadings
        .as_mut_slice()
        .par_chunks_mut(r)
        .enumerate()
        .for_each(|(j, col)| {
            col.fill(0.0);
            let comps: Vec<usize> = (0..r).filter(|&l| feat_active[l * p + j]).collect();
            if comps.is_empty() {
                return;
            }
            let mut rng = substream(master, Stream::Loadings, sweep, (view_tag << 40) | j as u64);
            let k = comps.len();
            let mut m = DMatrix::<f64>::zeros(k, k);
            for (a, &la) in comps.iter().enumerate() {
                for (b, &lb) in comps.iter().enumerate() {
                    m[(a, b)] = gram[(la, lb)];
                }
                m[(a, a)] += 1.0 / tau2;
            }
            let chol = nalgebra::Cholesky::new(m).expect("ridged Gram is positive definite");
            let v = DVector::from_iterator(k, comps.iter().map(|&l| utx[(l, j)]));
            let mean = chol.solve(&v);
            let z = DVector::from_fn(k, |_, _| draw_standard_normal(&mut rng));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .expect("Cholesky factor is invertible");
            let sd = feat_var[j].sqrt();
            for (a, &l) in comps.iter().enumerate() {
                col[l] = mean[a] + sd * noise[a];
            }
        });
    Ok(())
}

/// Gibbs draw of the outcome loadings alpha against the residual outcome
/// (outcome minus fixed and random effects), with the outcome noise variance
/// in both the likelihood and the slab.
pub fn gibbs_update_alpha(
    outcome: &mut OutcomeState,
    u: &DMatrix<f64>,
    resid: &DVector<f64>,
    tau2: f64,
    sweep: u64,
    master: u64,
) -> Result<()> {
    let r = u.ncols();
    if r == 0 {
        return Ok(());
    }
    let comps: Vec<usize> = (0..r).filter(|&l| outcome.comp_active[l]).collect();
    outcome.loadings.fill(0.0);
    if comps.is_empty() {
        return Ok(());
    }
    let mut rng = substream(master, Stream::Loadings, sweep, 0);
    let k = comps.len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (a, &la) in comps.iter().enumerate() {
        for (b, &lb) in comps.iter().enumerate() {
            m[(a, b)] = u.column(la).dot(&u.column(lb));
        }
        m[(a, a)] += 1.0 / tau2;
    }
    let chol = nalgebra::Cholesky::new(m).expect("ridged Gram is positive definite");
    let v = DVector::from_iterator(k, comps.iter().map(|&l| u.column(l).dot(resid)));
    let mean = chol.solve(&v);
    let z = DVector::from_fn(k, |_, _| draw_standard_normal(&mut rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor is invertible");
    let sd = outcome.residual_var.sqrt();
    for (a, &l) in comps.iter().enumerate() {
        outcome.loadings[l] = mean[a] + sd * noise[a];
    }
    Ok(())
}

/// Gibbs draw of the per-feature noise variances of a view: inverse gamma
/// with shape a + n/2 + k_j/2 and scale b + ||x_j - U a_j||^2 / 2
/// + a_j' a_j / (2 tau2), where k_j counts active components for feature j.
pub fn gibbs_update_feature_variances(
    view: &mut ViewState,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    tau2: f64,
    prior: IgPrior,
    sweep: u64,
    view_tag: u64,
    master: u64,
) -> Result<()> {
    let r = u.ncols();
    let p = view.p();
    let n = u.nrows() as f64;
    let feat_active = &view.feat_active;
    let loadings = &view.loadings;
    view.feat_var
        .as_mut_slice()
        .par_iter_mut()
        .enumerate()
        .for_each(|(j, fv)| {
            let mut rng = substream(
                master,
                Stream::FeatureVar,
                sweep,
                (view_tag << 40) | j as u64,
            );
            let mut resid = DVector::from(x.column(j));
            let mut k = 0usize;
            let mut slab = 0.0;
            for l in 0..r {
                if feat_active[l * p + j] {
                    k += 1;
                    let a = loadings[(l, j)];
                    slab += a * a;
                    resid.axpy(-a, &u.column(l), 1.0);
                }
            }
            let shape = prior.shape + 0.5 * n + 0.5 * k as f64;
            let scale = prior.scale + 0.5 * resid.norm_squared() + 0.5 * slab / tau2;
            *fv = draw_inv_gamma(&mut rng, shape, scale);
        });
    Ok(())
}

/// Gibbs draw of the latent rows. Row i has posterior precision
/// P = I_r + sum_m A_m D_m A_m' + alpha alpha' / sigma^2 shared across rows
/// (D_m holds reciprocal feature variances) and mean P^{-1} B_i with
/// B = sum_m A_m D_m x_i^(m) + alpha resid_i / sigma^2.
pub fn gibbs_update_latent(
    latent: &mut DMatrix<f64>,
    views: &[ViewState],
    views_x: &[DMatrix<f64>],
    outcome: &OutcomeState,
    outcome_resid: &DVector<f64>,
    sweep: u64,
    master: u64,
) -> Result<()> {
    let r = latent.ncols();
    let n = latent.nrows();
    if r == 0 {
        return Ok(());
    }
    let mut prec = DMatrix::<f64>::identity(r, r);
    let mut bt = DMatrix::<f64>::zeros(n, r);
    for (view, x) in views.iter().zip(views_x) {
        let p = view.p();
        let scaled = DMatrix::from_fn(r, p, |l, j| view.loadings[(l, j)] / view.feat_var[j]);
        prec += &scaled * view.loadings.transpose();
        bt += x * scaled.transpose();
    }
    let alpha = &outcome.loadings;
    if alpha.iter().any(|&a| a != 0.0) {
        prec += alpha * alpha.transpose() / outcome.residual_var;
        bt += outcome_resid * (alpha.transpose() / outcome.residual_var);
    }
    let chol = nalgebra::Cholesky::new(prec).expect("latent precision is positive definite");
    let means = chol.solve(&bt.transpose());
    let lt = chol.l().transpose();
    let mut sampled = DMatrix::<f64>::zeros(r, n);
    sampled
        .as_mut_slice()
        .par_chunks_mut(r)
        .enumerate()
        .for_each(|(i, col)| {
            let mut rng = substream(master, Stream::Latent, sweep, i as u64);
            let z = DVector::from_fn(r, |_, _| draw_standard_normal(&mut rng));
            let noise = lt
                .solve_upper_triangular(&z)
                .expect("Cholesky factor is invertible");
            for l in 0..r {
                col[l] = means[(l, i)] + noise[l];
            }
        });
    *latent = sampled.transpose();
    Ok(())
}
