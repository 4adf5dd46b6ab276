//! Independent reference machinery shared by the integration suites:
//! one-dimensional quadrature of conditional densities, Kolmogorov-Smirnov
//! distance against exact CDFs, dense and Monte-Carlo marginal-likelihood
//! references, exhaustive enumeration of tiny selection posteriors, and
//! brute-force metric references. Everything here deliberately avoids the
//! crate's own numerical shortcuts so agreement is evidence, not tautology.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use bipmixed::state::ViewState;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Print the verdict line for one acceptance criterion and hand back `ok`
/// so the caller can assert on it.
pub fn verdict(criterion: &str, ok: bool, detail: &str) -> bool {
    println!(
        "[{}] criterion {criterion}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

pub fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

// ---------------------------------------------------------------------------
// Quadrature of one-dimensional log densities.
// ---------------------------------------------------------------------------

fn argmax_scan(logf: &dyn Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let v = logf(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Mode of a smooth unimodal log density: coarse scan, then golden-section
/// refinement around the best grid point.
pub fn locate_mode(logf: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let points = 4001;
    let step = (hi - lo) / (points - 1) as f64;
    let coarse = argmax_scan(logf, lo, hi, points);
    let (mut a, mut b) = ((coarse - step).max(lo), (coarse + step).min(hi));
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if logf(c) < logf(d) {
            a = c;
        } else {
            b = d;
        }
    }
    0.5 * (a + b)
}

/// Normalized mean and variance of `map(t)` where t has unnormalized log
/// density `logg` on [lo, hi], by the trapezoid rule.
fn grid_expectations(
    logg: &dyn Fn(f64) -> f64,
    map: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> (f64, f64) {
    let step = (hi - lo) / (points - 1) as f64;
    let logs: Vec<f64> = (0..points).map(|i| logg(lo + step * i as f64)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Truncation guard: the window must reach far into both tails.
    assert!(
        logs[0] - peak < -40.0 && logs[points - 1] - peak < -40.0,
        "integration window too narrow: edge log-density gaps {:.1} / {:.1}",
        logs[0] - peak,
        logs[points - 1] - peak
    );
    let weight = |i: usize| if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
    let mut mass = 0.0;
    let mut first = 0.0;
    let mut second = 0.0;
    for (i, lg) in logs.iter().enumerate() {
        let f = weight(i) * (lg - peak).exp();
        let x = map(lo + step * i as f64);
        mass += f;
        first += f * x;
        second += f * x * x;
    }
    let mean = first / mass;
    (mean, second / mass - mean * mean)
}

/// Window placement shared by both quadrature entry points: mode by search,
/// scale by finite-difference curvature at the mode.
fn mode_window(logg: &dyn Fn(f64) -> f64, scan_lo: f64, scan_hi: f64) -> (f64, f64) {
    let mode = locate_mode(logg, scan_lo, scan_hi);
    let h = 1e-4 * (1.0 + mode.abs());
    let curv = (logg(mode + h) - 2.0 * logg(mode) + logg(mode - h)) / (h * h);
    assert!(curv < 0.0, "no curvature at located mode {mode}");
    let sd = (-1.0 / curv).sqrt();
    (mode, sd)
}

/// Mean and variance of an unnormalized log density on the real line.
pub fn quad_moments(logf: impl Fn(f64) -> f64, scan_lo: f64, scan_hi: f64) -> (f64, f64) {
    let (mode, sd) = mode_window(&logf, scan_lo, scan_hi);
    grid_expectations(&logf, &|t| t, mode - 14.0 * sd, mode + 14.0 * sd, 60_001)
}

/// Mean and variance of an unnormalized log density supported on (0, inf),
/// integrated after the substitution v = exp(t) so heavy right tails are
/// resolved: the density of t is f(e^t) e^t.
pub fn quad_moments_positive(logf: impl Fn(f64) -> f64) -> (f64, f64) {
    let logg = |t: f64| logf(t.exp()) + t;
    let (mode, sd) = mode_window(&logg, -25.0, 25.0);
    grid_expectations(
        &logg,
        &|t| t.exp(),
        mode - 18.0 * sd,
        mode + 18.0 * sd,
        60_001,
    )
}

// ---------------------------------------------------------------------------
// Log densities written from the model definition.
// ---------------------------------------------------------------------------

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - mean).powi(2) / var
}

/// log IG(v; shape, scale) up to the normalizing constant.
pub fn log_inv_gamma_kernel(v: f64, shape: f64, scale: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -(shape + 1.0) * v.ln() - scale / v
}

/// Exact CDFs for the distributional checks.
pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(x - mean) / (2.0 * var).sqrt())
}

/// Inverse gamma CDF: P(V <= v) = P(Gamma(shape, rate = scale) >= scale / v),
/// the upper regularized incomplete gamma function.
pub fn inv_gamma_cdf(v: f64, shape: f64, scale: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(shape, scale / v)
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

// ---------------------------------------------------------------------------
// Marginal-likelihood references.
// ---------------------------------------------------------------------------

/// Log marginal density of a feature column through the dense n-by-n
/// covariance feat_var * (tau2 * U_A U_A' + I), the form the low-rank code
/// path must reproduce.
pub fn dense_marginal_loglik(
    u: &DMatrix<f64>,
    active: &[bool],
    x: &DVector<f64>,
    feat_var: f64,
    tau2: f64,
) -> f64 {
    let n = x.len();
    let mut cov = DMatrix::<f64>::identity(n, n);
    for (l, &on) in active.iter().enumerate() {
        if on {
            let col = u.column(l);
            cov += tau2 * &col * col.transpose();
        }
    }
    cov *= feat_var;
    let chol = cov.cholesky().expect("marginal covariance is PD");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let solved = chol.solve(x);
    -0.5 * (n as f64 * LN_2PI + logdet + x.dot(&solved))
}

/// Monte-Carlo estimate of the same quantity: average the Gaussian
/// likelihood over loadings drawn from their prior, in log space.
pub fn mc_marginal_loglik(
    u: &DMatrix<f64>,
    active: &[bool],
    x: &DVector<f64>,
    feat_var: f64,
    tau2: f64,
    draws: usize,
    rng: &mut impl Rng,
) -> f64 {
    let comps: Vec<usize> = (0..active.len()).filter(|&l| active[l]).collect();
    let n = x.len() as f64;
    let base = -0.5 * n * (LN_2PI + feat_var.ln());
    let prior_sd = (tau2 * feat_var).sqrt();
    let mut terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut resid = x.clone();
        for &l in &comps {
            let a = prior_sd * bipmixed::dist::draw_standard_normal(rng);
            resid.axpy(-a, &u.column(l), 1.0);
        }
        terms.push(base - 0.5 * resid.norm_squared() / feat_var);
    }
    let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    peak + (sum / draws as f64).ln()
}

// ---------------------------------------------------------------------------
// Exhaustive selection posteriors on tiny instances.
// ---------------------------------------------------------------------------

/// Pack a view's indicators into one key: component bits first, then the
/// feature bits row-major. Requires r + r*p <= 64.
pub fn view_key(view: &ViewState) -> u64 {
    let r = view.comp_active.len();
    let p = view.p();
    assert!(r + r * p <= 64);
    let mut key = 0u64;
    for (l, &g) in view.comp_active.iter().enumerate() {
        if g {
            key |= 1 << l;
        }
    }
    for (idx, &e) in view.feat_active.iter().enumerate() {
        if e {
            key |= 1 << (r + idx);
        }
    }
    key
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    peak + terms.iter().map(|t| (t - peak).exp()).sum::<f64>().ln()
}

/// Enumerate the exact posterior over a view's reachable indicator states
/// at fixed latent matrix and noise variances. Reachable states are, per
/// component, either inactive with an all-zero feature row, or active with
/// any of the 2^p feature rows. The likelihood of each state multiplies the
/// dense marginal densities of the feature columns.
pub fn enumerate_view_posterior(
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    feat_var: &[f64],
    tau2: f64,
    q_gamma: f64,
    q_eta: f64,
) -> HashMap<u64, f64> {
    let r = u.ncols();
    let p = x.ncols();
    assert!(r + r * p <= 64);
    // Per-feature marginal log likelihood for every component mask.
    let mut ml = vec![vec![0.0f64; 1 << r]; p];
    for j in 0..p {
        let col = DVector::from(x.column(j));
        for mask in 0..1usize << r {
            let active: Vec<bool> = (0..r).map(|l| mask >> l & 1 == 1).collect();
            ml[j][mask] = dense_marginal_loglik(u, &active, &col, feat_var[j], tau2);
        }
    }
    // One component's options: 0 encodes gamma = 0; 1 + row encodes gamma = 1
    // with that feature-inclusion row.
    let options_per_comp = 1 + (1usize << p);
    let n_states = options_per_comp.pow(r as u32);
    let mut keys = Vec::with_capacity(n_states);
    let mut logs = Vec::with_capacity(n_states);
    for state in 0..n_states {
        let mut rest = state;
        let mut logp = 0.0;
        let mut key = 0u64;
        let mut rows = vec![0usize; r];
        for l in 0..r {
            let opt = rest % options_per_comp;
            rest /= options_per_comp;
            if opt == 0 {
                logp += (1.0 - q_gamma).ln();
            } else {
                let row = opt - 1;
                rows[l] = row;
                key |= 1 << l;
                logp += q_gamma.ln();
                for j in 0..p {
                    logp += if row >> j & 1 == 1 {
                        q_eta.ln()
                    } else {
                        (1.0 - q_eta).ln()
                    };
                }
            }
        }
        for j in 0..p {
            let mut mask = 0usize;
            for l in 0..r {
                if key >> l & 1 == 1 && rows[l] >> j & 1 == 1 {
                    mask |= 1 << l;
                    // Feature bits sit after the component bits, row-major.
                    key |= 1 << (r + l * p + j);
                }
            }
            logp += ml[j][mask];
        }
        keys.push(key);
        logs.push(logp);
    }
    let norm = log_sum_exp(&logs);
    keys.into_iter()
        .zip(logs)
        .map(|(k, lp)| (k, (lp - norm).exp()))
        .collect()
}

/// Exact posterior over the outcome view's 2^r component masks at fixed
/// latent matrix and residual variance.
pub fn enumerate_outcome_posterior(
    u: &DMatrix<f64>,
    resid: &DVector<f64>,
    residual_var: f64,
    tau2: f64,
    q_gamma: f64,
) -> HashMap<u64, f64> {
    let r = u.ncols();
    let mut keys = Vec::new();
    let mut logs = Vec::new();
    for mask in 0..1u64 << r {
        let active: Vec<bool> = (0..r).map(|l| mask >> l & 1 == 1).collect();
        let k = active.iter().filter(|&&a| a).count() as f64;
        let logp = k * q_gamma.ln()
            + (r as f64 - k) * (1.0 - q_gamma).ln()
            + dense_marginal_loglik(u, &active, resid, residual_var, tau2);
        keys.push(mask);
        logs.push(logp);
    }
    let norm = log_sum_exp(&logs);
    keys.into_iter()
        .zip(logs)
        .map(|(k, lp)| (k, (lp - norm).exp()))
        .collect()
}

/// Total-variation distance between visit frequencies and an exact law.
pub fn total_variation(counts: &HashMap<u64, u64>, exact: &HashMap<u64, f64>) -> f64 {
    let n: u64 = counts.values().sum();
    let mut tv = 0.0;
    for (key, &p) in exact {
        let f = *counts.get(key).unwrap_or(&0) as f64 / n as f64;
        tv += (f - p).abs();
    }
    for (key, &c) in counts {
        if !exact.contains_key(key) {
            tv += c as f64 / n as f64;
        }
    }
    0.5 * tv
}

// ---------------------------------------------------------------------------
// Brute-force metric references.
// ---------------------------------------------------------------------------

/// AUC by direct enumeration of all positive-negative pairs, ties at half.
pub fn auc_brute(scores: &[f64], truth: &[bool]) -> f64 {
    let mut pairs = 0.0f64;
    let mut wins = 0.0f64;
    for (i, &ti) in truth.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// False positive and false negative rates by direct counting at a strict
/// threshold.
pub fn rates_brute(scores: &[f64], truth: &[bool], threshold: f64) -> (f64, f64) {
    let (mut fp, mut neg, mut fnr_n, mut pos) = (0u64, 0u64, 0u64, 0u64);
    for (s, &t) in scores.iter().zip(truth) {
        let selected = *s > threshold;
        if t {
            pos += 1;
            if !selected {
                fnr_n += 1;
            }
        } else {
            neg += 1;
            if selected {
                fp += 1;
            }
        }
    }
    (fp as f64 / neg as f64, fnr_n as f64 / pos as f64)
}

pub fn mse_brute(y: &[f64], y_hat: &[f64]) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

// ---------------------------------------------------------------------------
// Tiny-instance builders.
// ---------------------------------------------------------------------------

/// Site and family labels for a rectangular grid.
pub fn grid_labels(
    n_sites: usize,
    fams_per_site: usize,
    fam_size: usize,
) -> (Vec<String>, Vec<String>) {
    let mut site = Vec::new();
    let mut family = Vec::new();
    for s in 0..n_sites {
        for f in 0..fams_per_site {
            for _ in 0..fam_size {
                site.push(format!("s{s}"));
                family.push(format!("s{s}_f{f}"));
            }
        }
    }
    (site, family)
}
