//! Synthetic benchmark data: block-structured multi-view features tied to a
//! low-rank signal, a nested family-within-site outcome, and the scenario
//! runner that scores methods over replicated draws.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_method, FitOptions, Method};
use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::hyper::Hyperparameters;
use crate::io;
use crate::metrics::{
    append_summary_rows, mse, score_selection, var_pred, MetricsReport, MetricsRow, PerViewRow,
};
use crate::rng::{replicate_seed, substream, Stream};

/// Correlated features come in blocks of ten: one main feature followed by
/// nine supporting features.
pub const BLOCK_SIZE: usize = 10;

/// Generator settings for one benchmark scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Scenario label used in reports ("1", "2", "3", or a custom tag).
    pub id: String,
    pub n_views: usize,
    pub p_per_view: usize,
    /// Number of correlated ten-feature blocks carrying signal in each view.
    /// Features beyond `10 * important_blocks` are independent noise.
    pub important_blocks: usize,
    pub n_sites: usize,
    pub families_per_site: usize,
    pub family_size: usize,
    pub rank: usize,
    /// Grand mean of the site effects.
    pub mu: f64,
    /// Residual variance of the outcome.
    pub sigma2: f64,
    /// Variance of site effects around the grand mean.
    pub site_var: f64,
    /// Variance of family effects around their site effect.
    pub family_var: f64,
    /// Fixed-effect covariates appended to the outcome model (zero for the
    /// standard scenarios).
    pub n_covariates: usize,
}

impl ScenarioSpec {
    /// Rows per split.
    pub fn n_rows(&self) -> usize {
        self.n_sites * self.families_per_site * self.family_size
    }

    /// Families per split.
    pub fn n_families(&self) -> usize {
        self.n_sites * self.families_per_site
    }

    /// Number of signal-bearing features at the start of each view.
    pub fn n_important(&self) -> usize {
        self.important_blocks * BLOCK_SIZE
    }

    /// True outcome weights on the latent components: every component
    /// contributes except the last, which is null so that component selection
    /// on the outcome has something to find.
    pub fn alpha(&self) -> DVector<f64> {
        let mut a = DVector::from_element(self.rank, 1.0);
        if self.rank > 1 {
            a[self.rank - 1] = 0.0;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0
            || self.p_per_view == 0
            || self.n_sites == 0
            || self.families_per_site == 0
            || self.family_size == 0
            || self.rank == 0
            || self.important_blocks == 0
        {
            return Err(Error::Config(
                "scenario dimensions must all be positive".into(),
            ));
        }
        if self.p_per_view < self.n_important() {
            return Err(Error::DimensionMismatch(format!(
                "{} features per view cannot hold {} blocks of {}",
                self.p_per_view, self.important_blocks, BLOCK_SIZE
            )));
        }
        if self.sigma2 <= 0.0 || self.site_var < 0.0 || self.family_var < 0.0 || self.mu.is_nan() {
            return Err(Error::Config("scenario variances out of range".into()));
        }
        Ok(())
    }
}

/// The three standard scenarios. All share four 500-feature views, rank 4,
/// 20 sites x 20 families x 2 members per split, grand mean 1, unit residual
/// variance; they differ in the random-effect variances:
/// scenario 1 has none (site_var = family_var = 0), scenario 2 has
/// family_var = 1 and site_var = 0.5, scenario 3 has family_var = 0.5 and
/// site_var = 1.
pub fn scenario(id: u32) -> Result<ScenarioSpec> {
    let (site_var, family_var) = match id {
        1 => (0.0, 0.0),
        2 => (0.5, 1.0),
        3 => (1.0, 0.5),
        _ => {
            return Err(Error::Config(format!(
                "unknown scenario {id}; expected 1, 2, or 3"
            )))
        }
    };
    Ok(ScenarioSpec {
        id: id.to_string(),
        n_views: 4,
        p_per_view: 500,
        important_blocks: 10,
        n_sites: 20,
        families_per_site: 20,
        family_size: 2,
        rank: 4,
        mu: 1.0,
        sigma2: 1.0,
        site_var,
        family_var,
        n_covariates: 0,
    })
}

/// Covariance of one ten-feature block: unit variances, 0.7 between the main
/// feature and each supporting feature, 0.49 among supporting features.
pub fn block_covariance() -> DMatrix<f64> {
    let mut v = DVector::from_element(BLOCK_SIZE, 0.7);
    v[0] = 1.0;
    let mut b = &v * v.transpose();
    for d in 1..BLOCK_SIZE {
        b[(d, d)] += 0.51;
    }
    b
}

/// Covariance of a whole view: `important_blocks` copies of the block
/// covariance down the diagonal, identity elsewhere.
pub fn gen_intra_view_cov(p: usize, important_blocks: usize) -> Result<DMatrix<f64>> {
    if p < important_blocks * BLOCK_SIZE {
        return Err(Error::DimensionMismatch(format!(
            "{p} features cannot hold {important_blocks} blocks of {BLOCK_SIZE}"
        )));
    }
    let mut cov = DMatrix::identity(p, p);
    let block = block_covariance();
    for q in 0..important_blocks {
        let at = q * BLOCK_SIZE;
        cov.view_mut((at, at), (BLOCK_SIZE, BLOCK_SIZE))
            .copy_from(&block);
    }
    Ok(cov)
}

fn signed_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let magnitude = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// True loadings of one view: signal features load on every component with
/// magnitudes uniform on [0.3, 0.5) and random signs, main features (block
/// starts) at double strength, noise features exactly zero.
pub fn gen_loadings<R: Rng>(
    rng: &mut R,
    rank: usize,
    p: usize,
    important_blocks: usize,
) -> Result<DMatrix<f64>> {
    let n_important = important_blocks * BLOCK_SIZE;
    if p < n_important {
        return Err(Error::DimensionMismatch(format!(
            "{p} features cannot hold {important_blocks} blocks of {BLOCK_SIZE}"
        )));
    }
    let mut a = DMatrix::zeros(rank, p);
    for j in 0..n_important {
        let double = j % BLOCK_SIZE == 0;
        for l in 0..rank {
            let mut w = signed_uniform(rng, 0.3, 0.5);
            if double {
                w *= 2.0;
            }
            a[(l, j)] = w;
        }
    }
    Ok(a)
}

/// Everything the generator knows that a fitted model is later scored
/// against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthBundle {
    pub spec: ScenarioSpec,
    pub seed: u64,
    /// True loadings per view (rank x p).
    pub loadings: Vec<DMatrix<f64>>,
    /// Per-view signal masks (true = feature carries signal).
    pub important: Vec<Vec<bool>>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub mu: f64,
    /// Site effects, shared between the train and test splits.
    pub xi: DVector<f64>,
    pub theta_train: DVector<f64>,
    pub theta_test: DVector<f64>,
    pub u_train: DMatrix<f64>,
    pub u_test: DMatrix<f64>,
}

fn draw_centered<R: Rng>(rng: &mut R, mean: f64, var: f64) -> f64 {
    if var == 0.0 {
        return mean;
    }
    crate::dist::draw_normal(rng, mean, var)
}

/// Draw one split's correlated noise for a view: blocks get a Cholesky
/// transform of iid normals, trailing singleton features stay iid.
fn draw_view_noise<R: Rng>(
    rng: &mut R,
    n: usize,
    p: usize,
    important_blocks: usize,
    chol_l: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, p);
    for i in 0..n {
        for q in 0..important_blocks {
            let z = DVector::from_fn(BLOCK_SIZE, |_, _| crate::dist::draw_standard_normal(rng));
            let correlated = chol_l * z;
            for d in 0..BLOCK_SIZE {
                e[(i, q * BLOCK_SIZE + d)] = correlated[d];
            }
        }
        for j in important_blocks * BLOCK_SIZE..p {
            e[(i, j)] = crate::dist::draw_standard_normal(rng);
        }
    }
    e
}

struct SplitDraw {
    u: DMatrix<f64>,
    theta: DVector<f64>,
    views: Vec<DMatrix<f64>>,
    covariates: Option<DMatrix<f64>>,
    outcome: DVector<f64>,
}

fn draw_split<R: Rng>(
    rng: &mut R,
    spec: &ScenarioSpec,
    loadings: &[DMatrix<f64>],
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    xi: &DVector<f64>,
    chol_l: &DMatrix<f64>,
) -> SplitDraw {
    let n = spec.n_rows();
    let u = DMatrix::from_fn(n, spec.rank, |_, _| crate::dist::draw_standard_normal(rng));
    let views: Vec<DMatrix<f64>> = loadings
        .iter()
        .map(|a| {
            let noise = draw_view_noise(rng, n, spec.p_per_view, spec.important_blocks, chol_l);
            &u * a + noise
        })
        .collect();
    let theta = DVector::from_fn(spec.n_families(), |f, _| {
        let s = f / spec.families_per_site;
        draw_centered(rng, xi[s], spec.family_var)
    });
    let covariates = (spec.n_covariates > 0).then(|| {
        DMatrix::from_fn(n, spec.n_covariates, |_, _| {
            crate::dist::draw_standard_normal(rng)
        })
    });
    let mut outcome = &u * alpha;
    if let Some(w) = &covariates {
        outcome += w * beta;
    }
    for i in 0..n {
        let f = i / spec.family_size;
        outcome[i] += theta[f] + draw_centered(rng, 0.0, spec.sigma2);
    }
    SplitDraw {
        u,
        theta,
        views,
        covariates,
        outcome,
    }
}

fn assemble(spec: &ScenarioSpec, draw: SplitDraw, split_tag: &str) -> MultiViewDataset {
    let n = spec.n_rows();
    let mut site = Vec::with_capacity(n);
    let mut family = Vec::with_capacity(n);
    for i in 0..n {
        let f = i / spec.family_size;
        let s = f / spec.families_per_site;
        site.push(format!("site{s:02}"));
        family.push(format!("fam{f:03}_{split_tag}"));
    }
    let view_names: Vec<String> = (0..spec.n_views)
        .map(|m| format!("view{}", m + 1))
        .collect();
    let feature_names: Vec<Vec<String>> = (0..spec.n_views)
        .map(|m| {
            (0..spec.p_per_view)
                .map(|j| format!("v{}_f{:04}", m + 1, j + 1))
                .collect()
        })
        .collect();
    let covariate_names = (0..spec.n_covariates)
        .map(|c| format!("w{}", c + 1))
        .collect();
    MultiViewDataset {
        views: draw.views,
        view_names,
        feature_names,
        covariates: draw.covariates,
        covariate_names,
        outcome: draw.outcome,
        site,
        family,
    }
}

/// Draw one replicate: a train and a test split plus the generating truth.
///
/// The two splits share the loadings and the site effects; latent scores,
/// family effects, noise, and family labels are fresh per split, so test
/// families are unseen while their sites are known.
pub fn gen_dataset(
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<(MultiViewDataset, MultiViewDataset, TruthBundle)> {
    spec.validate()?;
    let mut shared = substream(seed, Stream::Simulate, 0, 0);
    let loadings: Vec<DMatrix<f64>> = (0..spec.n_views)
        .map(|_| {
            gen_loadings(
                &mut shared,
                spec.rank,
                spec.p_per_view,
                spec.important_blocks,
            )
        })
        .collect::<Result<_>>()?;
    let alpha = spec.alpha();
    let beta = DVector::from_fn(
        spec.n_covariates,
        |c, _| {
            if c % 2 == 0 {
                0.5
            } else {
                -0.5
            }
        },
    );
    let xi = DVector::from_fn(spec.n_sites, |_, _| {
        draw_centered(&mut shared, spec.mu, spec.site_var)
    });
    let chol_l = block_covariance()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("block covariance".into()))?
        .l();

    let mut train_rng = substream(seed, Stream::Simulate, 1, 0);
    let train_draw = draw_split(&mut train_rng, spec, &loadings, &alpha, &beta, &xi, &chol_l);
    let mut test_rng = substream(seed, Stream::Simulate, 2, 0);
    let test_draw = draw_split(&mut test_rng, spec, &loadings, &alpha, &beta, &xi, &chol_l);

    let important: Vec<Vec<bool>> = (0..spec.n_views)
        .map(|_| {
            (0..spec.p_per_view)
                .map(|j| j < spec.n_important())
                .collect()
        })
        .collect();
    let truth = TruthBundle {
        spec: spec.clone(),
        seed,
        loadings,
        important,
        alpha,
        beta,
        mu: spec.mu,
        xi,
        theta_train: train_draw.theta.clone(),
        theta_test: test_draw.theta.clone(),
        u_train: train_draw.u.clone(),
        u_test: test_draw.u.clone(),
    };
    let train = assemble(spec, train_draw, "tr");
    let test = assemble(spec, test_draw, "te");
    train.validate()?;
    test.validate()?;
    Ok((train, test, truth))
}

/// A full benchmark run: scenario, replication count, methods, sampler
/// settings, and where to persist artifacts.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub spec: ScenarioSpec,
    pub n_replicates: usize,
    pub methods: Vec<Method>,
    pub hyper: Hyperparameters,
    pub options: FitOptions,
    pub master_seed: u64,
    /// When set, every replicate's datasets, truth, predictions, and metrics
    /// land under this directory, alongside the final report.
    pub out_dir: Option<PathBuf>,
}

fn replicate_dir(out_dir: &Path, rep: usize) -> PathBuf {
    out_dir.join(format!("rep{:03}", rep + 1))
}

fn run_replicate(run: &ScenarioRun, rep: usize) -> Result<(Vec<MetricsRow>, Vec<PerViewRow>)> {
    let seed = replicate_seed(run.master_seed, rep);
    let (train, test, truth) = gen_dataset(&run.spec, seed)?;
    let rep_dir = run.out_dir.as_ref().map(|d| replicate_dir(d, rep));
    if let Some(dir) = &rep_dir {
        io::write_dataset(&dir.join("train"), &train)?;
        io::write_dataset(&dir.join("test"), &test)?;
        io::write_json(&dir.join("truth.json"), &truth)?;
    }
    let replicate_label = (rep + 1).to_string();
    let mut rows = Vec::new();
    let mut per_view = Vec::new();
    for &method in &run.methods {
        let mut hyper = run.hyper.clone();
        hyper.seed = seed;
        let model = fit_method(method, &train, &hyper, &run.options)?;
        let y_hat = model.predict(&test)?;
        if let Some(dir) = &rep_dir {
            io::write_predictions(
                &dir.join(format!("pred_{method}.csv")),
                &test.site,
                &test.family,
                &y_hat,
            )?;
        }
        let (fpr, fnr, auc) = match model.mpp_feature() {
            Some(mpp) => {
                let (views, avg) =
                    score_selection(mpp, &truth.important, hyper.importance_collapse, 0.5)?;
                for (m, v) in views.iter().enumerate() {
                    per_view.push(PerViewRow {
                        scenario: run.spec.id.clone(),
                        method: method.to_string(),
                        replicate: replicate_label.clone(),
                        view: train.view_names[m].clone(),
                        fpr: v.fpr,
                        fnr: v.fnr,
                        auc: v.auc,
                    });
                }
                (Some(avg.fpr), Some(avg.fnr), Some(avg.auc))
            }
            None => (None, None, None),
        };
        rows.push(MetricsRow {
            scenario: run.spec.id.clone(),
            method: method.to_string(),
            replicate: replicate_label.clone(),
            mse: mse(&test.outcome, &y_hat)?,
            var_yhat: var_pred(&y_hat)?,
            fpr,
            fnr,
            auc,
        });
    }
    if let Some(dir) = &rep_dir {
        let partial = MetricsReport {
            rows: rows.clone(),
            per_view: per_view.clone(),
            single_replicate: false,
        };
        io::write_report_csv(&dir.join("metrics.csv"), &partial)?;
    }
    Ok((rows, per_view))
}

/// Run every method on every replicate of a scenario and assemble the
/// report: one row per (replicate, method) plus mean and sd rows per method.
///
/// Replicates draw their data and fits from seeds derived from
/// `master_seed`, so a rerun with the same settings reproduces the report
/// byte for byte regardless of worker count. Each replicate's artifacts are
/// persisted as they complete, so a failed run keeps its finished
/// replicates.
pub fn run_scenario(run: &ScenarioRun) -> Result<MetricsReport> {
    run.spec.validate()?;
    if run.n_replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    if run.methods.is_empty() {
        return Err(Error::Config("need at least one method".into()));
    }
    if let Some(dir) = &run.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let results: Vec<(Vec<MetricsRow>, Vec<PerViewRow>)> = (0..run.n_replicates)
        .into_par_iter()
        .map(|rep| run_replicate(run, rep))
        .collect::<Result<_>>()?;
    let mut report = MetricsReport::default();
    for (rows, per_view) in results {
        report.rows.extend(rows);
        report.per_view.extend(per_view);
    }
    append_summary_rows(&mut report);
    if let Some(dir) = &run.out_dir {
        io::write_report_csv(&dir.join("report.csv"), &report)?;
        io::write_per_view_csv(&dir.join("per_view_metrics.csv"), &report.per_view)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn block_covariance_entries() {
        let b = block_covariance();
        assert_relative_eq!(b[(0, 0)], 1.0);
        assert_relative_eq!(b[(3, 3)], 1.0);
        assert_relative_eq!(b[(0, 5)], 0.7);
        assert_relative_eq!(b[(2, 7)], 0.49);
        assert!(b.cholesky().is_some());
    }

    #[test]
    fn view_cov_places_blocks_and_rejects_small_p() {
        let cov = gen_intra_view_cov(120, 10).unwrap();
        assert_relative_eq!(cov[(0, 1)], 0.7);
        assert_relative_eq!(cov[(11, 12)], 0.49);
        assert_relative_eq!(cov[(9, 10)], 0.0); // block boundary
        assert_relative_eq!(cov[(100, 100)], 1.0);
        assert_relative_eq!(cov[(100, 101)], 0.0);
        assert!(gen_intra_view_cov(99, 10).is_err());
    }

    #[test]
    fn loadings_ranges_and_zeros() {
        let mut rng = substream(7, Stream::Simulate, 0, 0);
        let a = gen_loadings(&mut rng, 4, 130, 10).unwrap();
        for j in 0..100 {
            let main = j % BLOCK_SIZE == 0;
            for l in 0..4 {
                let w = a[(l, j)].abs();
                if main {
                    assert!((0.6..1.0).contains(&w), "main weight {w}");
                } else {
                    assert!((0.3..0.5).contains(&w), "support weight {w}");
                }
            }
        }
        for j in 100..130 {
            for l in 0..4 {
                assert_eq!(a[(l, j)], 0.0);
            }
        }
    }

    #[test]
    fn loading_signs_balance() {
        let mut rng = substream(11, Stream::Simulate, 0, 0);
        let mut positive = 0usize;
        let mut total = 0usize;
        for _ in 0..10 {
            let a = gen_loadings(&mut rng, 4, 250, 10).unwrap();
            for j in 0..100 {
                for l in 0..4 {
                    total += 1;
                    if a[(l, j)] > 0.0 {
                        positive += 1;
                    }
                }
            }
        }
        let frac = positive as f64 / total as f64;
        assert!((0.47..0.53).contains(&frac), "positive fraction {frac}");
    }

    #[test]
    fn sample_covariance_matches_target() {
        // Empirical covariance of the correlated noise over many rows should
        // match the block design entrywise.
        let spec = ScenarioSpec {
            p_per_view: 40,
            important_blocks: 3,
            ..scenario(1).unwrap()
        };
        let chol_l = block_covariance().cholesky().unwrap().l();
        let mut rng = substream(3, Stream::Simulate, 9, 0);
        let n = 100_000;
        let e = draw_view_noise(&mut rng, n, spec.p_per_view, spec.important_blocks, &chol_l);
        let target = gen_intra_view_cov(spec.p_per_view, spec.important_blocks).unwrap();
        let centered = {
            let means = e.row_mean();
            let mut c = e;
            for i in 0..n {
                for j in 0..spec.p_per_view {
                    c[(i, j)] -= means[j];
                }
            }
            c
        };
        let emp = centered.transpose() * &centered / (n as f64 - 1.0);
        let max_err = (emp - target).abs().max();
        assert!(max_err < 0.02, "max covariance error {max_err}");
    }

    #[test]
    fn family_effects_have_requested_spread() {
        // Var(theta - xi) across many families should match family_var.
        let spec = ScenarioSpec {
            families_per_site: 500,
            n_sites: 20,
            ..scenario(2).unwrap()
        };
        let mut rng = substream(5, Stream::Simulate, 4, 0);
        let xi = DVector::from_fn(spec.n_sites, |_, _| {
            draw_centered(&mut rng, spec.mu, spec.site_var)
        });
        let n_f = spec.n_families();
        let dev: Vec<f64> = (0..n_f)
            .map(|f| {
                let s = f / spec.families_per_site;
                draw_centered(&mut rng, xi[s], spec.family_var) - xi[s]
            })
            .collect();
        let mean = dev.iter().sum::<f64>() / n_f as f64;
        let var = dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_f as f64 - 1.0);
        assert!(
            (var - spec.family_var).abs() / spec.family_var < 0.1,
            "family effect variance {var}"
        );
    }

    #[test]
    fn scenario_one_effects_collapse_to_grand_mean() {
        let mut spec = scenario(1).unwrap();
        spec.p_per_view = 100;
        spec.important_blocks = 2;
        let (train, _test, truth) = gen_dataset(&spec, 42).unwrap();
        for s in 0..spec.n_sites {
            assert_eq!(truth.xi[s], 1.0);
        }
        for f in 0..spec.n_families() {
            assert_eq!(truth.theta_train[f], 1.0);
            assert_eq!(truth.theta_test[f], 1.0);
        }
        assert_eq!(train.n_rows(), 800);
    }

    #[test]
    fn outcome_variance_decomposes() {
        // Across replicates, Var(y) should be about |alpha|^2 + family_var +
        // site_var + sigma2.
        let mut spec = scenario(3).unwrap();
        spec.p_per_view = 20;
        spec.important_blocks = 2;
        spec.n_views = 1;
        let mut all = Vec::new();
        for rep in 0..50 {
            let (train, _, _) = gen_dataset(&spec, 1000 + rep).unwrap();
            all.extend(train.outcome.iter().copied());
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = spec.alpha().norm_squared() + spec.family_var + spec.site_var + spec.sigma2;
        assert!(
            (var - expect).abs() / expect < 0.1,
            "outcome variance {var} vs {expect}"
        );
    }

    #[test]
    fn null_component_has_no_outcome_slope() {
        // Regressing y on the last latent column should give a slope near 0,
        // while the first column carries weight 1.
        let mut spec = scenario(1).unwrap();
        spec.p_per_view = 40;
        spec.important_blocks = 2;
        spec.n_views = 1;
        let (train, _, truth) = gen_dataset(&spec, 9).unwrap();
        let slope = |col: usize| -> f64 {
            let u = truth.u_train.column(col);
            let um = u.mean();
            let ym = train.outcome.mean();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..train.n_rows() {
                num += (u[i] - um) * (train.outcome[i] - ym);
                den += (u[i] - um).powi(2);
            }
            num / den
        };
        assert!(slope(spec.rank - 1).abs() < 0.05, "null slope {}", slope(3));
        assert!((slope(0) - 1.0).abs() < 0.15, "live slope {}", slope(0));
    }

    #[test]
    fn splits_share_sites_but_not_families() {
        let mut spec = scenario(2).unwrap();
        spec.p_per_view = 20;
        spec.important_blocks = 2;
        spec.n_views = 1;
        spec.n_sites = 3;
        spec.families_per_site = 4;
        let (train, test, _) = gen_dataset(&spec, 17).unwrap();
        let train_sites: std::collections::BTreeSet<_> = train.site.iter().collect();
        let test_sites: std::collections::BTreeSet<_> = test.site.iter().collect();
        assert_eq!(train_sites, test_sites);
        let train_fams: std::collections::BTreeSet<_> = train.family.iter().collect();
        for f in &test.family {
            assert!(!train_fams.contains(f), "family {f} leaked across splits");
        }
    }

    #[test]
    fn covariates_enter_outcome_when_requested() {
        let mut spec = scenario(1).unwrap();
        spec.p_per_view = 20;
        spec.important_blocks = 1;
        spec.n_views = 1;
        spec.n_covariates = 2;
        let (train, _, truth) = gen_dataset(&spec, 21).unwrap();
        let w = train.covariates.as_ref().unwrap();
        assert_eq!(w.ncols(), 2);
        assert_relative_eq!(truth.beta[0], 0.5);
        assert_relative_eq!(truth.beta[1], -0.5);
        // Slope of y on w1 should be near beta1.
        let um = w.column(0).mean();
        let ym = train.outcome.mean();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..train.n_rows() {
            num += (w[(i, 0)] - um) * (train.outcome[i] - ym);
            den += (w[(i, 0)] - um).powi(2);
        }
        assert!(
            (num / den - 0.5).abs() < 0.15,
            "covariate slope {}",
            num / den
        );
    }

    #[test]
    fn same_seed_reproduces_bytes() {
        let mut spec = scenario(2).unwrap();
        spec.p_per_view = 20;
        spec.important_blocks = 1;
        spec.n_views = 2;
        spec.n_sites = 2;
        spec.families_per_site = 3;
        let (a_train, a_test, a_truth) = gen_dataset(&spec, 5).unwrap();
        let (b_train, b_test, b_truth) = gen_dataset(&spec, 5).unwrap();
        assert_eq!(a_train.views[1].as_slice(), b_train.views[1].as_slice());
        assert_eq!(a_test.outcome.as_slice(), b_test.outcome.as_slice());
        assert_eq!(a_truth.xi.as_slice(), b_truth.xi.as_slice());
        let (c_train, _, _) = gen_dataset(&spec, 6).unwrap();
        assert_ne!(a_train.outcome.as_slice(), c_train.outcome.as_slice());
    }

    fn tiny_run(out_dir: Option<PathBuf>) -> ScenarioRun {
        let mut spec = scenario(2).unwrap();
        spec.n_views = 1;
        spec.p_per_view = 20;
        spec.important_blocks = 1;
        spec.n_sites = 2;
        spec.families_per_site = 3;
        spec.family_size = 2;
        spec.rank = 2;
        let mut hyper = Hyperparameters::default();
        hyper.r = 2;
        hyper.n_iter = 120;
        hyper.n_burn = 60;
        ScenarioRun {
            spec,
            n_replicates: 2,
            methods: vec![Method::Bipmixed, Method::Pca2Step],
            hyper,
            options: FitOptions::default(),
            master_seed: 77,
            out_dir,
        }
    }

    #[test]
    fn scenario_run_reports_and_persists_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(Some(dir.path().to_path_buf()));
        let report = run_scenario(&run).unwrap();
        // 2 replicates x 2 methods, then mean and sd per method.
        assert_eq!(report.rows.len(), 8);
        assert!(!report.single_replicate);
        let first = &report.rows[0];
        assert_eq!(first.method, "bipmixed");
        assert!(first.fpr.is_some() && first.auc.is_some());
        let second = &report.rows[1];
        assert_eq!(second.method, "pca2step");
        assert!(second.fpr.is_none());
        assert_eq!(report.per_view.len(), 2); // bipmixed only, 1 view x 2 reps
        for name in [
            "report.csv",
            "per_view_metrics.csv",
            "rep001/train/manifest.json",
            "rep001/test/manifest.json",
            "rep001/truth.json",
            "rep001/pred_bipmixed.csv",
            "rep001/pred_pca2step.csv",
            "rep001/metrics.csv",
            "rep002/truth.json",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        // The persisted datasets reload cleanly.
        let train = io::load_dataset(&dir.path().join("rep001/train/manifest.json")).unwrap();
        assert_eq!(train.n_rows(), 12);
        let truth: TruthBundle = io::read_json(&dir.path().join("rep001/truth.json")).unwrap();
        assert_eq!(truth.seed, replicate_seed(77, 0usize));
    }

    #[test]
    fn scenario_reports_are_reproducible_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let report_a = run_scenario(&tiny_run(Some(dir_a.path().to_path_buf()))).unwrap();
        let _ = run_scenario(&tiny_run(Some(dir_b.path().to_path_buf()))).unwrap();
        let bytes_a = std::fs::read(dir_a.path().join("report.csv")).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join("report.csv")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let pv_a = std::fs::read(dir_a.path().join("per_view_metrics.csv")).unwrap();
        let pv_b = std::fs::read(dir_b.path().join("per_view_metrics.csv")).unwrap();
        assert_eq!(pv_a, pv_b);
        // In-memory rows carry distinct replicate labels in order.
        assert_eq!(report_a.rows[0].replicate, "1");
        assert_eq!(report_a.rows[2].replicate, "2");
    }
}
