//! Multi-view dataset container, column standardization, and the scree-based
//! rank suggestion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue drop below which the scree curve counts as flat.
pub const SCREE_PLATEAU_TOL: f64 = 0.01;

/// Subject-by-feature views plus the outcome and its nesting labels.
/// `views` holds the non-outcome views only; the outcome is a single column
/// treated as its own view by the sampler.
#[derive(Clone, Debug)]
pub struct MultiViewDataset {
    pub views: Vec<DMatrix<f64>>,
    pub view_names: Vec<String>,
    pub feature_names: Vec<Vec<String>>,
    pub covariates: Option<DMatrix<f64>>,
    pub covariate_names: Vec<String>,
    pub outcome: DVector<f64>,
    pub site: Vec<String>,
    pub family: Vec<String>,
}

impl MultiViewDataset {
    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if n == 0 {
            return Err(Error::EmptyInput("dataset has no rows".into()));
        }
        for (m, v) in self.views.iter().enumerate() {
            if v.ncols() == 0 {
                return Err(Error::EmptyInput(format!("view {m} has no features")));
            }
            if v.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "view {m} has {} rows, outcome has {n}",
                    v.nrows()
                )));
            }
        }
        if self.views.len() != self.view_names.len() || self.views.len() != self.feature_names.len()
        {
            return Err(Error::DimensionMismatch(
                "view names / feature names do not match view count".into(),
            ));
        }
        for (m, (v, names)) in self.views.iter().zip(&self.feature_names).enumerate() {
            if v.ncols() != names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "view {m} has {} columns but {} feature names",
                    v.ncols(),
                    names.len()
                )));
            }
        }
        if let Some(w) = &self.covariates {
            if w.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "covariates have {} rows, outcome has {n}",
                    w.nrows()
                )));
            }
            if w.ncols() != self.covariate_names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "covariates have {} columns but {} names",
                    w.ncols(),
                    self.covariate_names.len()
                )));
            }
        }
        for (m, v) in self.views.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "view {m} contains a non-finite value"
                )));
            }
        }
        if self.outcome.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("outcome contains a non-finite value".into()));
        }
        if let Some(w) = &self.covariates {
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(
                    "covariates contain a non-finite value".into(),
                ));
            }
        }
        if self.site.len() != n {
            return Err(Error::LengthMismatch {
                left: self.site.len(),
                right: n,
                context: "site labels vs rows".into(),
            });
        }
        if self.family.len() != n {
            return Err(Error::LengthMismatch {
                left: self.family.len(),
                right: n,
                context: "family labels vs rows".into(),
            });
        }
        Ok(())
    }
}

/// Per-column location/scale pairs learned on training data. Applied to new
/// data at prediction time so train and test live on the same scale. The
/// outcome stats are kept for the scree computation only; the outcome itself
/// is modeled in its original units.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scaler {
    pub view_stats: Vec<Vec<(f64, f64)>>,
    pub covariate_stats: Option<Vec<(f64, f64)>>,
    pub outcome_stats: (f64, f64),
    /// False when standardization was disabled; transform is then identity.
    pub active: bool,
}

fn column_stats(col: &[f64], location: &str, j: usize) -> Result<(f64, f64)> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::ConstantColumn {
            location: location.to_string(),
            column: j,
        });
    }
    Ok((mean, sd))
}

impl Scaler {
    /// Learn per-column stats. Requires at least two rows and no constant
    /// columns.
    pub fn fit(data: &MultiViewDataset) -> Result<Self> {
        if data.n_rows() < 2 {
            return Err(Error::EmptyInput(
                "need at least two rows to standardize".into(),
            ));
        }
        let mut view_stats = Vec::with_capacity(data.views.len());
        for (m, v) in data.views.iter().enumerate() {
            let mut stats = Vec::with_capacity(v.ncols());
            for j in 0..v.ncols() {
                let col: Vec<f64> = v.column(j).iter().copied().collect();
                stats.push(column_stats(&col, &format!("view {m}"), j)?);
            }
            view_stats.push(stats);
        }
        let covariate_stats = match &data.covariates {
            Some(w) => {
                let mut stats = Vec::with_capacity(w.ncols());
                for j in 0..w.ncols() {
                    let col: Vec<f64> = w.column(j).iter().copied().collect();
                    stats.push(column_stats(&col, "covariates", j)?);
                }
                Some(stats)
            }
            None => None,
        };
        let y: Vec<f64> = data.outcome.iter().copied().collect();
        let outcome_stats = column_stats(&y, "outcome", 0)?;
        Ok(Scaler {
            view_stats,
            covariate_stats,
            outcome_stats,
            active: true,
        })
    }

    /// Identity scaler used when standardization is turned off.
    pub fn identity(data: &MultiViewDataset) -> Self {
        Scaler {
            view_stats: data
                .views
                .iter()
                .map(|v| vec![(0.0, 1.0); v.ncols()])
                .collect(),
            covariate_stats: data
                .covariates
                .as_ref()
                .map(|w| vec![(0.0, 1.0); w.ncols()]),
            outcome_stats: (0.0, 1.0),
            active: false,
        }
    }

    pub fn transform_view(&self, m: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let stats = self
            .view_stats
            .get(m)
            .ok_or_else(|| Error::DimensionMismatch(format!("scaler has no stats for view {m}")))?;
        if x.ncols() != stats.len() {
            return Err(Error::DimensionMismatch(format!(
                "view {m} has {} columns, scaler expects {}",
                x.ncols(),
                stats.len()
            )));
        }
        let mut out = x.clone();
        for (j, &(mean, sd)) in stats.iter().enumerate() {
            for v in out.column_mut(j).iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        Ok(out)
    }

    pub fn transform_covariates(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let stats = match &self.covariate_stats {
            Some(s) => s,
            None => {
                return Err(Error::DimensionMismatch(
                    "scaler was fit without covariates".into(),
                ))
            }
        };
        if w.ncols() != stats.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {} columns, scaler expects {}",
                w.ncols(),
                stats.len()
            )));
        }
        let mut out = w.clone();
        for (j, &(mean, sd)) in stats.iter().enumerate() {
            for v in out.column_mut(j).iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        Ok(out)
    }

    /// Undo `transform_view`; used by round-trip checks.
    pub fn inverse_transform_view(&self, m: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let stats = self
            .view_stats
            .get(m)
            .ok_or_else(|| Error::DimensionMismatch(format!("scaler has no stats for view {m}")))?;
        let mut out = x.clone();
        for (j, &(mean, sd)) in stats.iter().enumerate() {
            for v in out.column_mut(j).iter_mut() {
                *v = *v * sd + mean;
            }
        }
        Ok(out)
    }

    /// Apply the learned stats to a whole dataset (outcome left untouched).
    pub fn transform(&self, data: &MultiViewDataset) -> Result<MultiViewDataset> {
        let mut out = data.clone();
        for m in 0..data.views.len() {
            out.views[m] = self.transform_view(m, &data.views[m])?;
        }
        if let Some(w) = &data.covariates {
            out.covariates = Some(self.transform_covariates(w)?);
        }
        Ok(out)
    }
}

/// Eigenvalues of the pooled correlation matrix and the rank suggested by the
/// plateau rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreeResult {
    /// Descending eigenvalues of the correlation matrix of all standardized
    /// columns (views, outcome, covariates when present).
    pub eigenvalues: Vec<f64>,
    pub suggested_r: usize,
}

/// Suggest a latent rank from the spectrum of the pooled correlation matrix.
///
/// All columns (views, the outcome, covariates when present) are standardized,
/// concatenated, and the eigenvalues of their correlation matrix are scanned
/// for the first flat gap at or beyond M+1 components, M being the number of
/// non-outcome views. The suggestion is advisory; a fit accepts any rank.
pub fn scree_rank_suggestion(data: &MultiViewDataset) -> Result<ScreeResult> {
    data.validate()?;
    let scaler = Scaler::fit(data)?;
    let n = data.n_rows();
    let total_cols: usize = data.views.iter().map(|v| v.ncols()).sum::<usize>()
        + 1
        + data.covariates.as_ref().map_or(0, |w| w.ncols());

    let mut z = DMatrix::<f64>::zeros(n, total_cols);
    let mut at = 0usize;
    for (m, _) in data.views.iter().enumerate() {
        let t = scaler.transform_view(m, &data.views[m])?;
        z.view_mut((0, at), (n, t.ncols())).copy_from(&t);
        at += t.ncols();
    }
    let (ym, ysd) = scaler.outcome_stats;
    for i in 0..n {
        z[(i, at)] = (data.outcome[i] - ym) / ysd;
    }
    at += 1;
    if let Some(w) = &data.covariates {
        let t = scaler.transform_covariates(w)?;
        z.view_mut((0, at), (n, t.ncols())).copy_from(&t);
    }

    let corr = z.transpose() * &z / (n as f64 - 1.0);
    let mut eigenvalues: Vec<f64> = corr.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let floor = data.n_views() + 1;
    let lambda1 = eigenvalues[0];
    let mut suggested_r = floor;
    let mut found = false;
    for k in floor..eigenvalues.len() {
        // eigenvalues[k - 1] is the k-th largest.
        let drop = (eigenvalues[k - 1] - eigenvalues[k]) / lambda1;
        if drop < SCREE_PLATEAU_TOL {
            suggested_r = k;
            found = true;
            break;
        }
    }
    if !found {
        suggested_r = floor;
    }
    Ok(ScreeResult {
        eigenvalues,
        suggested_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn toy(views: Vec<DMatrix<f64>>, outcome: Vec<f64>) -> MultiViewDataset {
        let n = outcome.len();
        MultiViewDataset {
            view_names: (0..views.len()).map(|m| format!("view{}", m + 1)).collect(),
            feature_names: views
                .iter()
                .map(|v| (0..v.ncols()).map(|j| format!("x{j}")).collect())
                .collect(),
            views,
            covariates: None,
            covariate_names: vec![],
            outcome: DVector::from_vec(outcome),
            site: vec!["s".into(); n],
            family: (0..n).map(|i| format!("f{i}")).collect(),
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_sd() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 35.0, 4.0, 55.0]);
        let ds = toy(vec![x], vec![0.5, 1.5, -0.5, 2.5]);
        let scaler = Scaler::fit(&ds).unwrap();
        let t = scaler.transform(&ds).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = t.views[0].column(j).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
            assert_relative_eq!(var, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = DMatrix::from_row_slice(3, 1, &[2.0, 2.0, 2.0]);
        let ds = toy(vec![x], vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            Scaler::fit(&ds),
            Err(Error::ConstantColumn { column: 0, .. })
        ));
    }

    #[test]
    fn scaler_round_trips() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -3.0, 4.0, 0.5, -2.0, 7.0]);
        let ds = toy(vec![x.clone()], vec![1.0, 2.0, 3.0]);
        let scaler = Scaler::fit(&ds).unwrap();
        let t = scaler.transform_view(0, &x).unwrap();
        let back = scaler.inverse_transform_view(0, &t).unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn scree_eigenvalues_sum_to_column_count() {
        let mut rng = crate::rng::substream(11, crate::rng::Stream::Simulate, 0, 0);
        use rand::Rng;
        let n = 40;
        let x1 = DMatrix::from_fn(n, 5, |_, _| rng.random::<f64>() - 0.5);
        let x2 = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() - 0.5);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ds = toy(vec![x1, x2], y);
        let scree = scree_rank_suggestion(&ds).unwrap();
        let sum: f64 = scree.eigenvalues.iter().sum();
        assert_relative_eq!(sum, 9.0, epsilon = 1e-8);
        assert!(scree.eigenvalues.iter().all(|&l| l >= -1e-8));
    }

    #[test]
    fn near_identity_correlation_suggests_floor() {
        let mut rng = crate::rng::substream(3, crate::rng::Stream::Simulate, 1, 0);
        use rand_distr::{Distribution, StandardNormal};
        let n = 400;
        let x = DMatrix::from_fn(n, 6, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let y: Vec<f64> = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let ds = toy(vec![x], y);
        let scree = scree_rank_suggestion(&ds).unwrap();
        assert_eq!(scree.suggested_r, 2); // one view: floor is M + 1 = 2
    }

    #[test]
    fn rank_one_structure_suggests_floor_after_dominant_eigenvalue() {
        // One strong shared direction; remaining eigenvalues are a plateau of
        // near-equal noise, so the first flat gap at k >= M+1 fires right away.
        let mut rng = crate::rng::substream(5, crate::rng::Stream::Simulate, 2, 0);
        use rand_distr::{Distribution, StandardNormal};
        let n = 300;
        let u: Vec<f64> = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let x = DMatrix::from_fn(n, 8, |i, _| {
            u[i] + 0.05 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let y: Vec<f64> = (0..n)
            .map(|i| {
                u[i] + 0.05
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let ds = toy(vec![x], y);
        let scree = scree_rank_suggestion(&ds).unwrap();
        assert_eq!(scree.suggested_r, 2);
    }
}
