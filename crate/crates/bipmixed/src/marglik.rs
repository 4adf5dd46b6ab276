//! Marginal likelihood of one feature column with its loadings integrated
//! out.
//!
//! With the loading prior a ~ N(0, tau2 * feat_var * I) on the active rows
//! and x = U_A a + e, e ~ N(0, feat_var * I), the column is marginally
//! N(0, feat_var * (tau2 * U_A U_A^T + I_n)). Both the determinant and the
//! quadratic form are reduced to the k-dimensional active subspace, so one
//! evaluation costs O(n k + k^3) instead of O(n^3).

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Log density of `x` under the feature-marginal model. `active` flags which
/// latent components load on this feature.
pub fn marginal_loglik_feature(
    x: &DVector<f64>,
    u: &DMatrix<f64>,
    active: &[bool],
    feat_var: f64,
    tau2: f64,
) -> Result<f64> {
    let n = u.nrows();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "feature column has {} entries, latent matrix has {} rows",
            x.len(),
            n
        )));
    }
    if active.len() != u.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "active flags cover {} components, latent matrix has {}",
            active.len(),
            u.ncols()
        )));
    }
    if !(feat_var > 0.0) || !(tau2 > 0.0) {
        return Err(Error::Config(format!(
            "feat_var and tau2 must be positive, got {feat_var} and {tau2}"
        )));
    }

    let comps: Vec<usize> = (0..active.len()).filter(|&l| active[l]).collect();
    let xtx = x.dot(x);
    let nf = n as f64;
    if comps.is_empty() {
        return Ok(-0.5 * nf * (LN_2PI + feat_var.ln()) - 0.5 * xtx / feat_var);
    }

    let k = comps.len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut v = DVector::<f64>::zeros(k);
    for (a, &la) in comps.iter().enumerate() {
        let ca = u.column(la);
        v[a] = ca.dot(x);
        for (b, &lb) in comps.iter().enumerate().skip(a) {
            let g = ca.dot(&u.column(lb));
            m[(a, b)] = g;
            m[(b, a)] = g;
        }
        m[(a, a)] += 1.0 / tau2;
    }
    let chol = Cholesky::new(m)
        .ok_or_else(|| Error::SingularSystem("active-component Gram matrix".into()))?;
    let logdet = k as f64 * tau2.ln() + chol_logdet(&chol);
    let solved = chol.solve(&v);
    let quad = (xtx - v.dot(&solved)) / feat_var;
    Ok(-0.5 * nf * (LN_2PI + feat_var.ln()) - 0.5 * logdet - 0.5 * quad)
}

fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// Per-sweep evaluation context for one view: Gram and cross products of the
/// current latent matrix, plus factorizations keyed by active-component
/// subsets so features sharing a subset reuse one Cholesky. Rebuilt whenever
/// the latent matrix changes.
pub struct MarglikWorkspace {
    gram: DMatrix<f64>,
    utx: DMatrix<f64>,
    xtx: Vec<f64>,
    n: usize,
    tau2: f64,
    cache: HashMap<u64, SubsetFactor>,
}

struct SubsetFactor {
    comps: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

/// Active components of feature j encoded as a bitmask over l = 0..r.
pub fn active_mask(active: impl Iterator<Item = bool>) -> u64 {
    let mut mask = 0u64;
    for (l, a) in active.enumerate() {
        debug_assert!(l < 64);
        if a {
            mask |= 1 << l;
        }
    }
    mask
}

impl MarglikWorkspace {
    pub fn new(u: &DMatrix<f64>, x: &DMatrix<f64>, tau2: f64) -> Self {
        assert!(u.ncols() <= 64, "latent rank beyond mask width");
        let gram = u.transpose() * u;
        let utx = u.transpose() * x;
        let xtx = (0..x.ncols())
            .map(|j| x.column(j).dot(&x.column(j)))
            .collect();
        MarglikWorkspace {
            gram,
            utx,
            xtx,
            n: u.nrows(),
            tau2,
            cache: HashMap::new(),
        }
    }

    fn ensure_factor(&mut self, mask: u64) {
        if self.cache.contains_key(&mask) {
            return;
        }
        let comps: Vec<usize> = (0..self.gram.nrows())
            .filter(|l| mask >> l & 1 == 1)
            .collect();
        let k = comps.len();
        let mut m = DMatrix::<f64>::zeros(k, k);
        for (a, &la) in comps.iter().enumerate() {
            for (b, &lb) in comps.iter().enumerate() {
                m[(a, b)] = self.gram[(la, lb)];
            }
            m[(a, a)] += 1.0 / self.tau2;
        }
        let chol = Cholesky::new(m).expect("gram plus ridge is positive definite");
        let logdet = k as f64 * self.tau2.ln() + chol_logdet(&chol);
        self.cache.insert(
            mask,
            SubsetFactor {
                comps,
                chol,
                logdet,
            },
        );
    }

    /// Marginal log likelihood of feature `j` under active set `mask`.
    pub fn loglik(&mut self, j: usize, mask: u64, feat_var: f64) -> f64 {
        let nf = self.n as f64;
        let base = -0.5 * nf * (LN_2PI + feat_var.ln());
        if mask == 0 {
            return base - 0.5 * self.xtx[j] / feat_var;
        }
        self.ensure_factor(mask);
        let factor = &self.cache[&mask];
        let v = DVector::from_iterator(
            factor.comps.len(),
            factor.comps.iter().map(|&l| self.utx[(l, j)]),
        );
        let solved = factor.chol.solve(&v);
        let quad = (self.xtx[j] - v.dot(&solved)) / feat_var;
        base - 0.5 * factor.logdet - 0.5 * quad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn standard_normal(rng: &mut impl Rng) -> f64 {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    }

    /// Dense-route oracle: log N(x; 0, feat_var * (tau2 U_A U_A^T + I)).
    fn dense_logpdf(
        x: &DVector<f64>,
        u: &DMatrix<f64>,
        active: &[bool],
        feat_var: f64,
        tau2: f64,
    ) -> f64 {
        let n = u.nrows();
        let mut sigma = DMatrix::<f64>::identity(n, n);
        for l in 0..u.ncols() {
            if active[l] {
                let c = u.column(l);
                for i in 0..n {
                    for j in 0..n {
                        sigma[(i, j)] += tau2 * c[i] * c[j];
                    }
                }
            }
        }
        sigma *= feat_var;
        let chol = Cholesky::new(sigma).unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let solved = chol.solve(x);
        -0.5 * (n as f64) * LN_2PI - 0.5 * logdet - 0.5 * x.dot(&solved)
    }

    #[test]
    fn single_component_zero_data_has_closed_form() {
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let x = DVector::zeros(3);
        let got = marginal_loglik_feature(&x, &u, &[true], 1.0, 1.0).unwrap();
        let expected = -1.5 * LN_2PI - 0.5 * 2.0f64.ln();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn no_active_components_reduces_to_iid_normal() {
        let mut rng = crate::rng::substream(1, crate::rng::Stream::Selection, 0, 0);
        let n = 11;
        let u = DMatrix::from_fn(n, 3, |_, _| standard_normal(&mut rng));
        let x = DVector::from_fn(n, |_, _| 2.0 * standard_normal(&mut rng));
        let fv = 1.7;
        let got = marginal_loglik_feature(&x, &u, &[false, false, false], fv, 1.0).unwrap();
        let expected: f64 = x
            .iter()
            .map(|&v| -0.5 * (LN_2PI + fv.ln()) - 0.5 * v * v / fv)
            .sum();
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn low_rank_route_matches_dense_covariance() {
        let mut rng = crate::rng::substream(2, crate::rng::Stream::Selection, 1, 0);
        for trial in 0..20 {
            let n = 4 + trial % 5;
            let r = 1 + trial % 3;
            let u = DMatrix::from_fn(n, r, |_, _| standard_normal(&mut rng));
            let x = DVector::from_fn(n, |_, _| standard_normal(&mut rng) * 1.5);
            let active: Vec<bool> = (0..r).map(|_| rng.random::<bool>()).collect();
            let fv = 0.5 + rng.random::<f64>();
            let tau2 = 0.5 + rng.random::<f64>();
            let fast = marginal_loglik_feature(&x, &u, &active, fv, tau2).unwrap();
            let dense = dense_logpdf(&x, &u, &active, fv, tau2);
            assert_relative_eq!(fast, dense, epsilon = 1e-9);
        }
    }

    #[test]
    fn workspace_matches_standalone_and_reuses_cache() {
        let mut rng = crate::rng::substream(3, crate::rng::Stream::Selection, 2, 0);
        let n = 9;
        let r = 4;
        let p = 6;
        let u = DMatrix::from_fn(n, r, |_, _| standard_normal(&mut rng));
        let x = DMatrix::from_fn(n, p, |_, _| standard_normal(&mut rng));
        let mut ws = MarglikWorkspace::new(&u, &x, 1.3);
        for j in 0..p {
            for mask in [0u64, 0b1, 0b1010, 0b1111] {
                let active: Vec<bool> = (0..r).map(|l| mask >> l & 1 == 1).collect();
                let col = DVector::from_column_slice(x.column(j).as_slice());
                let slow = marginal_loglik_feature(&col, &u, &active, 0.9, 1.3).unwrap();
                let fast = ws.loglik(j, mask, 0.9);
                assert_relative_eq!(fast, slow, epsilon = 1e-9);
            }
        }
        assert_eq!(ws.cache.len(), 3); // masks beyond zero share factors across features
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let u = DMatrix::zeros(4, 2);
        let x = DVector::zeros(3);
        assert!(matches!(
            marginal_loglik_feature(&x, &u, &[true, false], 1.0, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        let x = DVector::zeros(4);
        assert!(matches!(
            marginal_loglik_feature(&x, &u, &[true], 1.0, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
