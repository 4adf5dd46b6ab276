//! Parameter state of one MCMC chain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyIndex;
use crate::hyper::Hyperparameters;

/// Selection and loading state of one non-outcome view.
#[derive(Clone, Debug)]
pub struct ViewState {
    /// gamma_l: whether component l is active anywhere in this view.
    pub comp_active: Vec<bool>,
    /// eta_lj, row-major: `feat_active[l * p + j]`. Forced to false wherever
    /// the component is inactive.
    pub feat_active: Vec<bool>,
    /// r-by-p loadings; exact zeros off the active pattern.
    pub loadings: DMatrix<f64>,
    /// Per-feature noise variances.
    pub feat_var: DVector<f64>,
}

impl ViewState {
    pub fn p(&self) -> usize {
        self.feat_var.len()
    }

    pub fn is_active(&self, l: usize, j: usize) -> bool {
        self.feat_active[l * self.p() + j]
    }
}

/// Outcome-side parameters: selection over components, factor coefficients,
/// fixed effects, and the nested random-effect blocks.
#[derive(Clone, Debug)]
pub struct OutcomeState {
    /// gamma^(0); for the single outcome column eta equals gamma.
    pub comp_active: Vec<bool>,
    /// alpha, the outcome loadings.
    pub loadings: DVector<f64>,
    /// beta; empty when covariates are absent or disabled.
    pub fixed_effects: DVector<f64>,
    /// theta_{f:s}, one entry per family index.
    pub family_effects: DVector<f64>,
    /// xi_s, one entry per site index.
    pub site_effects: DVector<f64>,
    /// mu.
    pub grand_mean: f64,
    /// sigma^2.
    pub residual_var: f64,
    /// sigma_xi^2.
    pub site_var: f64,
    /// sigma_theta_s^2, one entry per site index.
    pub family_var: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct ChainState {
    /// U, n-by-r.
    pub latent: DMatrix<f64>,
    pub views: Vec<ViewState>,
    pub outcome: OutcomeState,
}

/// A frozen copy of the selection indicators across all views; the unit of
/// model identity for the registry and model averaging.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Per non-outcome view: (comp_active, feat_active row-major).
    pub views: Vec<(Vec<bool>, Vec<bool>)>,
    /// Outcome-view comp_active.
    pub outcome: Vec<bool>,
}

impl SelectionConfig {
    /// The full indicator bitstring packed into words; used as the map key so
    /// model identity never suffers hash collisions.
    pub fn packed_bits(&self) -> Vec<u64> {
        let mut words = Vec::new();
        let mut acc = 0u64;
        let mut used = 0u32;
        let push_bit = |b: bool, words: &mut Vec<u64>, acc: &mut u64, used: &mut u32| {
            if b {
                *acc |= 1 << *used;
            }
            *used += 1;
            if *used == 64 {
                words.push(*acc);
                *acc = 0;
                *used = 0;
            }
        };
        for (comp, feat) in &self.views {
            for &b in comp {
                push_bit(b, &mut words, &mut acc, &mut used);
            }
            for &b in feat {
                push_bit(b, &mut words, &mut acc, &mut used);
            }
        }
        for &b in &self.outcome {
            push_bit(b, &mut words, &mut acc, &mut used);
        }
        if used > 0 {
            words.push(acc);
        }
        words
    }

    /// Rebuild a configuration from its packed bitstring given the chain
    /// dimensions: the rank and each non-outcome view's feature count.
    pub fn from_packed(words: &[u64], r: usize, view_ps: &[usize]) -> SelectionConfig {
        struct BitCursor<'a> {
            words: &'a [u64],
            at: usize,
        }
        impl BitCursor<'_> {
            fn next(&mut self) -> bool {
                let b = self.words[self.at / 64] >> (self.at % 64) & 1 == 1;
                self.at += 1;
                b
            }
        }
        let mut cur = BitCursor { words, at: 0 };
        let views = view_ps
            .iter()
            .map(|&p| {
                let comp: Vec<bool> = (0..r).map(|_| cur.next()).collect();
                let feat: Vec<bool> = (0..r * p).map(|_| cur.next()).collect();
                (comp, feat)
            })
            .collect();
        let outcome = (0..r).map(|_| cur.next()).collect();
        SelectionConfig { views, outcome }
    }

    /// FNV-1a fold of the packed bitstring; the configuration id reported in
    /// summaries.
    pub fn stable_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for w in self.packed_bits() {
            for byte in w.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

impl ChainState {
    /// Draw the initial state: unit feature variances, site variance 1,
    /// family variances 0.5, fixed effects from least squares, the grand mean
    /// from the residual average, and everything else from its prior.
    pub fn init(
        views_p: &[usize],
        covariates: Option<&DMatrix<f64>>,
        outcome: &DVector<f64>,
        hierarchy: &HierarchyIndex,
        hyper: &Hyperparameters,
        rng: &mut impl Rng,
    ) -> Result<ChainState> {
        let n = outcome.len();
        let r = hyper.r;

        let fixed_effects = match covariates {
            Some(w) if hyper.covariates_in_outcome && w.ncols() > 0 => {
                let wtw = w.transpose() * w;
                let chol = nalgebra::Cholesky::new(wtw).ok_or_else(|| {
                    Error::SingularSystem("covariate Gram matrix in initialization".into())
                })?;
                chol.solve(&(w.transpose() * outcome))
            }
            _ => DVector::zeros(0),
        };
        let mut resid = outcome.clone();
        if fixed_effects.len() > 0 {
            resid -= covariates.unwrap() * &fixed_effects;
        }
        let grand_mean = resid.sum() / n as f64;

        let site_var: f64 = 1.0;
        let family_var: DVector<f64> = DVector::from_element(hierarchy.n_sites(), 0.5);
        let residual_var = 1.0;

        let mut site_effects = DVector::from_element(hierarchy.n_sites(), grand_mean);
        let mut family_effects = DVector::zeros(hierarchy.n_families());
        if hyper.random_effects_enabled {
            for s in 0..hierarchy.n_sites() {
                site_effects[s] = grand_mean + site_var.sqrt() * standard_normal(rng);
            }
            for f in 0..hierarchy.n_families() {
                let s = hierarchy.site_of_family(f);
                family_effects[f] = site_effects[s] + family_var[s].sqrt() * standard_normal(rng);
            }
        }

        let latent = DMatrix::from_fn(n, r, |_, _| standard_normal(rng));

        let mut views = Vec::with_capacity(views_p.len());
        for &p in views_p {
            let comp_active: Vec<bool> = (0..r)
                .map(|_| rng.random::<f64>() < hyper.q_gamma)
                .collect();
            let mut feat_active = vec![false; r * p];
            let mut loadings = DMatrix::<f64>::zeros(r, p);
            for l in 0..r {
                if comp_active[l] {
                    for j in 0..p {
                        if rng.random::<f64>() < hyper.q_eta {
                            feat_active[l * p + j] = true;
                            loadings[(l, j)] = hyper.tau2.sqrt() * standard_normal(rng);
                        }
                    }
                }
            }
            views.push(ViewState {
                comp_active,
                feat_active,
                loadings,
                feat_var: DVector::from_element(p, 1.0),
            });
        }

        let out_active: Vec<bool> = (0..r)
            .map(|_| rng.random::<f64>() < hyper.q_gamma)
            .collect();
        let mut alpha = DVector::zeros(r);
        for l in 0..r {
            if out_active[l] {
                alpha[l] = (hyper.tau2 * residual_var).sqrt() * standard_normal(rng);
            }
        }

        Ok(ChainState {
            latent,
            views,
            outcome: OutcomeState {
                comp_active: out_active,
                loadings: alpha,
                fixed_effects,
                family_effects,
                site_effects,
                grand_mean,
                residual_var,
                site_var,
                family_var,
            },
        })
    }

    pub fn n_rows(&self) -> usize {
        self.latent.nrows()
    }

    pub fn rank(&self) -> usize {
        self.latent.ncols()
    }

    pub fn selection_snapshot(&self) -> SelectionConfig {
        SelectionConfig {
            views: self
                .views
                .iter()
                .map(|v| (v.comp_active.clone(), v.feat_active.clone()))
                .collect(),
            outcome: self.outcome.comp_active.clone(),
        }
    }

    /// Spike consistency: inactive selection implies exact-zero loadings, and
    /// inactive components imply fully inactive rows.
    pub fn check_invariants(&self) -> Result<()> {
        for (m, v) in self.views.iter().enumerate() {
            let p = v.p();
            for l in 0..self.rank() {
                for j in 0..p {
                    let active = v.feat_active[l * p + j];
                    if active && !v.comp_active[l] {
                        return Err(Error::Config(format!(
                            "view {m}: feature ({l}, {j}) active in inactive component"
                        )));
                    }
                    if !active && v.loadings[(l, j)] != 0.0 {
                        return Err(Error::Config(format!(
                            "view {m}: nonzero loading at inactive ({l}, {j})"
                        )));
                    }
                }
            }
        }
        for l in 0..self.rank() {
            if !self.outcome.comp_active[l] && self.outcome.loadings[l] != 0.0 {
                return Err(Error::Config(format!(
                    "outcome: nonzero loading at inactive component {l}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_hierarchy;
    use crate::rng::{substream, Stream};

    fn tiny_hierarchy(n: usize) -> HierarchyIndex {
        let site: Vec<String> = (0..n).map(|i| format!("s{}", (i / 2) % 2)).collect();
        let family: Vec<String> = (0..n).map(|i| format!("f{}", i / 2)).collect();
        build_hierarchy(&site, &family).unwrap()
    }

    #[test]
    fn init_respects_spike_invariants() {
        let hyper = Hyperparameters::default();
        let n = 12;
        let outcome = DVector::from_fn(n, |i, _| i as f64 * 0.1);
        let hierarchy = tiny_hierarchy(n);
        let mut rng = substream(9, Stream::Init, 0, 0);
        let state =
            ChainState::init(&[5, 3], None, &outcome, &hierarchy, &hyper, &mut rng).unwrap();
        state.check_invariants().unwrap();
        assert_eq!(state.latent.shape(), (n, hyper.r));
        assert_eq!(state.views.len(), 2);
        assert_eq!(state.outcome.family_effects.len(), hierarchy.n_families());
        assert_eq!(state.outcome.residual_var, 1.0);
        assert_eq!(state.outcome.site_var, 1.0);
        assert!(state.outcome.family_var.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bip_mode_init_pins_random_effects() {
        let mut hyper = Hyperparameters::default();
        hyper.random_effects_enabled = false;
        let n = 8;
        let outcome = DVector::from_element(n, 2.5);
        let hierarchy = tiny_hierarchy(n);
        let mut rng = substream(9, Stream::Init, 1, 0);
        let state = ChainState::init(&[4], None, &outcome, &hierarchy, &hyper, &mut rng).unwrap();
        assert!(state.outcome.family_effects.iter().all(|&t| t == 0.0));
        assert!(state
            .outcome
            .site_effects
            .iter()
            .all(|&x| x == state.outcome.grand_mean));
    }

    #[test]
    fn packed_bits_unpack_round_trip() {
        let hyper = Hyperparameters {
            r: 3,
            q_eta: 0.4,
            ..Hyperparameters::default()
        };
        let n = 10;
        let outcome = DVector::from_fn(n, |i, _| i as f64);
        let hierarchy = tiny_hierarchy(n);
        for seed in 0..20 {
            let mut rng = substream(seed, Stream::Init, 0, 0);
            let state =
                ChainState::init(&[7, 11], None, &outcome, &hierarchy, &hyper, &mut rng).unwrap();
            let config = state.selection_snapshot();
            let words = config.packed_bits();
            let back = SelectionConfig::from_packed(&words, 3, &[7, 11]);
            assert_eq!(config, back);
        }
    }

    #[test]
    fn packed_bits_round_trip_distinct_configs() {
        let a = SelectionConfig {
            views: vec![(vec![true, false], vec![true, false, false, false])],
            outcome: vec![true, false],
        };
        let mut b = a.clone();
        b.outcome = vec![false, true];
        assert_ne!(a.packed_bits(), b.packed_bits());
        assert_ne!(a.stable_hash(), b.stable_hash());
        assert_eq!(a.packed_bits(), a.clone().packed_bits());
    }
}
