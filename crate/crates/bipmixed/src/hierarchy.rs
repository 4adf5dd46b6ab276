//! Two-level nesting of subjects: families within sites.
//!
//! Sites and families are indexed in first-appearance order so that every
//! derived quantity is deterministic for a given input ordering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HierarchyIndex {
    site_ids: Vec<String>,
    family_ids: Vec<String>,
    /// Site index of each family.
    site_of_family: Vec<usize>,
    /// Family indices grouped by site.
    families_by_site: Vec<Vec<usize>>,
    /// Row indices grouped by family.
    rows_by_family: Vec<Vec<usize>>,
    family_of_row: Vec<usize>,
    site_of_row: Vec<usize>,
    #[serde(skip)]
    site_lookup: HashMap<String, usize>,
    #[serde(skip)]
    family_lookup: HashMap<String, usize>,
}

/// Index sites and families from per-row labels.
pub fn build_hierarchy(site: &[String], family: &[String]) -> Result<HierarchyIndex> {
    if site.len() != family.len() {
        return Err(Error::LengthMismatch {
            left: site.len(),
            right: family.len(),
            context: "site vs family labels".into(),
        });
    }
    if site.is_empty() {
        return Err(Error::EmptyInput("no rows in hierarchy labels".into()));
    }

    let mut idx = HierarchyIndex {
        site_ids: Vec::new(),
        family_ids: Vec::new(),
        site_of_family: Vec::new(),
        families_by_site: Vec::new(),
        rows_by_family: Vec::new(),
        family_of_row: Vec::with_capacity(site.len()),
        site_of_row: Vec::with_capacity(site.len()),
        site_lookup: HashMap::new(),
        family_lookup: HashMap::new(),
    };

    for (row, (s, f)) in site.iter().zip(family).enumerate() {
        let si = match idx.site_lookup.get(s) {
            Some(&si) => si,
            None => {
                let si = idx.site_ids.len();
                idx.site_ids.push(s.clone());
                idx.families_by_site.push(Vec::new());
                idx.site_lookup.insert(s.clone(), si);
                si
            }
        };
        let fi = match idx.family_lookup.get(f) {
            Some(&fi) => {
                if idx.site_of_family[fi] != si {
                    return Err(Error::CrossSiteFamily {
                        family: f.clone(),
                        first: idx.site_ids[idx.site_of_family[fi]].clone(),
                        second: s.clone(),
                    });
                }
                fi
            }
            None => {
                let fi = idx.family_ids.len();
                idx.family_ids.push(f.clone());
                idx.site_of_family.push(si);
                idx.families_by_site[si].push(fi);
                idx.rows_by_family.push(Vec::new());
                idx.family_lookup.insert(f.clone(), fi);
                fi
            }
        };
        idx.rows_by_family[fi].push(row);
        idx.family_of_row.push(fi);
        idx.site_of_row.push(si);
    }
    Ok(idx)
}

impl HierarchyIndex {
    pub fn n_rows(&self) -> usize {
        self.family_of_row.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn n_families(&self) -> usize {
        self.family_ids.len()
    }

    /// Number of families in site `s` (n_s).
    pub fn families_in_site(&self, s: usize) -> &[usize] {
        &self.families_by_site[s]
    }

    /// Rows belonging to family `f` (n_fs rows).
    pub fn family_rows(&self, f: usize) -> &[usize] {
        &self.rows_by_family[f]
    }

    pub fn site_of_family(&self, f: usize) -> usize {
        self.site_of_family[f]
    }

    pub fn family_of_row(&self, row: usize) -> usize {
        self.family_of_row[row]
    }

    pub fn site_of_row(&self, row: usize) -> usize {
        self.site_of_row[row]
    }

    pub fn site_id(&self, s: usize) -> &str {
        &self.site_ids[s]
    }

    pub fn family_id(&self, f: usize) -> &str {
        &self.family_ids[f]
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.site_lookup.get(id).copied()
    }

    pub fn family_index(&self, id: &str) -> Option<usize> {
        self.family_lookup.get(id).copied()
    }

    /// Rebuild the label lookup tables; needed after deserialization because
    /// they are derived state and not stored.
    pub fn rebuild_lookups(&mut self) {
        self.site_lookup = self
            .site_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        self.family_lookup = self
            .family_ids
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn counts_sites_families_and_rows() {
        let idx = build_hierarchy(
            &labels(&["A", "A", "B", "B"]),
            &labels(&["f1", "f1", "f2", "f3"]),
        )
        .unwrap();
        assert_eq!(idx.n_sites(), 2);
        assert_eq!(idx.n_families(), 3);
        assert_eq!(idx.families_in_site(0), &[0]);
        assert_eq!(idx.families_in_site(1), &[1, 2]);
        assert_eq!(idx.family_rows(0), &[0, 1]);
        assert_eq!(idx.family_rows(1), &[2]);
        assert_eq!(idx.family_rows(2), &[3]);
        assert_eq!(idx.site_of_family(2), 1);
    }

    #[test]
    fn rejects_family_spanning_sites() {
        let err = build_hierarchy(&labels(&["A", "B"]), &labels(&["f1", "f1"])).unwrap_err();
        assert!(matches!(err, Error::CrossSiteFamily { .. }));
    }

    #[test]
    fn rejects_mismatched_label_lengths() {
        let err = build_hierarchy(&labels(&["A"]), &labels(&["f1", "f2"])).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn rejects_empty_labels() {
        let err = build_hierarchy(&[], &[]).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn rows_partition_exactly_once() {
        let site = labels(&["s1", "s2", "s1", "s2", "s1", "s1"]);
        let family = labels(&["a", "b", "a", "c", "d", "d"]);
        let idx = build_hierarchy(&site, &family).unwrap();
        let mut seen = vec![0usize; site.len()];
        for f in 0..idx.n_families() {
            for &row in idx.family_rows(f) {
                seen[row] += 1;
                assert_eq!(idx.family_of_row(row), f);
                assert_eq!(idx.site_of_row(row), idx.site_of_family(f));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}
