use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A `T × p` panel of returns with one identifier per column.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    values: DMatrix<f64>,
    asset_ids: Vec<String>,
}

impl ReturnPanel {
    pub fn new(values: DMatrix<f64>, asset_ids: Vec<String>) -> Result<Self> {
        if asset_ids.len() != values.ncols() {
            return Err(Error::dims(format!(
                "{} asset ids for {} columns",
                asset_ids.len(),
                values.ncols()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::invalid("panel has no assets"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (t, i) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::invalid(format!(
                "non-finite return at row {t}, column {i}"
            )));
        }
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate asset id {id:?}")));
            }
        }
        Ok(Self { values, asset_ids })
    }

    /// Panel with ids `a1..ap`.
    pub fn with_default_ids(values: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=values.ncols()).map(|i| format!("a{i}")).collect();
        Self::new(values, ids)
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    /// Rows `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Result<ReturnPanel> {
        if start >= end || end > self.n_obs() {
            return Err(Error::invalid(format!(
                "row range {start}..{end} outside panel of {} rows",
                self.n_obs()
            )));
        }
        Ok(ReturnPanel {
            values: self.values.rows(start, end - start).into_owned(),
            asset_ids: self.asset_ids.clone(),
        })
    }

    /// All rows outside `start..end`.
    pub fn rows_excluding(&self, start: usize, end: usize) -> Result<ReturnPanel> {
        let keep: Vec<usize> = (0..self.n_obs()).filter(|t| *t < start || *t >= end).collect();
        if keep.is_empty() {
            return Err(Error::invalid("excluding every row leaves an empty panel"));
        }
        let p = self.n_assets();
        let values = DMatrix::from_fn(keep.len(), p, |r, c| self.values[(keep[r], c)]);
        Ok(ReturnPanel {
            values,
            asset_ids: self.asset_ids.clone(),
        })
    }

    /// Columns in `idx` order.
    pub fn columns(&self, idx: &[usize]) -> ReturnPanel {
        let values = DMatrix::from_fn(self.n_obs(), idx.len(), |r, c| self.values[(r, idx[c])]);
        let asset_ids = idx.iter().map(|&i| self.asset_ids[i].clone()).collect();
        ReturnPanel { values, asset_ids }
    }
}

/// Assignment of each of `p` assets to one of `K` groups, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupLabels {
    assignments: Vec<usize>,
    k: usize,
}

impl GroupLabels {
    /// Validates that every label is below `k` and every group is non-empty.
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("number of groups must be at least 1"));
        }
        let mut counts = vec![0usize; k];
        for (i, &g) in assignments.iter().enumerate() {
            if g >= k {
                return Err(Error::invalid(format!(
                    "asset {i} has label {g} outside 0..{k}"
                )));
            }
            counts[g] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("group {g} is empty")));
        }
        Ok(Self { assignments, k })
    }

    /// Relabels arbitrary integer labels to `0..K` by order of first appearance.
    pub fn from_raw<T: Ord + Clone>(raw: &[T]) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut next = 0;
        let mut assignments = Vec::with_capacity(raw.len());
        for r in raw {
            let id = *map.entry(r.clone()).or_insert_with(|| {
                next += 1;
                next - 1
            });
            assignments.push(id);
        }
        Self::new(assignments, next)
    }

    /// Contiguous blocks: assets `0..size` in group 0 and so on.
    pub fn contiguous(num_groups: usize, group_size: usize) -> Result<Self> {
        let assignments = (0..num_groups * group_size).map(|i| i / group_size).collect();
        Self::new(assignments, num_groups)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.assignments[i]
    }

    /// Member indices of each group, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &g) in self.assignments.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &g in &self.assignments {
            out[g] += 1;
        }
        out
    }

    /// Same partition with labels renumbered by first appearance.
    pub fn canonical(&self) -> GroupLabels {
        GroupLabels::from_raw(&self.assignments).expect("relabeling a valid labeling")
    }

    /// Labels of assets in `idx` order.
    pub fn permuted(&self, idx: &[usize]) -> GroupLabels {
        let raw: Vec<usize> = idx.iter().map(|&i| self.assignments[i]).collect();
        GroupLabels::from_raw(&raw).expect("subset of a valid labeling")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_rejects_bad_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::INFINITY, 0.0, 0.0]);
        assert!(ReturnPanel::with_default_ids(m).is_err());
        let m = DMatrix::zeros(2, 2);
        assert!(ReturnPanel::new(m, vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn row_slicing() {
        let m = DMatrix::from_fn(5, 2, |r, c| (r * 10 + c) as f64);
        let p = ReturnPanel::with_default_ids(m).unwrap();
        assert_eq!(p.rows(1, 3).unwrap().row(0), vec![10.0, 11.0]);
        let ex = p.rows_excluding(1, 3).unwrap();
        assert_eq!(ex.n_obs(), 3);
        assert_eq!(ex.row(1), vec![30.0, 31.0]);
    }

    #[test]
    fn labels_validate_and_canonicalize() {
        assert!(GroupLabels::new(vec![0, 2], 3).is_err());
        assert!(GroupLabels::new(vec![0, 3], 3).is_err());
        let l = GroupLabels::from_raw(&[5, 5, 2, 9, 2]).unwrap();
        assert_eq!(l.assignments(), &[0, 0, 1, 2, 1]);
        assert_eq!(l.members(), vec![vec![0, 1], vec![2, 4], vec![3]]);
        let c = GroupLabels::contiguous(3, 2).unwrap();
        assert_eq!(c.assignments(), &[0, 0, 1, 1, 2, 2]);
    }
}
