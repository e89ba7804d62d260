//! Exact K-nearest-neighbor tables per view and the policy deciding whether
//! they are computed from input features or from latent features.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Feature space a neighbor table was computed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnnSpace {
    InputFeatures,
    LatentFeatures,
}

/// K nearest neighbors of every indexed instance of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewNeighbors {
    k: usize,
    /// `lists[i]` is `None` for instances outside the indexed set.
    lists: Vec<Option<Vec<(usize, f64)>>>,
}

impl ViewNeighbors {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor ids of instance `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> Option<Vec<usize>> {
        self.lists
            .get(i)?
            .as_ref()
            .map(|l| l.iter().map(|&(j, _)| j).collect())
    }

    /// Neighbor ids and Euclidean distances of instance `i`, nearest first.
    pub fn neighbors_with_distance(&self, i: usize) -> Option<&[(usize, f64)]> {
        self.lists.get(i)?.as_deref()
    }

    /// The `rank`-th neighbor (0-based) of instance `i`.
    pub fn nth(&self, i: usize, rank: usize) -> Option<usize> {
        self.lists.get(i)?.as_ref()?.get(rank).map(|&(j, _)| j)
    }

    pub fn contains(&self, i: usize) -> bool {
        matches!(self.lists.get(i), Some(Some(_)))
    }

    pub fn num_instances(&self) -> usize {
        self.lists.len()
    }

    /// Instance ids that have a neighbor list.
    pub fn indexed(&self) -> impl Iterator<Item = usize> + '_ {
        self.lists
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_ref().map(|_| i))
    }
}

/// Exact Euclidean K-NN among the `present` rows of `points`.
///
/// Rows not listed in `present` are neither queried nor returned. Lists are
/// sorted by distance with ties going to the lower instance id, and never
/// contain the query itself.
pub fn build_knn(points: &Matrix, present: &[usize], k: usize) -> Result<ViewNeighbors> {
    if present.len() <= k {
        return Err(Error::config(format!(
            "K = {k} needs more than {k} indexed instances, got {}",
            present.len()
        )));
    }
    if let Some(&bad) = present.iter().find(|&&i| i >= points.rows()) {
        return Err(Error::contract(format!(
            "instance {bad} out of range for {} points",
            points.rows()
        )));
    }
    let mut sorted_present = present.to_vec();
    sorted_present.sort_unstable();
    sorted_present.dedup();
    if sorted_present.len() <= k {
        return Err(Error::config(format!(
            "K = {k} needs more than {k} distinct indexed instances"
        )));
    }

    // |x - y|² = |x|² + |y|² - 2 x·y over all indexed pairs at once
    let subset = points.select_rows(&sorted_present);
    let gram = subset.matmul_t(&subset)?;
    let norms: Vec<f64> = (0..subset.rows()).map(|r| gram.get(r, r)).collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut cands: Vec<(f64, usize)> = Vec::with_capacity(sorted_present.len());
    let mut found = Vec::with_capacity(sorted_present.len());
    for (r, &i) in sorted_present.iter().enumerate() {
        cands.clear();
        let row = gram.row(r);
        cands.extend(
            sorted_present
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != r)
                .map(|(c, &j)| ((norms[r] + norms[c] - 2.0 * row[c]).max(0.0), j)),
        );
        cands.select_nth_unstable_by(k - 1, by_distance);
        cands.truncate(k);
        cands.sort_unstable_by(by_distance);
        found.push((i, cands.iter().map(|&(d, j)| (j, d.sqrt())).collect::<Vec<_>>()));
    }

    let mut lists = vec![None; points.rows()];
    for (i, list) in found {
        lists[i] = Some(list);
    }
    Ok(ViewNeighbors { k, lists })
}

/// Neighbor tables for every view, tagged with how and when they were built.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub views: Vec<ViewNeighbors>,
    pub space: KnnSpace,
    pub built_epoch: usize,
}

impl NeighborIndex {
    /// Writes `view,instance,rank,neighbor,distance` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("view,instance,rank,neighbor,distance\n");
        for (v, table) in self.views.iter().enumerate() {
            for i in table.indexed() {
                let list = table.neighbors_with_distance(i).unwrap_or_default();
                for (rank, &(j, d)) in list.iter().enumerate() {
                    out.push_str(&format!("{v},{i},{},{j},{d}\n", rank + 1));
                }
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// When neighbor tables come from input features and how often latent
/// tables are recomputed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefreshPolicy {
    pub switch_epoch: usize,
    pub refresh_interval: usize,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy {
            switch_epoch: 50,
            refresh_interval: 5,
        }
    }
}

impl RefreshPolicy {
    pub fn space_at(&self, epoch: usize) -> KnnSpace {
        if epoch < self.switch_epoch {
            KnnSpace::InputFeatures
        } else {
            KnnSpace::LatentFeatures
        }
    }

    /// Whether the tables must be rebuilt at `epoch` given the last build.
    pub fn needs_rebuild(&self, epoch: usize, last: Option<(KnnSpace, usize)>) -> bool {
        let space = self.space_at(epoch);
        match last {
            None => true,
            Some((last_space, _)) if last_space != space => true,
            Some((KnnSpace::InputFeatures, _)) => false,
            Some((KnnSpace::LatentFeatures, built)) => {
                epoch >= built + self.refresh_interval.max(1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn points_1d(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    /// Full O(n²) distance sort.
    fn brute_force(points: &Matrix, present: &[usize], k: usize) -> Vec<Option<Vec<usize>>> {
        let mut out = vec![None; points.rows()];
        for &i in present {
            let mut all: Vec<(f64, usize)> = present
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let d: f64 = points
                        .row(i)
                        .iter()
                        .zip(points.row(j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            out[i] = Some(all.into_iter().take(k).map(|(_, j)| j).collect());
        }
        out
    }

    #[test]
    fn hand_distance_table() {
        let nn = build_knn(&points_1d(&[0.0, 1.0, 10.0]), &[0, 1, 2], 1).unwrap();
        assert_eq!(nn.neighbors(0), Some(vec![1]));
        assert_eq!(nn.neighbors(1), Some(vec![0]));
        assert_eq!(nn.neighbors(2), Some(vec![1]));
    }

    #[test]
    fn duplicate_points_tie_to_lower_index() {
        let nn = build_knn(&points_1d(&[0.0, 5.0, 5.0, 5.0]), &[0, 1, 2, 3], 1).unwrap();
        assert_eq!(nn.neighbors(3), Some(vec![1]));
        assert_eq!(nn.neighbors(1), Some(vec![2]));
    }

    #[test]
    fn collinear_interior_points_pick_adjacent() {
        let nn = build_knn(&points_1d(&[0.0, 1.0, 2.0, 3.0]), &[0, 1, 2, 3], 2).unwrap();
        assert_eq!(nn.neighbors(1), Some(vec![0, 2]));
        assert_eq!(nn.neighbors(2), Some(vec![1, 3]));
    }

    #[test]
    fn only_present_rows_are_indexed() {
        let nn = build_knn(&points_1d(&[0.0, 0.1, 0.2, 5.0]), &[0, 2, 3], 1).unwrap();
        assert!(!nn.contains(1));
        assert_eq!(nn.neighbors(0), Some(vec![2]));
        assert_eq!(nn.neighbors(1), None);
    }

    #[test]
    fn too_few_instances_is_a_config_error() {
        let err = build_knn(&points_1d(&[0.0, 1.0]), &[0, 1], 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn refresh_policy_examples() {
        let p = RefreshPolicy {
            switch_epoch: 50,
            refresh_interval: 5,
        };
        assert_eq!(p.space_at(0), KnnSpace::InputFeatures);
        assert_eq!(p.space_at(50), KnnSpace::LatentFeatures);
        assert!(!p.needs_rebuild(57, Some((KnnSpace::LatentFeatures, 55))));
        assert!(p.needs_rebuild(60, Some((KnnSpace::LatentFeatures, 55))));
        assert!(p.needs_rebuild(50, Some((KnnSpace::InputFeatures, 0))));
        assert!(!p.needs_rebuild(49, Some((KnnSpace::InputFeatures, 0))));
        assert!(p.needs_rebuild(0, None));
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in any::<u64>(), n in 3usize..30, d in 1usize..4, k in 1usize..3) {
            let mut rng = RngStream::new(seed);
            // coarse grid so ties actually occur
            let data = (0..n * d).map(|_| rng.random_range(0..4) as f64).collect();
            let points = Matrix::from_vec(n, d, data).unwrap();
            let present: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.8)).collect();
            prop_assume!(present.len() > k);
            let nn = build_knn(&points, &present, k).unwrap();
            let expected = brute_force(&points, &present, k);
            for i in 0..n {
                prop_assert_eq!(nn.neighbors(i), expected[i].clone());
                if let Some(list) = nn.neighbors(i) {
                    prop_assert_eq!(list.len(), k);
                    prop_assert!(!list.contains(&i));
                    prop_assert!(list.iter().all(|j| present.contains(j)));
                }
            }
            prop_assert_eq!(build_knn(&points, &present, k).unwrap(), nn);
        }

        #[test]
        fn relabeling_rows_permutes_lists(seed in any::<u64>(), n in 4usize..20) {
            let mut rng = RngStream::new(seed);
            // continuous coordinates: no ties, so the result is label-free
            let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let points = Matrix::from_vec(n, 2, data).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            let permuted = points.select_rows(&perm);
            let all: Vec<usize> = (0..n).collect();
            let a = build_knn(&points, &all, 2).unwrap();
            let b = build_knn(&permuted, &all, 2).unwrap();
            for (new_i, &old_i) in perm.iter().enumerate() {
                let mapped: Vec<usize> = b.neighbors(new_i).unwrap().iter().map(|&j| perm[j]).collect();
                prop_assert_eq!(mapped, a.neighbors(old_i).unwrap());
            }
        }
    }
}
