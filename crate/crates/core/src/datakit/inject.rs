//! Outlier injection into normalized data.
//!
//! Every injector draws only from instances still labeled inlier, so the
//! three outlier kinds land on disjoint instance sets.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ratio_count, MultiViewDataset, OutlierType, ProvenanceStep};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

/// Fractions of attribute, class and class-attribute outliers, relative to
/// the total instance count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierRatios {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

impl OutlierRatios {
    pub fn new(rho1: f64, rho2: f64, rho3: f64) -> Result<Self> {
        let r = OutlierRatios { rho1, rho2, rho3 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.rho1, self.rho2, self.rho3];
        if all.iter().any(|r| !(0.0..1.0).contains(r)) || all.iter().sum::<f64>() >= 1.0 {
            return Err(Error::config(format!(
                "outlier ratios must lie in [0, 1) and sum below 1, got {all:?}"
            )));
        }
        Ok(())
    }
}

fn clean_instances(ds: &MultiViewDataset) -> Vec<usize> {
    let labels = ds.labels.as_deref();
    (0..ds.num_instances())
        .filter(|&i| labels.is_none_or(|l| l[i] == OutlierType::Inlier))
        .collect()
}

fn draw_clean(ds: &MultiViewDataset, count: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    let mut pool = clean_instances(ds);
    if pool.len() < count {
        return Err(Error::config(format!(
            "need {count} clean instances for injection, only {} left",
            pool.len()
        )));
    }
    pool.shuffle(rng);
    pool.truncate(count);
    Ok(pool)
}

fn randomize_row(view: &mut Matrix, i: usize, rng: &mut RngStream) {
    view.row_mut(i).iter_mut().for_each(|x| *x = rng.random::<f64>());
}

fn swap_rows(ds: &mut MultiViewDataset, v: usize, a: usize, b: usize) {
    let row_a = ds.views[v].row(a).to_vec();
    let row_b = ds.views[v].row(b).to_vec();
    ds.views[v].row_mut(a).copy_from_slice(&row_b);
    ds.views[v].row_mut(b).copy_from_slice(&row_a);
    let (pa, pb) = (ds.presence[a][v], ds.presence[b][v]);
    ds.presence[a][v] = pb;
    ds.presence[b][v] = pa;
}

fn set_label(ds: &mut MultiViewDataset, i: usize, label: OutlierType) {
    let n = ds.num_instances();
    ds.labels.get_or_insert_with(|| vec![OutlierType::Inlier; n])[i] = label;
}

/// Replaces every present view of `ceil(rho1·N)` clean instances with
/// uniform(0, 1) values. Returns the affected instances.
pub fn inject_attribute(ds: &mut MultiViewDataset, rho1: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    let count = ratio_count(rho1, ds.num_instances());
    let chosen = draw_clean(ds, count, rng)?;
    for &i in &chosen {
        for v in 0..ds.num_views() {
            if ds.presence[i][v] {
                randomize_row(&mut ds.views[v], i, rng);
            }
        }
        set_label(ds, i, OutlierType::Attribute);
    }
    ds.provenance.push(ProvenanceStep::InjectedAttribute {
        rho: rho1,
        count,
        seed: rng.seed(),
    });
    Ok(chosen)
}

/// Disjoint clean pairs, each with a uniformly drawn subset of `⌊V/2⌋`
/// views to swap.
fn draw_pairs(
    ds: &MultiViewDataset,
    rho: f64,
    rng: &mut RngStream,
) -> Result<Vec<((usize, usize), Vec<usize>)>> {
    let pairs = ratio_count(rho / 2.0, ds.num_instances());
    let chosen = draw_clean(ds, 2 * pairs, rng)?;
    let v = ds.num_views();
    Ok(chosen
        .chunks_exact(2)
        .map(|p| {
            let mut swapped = index::sample(rng, v, v / 2).into_vec();
            swapped.sort_unstable();
            ((p[0], p[1]), swapped)
        })
        .collect())
}

/// Swaps `⌊V/2⌋` views between `ceil(rho2·N/2)` random clean pairs, leaving
/// the other views untouched. Returns the pairs.
pub fn inject_class(
    ds: &mut MultiViewDataset,
    rho2: f64,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    let plan = draw_pairs(ds, rho2, rng)?;
    for ((a, b), views) in &plan {
        for &v in views {
            swap_rows(ds, v, *a, *b);
        }
        set_label(ds, *a, OutlierType::Class);
        set_label(ds, *b, OutlierType::Class);
    }
    ds.provenance.push(ProvenanceStep::InjectedClass {
        rho: rho2,
        pairs: plan.len(),
        seed: rng.seed(),
    });
    Ok(plan.into_iter().map(|(p, _)| p).collect())
}

/// As [`inject_class`], then replaces the remaining views of both pair
/// members with uniform(0, 1) values.
pub fn inject_class_attribute(
    ds: &mut MultiViewDataset,
    rho3: f64,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    let plan = draw_pairs(ds, rho3, rng)?;
    for ((a, b), views) in &plan {
        for &v in views {
            swap_rows(ds, v, *a, *b);
        }
        for v in (0..ds.num_views()).filter(|v| !views.contains(v)) {
            for i in [*a, *b] {
                if ds.presence[i][v] {
                    randomize_row(&mut ds.views[v], i, rng);
                }
            }
        }
        set_label(ds, *a, OutlierType::ClassAttribute);
        set_label(ds, *b, OutlierType::ClassAttribute);
    }
    ds.provenance.push(ProvenanceStep::InjectedClassAttribute {
        rho: rho3,
        pairs: plan.len(),
        seed: rng.seed(),
    });
    Ok(plan.into_iter().map(|(p, _)| p).collect())
}

/// Attribute, then class, then class-attribute injection, each from its own
/// stream derived from `rng`.
pub fn inject_outliers(ds: &mut MultiViewDataset, ratios: OutlierRatios, rng: &RngStream) -> Result<()> {
    ratios.validate()?;
    inject_attribute(ds, ratios.rho1, &mut rng.derive(1))?;
    inject_class(ds, ratios.rho2, &mut rng.derive(2))?;
    inject_class_attribute(ds, ratios.rho3, &mut rng.derive(3))?;
    Ok(())
}
