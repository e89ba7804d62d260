use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{MultiViewDataset, OutlierType, ProvenanceStep};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

/// Clustered multi-view data whose views agree on cluster identity.
///
/// Instance `i` belongs to cluster `i % clusters`. Each view draws its own
/// cluster centers uniformly in `[0, 1]^d`; rows are center plus
/// `N(0, noise²)` per coordinate. Centers for view 0 are drawn first, then
/// view 1, and so on, followed by the noise in row order.
pub fn synthesize(
    clusters: usize,
    per_view_dims: &[usize],
    n: usize,
    noise: f64,
    rng: &mut RngStream,
) -> Result<MultiViewDataset> {
    if clusters < 2 {
        return Err(Error::config("synthetic data needs at least two clusters"));
    }
    if per_view_dims.is_empty() || per_view_dims.contains(&0) {
        return Err(Error::config("synthetic views need positive widths"));
    }
    if !(noise >= 0.0) {
        return Err(Error::config("noise must be nonnegative"));
    }
    let centers: Vec<Vec<Vec<f64>>> = per_view_dims
        .iter()
        .map(|&d| {
            (0..clusters)
                .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
                .collect()
        })
        .collect();
    let gaussian = Normal::new(0.0, 1.0).expect("unit normal");
    let mut views: Vec<Matrix> = per_view_dims.iter().map(|&d| Matrix::zeros(n, d)).collect();
    for i in 0..n {
        let c = i % clusters;
        for (v, view) in views.iter_mut().enumerate() {
            for (x, center) in view.row_mut(i).iter_mut().zip(&centers[v][c]) {
                let eps: f64 = gaussian.sample(rng);
                *x = center + noise * eps;
            }
        }
    }
    let mut ds = MultiViewDataset::new(views)?;
    ds.labels = Some(vec![OutlierType::Inlier; n]);
    ds.provenance.push(ProvenanceStep::Synthesized {
        clusters,
        dims: per_view_dims.to_vec(),
        n,
        noise,
        seed: rng.seed(),
    });
    Ok(ds)
}
