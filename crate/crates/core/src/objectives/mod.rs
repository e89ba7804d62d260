//! Loss terms of the training objective
//! `L = L_ar + λ₁·L_oa + λ₂·L_na + μ·L_sr`.

pub mod bank;
pub mod contrastive;
pub mod schedule;
pub mod spreading;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub use bank::{bank_capacity, select_potential_outliers, BankOrigin, MemoryBank};
pub use contrastive::{
    contrastive_loss, neighbor_alignment_loss, outlier_aware_contrastive, ContrastiveOutput,
    TableLoss,
};
pub use schedule::MuSchedule;
pub use spreading::{
    koleo_loss, koleo_view, rank_loss, rank_view, sample_rank_triplets, spreading_regularization,
    RankSign, RankTriplet, Spreading,
};

/// `½ Σ_v Σ_{i present} ‖x_i − x̂_i‖²`. `present[v]` lists the rows of view
/// `v` that count.
pub fn reconstruction_loss(
    views: &[&Matrix],
    reconstructions: &[&Matrix],
    present: &[Vec<usize>],
) -> Result<f64> {
    if views.len() != reconstructions.len() || views.len() != present.len() {
        return Err(Error::contract("reconstruction loss needs matching view lists"));
    }
    let mut total = 0.0;
    for ((x, xr), rows) in views.iter().zip(reconstructions).zip(present) {
        if x.rows() != xr.rows() || x.cols() != xr.cols() {
            return Err(Error::contract("reconstruction shape differs from input"));
        }
        for &i in rows {
            total += 0.5 * crate::numeric::sq_dist(x.row(i), xr.row(i));
        }
    }
    Ok(total)
}

/// Term weights of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
}

/// Values of every term of one objective evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ar: f64,
    pub l_oa: f64,
    pub l_na: f64,
    pub l_koleo: f64,
    pub l_rank: f64,
    pub l_sr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub total: f64,
    /// Per-instance outlier-aware contrastive values of the batch.
    pub per_instance_contrastive: Vec<f64>,
}

/// Weighted sum of precomputed terms.
pub fn total_loss(
    l_ar: f64,
    l_oa: f64,
    l_na: f64,
    spreading: Spreading,
    weights: LossWeights,
) -> LossBreakdown {
    LossBreakdown {
        l_ar,
        l_oa,
        l_na,
        l_koleo: spreading.koleo,
        l_rank: spreading.rank,
        l_sr: spreading.total,
        lambda1: weights.lambda1,
        lambda2: weights.lambda2,
        mu: weights.mu,
        total: l_ar
            + weights.lambda1 * l_oa
            + weights.lambda2 * l_na
            + weights.mu * spreading.total,
        per_instance_contrastive: Vec::new(),
    }
}
