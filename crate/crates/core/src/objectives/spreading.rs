//! Spreading regularization: KoLeo nearest-neighbor entropy term plus the
//! rank-preserving hinge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::ViewNeighbors;
use crate::numeric::{l2_norm, sq_dist, Matrix, RngStream};

/// Nearest-neighbor distances below this are clamped inside the log.
pub const KOLEO_MIN_DISTANCE: f64 = 1e-9;

/// Sign convention of the rank-preserving term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSign {
    /// `-½ Σ max(0, d⁺ − d⁻)`, nonpositive.
    #[default]
    Printed,
    /// `+½ Σ max(0, d⁺ − d⁻)`, the usual triplet hinge.
    Triplet,
}

impl std::str::FromStr for RankSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(RankSign::Printed),
            "triplet" => Ok(RankSign::Triplet),
            other => Err(Error::config(format!("rank_sign must be printed|triplet, got {other}"))),
        }
    }
}

impl std::fmt::Display for RankSign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RankSign::Printed => "printed",
            RankSign::Triplet => "triplet",
        })
    }
}

/// `-½ Σ_i log max(δ_i, 1e-9)` over `rows` of `z`, where `δ_i` is the
/// distance from row `i` to its nearest other row in `rows`. Returns the
/// value and its gradient with respect to `z`.
pub fn koleo_view(z: &Matrix, rows: &[usize]) -> Result<(f64, Matrix)> {
    if rows.len() < 2 {
        return Err(Error::contract("KoLeo needs at least two rows"));
    }
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    for &i in rows {
        let (mut best, mut best_j) = (f64::INFINITY, usize::MAX);
        for &j in rows {
            if j == i {
                continue;
            }
            let d2 = sq_dist(z.row(i), z.row(j));
            if d2 < best || (d2 == best && j < best_j) {
                best = d2;
                best_j = j;
            }
        }
        let delta = best.sqrt();
        if delta > KOLEO_MIN_DISTANCE {
            loss -= 0.5 * delta.ln();
            // d(-½ log δ)/dz_i = -½ (z_i - z_j) / δ²
            let coeff = -0.5 / best;
            let diff: Vec<f64> = z.row(i).iter().zip(z.row(best_j)).map(|(a, b)| a - b).collect();
            for (g, d) in grad.row_mut(i).iter_mut().zip(&diff) {
                *g += coeff * d;
            }
            for (g, d) in grad.row_mut(best_j).iter_mut().zip(&diff) {
                *g -= coeff * d;
            }
        } else {
            loss -= 0.5 * KOLEO_MIN_DISTANCE.ln();
        }
    }
    Ok((loss, grad))
}

/// KoLeo summed over views; `views[v] = (latents, participating rows)`.
pub fn koleo_loss(views: &[(&Matrix, &[usize])]) -> Result<f64> {
    views
        .iter()
        .map(|(z, rows)| koleo_view(z, rows).map(|(l, _)| l))
        .sum()
}

/// Anchor, sampled positive and fixed negative rows of one rank-loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Draws each anchor's positive uniformly among its `k_pos` nearest
/// neighbors and takes the `k_neg`-th neighbor as negative. Ids are instance
/// ids from `neighbors`.
pub fn sample_rank_triplets(
    anchors: &[usize],
    neighbors: &ViewNeighbors,
    k_pos: usize,
    k_neg: usize,
    rng: &mut RngStream,
) -> Result<Vec<RankTriplet>> {
    if k_pos == 0 || k_neg == 0 {
        return Err(Error::config("k_pos and k_neg must be positive"));
    }
    if neighbors.k() < k_neg || neighbors.k() < k_pos {
        return Err(Error::config(format!(
            "neighbor lists of length {} are shorter than k_pos = {k_pos} / k_neg = {k_neg}",
            neighbors.k()
        )));
    }
    anchors
        .iter()
        .map(|&a| {
            let list = neighbors
                .neighbors(a)
                .ok_or_else(|| Error::contract(format!("instance {a} has no neighbor list")))?;
            Ok(RankTriplet {
                anchor: a,
                positive: list[rng.random_range(0..k_pos)],
                negative: list[k_neg - 1],
            })
        })
        .collect()
}

/// Rank-preserving hinge over `triplets` (row indices into `z`) with the
/// chosen sign. Returns value and gradient with respect to `z`.
pub fn rank_view(z: &Matrix, triplets: &[RankTriplet], sign: RankSign) -> Result<(f64, Matrix)> {
    if triplets
        .iter()
        .any(|t| t.anchor.max(t.positive).max(t.negative) >= z.rows())
    {
        return Err(Error::contract("rank triplet row out of range"));
    }
    let factor = match sign {
        RankSign::Printed => -0.5,
        RankSign::Triplet => 0.5,
    };
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    for t in triplets {
        let to_pos: Vec<f64> = z.row(t.anchor).iter().zip(z.row(t.positive)).map(|(a, b)| a - b).collect();
        let to_neg: Vec<f64> = z.row(t.anchor).iter().zip(z.row(t.negative)).map(|(a, b)| a - b).collect();
        let (d_pos, d_neg) = (l2_norm(&to_pos), l2_norm(&to_neg));
        let hinge = d_pos - d_neg;
        if hinge <= 0.0 {
            continue;
        }
        loss += factor * hinge;
        if d_pos > 0.0 {
            for (k, d) in to_pos.iter().enumerate() {
                let g = factor * d / d_pos;
                grad.row_mut(t.anchor)[k] += g;
                grad.row_mut(t.positive)[k] -= g;
            }
        }
        if d_neg > 0.0 {
            for (k, d) in to_neg.iter().enumerate() {
                let g = factor * d / d_neg;
                grad.row_mut(t.anchor)[k] -= g;
                grad.row_mut(t.negative)[k] += g;
            }
        }
    }
    Ok((loss, grad))
}

/// Rank loss of one view for instances `anchors`, sampling positives from
/// `neighbors`. `z` rows are indexed by instance id.
pub fn rank_loss(
    z: &Matrix,
    anchors: &[usize],
    neighbors: &ViewNeighbors,
    k_pos: usize,
    k_neg: usize,
    sign: RankSign,
    rng: &mut RngStream,
) -> Result<f64> {
    let triplets = sample_rank_triplets(anchors, neighbors, k_pos, k_neg, rng)?;
    Ok(rank_view(z, &triplets, sign)?.0)
}

/// KoLeo, rank and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spreading {
    pub koleo: f64,
    pub rank: f64,
    pub total: f64,
}

/// Spreading regularization over views of instance-indexed latents.
/// `anchors[v]` lists the instances taking part in view `v`.
pub fn spreading_regularization(
    views: &[&Matrix],
    anchors: &[Vec<usize>],
    neighbors: &[ViewNeighbors],
    k_pos: usize,
    k_neg: usize,
    sign: RankSign,
    rng: &mut RngStream,
) -> Result<Spreading> {
    let mut koleo = 0.0;
    let mut rank = 0.0;
    for ((z, rows), table) in views.iter().zip(anchors).zip(neighbors) {
        koleo += koleo_view(z, rows)?.0;
        rank += rank_loss(z, rows, table, k_pos, k_neg, sign, rng)?;
    }
    Ok(Spreading {
        koleo,
        rank,
        total: koleo + rank,
    })
}
