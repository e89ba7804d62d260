//! Cross-view contrastive losses: the outlier-aware loss with memory-bank
//! negatives and the neighbor-alignment loss built on the same kernel.
//!
//! Similarities are cosine; every denominator sums over all rows of all views
//! in the pair, the anchor's own self-similarity included.

use crate::error::{Error, Result};
use crate::numeric::{normalize_rows, unnormalize_grad, Matrix};
use crate::objectives::bank::MemoryBank;

/// Loss value, its per-instance split and gradients with respect to the
/// latent rows of every view.
#[derive(Clone, Debug)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Entry `i` is instance `i`'s share of `loss`; the entries sum to `loss`.
    pub per_instance: Vec<f64>,
    /// One gradient matrix per view, shaped like the inputs. Empty when
    /// gradients were not requested.
    pub grads: Vec<Matrix>,
}

/// Contrastive loss over row-aligned views.
///
/// For two views this is the printed bi-view loss `-½ Σ_m Σ_i log(num/den)`.
/// With more views the bi-view loss is averaged over all unordered view
/// pairs. Bank entries of the pair's views extend each denominator and are
/// constants.
pub fn contrastive_loss(
    views: &[&Matrix],
    bank: Option<&MemoryBank>,
    temperature: f64,
    with_grad: bool,
) -> Result<ContrastiveOutput> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {temperature}")));
    }
    if views.len() < 2 {
        return Err(Error::contract("contrastive loss needs at least two views"));
    }
    let n = views[0].rows();
    let d = views[0].cols();
    if views.iter().any(|z| z.rows() != n || z.cols() != d) {
        return Err(Error::contract("contrastive views must be row-aligned with equal widths"));
    }
    if n == 0 {
        return Err(Error::contract("contrastive loss over an empty batch"));
    }
    if let Some(bank) = bank {
        if bank.num_views() != views.len() {
            return Err(Error::contract("memory bank view count differs from the batch"));
        }
        if !bank.is_empty() && bank.latent_dim() != Some(d) {
            return Err(Error::contract("memory bank latent width differs from the batch"));
        }
    }

    let normalized: Vec<(Matrix, Vec<f64>)> = views.iter().map(|z| normalize_rows(z)).collect();
    let bank_units: Vec<Option<Matrix>> = (0..views.len())
        .map(|v| {
            bank.filter(|b| !b.is_empty())
                .map(|b| normalize_rows(&b.view_matrix(v)).0)
        })
        .collect();

    let num_pairs = views.len() * (views.len() - 1) / 2;
    let weight = 0.5 / num_pairs as f64;
    let inv_tau = 1.0 / temperature;

    let mut per_instance = vec![0.0; n];
    let mut unit_grads: Vec<Matrix> = if with_grad {
        views.iter().map(|_| Matrix::zeros(n, d)).collect()
    } else {
        Vec::new()
    };

    for a in 0..views.len() {
        for b in (a + 1)..views.len() {
            for (anchor, partner) in [(a, b), (b, a)] {
                let u_anchor = &normalized[anchor].0;
                // candidate blocks: every row of view a, every row of view b,
                // then the bank entries of a and b
                let sim_a = u_anchor.matmul_t(&normalized[a].0)?;
                let sim_b = u_anchor.matmul_t(&normalized[b].0)?;
                let sim_bank: Vec<Matrix> = [a, b]
                    .iter()
                    .filter_map(|&v| bank_units[v].as_ref())
                    .map(|m| u_anchor.matmul_t(m))
                    .collect::<Result<_>>()?;
                let positive_block = if partner == a { &sim_a } else { &sim_b };

                let mut coeff_a = Matrix::zeros(n, n);
                let mut coeff_b = Matrix::zeros(n, n);
                let mut coeff_bank: Vec<Matrix> =
                    sim_bank.iter().map(|s| Matrix::zeros(n, s.cols())).collect();
                let mut logits = Vec::with_capacity(2 * n);
                for i in 0..n {
                    logits.clear();
                    logits.extend(sim_a.row(i).iter().map(|s| s * inv_tau));
                    logits.extend(sim_b.row(i).iter().map(|s| s * inv_tau));
                    for s in &sim_bank {
                        logits.extend(s.row(i).iter().map(|s| s * inv_tau));
                    }
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        total += *l;
                    }
                    let lse = max + total.ln();
                    let term = lse - positive_block.get(i, i) * inv_tau;
                    per_instance[i] += weight * term;

                    if with_grad {
                        // d term / d sim = (softmax - onehot(positive)) / tau
                        let scale = weight * inv_tau / total;
                        let mut offset = 0;
                        let mut blocks: Vec<&mut Matrix> = vec![&mut coeff_a, &mut coeff_b];
                        blocks.extend(coeff_bank.iter_mut());
                        for block in blocks {
                            let width = block.cols();
                            for (slot, e) in block.row_mut(i).iter_mut().zip(&logits[offset..offset + width]) {
                                *slot = scale * e;
                            }
                            offset += width;
                        }
                        let scale = weight * inv_tau;
                        let positive = if partner == a { &mut coeff_a } else { &mut coeff_b };
                        let p = positive.get(i, i);
                        positive.set(i, i, p - scale);
                    }
                }

                if with_grad {
                    // anchor rows collect Σ_c coeff·candidate
                    let mut g_anchor = coeff_a.matmul(&normalized[a].0)?;
                    g_anchor.add_assign(&coeff_b.matmul(&normalized[b].0)?)?;
                    let bank_mats = [a, b].into_iter().filter_map(|v| bank_units[v].as_ref());
                    for (coeff, units) in coeff_bank.iter().zip(bank_mats) {
                        g_anchor.add_assign(&coeff.matmul(units)?)?;
                    }
                    unit_grads[anchor].add_assign(&g_anchor)?;
                    // candidate rows collect Σ_i coeff·anchor
                    unit_grads[a].add_assign(&coeff_a.t_matmul(u_anchor)?)?;
                    unit_grads[b].add_assign(&coeff_b.t_matmul(u_anchor)?)?;
                }
            }
        }
    }

    let grads = if with_grad {
        unit_grads
            .iter()
            .zip(&normalized)
            .map(|(g_unit, (units, norms))| {
                let mut g = Matrix::zeros(n, d);
                for i in 0..n {
                    unnormalize_grad(units.row(i), norms[i], g_unit.row(i), g.row_mut(i));
                }
                g
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(ContrastiveOutput {
        loss: per_instance.iter().sum(),
        per_instance,
        grads,
    })
}

/// Outlier-aware contrastive loss for a bi-view batch with a memory bank.
/// An empty bank gives the plain cross-view contrastive loss.
pub fn outlier_aware_contrastive(
    z1: &Matrix,
    z2: &Matrix,
    bank: &MemoryBank,
    temperature: f64,
) -> Result<ContrastiveOutput> {
    contrastive_loss(&[z1, z2], Some(bank), temperature, true)
}

/// Scalar loss plus gradients over per-view latent tables.
#[derive(Clone, Debug)]
pub struct TableLoss {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

/// Neighbor-alignment loss.
///
/// `neighbor_slots[v][i]` lists, nearest first, the rows of `tables[v]`
/// holding the neighbors of anchor `i` found within view `v`. For each rank
/// `t` the t-th neighbors of all anchors form one row-aligned batch per view;
/// the contrastive kernel is applied to it without temperature (`None`) and
/// the K results are averaged.
pub fn neighbor_alignment_loss(
    tables: &[&Matrix],
    neighbor_slots: &[Vec<Vec<usize>>],
    temperature: Option<f64>,
) -> Result<TableLoss> {
    if tables.len() != neighbor_slots.len() {
        return Err(Error::contract("one neighbor table per view required"));
    }
    let anchors = neighbor_slots.first().map_or(0, Vec::len);
    if anchors == 0 || neighbor_slots.iter().any(|s| s.len() != anchors) {
        return Err(Error::contract("neighbor lists missing for some anchors"));
    }
    let k = neighbor_slots[0][0].len();
    if k == 0
        || neighbor_slots
            .iter()
            .flatten()
            .any(|list| list.len() != k)
    {
        return Err(Error::contract("every anchor needs exactly K neighbors in every view"));
    }
    for (table, slots) in tables.iter().zip(neighbor_slots) {
        if slots.iter().flatten().any(|&s| s >= table.rows()) {
            return Err(Error::contract("neighbor slot outside its latent table"));
        }
    }

    let tau = temperature.unwrap_or(1.0);
    let mut grads: Vec<Matrix> = tables
        .iter()
        .map(|t| Matrix::zeros(t.rows(), t.cols()))
        .collect();
    let mut loss = 0.0;
    let inv_k = 1.0 / k as f64;
    for t in 0..k {
        let rows: Vec<Vec<usize>> = neighbor_slots
            .iter()
            .map(|slots| slots.iter().map(|list| list[t]).collect())
            .collect();
        let gathered: Vec<Matrix> = tables
            .iter()
            .zip(&rows)
            .map(|(table, r)| table.select_rows(r))
            .collect();
        let refs: Vec<&Matrix> = gathered.iter().collect();
        let out = contrastive_loss(&refs, None, tau, true)?;
        loss += inv_k * out.loss;
        for ((grad, r), g) in grads.iter_mut().zip(&rows).zip(&out.grads) {
            for (i, &slot) in r.iter().enumerate() {
                for (dst, src) in grad.row_mut(slot).iter_mut().zip(g.row(i)) {
                    *dst += inv_k * src;
                }
            }
        }
    }
    Ok(TableLoss { loss, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    /// Literal evaluation of the bi-view loss, one exponential at a time.
    fn brute_force(z1: &Matrix, z2: &Matrix, tau: f64) -> (f64, Vec<f64>) {
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            d / (na * nb)
        };
        let n = z1.rows();
        let views = [z1, z2];
        let mut per = vec![0.0; n];
        for mv in 0..2 {
            let other = 1 - mv;
            for i in 0..n {
                let num = (cos(views[mv].row(i), views[other].row(i)) / tau).exp();
                let mut den = 0.0;
                for j in 0..n {
                    for v in views {
                        den += (cos(views[mv].row(i), v.row(j)) / tau).exp();
                    }
                }
                per[i] += -0.5 * (num / den).ln();
            }
        }
        (per.iter().sum(), per)
    }

    #[test]
    fn single_identical_pair_gives_log_two() {
        for tau in [0.1, 0.5, 2.0] {
            let z = m(&[&[0.3, -1.2, 2.0]]);
            let out = outlier_aware_contrastive(&z, &z, &MemoryBank::new(2, 8), tau).unwrap();
            assert_relative_eq!(out.loss, 2f64.ln(), epsilon = 1e-12);
            assert_relative_eq!(out.per_instance[0], 2f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn orthonormal_pairs_match_brute_force() {
        let z1 = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let z2 = m(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let out = outlier_aware_contrastive(&z1, &z2, &MemoryBank::new(2, 8), 1.0).unwrap();
        let (expected, per) = brute_force(&z1, &z2, 1.0);
        assert_relative_eq!(out.loss, expected, max_relative = 1e-12);
        for (a, b) in out.per_instance.iter().zip(&per) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn bank_entry_like_anchor_increases_loss() {
        let z1 = m(&[&[1.0, 0.2], &[-0.3, 1.0]]);
        let z2 = m(&[&[0.9, 0.1], &[0.0, 1.0]]);
        let empty = MemoryBank::new(2, 4);
        let base = outlier_aware_contrastive(&z1, &z2, &empty, 0.5).unwrap();
        let mut bank = MemoryBank::new(2, 4);
        bank.push(&[&z1, &z2], &[0], (0, 0)).unwrap();
        let with_bank = outlier_aware_contrastive(&z1, &z2, &bank, 0.5).unwrap();
        assert!(with_bank.loss > base.loss);
        for (a, b) in with_bank.per_instance.iter().zip(&base.per_instance) {
            assert!(a > b);
        }
    }

    #[test]
    fn rejects_nonpositive_temperature() {
        let z = m(&[&[1.0]]);
        assert!(contrastive_loss(&[&z, &z], None, 0.0, false).is_err());
        assert!(contrastive_loss(&[&z, &z], None, -1.0, false).is_err());
    }

    #[test]
    fn per_instance_is_permutation_equivariant() {
        let mut rng = RngStream::new(4);
        let rand_m = |rng: &mut RngStream| {
            Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let z1 = rand_m(&mut rng);
        let z2 = rand_m(&mut rng);
        let perm = [3, 0, 4, 1, 2];
        let base = contrastive_loss(&[&z1, &z2], None, 0.5, false).unwrap();
        let permuted = contrastive_loss(
            &[&z1.select_rows(&perm), &z2.select_rows(&perm)],
            None,
            0.5,
            false,
        )
        .unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            assert_relative_eq!(permuted.per_instance[new_i], base.per_instance[old_i], max_relative = 1e-12);
        }
    }

    #[test]
    fn single_neighbor_identical_rows_gives_log_two() {
        let table = m(&[&[0.0, 1.0], &[2.0, 1.0]]);
        let slots = vec![vec![vec![1]], vec![vec![1]]];
        let out = neighbor_alignment_loss(&[&table, &table], &slots, None).unwrap();
        assert_relative_eq!(out.loss, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn neighbor_alignment_equals_plain_loss_on_neighbor_rows() {
        // identical views and neighbor structure: each rank reduces to the
        // untempered contrastive loss on the neighbor rows
        let table = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.7, 0.7]]);
        let slots_view = vec![vec![1, 2], vec![0, 2]];
        let slots = vec![slots_view.clone(), slots_view];
        let out = neighbor_alignment_loss(&[&table, &table], &slots, None).unwrap();
        let rank1 = table.select_rows(&[1, 0]);
        let rank2 = table.select_rows(&[2, 2]);
        let expected = 0.5 * (brute_force(&rank1, &rank1, 1.0).0 + brute_force(&rank2, &rank2, 1.0).0);
        assert_relative_eq!(out.loss, expected, max_relative = 1e-12);
    }

    #[test]
    fn neighbor_alignment_ignores_rank_order() {
        let mut rng = RngStream::new(8);
        let t1 = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t2 = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let s1 = vec![vec![1, 2, 3], vec![0, 4, 5]];
        let s2 = vec![vec![5, 3, 1], vec![2, 1, 0]];
        let rev = |s: &Vec<Vec<usize>>| s.iter().map(|l| l.iter().rev().copied().collect()).collect::<Vec<Vec<usize>>>();
        let a = neighbor_alignment_loss(&[&t1, &t2], &[s1.clone(), s2.clone()], None).unwrap();
        let b = neighbor_alignment_loss(&[&t1, &t2], &[rev(&s1), rev(&s2)], None).unwrap();
        assert_relative_eq!(a.loss, b.loss, max_relative = 1e-12);
    }

    #[test]
    fn neighbor_alignment_requires_full_lists() {
        let table = m(&[&[1.0], &[2.0]]);
        let slots = vec![vec![vec![1]], vec![vec![]]];
        assert!(neighbor_alignment_loss(&[&table, &table], &slots, None).is_err());
    }
}
