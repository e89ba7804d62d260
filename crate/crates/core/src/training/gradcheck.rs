//! Central finite-difference check of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderStack;
use crate::error::{Error, Result};
use crate::neighbors::build_knn;
use crate::numeric::{Matrix, RngStream};
use crate::objectives::{sample_rank_triplets, MemoryBank, RankSign};

use super::plan::{evaluate, BatchPlan, TermWeights, ViewSlots};

/// Which part of the objective is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckedTerm {
    Reconstruction,
    OutlierAware,
    NeighborAlignment,
    Koleo,
    Rank(RankSign),
    Total,
}

impl CheckedTerm {
    pub const ALL: [CheckedTerm; 7] = [
        CheckedTerm::Reconstruction,
        CheckedTerm::OutlierAware,
        CheckedTerm::NeighborAlignment,
        CheckedTerm::Koleo,
        CheckedTerm::Rank(RankSign::Printed),
        CheckedTerm::Rank(RankSign::Triplet),
        CheckedTerm::Total,
    ];

    pub fn name(self) -> String {
        match self {
            CheckedTerm::Reconstruction => "l_ar".into(),
            CheckedTerm::OutlierAware => "l_oa".into(),
            CheckedTerm::NeighborAlignment => "l_na".into(),
            CheckedTerm::Koleo => "l_koleo".into(),
            CheckedTerm::Rank(sign) => format!("l_rank[{sign}]"),
            CheckedTerm::Total => "total".into(),
        }
    }

    fn weights(self) -> TermWeights {
        let none = TermWeights {
            ar: 0.0,
            oa: 0.0,
            na: 0.0,
            koleo: 0.0,
            rank: 0.0,
        };
        match self {
            CheckedTerm::Reconstruction => TermWeights { ar: 1.0, ..none },
            CheckedTerm::OutlierAware => TermWeights { oa: 1.0, ..none },
            CheckedTerm::NeighborAlignment => TermWeights { na: 1.0, ..none },
            CheckedTerm::Koleo => TermWeights { koleo: 1.0, ..none },
            CheckedTerm::Rank(_) => TermWeights { rank: 1.0, ..none },
            CheckedTerm::Total => TermWeights::objective(1.0, 1.0, 0.5),
        }
    }
}

/// Worst disagreement between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub term: String,
    pub seed: u64,
    pub parameters: usize,
    pub objective: f64,
    pub max_abs_error: f64,
    /// Max over parameters of `|a − n| / max(|a|, |n|, floor)`.
    pub max_rel_error: f64,
}

/// Denominator floor of the per-parameter relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares `evaluate`'s gradient with central differences of step `h`.
pub fn check_plan(stack: &AutoencoderStack, plan: &BatchPlan<'_>, h: f64) -> Result<(f64, f64, f64)> {
    let analytic = evaluate(stack, plan)?;
    let grad = analytic.grads.flatten();
    let mut probe = stack.clone();
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    let sizes: Vec<usize> = stack.tensors().iter().map(|t| t.len()).collect();
    let mut flat = 0;
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let original = probe.tensors_mut()[t][k];
            probe.tensors_mut()[t][k] = original + h;
            let up = evaluate(&probe, plan)?.objective;
            probe.tensors_mut()[t][k] = original - h;
            let down = evaluate(&probe, plan)?.objective;
            probe.tensors_mut()[t][k] = original;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[flat];
            let err = (a - numeric).abs();
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / a.abs().max(numeric.abs()).max(REL_FLOOR));
            flat += 1;
        }
    }
    Ok((analytic.objective, max_abs, max_rel))
}

/// Fixture: two views of width 5, encoder widths `hidden`, ten instances of
/// which the first six form the batch. Biases are randomized. Instance 5 lacks view 2 and carries
/// an imputed constant there; the bank holds three random pairs.
pub fn check_fixture(term: CheckedTerm, seed: u64, hidden: &[usize], h: f64) -> Result<GradCheckReport> {
    const N: usize = 10;
    const BATCH: usize = 6;
    const DIM: usize = 5;
    const K: usize = 3;
    let mut rng = RngStream::new(seed);
    let mut stack = AutoencoderStack::init(&[DIM, DIM], hidden, &mut rng)?;
    // nonzero biases keep dead ReLU rows away from the zero latent, where
    // cosine similarity is not differentiable
    for view in &mut stack.views {
        for layer in view.encoder.layers.iter_mut().chain(view.decoder.layers.iter_mut()) {
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }
    let d = stack.latent_dim();
    let inputs: Vec<Matrix> = (0..2)
        .map(|_| Matrix::from_vec(N, DIM, (0..N * DIM).map(|_| rng.random::<f64>()).collect()))
        .collect::<Result<_>>()?;
    let missing = (5usize, 1usize);
    let present = |i: usize, v: usize| (i, v) != missing;
    let imputed: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();

    let tables = (0..2)
        .map(|v| {
            let rows: Vec<usize> = (0..N).filter(|&i| present(i, v)).collect();
            build_knn(&inputs[v], &rows, K)
        })
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<usize> = (0..BATCH).collect();

    // every instance is its own slot
    let views: Vec<ViewSlots> = (0..2)
        .map(|v| {
            let observed: Vec<usize> = (0..N).filter(|&i| present(i, v)).collect();
            let constants = if v == missing.1 { vec![(missing.0, imputed.clone())] } else { Vec::new() };
            ViewSlots {
                inputs: inputs[v].select_rows(&observed),
                reconstruct: (0..observed.iter().filter(|&&s| s < BATCH).count()).collect(),
                instances: (0..N).collect(),
                observed,
                constants,
            }
        })
        .collect();
    let anchors: Vec<usize> = batch
        .iter()
        .copied()
        .filter(|&i| tables.iter().all(|t| t.contains(i)))
        .collect();
    let na_slots: Vec<Vec<Vec<usize>>> = tables
        .iter()
        .map(|t| anchors.iter().map(|&i| t.neighbors(i).expect("indexed")).collect())
        .collect();
    let sign = match term {
        CheckedTerm::Rank(s) => s,
        _ => RankSign::Printed,
    };
    let rank_triplets = tables
        .iter()
        .map(|t| {
            let own: Vec<usize> = batch.iter().copied().filter(|&i| t.contains(i)).collect();
            sample_rank_triplets(&own, t, 2, K, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bank = MemoryBank::new(2, 3);
    let bank_rows: Vec<Matrix> = (0..2)
        .map(|_| Matrix::from_vec(3, d, (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect::<Result<_>>()?;
    bank.push(&bank_rows.iter().collect::<Vec<_>>(), &[0, 1, 2], (0, 0))?;

    let plan = BatchPlan {
        batch: batch.clone(),
        views,
        na_slots,
        rank_triplets,
        koleo_rows: vec![batch.clone(), batch],
        bank: &bank,
        weights: term.weights(),
        tau: 0.5,
        na_tau: None,
        rank_sign: sign,
    };
    let (objective, max_abs, max_rel) = check_plan(&stack, &plan, h)?;
    if !max_rel.is_finite() {
        return Err(Error::Divergence {
            term: term.name(),
        });
    }
    Ok(GradCheckReport {
        term: term.name(),
        seed,
        parameters: stack.num_parameters(),
        objective,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
    })
}
