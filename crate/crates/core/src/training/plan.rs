//! One mini-batch worth of structure and the full objective with its
//! parameter gradients.
//!
//! Each view has a slot table: the batch instances first (same order in
//! every view), then any neighbors the losses reach. Observed slots are
//! encoded from their inputs with gradient; other slots hold constant
//! latents (imputed values).

use crate::autoencoder::{AutoencoderStack, GradientSet};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::objectives::{
    contrastive_loss, koleo_view, neighbor_alignment_loss, rank_view, LossBreakdown, MemoryBank,
    RankSign, RankTriplet,
};

/// Slot table of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSlots {
    /// Slot → instance id.
    pub instances: Vec<usize>,
    /// Slots encoded from `inputs`, one input row each, ascending.
    pub observed: Vec<usize>,
    pub inputs: Matrix,
    /// Slots with a fixed latent.
    pub constants: Vec<(usize, Vec<f64>)>,
    /// Positions in `observed` that are batch rows and get reconstructed.
    pub reconstruct: Vec<usize>,
}

/// Weight of every term in the optimized objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub ar: f64,
    pub oa: f64,
    pub na: f64,
    pub koleo: f64,
    pub rank: f64,
}

impl TermWeights {
    pub fn objective(lambda1: f64, lambda2: f64, mu: f64) -> Self {
        TermWeights {
            ar: 1.0,
            oa: lambda1,
            na: lambda2,
            koleo: mu,
            rank: mu,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchPlan<'a> {
    /// Batch instance ids; slots `0..batch.len()` of every view.
    pub batch: Vec<usize>,
    pub views: Vec<ViewSlots>,
    /// `[view][anchor][rank]` slots of neighbor-alignment partners.
    pub na_slots: Vec<Vec<Vec<usize>>>,
    /// Rank-loss triplets per view, as slots.
    pub rank_triplets: Vec<Vec<RankTriplet>>,
    /// KoLeo participants per view, as slots.
    pub koleo_rows: Vec<Vec<usize>>,
    pub bank: &'a MemoryBank,
    pub weights: TermWeights,
    pub tau: f64,
    pub na_tau: Option<f64>,
    pub rank_sign: RankSign,
}

/// Objective value, per-term breakdown and gradients.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    /// Weighted sum actually differentiated.
    pub objective: f64,
    pub grads: GradientSet,
    /// Batch latents per view, `batch.len()` rows each.
    pub batch_latents: Vec<Matrix>,
}

fn check_finite(term: &str, value: f64, grads: &[&Matrix]) -> Result<()> {
    if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { term: term.into() });
    }
    Ok(())
}

fn accumulate(target: &mut Matrix, grad: &Matrix, weight: f64) {
    for (t, g) in target.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *t += weight * g;
    }
}

/// Evaluates every loss term on `plan` and backpropagates the weighted sum.
/// Deterministic in `(stack, plan)`.
pub fn evaluate(stack: &AutoencoderStack, plan: &BatchPlan<'_>) -> Result<Evaluation> {
    let nv = stack.num_views();
    if plan.views.len() != nv || plan.koleo_rows.len() != nv || plan.rank_triplets.len() != nv {
        return Err(Error::contract("batch plan view count differs from the model"));
    }
    let nb = plan.batch.len();
    if nb == 0 {
        return Err(Error::contract("empty batch"));
    }
    let d = stack.latent_dim();
    let w = plan.weights;

    let mut enc_caches = Vec::with_capacity(nv);
    let mut dec_caches = Vec::with_capacity(nv);
    let mut tables = Vec::with_capacity(nv);
    let mut l_ar = 0.0;
    let mut dec_grad_out = Vec::with_capacity(nv);
    for (v, slots) in plan.views.iter().enumerate() {
        if slots.instances.len() < nb || slots.instances[..nb] != plan.batch[..] {
            return Err(Error::contract("slot table does not start with the batch"));
        }
        let ae = &stack.views[v];
        let mut z = Matrix::zeros(slots.instances.len(), d);
        let enc = if slots.observed.is_empty() {
            None
        } else {
            let cache = ae.encoder.forward_cached(&slots.inputs)?;
            for (k, &s) in slots.observed.iter().enumerate() {
                z.row_mut(s).copy_from_slice(cache.output.row(k));
            }
            Some(cache)
        };
        for (s, value) in &slots.constants {
            z.row_mut(*s).copy_from_slice(value);
        }
        let dec = match (&enc, slots.reconstruct.is_empty()) {
            (Some(cache), false) => {
                let latent = cache.output.select_rows(&slots.reconstruct);
                let target = slots.inputs.select_rows(&slots.reconstruct);
                let out = ae.decoder.forward_cached(&latent)?;
                let mut residual = out.output.clone();
                for (r, x) in residual.as_mut_slice().iter_mut().zip(target.as_slice()) {
                    *r -= x;
                }
                l_ar += 0.5 * residual.frobenius_sq();
                residual.scale(w.ar);
                dec_grad_out.push(Some(residual));
                Some(out)
            }
            _ => {
                dec_grad_out.push(None);
                None
            }
        };
        enc_caches.push(enc);
        dec_caches.push(dec);
        tables.push(z);
    }
    check_finite("l_ar", l_ar, &[])?;

    let mut latent_grads: Vec<Matrix> = tables
        .iter()
        .map(|t| Matrix::zeros(t.rows(), t.cols()))
        .collect();

    let batch_latents: Vec<Matrix> = tables
        .iter()
        .map(|t| t.select_rows(&(0..nb).collect::<Vec<_>>()))
        .collect();
    let batch_refs: Vec<&Matrix> = batch_latents.iter().collect();
    let oa = contrastive_loss(&batch_refs, Some(plan.bank), plan.tau, w.oa != 0.0)?;
    check_finite("l_oa", oa.loss, &oa.grads.iter().collect::<Vec<_>>())?;
    for (g, og) in latent_grads.iter_mut().zip(&oa.grads) {
        for i in 0..nb {
            for (t, x) in g.row_mut(i).iter_mut().zip(og.row(i)) {
                *t += w.oa * x;
            }
        }
    }

    let mut l_na = 0.0;
    if plan.na_slots.first().is_some_and(|a| !a.is_empty()) {
        let refs: Vec<&Matrix> = tables.iter().collect();
        let na = neighbor_alignment_loss(&refs, &plan.na_slots, plan.na_tau)?;
        check_finite("l_na", na.loss, &na.grads.iter().collect::<Vec<_>>())?;
        l_na = na.loss;
        for (g, ng) in latent_grads.iter_mut().zip(&na.grads) {
            accumulate(g, ng, w.na);
        }
    }

    let (mut l_koleo, mut l_rank) = (0.0, 0.0);
    for v in 0..nv {
        if plan.koleo_rows[v].len() >= 2 {
            let (value, grad) = koleo_view(&tables[v], &plan.koleo_rows[v])?;
            check_finite("l_koleo", value, &[&grad])?;
            l_koleo += value;
            accumulate(&mut latent_grads[v], &grad, w.koleo);
        }
        if !plan.rank_triplets[v].is_empty() {
            let (value, grad) = rank_view(&tables[v], &plan.rank_triplets[v], plan.rank_sign)?;
            check_finite("l_rank", value, &[&grad])?;
            l_rank += value;
            accumulate(&mut latent_grads[v], &grad, w.rank);
        }
    }

    let mut grads = GradientSet::zeros_like(stack);
    for (v, slots) in plan.views.iter().enumerate() {
        let ae = &stack.views[v];
        let Some(enc) = &enc_caches[v] else { continue };
        if let (Some(dec), Some(grad_out)) = (&dec_caches[v], &dec_grad_out[v]) {
            let back = ae.decoder.backward(dec, grad_out, &mut grads.views[v].decoder)?;
            for (k, &pos) in slots.reconstruct.iter().enumerate() {
                let slot = slots.observed[pos];
                for (t, x) in latent_grads[v].row_mut(slot).iter_mut().zip(back.row(k)) {
                    *t += x;
                }
            }
        }
        let enc_grad = latent_grads[v].select_rows(&slots.observed);
        ae.encoder.backward(enc, &enc_grad, &mut grads.views[v].encoder)?;
    }
    if !grads.is_finite() {
        return Err(Error::Divergence {
            term: "parameter gradient".into(),
        });
    }

    let l_sr = l_koleo + l_rank;
    let objective =
        w.ar * l_ar + w.oa * oa.loss + w.na * l_na + w.koleo * l_koleo + w.rank * l_rank;
    let breakdown = LossBreakdown {
        l_ar,
        l_oa: oa.loss,
        l_na,
        l_koleo,
        l_rank,
        l_sr,
        lambda1: w.oa,
        lambda2: w.na,
        mu: w.koleo,
        total: l_ar + w.oa * oa.loss + w.na * l_na + w.koleo * l_sr,
        per_instance_contrastive: oa.per_instance,
    };
    check_finite("total", objective, &[])?;
    Ok(Evaluation {
        breakdown,
        objective,
        grads,
        batch_latents,
    })
}
