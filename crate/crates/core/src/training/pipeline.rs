//! Data preparation, the training loop and post-training scoring.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AdamState, AutoencoderStack};
use crate::datakit::{
    apply_missing, inject_outliers, load_dataset, synthesize, MultiViewDataset, OutlierType,
};
use crate::detection::{consistency_scores, reconstruction_score, total_score, ScoreReport};
use crate::error::{Error, Result};
use crate::imputation::{impute_all, impute_complete, EntryStatus, LatentViews};
use crate::neighbors::{build_knn, KnnSpace, NeighborIndex, RefreshPolicy};
use crate::numeric::{l2_norm, row_cosine, sq_dist, Matrix, RngStream};
use crate::objectives::{
    bank_capacity, sample_rank_triplets, select_potential_outliers, MemoryBank, RankTriplet,
};

use super::config::{DataSource, TrainConfig};
use super::plan::{evaluate, BatchPlan, TermWeights, ViewSlots};

/// Training data plus, when known, the same data before views were masked.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: MultiViewDataset,
    pub ground_truth: Option<MultiViewDataset>,
}

/// Loads or synthesizes the dataset, then injects outliers and masks views
/// as configured.
pub fn prepare_data(cfg: &TrainConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let master = RngStream::new(cfg.seed);
    let mut ds = match &cfg.data {
        DataSource::Synthetic => synthesize(
            cfg.synth_clusters,
            &cfg.synth_dims,
            cfg.synth_n,
            cfg.synth_noise,
            &mut master.derive(10),
        )?
        .normalized(),
        DataSource::Directory(dir) => {
            let mut ds = load_dataset(dir)?;
            if cfg.normalize {
                ds.normalize();
            }
            ds
        }
    };
    let inject = cfg.rho1 > 0.0 || cfg.rho2 > 0.0 || cfg.rho3 > 0.0;
    if inject {
        if ds.labels.as_ref().is_some_and(|l| l.iter().any(|t| t.is_outlier())) {
            return Err(Error::config(
                "dataset already carries outlier labels; set rho1 = rho2 = rho3 = 0",
            ));
        }
        inject_outliers(&mut ds, cfg.ratios(), &master.derive(11))?;
    }
    let complete = ds.complete_rows().len() == ds.num_instances();
    let ground_truth = (complete && cfg.missing_rate > 0.0).then(|| ds.clone());
    if cfg.missing_rate > 0.0 {
        apply_missing(&mut ds, cfg.missing_rate, &mut master.derive(12))?;
    }
    ds.validate()?;
    Ok(PreparedData {
        dataset: ds,
        ground_truth,
    })
}

/// Latents of every observed entry under `stack`.
pub fn encode_observed(stack: &AutoencoderStack, ds: &MultiViewDataset) -> Result<LatentViews> {
    let observed = (0..ds.num_views())
        .map(|v| {
            let rows = ds.present_rows(v);
            let z = stack.encode(&ds.views[v].select_rows(&rows), v)?;
            Ok((rows, z))
        })
        .collect::<Result<Vec<_>>>()?;
    LatentViews::from_observed(ds.num_instances(), stack.latent_dim(), &observed)
}

/// Scores every instance: reconstruction error over its present views plus
/// consistency of its (imputed where missing) latents against the whole
/// dataset. Also returns the completed latents.
pub fn score_dataset(
    stack: &AutoencoderStack,
    ds: &MultiViewDataset,
    k: usize,
    tau: f64,
) -> Result<(ScoreReport, LatentViews)> {
    let mut latents = encode_observed(stack, ds)?;
    if latents.missing_entries() > 0 {
        impute_complete(&mut latents, k, usize::MAX)?;
    }
    let recon: Vec<Matrix> = (0..ds.num_views())
        .map(|v| stack.decode(&latents.latents[v], v))
        .collect::<Result<_>>()?;
    let view_refs: Vec<&Matrix> = ds.views.iter().collect();
    let recon_refs: Vec<&Matrix> = recon.iter().collect();
    let s_r = (0..ds.num_instances())
        .map(|i| reconstruction_score(i, &view_refs, &recon_refs, &ds.presence[i]))
        .collect::<Result<Vec<_>>>()?;
    let z_refs: Vec<&Matrix> = latents.latents.iter().collect();
    let s_c = consistency_scores(&z_refs, tau)?;
    if s_r.iter().chain(&s_c).any(|s| !s.is_finite()) {
        return Err(Error::Divergence {
            term: "outlier score".into(),
        });
    }
    let report = total_score(&s_r, &s_c, ds.labels.as_deref())?;
    Ok((report, latents))
}

/// Per-epoch record of the objective.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
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
    pub batches: usize,
    /// Mean per-instance contrastive value of labeled inliers / outliers.
    pub inlier_contrastive: Option<f64>,
    pub outlier_contrastive: Option<f64>,
    pub auc: Option<f64>,
    pub imputed: usize,
    pub deferred: usize,
    pub knn_space: Option<KnnSpace>,
}

/// Column header of [`EpochLog::csv_row`].
pub const LOSS_CSV_HEADER: &str = "epoch,l_ar,l_oa,l_na,l_koleo,l_rank,l_sr,lambda1,lambda2,mu,total,inlier_contrastive,outlier_contrastive,auc";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:?}"));
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{}",
            self.epoch,
            self.l_ar,
            self.l_oa,
            self.l_na,
            self.l_koleo,
            self.l_rank,
            self.l_sr,
            self.lambda1,
            self.lambda2,
            self.mu,
            self.total,
            opt(self.inlier_contrastive),
            opt(self.outlier_contrastive),
            opt(self.auc),
        )
    }
}

/// Parameters, optimizer and bank after training, plus the epoch history.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub stack: AutoencoderStack,
    pub adam: AdamState,
    pub bank: MemoryBank,
    pub index: Option<NeighborIndex>,
    pub history: Vec<EpochLog>,
}

fn build_index(
    space: KnnSpace,
    ds: &MultiViewDataset,
    latents: &LatentViews,
    k: usize,
    epoch: usize,
) -> Result<NeighborIndex> {
    let views = (0..ds.num_views())
        .map(|v| match space {
            KnnSpace::InputFeatures => build_knn(&ds.views[v], &ds.present_rows(v), k),
            KnnSpace::LatentFeatures => {
                build_knn(&latents.latents[v], &latents.available_rows(v), k)
            }
        })
        .collect::<Result<_>>()?;
    Ok(NeighborIndex {
        views,
        space,
        built_epoch: epoch,
    })
}

/// Structure of one batch: slot tables, neighbor partners, rank triplets
/// and KoLeo participants.
#[allow(clippy::too_many_arguments)]
pub fn plan_batch<'a>(
    batch: &[usize],
    ds: &MultiViewDataset,
    latents: &LatentViews,
    index: &NeighborIndex,
    cfg: &TrainConfig,
    epoch: usize,
    bank: &'a MemoryBank,
    weights: TermWeights,
    rng: &mut RngStream,
) -> Result<BatchPlan<'a>> {
    let nv = ds.num_views();
    let nb = batch.len();
    let usable = |v: usize, j: usize| ds.is_present(j, v) || latents.status[v][j] != EntryStatus::Missing;

    let mut views = Vec::with_capacity(nv);
    // lists[v][b]: neighbor instance ids of batch row b in view v
    let mut lists: Vec<Vec<Option<Vec<usize>>>> = Vec::with_capacity(nv);
    let mut slot_maps: Vec<HashMap<usize, usize>> = Vec::with_capacity(nv);
    for v in 0..nv {
        let mut instances: Vec<usize> = batch.to_vec();
        let mut slot_of: HashMap<usize, usize> =
            batch.iter().enumerate().map(|(s, &i)| (i, s)).collect();
        let mut view_lists = Vec::with_capacity(nb);
        for &i in batch {
            let list = index.views[v]
                .neighbors(i)
                .filter(|l| l.iter().all(|&j| usable(v, j)));
            if let Some(l) = &list {
                for &j in l {
                    slot_of.entry(j).or_insert_with(|| {
                        instances.push(j);
                        instances.len() - 1
                    });
                }
            }
            view_lists.push(list);
        }
        let mut observed = Vec::new();
        let mut constants = Vec::new();
        for (s, &i) in instances.iter().enumerate() {
            if ds.is_present(i, v) {
                observed.push(s);
            } else {
                constants.push((s, latents.latents[v].row(i).to_vec()));
            }
        }
        let input_ids: Vec<usize> = observed.iter().map(|&s| instances[s]).collect();
        let reconstruct = (0..observed.iter().take_while(|&&s| s < nb).count()).collect();
        views.push(ViewSlots {
            inputs: ds.views[v].select_rows(&input_ids),
            instances,
            observed,
            constants,
            reconstruct,
        });
        lists.push(view_lists);
        slot_maps.push(slot_of);
    }

    let mut na_slots = vec![Vec::new(); nv];
    for b in 0..nb {
        if lists.iter().all(|l| l[b].is_some()) {
            for v in 0..nv {
                let l = lists[v][b].as_ref().expect("checked above");
                na_slots[v].push(l.iter().map(|j| slot_maps[v][j]).collect::<Vec<_>>());
            }
        }
    }

    let mut rank_triplets = Vec::with_capacity(nv);
    let mut koleo_rows = Vec::with_capacity(nv);
    for v in 0..nv {
        let anchors: Vec<usize> = (0..nb)
            .filter(|&b| lists[v][b].is_some())
            .map(|b| batch[b])
            .collect();
        let sampled = sample_rank_triplets(&anchors, &index.views[v], cfg.k_pos, cfg.k_neg, rng)?;
        rank_triplets.push(
            sampled
                .into_iter()
                .map(|t| RankTriplet {
                    anchor: slot_maps[v][&t.anchor],
                    positive: slot_maps[v][&t.positive],
                    negative: slot_maps[v][&t.negative],
                })
                .collect(),
        );
        koleo_rows.push(
            (0..nb)
                .filter(|&b| {
                    let i = batch[b];
                    ds.is_present(i, v) || latents.first_imputed[v][i] != Some(epoch)
                })
                .collect(),
        );
    }

    Ok(BatchPlan {
        batch: batch.to_vec(),
        views,
        na_slots,
        rank_triplets,
        koleo_rows,
        bank,
        weights,
        tau: cfg.tau,
        na_tau: cfg.na_tau,
        rank_sign: cfg.rank_sign,
    })
}

fn tag_divergence(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Divergence { term } => Error::Divergence {
            term: format!("{term} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

fn labels_have_both(ds: &MultiViewDataset) -> bool {
    ds.labels.as_ref().is_some_and(|l| {
        l.iter().any(|t| t.is_outlier()) && l.iter().any(|t| !t.is_outlier())
    })
}

/// Runs the full training schedule on `ds`.
pub fn train(cfg: &TrainConfig, ds: &MultiViewDataset) -> Result<TrainedModel> {
    cfg.validate()?;
    ds.validate()?;
    if ds.num_views() < 2 {
        return Err(Error::config("training needs at least two views"));
    }
    let master = RngStream::new(cfg.seed);
    let mut stack = AutoencoderStack::init(&ds.view_dims(), &cfg.hidden, &mut master.derive(2))?;
    let mut adam = AdamState::new(&stack, cfg.learning_rate);
    let mut bank = MemoryBank::new(ds.num_views(), bank_capacity(cfg.eta, cfg.batch_size, cfg.bank_window));
    let policy = RefreshPolicy {
        switch_epoch: cfg.knn_switch,
        refresh_interval: cfg.knn_refresh,
    };
    let labels = ds.labels.clone();
    let evaluate_auc = cfg.eval_interval > 0 && labels_have_both(ds);
    let complete = ds.complete_rows();
    if complete.is_empty() {
        return Err(Error::config("no instance is present in every view"));
    }

    let mut index: Option<NeighborIndex> = None;
    let mut history = Vec::with_capacity(cfg.total_epochs);
    for epoch in 0..cfg.total_epochs {
        let weights = cfg.weights_at(epoch)?;
        let term_weights = TermWeights::objective(weights.lambda1, weights.lambda2, weights.mu);
        let mut log = EpochLog {
            epoch,
            lambda1: weights.lambda1,
            lambda2: weights.lambda2,
            mu: weights.mu,
            ..Default::default()
        };

        let mut latents = encode_observed(&stack, ds)?;
        let imputing = epoch >= cfg.impute_start;
        if imputing {
            let summary = impute_all(&mut latents, cfg.k, epoch)?;
            log.imputed = summary.imputed;
            log.deferred = summary.deferred.len();
        }
        let last = index.as_ref().map(|ix| (ix.space, ix.built_epoch));
        if policy.needs_rebuild(epoch, last) {
            index = Some(build_index(policy.space_at(epoch), ds, &latents, cfg.k, epoch)?);
        }
        let ix = index.as_ref().expect("built above");
        log.knn_space = Some(ix.space);

        let mut scope: Vec<usize> = if imputing {
            (0..ds.num_instances()).filter(|&i| latents.is_filled(i)).collect()
        } else {
            complete.clone()
        };
        scope.shuffle(&mut master.derive(3).derive(epoch as u64));
        let mut triplet_rng = master.derive(4).derive(epoch as u64);
        let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0usize, 0.0, 0usize);

        for (b, batch) in scope.chunks(cfg.batch_size).enumerate() {
            let plan = plan_batch(batch, ds, &latents, ix, cfg, epoch, &bank, term_weights, &mut triplet_rng)?;
            let eval = evaluate(&stack, &plan).map_err(|e| tag_divergence(e, epoch, b))?;
            adam.step(&mut stack, &eval.grads)?;

            let br = &eval.breakdown;
            log.l_ar += br.l_ar;
            log.l_oa += br.l_oa;
            log.l_na += br.l_na;
            log.l_koleo += br.l_koleo;
            log.l_rank += br.l_rank;
            log.batches += 1;
            if let Some(labels) = &labels {
                for (&i, &c) in batch.iter().zip(&br.per_instance_contrastive) {
                    if labels[i].is_outlier() {
                        out_sum += c;
                        out_n += 1;
                    } else {
                        in_sum += c;
                        in_n += 1;
                    }
                }
            }

            let complete_rows: Vec<usize> = (0..batch.len()).filter(|&r| ds.is_complete(batch[r])).collect();
            if !complete_rows.is_empty() {
                let sub: Vec<Matrix> = eval.batch_latents.iter().map(|z| z.select_rows(&complete_rows)).collect();
                let sub_refs: Vec<&Matrix> = sub.iter().collect();
                let picked = select_potential_outliers(&sub_refs, cfg.eta)?;
                let rows: Vec<usize> = picked.iter().map(|&p| complete_rows[p]).collect();
                let refs: Vec<&Matrix> = eval.batch_latents.iter().collect();
                bank.push_tagged(&refs, &rows, batch, epoch, b)?;
            }
        }
        log.l_sr = log.l_koleo + log.l_rank;
        log.total = log.l_ar + log.lambda1 * log.l_oa + log.lambda2 * log.l_na + log.mu * log.l_sr;
        log.inlier_contrastive = (in_n > 0).then(|| in_sum / in_n as f64);
        log.outlier_contrastive = (out_n > 0).then(|| out_sum / out_n as f64);
        let due = (epoch + 1) % cfg.eval_interval.max(1) == 0 || epoch + 1 == cfg.total_epochs;
        if evaluate_auc && due {
            log.auc = score_dataset(&stack, ds, cfg.k, cfg.tau)?.0.auc;
        }
        history.push(log);
    }
    Ok(TrainedModel {
        stack,
        adam,
        bank,
        index,
        history,
    })
}

/// One masked entry compared with its ground-truth latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputedEntry {
    pub instance: usize,
    pub view: usize,
    pub cosine: f64,
    pub l2: f64,
}

/// Quality of imputed latents against the latents of the true inputs, with
/// zero and per-view mean imputation as baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationQuality {
    pub entries: Vec<ImputedEntry>,
    pub crt_cosine: f64,
    pub mean_cosine: f64,
    pub zero_cosine: f64,
    pub crt_l2: f64,
    pub mean_l2: f64,
    pub zero_l2: f64,
}

impl ImputationQuality {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,view,cosine,l2\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:?},{:?}\n", e.instance, e.view, e.cosine, e.l2));
        }
        out
    }
}

/// Compares the imputed entries of `latents` with `stack`'s encodings of
/// the masked inputs in `truth`.
pub fn imputation_quality(
    stack: &AutoencoderStack,
    ds: &MultiViewDataset,
    truth: &MultiViewDataset,
    latents: &LatentViews,
) -> Result<ImputationQuality> {
    let d = stack.latent_dim();
    let zero = vec![0.0; d];
    let mut entries = Vec::new();
    let (mut mean_cos, mut zero_cos, mut mean_l2, mut zero_l2) = (0.0, 0.0, 0.0, 0.0);
    for v in 0..ds.num_views() {
        let observed = ds.present_rows(v);
        let mut mean = vec![0.0; d];
        for &i in &observed {
            for (m, x) in mean.iter_mut().zip(latents.latents[v].row(i)) {
                *m += x / observed.len() as f64;
            }
        }
        let masked: Vec<usize> = (0..ds.num_instances())
            .filter(|&i| !ds.is_present(i, v) && truth.is_present(i, v))
            .collect();
        if masked.is_empty() {
            continue;
        }
        let true_z = stack.encode(&truth.views[v].select_rows(&masked), v)?;
        for (k, &i) in masked.iter().enumerate() {
            let t = true_z.row(k);
            let z = latents.latents[v].row(i);
            entries.push(ImputedEntry {
                instance: i,
                view: v,
                cosine: row_cosine(z, t)?,
                l2: sq_dist(z, t).sqrt(),
            });
            mean_cos += row_cosine(&mean, t)?;
            zero_cos += row_cosine(&zero, t)?;
            mean_l2 += sq_dist(&mean, t).sqrt();
            zero_l2 += l2_norm(t);
        }
    }
    if entries.is_empty() {
        return Err(Error::contract("no masked entries to compare"));
    }
    let n = entries.len() as f64;
    Ok(ImputationQuality {
        crt_cosine: entries.iter().map(|e| e.cosine).sum::<f64>() / n,
        crt_l2: entries.iter().map(|e| e.l2).sum::<f64>() / n,
        mean_cosine: mean_cos / n,
        zero_cosine: zero_cos / n,
        mean_l2: mean_l2 / n,
        zero_l2: zero_l2 / n,
        entries,
    })
}

/// Everything an experiment produces.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: TrainConfig,
    pub report: ScoreReport,
    pub model: TrainedModel,
    pub imputation: Option<ImputationQuality>,
    pub wall_clock_seconds: f64,
}

impl ExperimentResult {
    /// Highest diagnostic AUC and its epoch.
    pub fn peak_auc(&self) -> Option<(usize, f64)> {
        self.model
            .history
            .iter()
            .filter_map(|l| l.auc.map(|a| (l.epoch, a)))
            .fold(None, |best, (e, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((e, a)),
            })
    }

    pub fn type_auc(&self, t: OutlierType) -> Option<f64> {
        self.report.per_type_auc.get(t.name()).copied()
    }
}

/// Prepares data, trains, and scores.
pub fn run_experiment(cfg: &TrainConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let data = prepare_data(cfg)?;
    let model = train(cfg, &data.dataset)?;
    let (report, latents) = score_dataset(&model.stack, &data.dataset, cfg.k, cfg.tau)?;
    let imputation = data
        .ground_truth
        .as_ref()
        .map(|truth| imputation_quality(&model.stack, &data.dataset, truth, &latents))
        .transpose()?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        report,
        model,
        imputation,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}
