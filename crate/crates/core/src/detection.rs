//! Outlier scores (reconstruction plus cross-view consistency) and
//! rank-based AUC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datakit::OutlierType;
use crate::error::{Error, Result};
use crate::numeric::{logsumexp_nonempty, normalize_rows, sq_dist, Matrix};
use crate::objectives::contrastive_loss;

/// `½ Σ_v ‖x_i − x̂_i‖²` over the views instance `i` has.
pub fn reconstruction_score(
    instance: usize,
    views: &[&Matrix],
    reconstructions: &[&Matrix],
    present: &[bool],
) -> Result<f64> {
    if views.len() != reconstructions.len() || views.len() != present.len() {
        return Err(Error::contract("reconstruction score needs matching view lists"));
    }
    if !present.iter().any(|&p| p) {
        return Err(Error::contract(format!("instance {instance} has no views")));
    }
    Ok(views
        .iter()
        .zip(reconstructions)
        .zip(present)
        .filter(|(_, &p)| p)
        .map(|((x, xr), _)| 0.5 * sq_dist(x.row(instance), xr.row(instance)))
        .sum())
}

/// Cross-view consistency score of every instance against the whole
/// dataset as negative pool. `latents[v]` must hold a value for every
/// instance.
pub fn consistency_scores(latents: &[&Matrix], temperature: f64) -> Result<Vec<f64>> {
    Ok(contrastive_loss(latents, None, temperature, false)?.per_instance)
}

/// Consistency score of a single instance, evaluated term by term.
pub fn consistency_score(instance: usize, latents: &[&Matrix], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::contract("temperature must be positive"));
    }
    if latents.len() < 2 || instance >= latents[0].rows() {
        return Err(Error::contract("consistency score needs two views and a valid instance"));
    }
    let units: Vec<Matrix> = latents.iter().map(|z| normalize_rows(z).0).collect();
    let n = units[0].rows();
    let pairs = latents.len() * (latents.len() - 1) / 2;
    let mut score = 0.0;
    for a in 0..latents.len() {
        for b in (a + 1)..latents.len() {
            for (m, other) in [(a, b), (b, a)] {
                let anchor = units[m].row(instance);
                let sim = |row: &[f64]| crate::numeric::dot(anchor, row) / temperature;
                let logits: Vec<f64> = (0..n)
                    .flat_map(|j| [sim(units[a].row(j)), sim(units[b].row(j))])
                    .collect();
                score += 0.5 / pairs as f64
                    * (logsumexp_nonempty(&logits) - sim(units[other].row(instance)));
            }
        }
    }
    Ok(score)
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Exact: computed from integer pair counts.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("AUC of NaN scores"));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::contract("AUC needs at least one positive and one negative label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        let group_neg = (end - start) as u64 - group_pos;
        twice_u += 2 * group_pos * negatives_below + group_pos * group_neg;
        negatives_below += group_neg;
        start = end;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Scores of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub instance: usize,
    pub s_r: f64,
    pub s_c: f64,
    pub s: f64,
    pub label: Option<OutlierType>,
}

/// Per-instance scores plus AUCs when labels are known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    pub auc: Option<f64>,
    /// AUC of each outlier type against the inliers alone.
    pub per_type_auc: BTreeMap<String, f64>,
}

impl ScoreReport {
    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.s).collect()
    }

    /// `instance_id,s_r,s_c,s[,label,type]`, floats in round-trip form.
    pub fn to_csv(&self) -> String {
        let labeled = self.rows.iter().any(|r| r.label.is_some());
        let mut out = String::from(if labeled {
            "instance_id,s_r,s_c,s,label,type\n"
        } else {
            "instance_id,s_r,s_c,s\n"
        });
        for r in &self.rows {
            out.push_str(&format!("{},{:?},{:?},{:?}", r.instance, r.s_r, r.s_c, r.s));
            if let Some(l) = r.label {
                out.push_str(&format!(",{},{}", u8::from(l.is_outlier()), l.name()));
            } else if labeled {
                out.push_str(",,");
            }
            out.push('\n');
        }
        out
    }
}

/// Assembles `s = s_r + s_c` and, with labels, overall and per-type AUC.
pub fn total_score(s_r: &[f64], s_c: &[f64], labels: Option<&[OutlierType]>) -> Result<ScoreReport> {
    if s_r.len() != s_c.len() || labels.is_some_and(|l| l.len() != s_r.len()) {
        return Err(Error::contract("score components differ in length"));
    }
    let rows: Vec<ScoreRow> = s_r
        .iter()
        .zip(s_c)
        .enumerate()
        .map(|(i, (&r, &c))| ScoreRow {
            instance: i,
            s_r: r,
            s_c: c,
            s: r + c,
            label: labels.map(|l| l[i]),
        })
        .collect();
    let mut report = ScoreReport {
        rows,
        auc: None,
        per_type_auc: BTreeMap::new(),
    };
    if let Some(labels) = labels {
        let totals = report.totals();
        let binary: Vec<bool> = labels.iter().map(|l| l.is_outlier()).collect();
        if binary.iter().any(|&b| b) && binary.iter().any(|&b| !b) {
            report.auc = Some(auc(&totals, &binary)?);
        }
        for t in OutlierType::OUTLIER_TYPES {
            let (sub_scores, sub_labels): (Vec<f64>, Vec<bool>) = labels
                .iter()
                .zip(&totals)
                .filter(|(l, _)| **l == t || **l == OutlierType::Inlier)
                .map(|(l, s)| (*s, *l == t))
                .unzip();
            if sub_labels.iter().any(|&b| b) && sub_labels.iter().any(|&b| !b) {
                report
                    .per_type_auc
                    .insert(t.name().to_string(), auc(&sub_scores, &sub_labels)?);
            }
        }
    }
    Ok(report)
}

/// One histogram bin of total scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub inliers: usize,
    pub outliers: usize,
}

/// Equal-width bins over the score range, split by ground truth (unlabeled
/// rows count as inliers).
pub fn score_histogram(report: &ScoreReport, bins: usize) -> Vec<HistogramBin> {
    let totals = report.totals();
    if totals.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lower: lo + b as f64 * width,
            upper: lo + (b + 1) as f64 * width,
            inliers: 0,
            outliers: 0,
        })
        .collect();
    for row in &report.rows {
        let b = (((row.s - lo) / width) as usize).min(bins - 1);
        if row.label.is_some_and(OutlierType::is_outlier) {
            out[b].outliers += 1;
        } else {
            out[b].inliers += 1;
        }
    }
    out
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lower,bin_upper,inliers,outliers\n");
    for b in bins {
        out.push_str(&format!("{:?},{:?},{},{}\n", b.lower, b.upper, b.inliers, b.outliers));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(auc(&[0.5, 0.5], &[true, true]).is_err());
        assert!(auc(&[f64::NAN, 0.5], &[true, false]).is_err());
    }

    #[test]
    fn reconstruction_score_examples() {
        let x = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let zero = Matrix::zeros(1, 2);
        let off = Matrix::from_rows(&[[1.0, 3.0]]).unwrap();
        assert_eq!(reconstruction_score(0, &[&x, &x], &[&x, &x], &[true, true]).unwrap(), 0.0);
        // residual norm 2 in the one present view
        assert_eq!(reconstruction_score(0, &[&x, &x], &[&off, &zero], &[true, false]).unwrap(), 2.0);
        assert!(reconstruction_score(0, &[&x], &[&x], &[false]).is_err());
    }

    #[test]
    fn single_instance_identical_views_gives_log_two() {
        let z = Matrix::from_rows(&[[0.2, 0.7]]).unwrap();
        assert_relative_eq!(consistency_score(0, &[&z, &z], 0.5).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(consistency_scores(&[&z, &z], 0.5).unwrap()[0], 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn agreeing_views_score_lower_than_orthogonal() {
        let z1 = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]]).unwrap();
        let mut agree = z1.clone();
        agree.row_mut(3).copy_from_slice(&[0.5, 0.5, 0.0]);
        let mut orth = z1.clone();
        orth.row_mut(3).copy_from_slice(&[0.0, 0.0, 1.0]);
        let a = consistency_score(3, &[&z1, &agree], 0.5).unwrap();
        let o = consistency_score(3, &[&z1, &orth], 0.5).unwrap();
        assert!(a < o);
    }

    #[test]
    fn batch_and_single_scores_agree() {
        let mut rng = RngStream::new(12);
        let mk = |rng: &mut RngStream| Matrix::from_vec(7, 4, (0..28).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let views = [mk(&mut rng), mk(&mut rng), mk(&mut rng)];
        let refs: Vec<&Matrix> = views.iter().collect();
        let all = consistency_scores(&refs, 0.5).unwrap();
        for (i, s) in all.iter().enumerate() {
            assert!(s.is_finite());
            assert_relative_eq!(*s, consistency_score(i, &refs, 0.5).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn report_assembly() {
        let labels = [OutlierType::Inlier, OutlierType::Attribute, OutlierType::Class, OutlierType::Inlier];
        let r = total_score(&[1.0, 5.0, 0.1, 0.2], &[2.0, 1.0, 9.0, 0.3], Some(&labels)).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0].s, 3.0);
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.per_type_auc.get("attribute"), Some(&1.0));
        assert!(!r.per_type_auc.contains_key("class-attribute"));
        let csv = r.to_csv();
        assert!(csv.starts_with("instance_id,s_r,s_c,s,label,type\n0,1.0,2.0,3.0,0,inlier\n"));
        let hist = score_histogram(&r, 4);
        assert_eq!(hist.iter().map(|b| b.inliers + b.outliers).sum::<usize>(), 4);
        assert_eq!(hist.iter().map(|b| b.outliers).sum::<usize>(), 2);
    }

    proptest! {
        #[test]
        fn auc_matches_all_pairs(seed in any::<u64>(), n in 2usize..200) {
            let mut rng = RngStream::new(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            labels[0] = true;
            labels[1] = false;
            prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_monotone_maps(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let scores: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut labels: Vec<bool> = (0..50).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
        }

        #[test]
        fn constant_shift_of_consistency_keeps_auc(seed in any::<u64>(), shift in -10.0f64..10.0) {
            let mut rng = RngStream::new(seed);
            let s_r: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..2.0)).collect();
            let s_c: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..2.0)).collect();
            let shifted: Vec<f64> = s_c.iter().map(|c| c + shift).collect();
            let mut labels = vec![OutlierType::Inlier; 30];
            for i in (0..30).step_by(4) {
                labels[i] = OutlierType::Class;
            }
            let a = total_score(&s_r, &s_c, Some(&labels)).unwrap().auc.unwrap();
            let b = total_score(&s_r, &shifted, Some(&labels)).unwrap().auc.unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
