use rand::seq::SliceRandom;
use rand::Rng;

use super::{ratio_count, MultiViewDataset, ProvenanceStep};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// Removes one uniformly chosen view from each of `ceil(rate·N)` distinct
/// instances that still have at least two views. Removed rows are zeroed.
/// Returns the affected instances, ascending.
pub fn apply_missing(ds: &mut MultiViewDataset, rate: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("missing rate must lie in [0, 1), got {rate}")));
    }
    let count = ratio_count(rate, ds.num_instances());
    let mut eligible: Vec<usize> = (0..ds.num_instances())
        .filter(|&i| ds.presence[i].iter().filter(|&&p| p).count() >= 2)
        .collect();
    if eligible.len() < count {
        return Err(Error::config(format!(
            "cannot drop a view from {count} instances, only {} have two or more views",
            eligible.len()
        )));
    }
    eligible.shuffle(rng);
    eligible.truncate(count);
    eligible.sort_unstable();
    for &i in &eligible {
        let present: Vec<usize> = (0..ds.num_views()).filter(|&v| ds.presence[i][v]).collect();
        let v = present[rng.random_range(0..present.len())];
        ds.presence[i][v] = false;
        ds.views[v].row_mut(i).fill(0.0);
    }
    ds.provenance.push(ProvenanceStep::Masked {
        rate,
        count,
        seed: rng.seed(),
    });
    Ok(eligible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::synthesize;

    #[test]
    fn zero_rate_keeps_everything() {
        let mut ds = synthesize(3, &[4, 4], 30, 0.1, &mut RngStream::new(0)).unwrap();
        apply_missing(&mut ds, 0.0, &mut RngStream::new(1)).unwrap();
        assert_eq!(ds.complete_rows().len(), 30);
    }

    #[test]
    fn bi_view_rate_definition() {
        let mut ds = synthesize(5, &[4, 4], 1000, 0.1, &mut RngStream::new(0)).unwrap();
        let dropped = apply_missing(&mut ds, 0.3, &mut RngStream::new(1)).unwrap();
        assert_eq!(dropped.len(), 300);
        assert_eq!(ds.complete_rows().len(), 700);
        assert!((ds.missing_rate() - 0.3).abs() < 1e-12);
        for &i in &dropped {
            assert_eq!(ds.presence[i].iter().filter(|&&p| p).count(), 1);
            let gone = ds.presence[i].iter().position(|&p| !p).unwrap();
            assert!(ds.views[gone].row(i).iter().all(|&x| x == 0.0));
        }
        ds.validate().unwrap();
    }

    #[test]
    fn never_removes_the_last_view() {
        let mut ds = synthesize(2, &[2, 2, 2], 20, 0.1, &mut RngStream::new(0)).unwrap();
        for round in 0..2 {
            apply_missing(&mut ds, 0.9, &mut RngStream::new(round)).unwrap();
            ds.validate().unwrap();
        }
        let mut bi = synthesize(2, &[2, 2], 10, 0.1, &mut RngStream::new(0)).unwrap();
        apply_missing(&mut bi, 0.5, &mut RngStream::new(1)).unwrap();
        // five complete instances remain, six removals requested
        assert!(apply_missing(&mut bi, 0.6, &mut RngStream::new(2)).is_err());
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut ds = synthesize(2, &[2, 2], 10, 0.1, &mut RngStream::new(0)).unwrap();
        assert!(apply_missing(&mut ds, 1.0, &mut RngStream::new(0)).is_err());
    }
}
