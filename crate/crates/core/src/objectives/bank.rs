//! FIFO memory bank of suspected class-related outliers.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numeric::{row_cosine, Matrix};

/// Where a bank entry came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankOrigin {
    pub epoch: usize,
    pub batch: usize,
    pub instance: usize,
}

/// Detached latent snapshots, one queue per view. All queues hold the same
/// instances in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    queues: Vec<VecDeque<Vec<f64>>>,
    origins: VecDeque<BankOrigin>,
}

impl MemoryBank {
    pub fn new(num_views: usize, capacity: usize) -> Self {
        MemoryBank {
            capacity,
            queues: vec![VecDeque::with_capacity(capacity); num_views],
            origins: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn num_views(&self) -> usize {
        self.queues.len()
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.queues.first()?.front().map(Vec::len)
    }

    pub fn origins(&self) -> impl Iterator<Item = &BankOrigin> {
        self.origins.iter()
    }

    /// Entries of view `v`, oldest first.
    pub fn view_matrix(&self, v: usize) -> Matrix {
        let rows: Vec<&[f64]> = self.queues[v].iter().map(Vec::as_slice).collect();
        Matrix::from_rows(&rows).expect("bank rows share one width")
    }

    /// Appends rows `indices` of every view's batch latents (paired across
    /// views) and evicts the oldest pairs beyond capacity. `instances` maps
    /// batch rows to dataset ids for the origin record.
    pub fn push_tagged(
        &mut self,
        latents: &[&Matrix],
        indices: &[usize],
        instances: &[usize],
        epoch: usize,
        batch: usize,
    ) -> Result<()> {
        if latents.len() != self.queues.len() {
            return Err(Error::contract("bank push needs one latent matrix per view"));
        }
        let rows = latents[0].rows();
        if latents.iter().any(|z| z.rows() != rows) || instances.len() != rows {
            return Err(Error::contract("bank push with misaligned batch rows"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!("bank push index {bad} out of range")));
        }
        if let Some(d) = self.latent_dim() {
            if latents.iter().any(|z| z.cols() != d) {
                return Err(Error::contract("bank push with a different latent width"));
            }
        }
        for &i in indices {
            for (queue, z) in self.queues.iter_mut().zip(latents) {
                queue.push_back(z.row(i).to_vec());
            }
            self.origins.push_back(BankOrigin {
                epoch,
                batch,
                instance: instances[i],
            });
        }
        while self.origins.len() > self.capacity {
            self.origins.pop_front();
            for queue in &mut self.queues {
                queue.pop_front();
            }
        }
        Ok(())
    }

    /// [`MemoryBank::push_tagged`] with batch-row ids as instance ids.
    pub fn push(&mut self, latents: &[&Matrix], indices: &[usize], at: (usize, usize)) -> Result<()> {
        let ids: Vec<usize> = (0..latents.first().map_or(0, |z| z.rows())).collect();
        self.push_tagged(latents, indices, &ids, at.0, at.1)
    }
}

/// Rows with the lowest cross-view agreement: `ceil(eta * rows)` indices in
/// ascending similarity order, ties to the lower index.
///
/// Agreement is the cosine between the two views' latents; with more views
/// it is the mean over view pairs.
pub fn select_potential_outliers(latents: &[&Matrix], eta: f64) -> Result<Vec<usize>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::contract(format!("eta must lie in (0, 1), got {eta}")));
    }
    if latents.len() < 2 {
        return Err(Error::contract("outlier selection needs at least two views"));
    }
    let n = latents[0].rows();
    if n == 0 {
        return Err(Error::contract("outlier selection over an empty batch"));
    }
    if latents.iter().any(|z| z.rows() != n) {
        return Err(Error::contract("outlier selection with misaligned views"));
    }
    let pairs = latents.len() * (latents.len() - 1) / 2;
    let mut sims = Vec::with_capacity(n);
    for i in 0..n {
        let mut total = 0.0;
        for a in 0..latents.len() {
            for b in (a + 1)..latents.len() {
                total += row_cosine(latents[a].row(i), latents[b].row(i))?;
            }
        }
        sims.push((total / pairs as f64, i));
    }
    let count = ((eta * n as f64).ceil() as usize).min(n);
    sims.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    Ok(sims.into_iter().take(count).map(|(_, i)| i).collect())
}

/// Bank capacity holding `window` batches' worth of selected suspects.
pub fn bank_capacity(eta: f64, batch_size: usize, window: usize) -> usize {
    ((eta * batch_size as f64).ceil() as usize) * window
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn selection_count_follows_ratio() {
        let z = Matrix::from_rows(&vec![[1.0, 0.0]; 10]).unwrap();
        assert_eq!(select_potential_outliers(&[&z, &z], 0.2).unwrap().len(), 2);
    }

    #[test]
    fn equal_similarities_pick_lowest_indices() {
        let z = Matrix::from_rows(&vec![[1.0, 1.0]; 10]).unwrap();
        assert_eq!(select_potential_outliers(&[&z, &z], 0.2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn lowest_similarity_is_selected() {
        // cosines with [1, 0]: 0.9, -0.5, 0.3, 0.8
        let angles = [0.9f64, -0.5, 0.3, 0.8];
        let z1 = Matrix::from_rows(&vec![[1.0, 0.0]; 4]).unwrap();
        let rows: Vec<[f64; 2]> = angles.iter().map(|c| [*c, (1.0 - c * c).sqrt()]).collect();
        let z2 = Matrix::from_rows(&rows).unwrap();
        assert_eq!(select_potential_outliers(&[&z1, &z2], 0.25).unwrap(), vec![1]);
    }

    #[test]
    fn selection_rejects_bad_input() {
        let z = col(&[1.0]);
        assert!(select_potential_outliers(&[&z, &z], 0.0).is_err());
        assert!(select_potential_outliers(&[&z, &z], 1.0).is_err());
        let empty = Matrix::zeros(0, 1);
        assert!(select_potential_outliers(&[&empty, &empty], 0.5).is_err());
    }

    #[test]
    fn fifo_eviction_keeps_newest() {
        let mut bank = MemoryBank::new(2, 4);
        let first = col(&[1.0, 2.0]);
        bank.push(&[&first, &first], &[0, 1], (0, 0)).unwrap();
        assert_eq!(bank.len(), 2);
        let second = col(&[3.0, 4.0, 5.0]);
        bank.push(&[&second, &second], &[0, 1, 2], (0, 1)).unwrap();
        assert_eq!(bank.len(), 4);
        assert_eq!(bank.view_matrix(0).as_slice(), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(bank.view_matrix(1).as_slice(), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn views_stay_paired() {
        let mut bank = MemoryBank::new(2, 3);
        let a = col(&[1.0, 2.0, 3.0]);
        let b = col(&[-1.0, -2.0, -3.0]);
        for batch in 0..5 {
            bank.push(&[&a, &b], &[batch % 3, (batch + 1) % 3], (0, batch)).unwrap();
            assert_eq!(bank.view_matrix(0).rows(), bank.view_matrix(1).rows());
            assert!(bank.len() <= bank.capacity());
            for (x, y) in bank.view_matrix(0).as_slice().iter().zip(bank.view_matrix(1).as_slice()) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn capacity_defaults() {
        assert_eq!(bank_capacity(0.05, 256, 8), 13 * 8);
    }
}
