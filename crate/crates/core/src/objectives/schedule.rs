use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear weight of the spreading term: 0 → `mu1` over the warm-up,
/// then `mu1` → `mu2` until the last epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuSchedule {
    pub mu1: f64,
    pub mu2: f64,
    pub warm_epochs: usize,
    pub total_epochs: usize,
}

impl MuSchedule {
    pub fn new(mu1: f64, mu2: f64, warm_epochs: usize, total_epochs: usize) -> Result<Self> {
        if !(mu1 >= 0.0 && mu2 >= 0.0) {
            return Err(Error::config("mu1 and mu2 must be nonnegative"));
        }
        if warm_epochs >= total_epochs {
            return Err(Error::config(format!(
                "warm_epochs ({warm_epochs}) must be below total_epochs ({total_epochs})"
            )));
        }
        Ok(MuSchedule {
            mu1,
            mu2,
            warm_epochs,
            total_epochs,
        })
    }

    pub fn mu_at(&self, epoch: usize) -> Result<f64> {
        if epoch > self.total_epochs {
            return Err(Error::contract(format!(
                "epoch {epoch} beyond schedule end {}",
                self.total_epochs
            )));
        }
        let e = epoch as f64;
        let warm = self.warm_epochs as f64;
        if epoch <= self.warm_epochs {
            if self.warm_epochs == 0 {
                return Ok(self.mu1);
            }
            return Ok(self.mu1 * e / warm);
        }
        let span = (self.total_epochs - self.warm_epochs) as f64;
        Ok(self.mu1 + (self.mu2 - self.mu1) * (e - warm) / span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_examples() {
        let s = MuSchedule::new(0.01, 0.2, 100, 200).unwrap();
        assert_eq!(s.mu_at(0).unwrap(), 0.0);
        assert_relative_eq!(s.mu_at(50).unwrap(), 0.005, epsilon = 1e-15);
        assert_relative_eq!(s.mu_at(100).unwrap(), 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.mu_at(150).unwrap(), 0.105, epsilon = 1e-15);
        assert_relative_eq!(s.mu_at(200).unwrap(), 0.2, epsilon = 1e-15);
        assert!(s.mu_at(201).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(MuSchedule::new(0.1, 0.2, 200, 200).is_err());
        assert!(MuSchedule::new(-0.1, 0.2, 10, 200).is_err());
    }

    #[test]
    fn nondecreasing_and_continuous() {
        let s = MuSchedule::new(0.02, 0.4, 100, 300).unwrap();
        let mut prev = s.mu_at(0).unwrap();
        for e in 1..=300 {
            let cur = s.mu_at(e).unwrap();
            assert!(cur >= prev);
            assert!(cur - prev <= 0.4 / 200.0 + 1e-12);
            prev = cur;
        }
    }
}
