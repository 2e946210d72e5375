use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Stops training once the epoch-mean loss improves by less than
/// `min_relative_improvement` for `patience` consecutive epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Saturation {
    pub min_relative_improvement: f64,
    pub patience: usize,
}

impl Default for Saturation {
    fn default() -> Self {
        Saturation { min_relative_improvement: 1e-4, patience: 5 }
    }
}

impl Saturation {
    /// True when `history` ends with `patience` stalled epochs.
    pub fn reached(&self, history: &[f64]) -> bool {
        if self.patience == 0 || history.len() <= self.patience {
            return false;
        }
        history.windows(2).rev().take(self.patience).all(|w| {
            let (prev, cur) = (w[0], w[1]);
            let scale = prev.abs().max(f64::MIN_POSITIVE);
            (prev - cur) / scale < self.min_relative_improvement
        })
    }
}

/// Per-epoch hook: receives the epoch index, its mean loss and the model.
pub type EpochHook<'a, M> = &'a mut dyn FnMut(usize, f64, &M) -> ControlFlow<()>;

/// Shuffled minibatches of `0..n` for one epoch.
pub(crate) fn minibatches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_needs_consecutive_stalls() {
        let s = Saturation { min_relative_improvement: 1e-3, patience: 2 };
        assert!(!s.reached(&[1.0, 0.5]));
        assert!(!s.reached(&[1.0, 0.5, 0.4999, 0.3]));
        assert!(s.reached(&[1.0, 0.5, 0.4999, 0.4999]));
        // a worsening epoch counts as stalled
        assert!(s.reached(&[1.0, 0.5, 0.6, 0.6]));
    }
}
