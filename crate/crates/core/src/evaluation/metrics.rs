use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognition::GaitEnergyImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiceMode {
    #[default]
    #[serde(rename = "soft")]
    Soft,
    #[serde(rename = "hard_threshold_0.5")]
    Hard,
}

impl std::str::FromStr for DiceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(DiceMode::Soft),
            "hard" | "hard_threshold_0.5" => Ok(DiceMode::Hard),
            other => Err(Error::InvalidParameter(format!("unknown dice mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceResult {
    pub score: f64,
    pub mode: DiceMode,
}

/// Dice overlap of two equally sized maps with values in [0, 1].
/// Soft mode is `2·Σab / (Σa² + Σb²)`, which equals the set Dice on binary
/// maps and is exactly 1 for identical real-valued maps. Both empty counts
/// as perfect agreement.
pub fn dice_values(a: &[f64], b: &[f64], mode: DiceMode) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let (inter, total) = match mode {
        DiceMode::Soft => a.iter().zip(b).fold((0.0, 0.0), |(i, t), (&x, &y)| (i + x * y, t + x * x + y * y)),
        DiceMode::Hard => a.iter().zip(b).fold((0.0, 0.0), |(i, t), (&x, &y)| {
            let (x, y) = ((x >= 0.5) as u8 as f64, (y >= 0.5) as u8 as f64);
            (i + x * y, t + x + y)
        }),
    };
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * inter / total).clamp(0.0, 1.0))
}

pub fn dice(a: &GaitEnergyImage, b: &GaitEnergyImage, mode: DiceMode) -> Result<DiceResult> {
    Ok(DiceResult { score: dice_values(a.values(), b.values(), mode)?, mode })
}

/// Rank-k accuracies for k = 1..=K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcSeries {
    pub accuracies: Vec<f64>,
}

impl CmcSeries {
    /// Accuracy at 1-based `rank`.
    pub fn at(&self, rank: usize) -> Option<f64> {
        rank.checked_sub(1).and_then(|i| self.accuracies.get(i)).copied()
    }

    pub fn len(&self) -> usize {
        self.accuracies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracies.is_empty()
    }
}

/// One query for [`compute_cmc`]: candidate ids, best first, and the true id.
pub type RankedQuery = (Vec<String>, String);

pub fn compute_cmc(queries: &[RankedQuery], k: usize) -> Result<CmcSeries> {
    if queries.is_empty() {
        return Err(Error::Empty("CMC needs at least one query".into()));
    }
    let classes = queries.iter().map(|(r, _)| r.len()).min().unwrap_or(0);
    if k == 0 || k > classes {
        return Err(Error::InvalidParameter(format!("CMC rank {k} must be in 1..={classes}")));
    }
    let mut hits = vec![0usize; k];
    for (ranked, truth) in queries {
        if let Some(pos) = ranked.iter().position(|c| c == truth) {
            for h in hits.iter_mut().skip(pos) {
                *h += 1;
            }
        }
    }
    let n = queries.len() as f64;
    Ok(CmcSeries { accuracies: hits.iter().map(|&h| h as f64 / n).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_dice_two_vs_one_pixel() {
        let a = [1.0, 1.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0, 0.0];
        assert!((dice_values(&a, &b, DiceMode::Hard).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_values(&a, &[0.0, 0.0, 1.0, 1.0], DiceMode::Hard).unwrap(), 0.0);
    }

    #[test]
    fn empty_pair_is_one_and_mismatch_errors() {
        assert_eq!(dice_values(&[0.0; 3], &[0.0; 3], DiceMode::Soft).unwrap(), 1.0);
        assert_eq!(dice_values(&[0.2; 3], &[0.4; 3], DiceMode::Hard).unwrap(), 1.0);
        assert!(dice_values(&[0.0; 3], &[0.0; 2], DiceMode::Soft).is_err());
    }

    #[test]
    fn cmc_from_hand_ranks() {
        let classes: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let rot = |k: usize| -> Vec<String> { classes.iter().cycle().skip(k).take(4).cloned().collect() };
        // true labels sit at ranks 1, 2 and 4
        let q = vec![(rot(0), "a".to_string()), (rot(0), "b".to_string()), (rot(1), "a".to_string())];
        let cmc = compute_cmc(&q, 4).unwrap();
        let want = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0];
        for (x, y) in cmc.accuracies.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(compute_cmc(&q, 5).is_err());
        assert!(compute_cmc(&[], 1).is_err());
    }

    #[test]
    fn dice_mode_serializes_to_contract_names() {
        assert_eq!(serde_json::to_string(&DiceMode::Hard).unwrap(), "\"hard_threshold_0.5\"");
        assert_eq!("soft".parse::<DiceMode>().unwrap(), DiceMode::Soft);
    }
}
