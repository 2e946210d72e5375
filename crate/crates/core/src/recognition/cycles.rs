use serde::{Deserialize, Serialize};

use crate::silhouette::{FrameStatus, GaitSequence, FRAME_HEIGHT, FRAME_WIDTH};

/// Gait cycles of a sequence as half-open frame ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSegmentation {
    pub cycles: Vec<(usize, usize)>,
    /// Set when no periodicity was found and the whole sequence is one span.
    pub heuristic: bool,
}

/// Minimum normalized autocorrelation accepted as a periodicity peak.
const MIN_PEAK: f64 = 0.3;

/// Horizontal extent of the foreground in the lower half of each frame
/// (the stride width); `None` for occluded frames.
pub fn stride_width_signal(seq: &GaitSequence) -> Vec<Option<f64>> {
    seq.frames()
        .iter()
        .map(|f| {
            if f.status() == FrameStatus::Occluded {
                return None;
            }
            let (mut lo, mut hi) = (FRAME_WIDTH, 0);
            for y in FRAME_HEIGHT / 2..FRAME_HEIGHT {
                let row = &f.pixels()[y * FRAME_WIDTH..(y + 1) * FRAME_WIDTH];
                if let Some(first) = row.iter().position(|&p| p == 1) {
                    let last = row.iter().rposition(|&p| p == 1).expect("row has foreground");
                    lo = lo.min(first);
                    hi = hi.max(last);
                }
            }
            Some(if hi >= lo { (hi - lo + 1) as f64 } else { 0.0 })
        })
        .collect()
}

/// Normalized autocorrelation of a mean-removed signal with gaps.
fn autocorrelation(signal: &[Option<f64>], lag: usize) -> f64 {
    let present: Vec<f64> = signal.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / present.len().max(1) as f64;
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 0..signal.len().saturating_sub(lag) {
        if let (Some(a), Some(b)) = (signal[t], signal[t + lag]) {
            sum += (a - mean) * (b - mean);
            n += 1;
        }
    }
    if n == 0 || var <= 1e-12 {
        return 0.0;
    }
    sum / n as f64 / var
}

/// Manifest boundaries when present; otherwise the stride-width signal's
/// period is taken as a half cycle (one step) and the sequence is cut into
/// whole cycles starting at the first widest-stride frame.
pub fn segment_cycles(seq: &GaitSequence) -> CycleSegmentation {
    if let Some(cycles) = seq.cycle_boundaries() {
        return CycleSegmentation { cycles: cycles.to_vec(), heuristic: false };
    }
    let fallback = CycleSegmentation { cycles: vec![(0, seq.len())], heuristic: true };
    let signal = stride_width_signal(seq);
    let max_lag = seq.len() / 2;
    if max_lag < 3 {
        return fallback;
    }
    let r: Vec<f64> = (0..=max_lag).map(|lag| autocorrelation(&signal, lag)).collect();
    let best = (2..max_lag).filter(|&l| r[l] >= r[l - 1] && r[l] >= r[l + 1]).map(|l| r[l]).fold(f64::MIN, f64::max);
    if best < MIN_PEAK {
        return fallback;
    }
    // first peak reasonably close to the strongest one: the fundamental
    let Some(step) = (2..max_lag).find(|&l| r[l] >= r[l - 1] && r[l] >= r[l + 1] && r[l] >= 0.8 * best) else {
        return fallback;
    };
    let period = 2 * step;
    let first_peak = (0..step.min(seq.len()))
        .filter_map(|t| signal[t].map(|w| (t, w)))
        .fold(None, |acc: Option<(usize, f64)>, (t, w)| match acc {
            Some((_, bw)) if bw >= w => acc,
            _ => Some((t, w)),
        })
        .map_or(0, |(t, _)| t);
    let cycles: Vec<(usize, usize)> =
        (0..).map(|k| first_peak + k * period).take_while(|&s| s + period <= seq.len()).map(|s| (s, s + period)).collect();
    if cycles.is_empty() {
        return fallback;
    }
    CycleSegmentation { cycles, heuristic: false }
}
