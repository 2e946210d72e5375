use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::silhouette::{FrameStatus, GaitSequence, SilhouetteFrame};

/// Shortest sequence that can hold 5 context frames on both sides of a gap.
pub const MIN_OCCLUSION_LEN: usize = 11;

/// Fraction-of-frames band `[low, high]` with `0 <= low <= high <= 0.5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBand {
    pub low: f64,
    pub high: f64,
}

impl OcclusionBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&low) || !(0.0..=0.5).contains(&high) || low > high {
            return Err(Error::InvalidParameter(format!(
                "occlusion band must satisfy 0 <= low <= high <= 0.5, got {low}:{high}"
            )));
        }
        Ok(OcclusionBand { low, high })
    }

    /// The five experimental bands, 5-10% through 40-50%.
    pub fn standard() -> Vec<OcclusionBand> {
        [(0.05, 0.10), (0.10, 0.20), (0.20, 0.30), (0.30, 0.40), (0.40, 0.50)]
            .iter()
            .map(|&(l, h)| OcclusionBand { low: l, high: h })
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{:.0}-{:.0}%", self.low * 100.0, self.high * 100.0)
    }
}

impl std::str::FromStr for OcclusionBand {
    type Err = Error;

    /// Parses `low:high`, e.g. `0.40:0.50`.
    fn from_str(s: &str) -> Result<Self> {
        let (l, h) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("band `{s}` is not low:high")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("band `{s}` has a non-numeric bound")))
        };
        OcclusionBand::new(parse(l)?, parse(h)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    BlackenFullFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub band: OcclusionBand,
    pub mode: OcclusionMode,
    pub rng_seed: u64,
    /// Occlude one contiguous run instead of scattered frames.
    #[serde(default)]
    pub contiguous: bool,
}

impl OcclusionSpec {
    pub fn new(band: OcclusionBand, rng_seed: u64) -> Self {
        OcclusionSpec { band, mode: OcclusionMode::BlackenFullFrame, rng_seed, contiguous: false }
    }
}

/// Sorted, duplicate-free set of frame indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionMask {
    indices: Vec<usize>,
}

impl OcclusionMask {
    /// Builds a mask over a sequence of `len` frames.
    pub fn new(mut indices: Vec<usize>, len: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= len {
                return Err(Error::InvalidParameter(format!("mask index {last} out of range for {len} frames")));
            }
        }
        Ok(OcclusionMask { indices })
    }

    pub fn empty() -> Self {
        OcclusionMask::default()
    }

    /// Mask of the frames currently marked occluded.
    pub fn from_sequence(seq: &GaitSequence) -> Self {
        OcclusionMask { indices: seq.occluded_indices() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Number of frames to occlude for fraction `p` of `n` frames.
pub fn occluded_count(p: f64, n: usize) -> usize {
    (p * n as f64).round() as usize
}

/// Blackens `round(p * N)` frames, `p ~ U[low, high]`, chosen uniformly
/// without replacement (or as one run when `contiguous`). The input is not
/// modified; the result is a pure function of `(seq, spec)`.
pub fn synthesize_occlusion(seq: &GaitSequence, spec: &OcclusionSpec) -> Result<(GaitSequence, OcclusionMask)> {
    let n = seq.len();
    if n < MIN_OCCLUSION_LEN {
        return Err(Error::SequenceTooShort { required: MIN_OCCLUSION_LEN, actual: n });
    }
    let band = OcclusionBand::new(spec.band.low, spec.band.high)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let p = if band.high > band.low { rng.gen_range(band.low..=band.high) } else { band.low };
    let k = occluded_count(p, n);
    if k == 0 {
        log::warn!(
            "occlusion band {} yields zero frames for {} ({} frames); returning an unchanged copy",
            band.label(),
            seq.sequence_id(),
            n
        );
        return Ok((seq.clone(), OcclusionMask::empty()));
    }
    let indices: Vec<usize> = if spec.contiguous {
        let start = rng.gen_range(0..=n - k);
        (start..start + k).collect()
    } else {
        sample(&mut rng, n, k).into_vec()
    };
    let mask = OcclusionMask::new(indices, n)?;
    let mut out = seq.clone();
    match spec.mode {
        OcclusionMode::BlackenFullFrame => {
            for &i in mask.indices() {
                out.frames_mut()[i] = SilhouetteFrame::blank(FrameStatus::Occluded);
            }
        }
    }
    Ok((out, mask))
}
