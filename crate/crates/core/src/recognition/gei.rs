use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::silhouette::{FrameStatus, GaitSequence, SilhouetteFrame, FRAME_HEIGHT, FRAME_PIXELS, FRAME_WIDTH};

/// Side of the square blocks averaged by [`downsample_gei`].
pub const DOWNSAMPLE: usize = 4;
pub const FEATURE_HEIGHT: usize = FRAME_HEIGHT.div_ceil(DOWNSAMPLE);
pub const FEATURE_WIDTH: usize = FRAME_WIDTH.div_ceil(DOWNSAMPLE);
pub const FEATURE_DIM: usize = FEATURE_HEIGHT * FEATURE_WIDTH;

/// Per-pixel mean of a cycle's binary silhouettes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitEnergyImage {
    values: Vec<f64>,
    cycle_frame_count: usize,
}

impl GaitEnergyImage {
    pub fn new(values: Vec<f64>, cycle_frame_count: usize) -> Result<Self> {
        if values.len() != FRAME_PIXELS {
            return Err(Error::shape(FRAME_PIXELS, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("GEI value {v} outside [0, 1]")));
        }
        Ok(GaitEnergyImage { values, cycle_frame_count })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cycle_frame_count(&self) -> usize {
        self.cycle_frame_count
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * FRAME_WIDTH + x]
    }

    /// 8-bit grayscale rendering, 255 = always foreground.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let img = image::GrayImage::from_raw(FRAME_WIDTH as u32, FRAME_HEIGHT as u32, self.to_gray8())
            .expect("GEI buffer matches frame size");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

pub fn compute_gei(frames: &[SilhouetteFrame]) -> Result<GaitEnergyImage> {
    compute_gei_refs(&frames.iter().collect::<Vec<_>>())
}

pub fn compute_gei_refs(frames: &[&SilhouetteFrame]) -> Result<GaitEnergyImage> {
    if frames.is_empty() {
        return Err(Error::Empty("GEI needs at least one frame".into()));
    }
    let mut sums = vec![0u32; FRAME_PIXELS];
    for f in frames {
        for (s, &p) in sums.iter_mut().zip(f.pixels()) {
            *s += p as u32;
        }
    }
    let n = frames.len() as f64;
    Ok(GaitEnergyImage { values: sums.iter().map(|&s| s as f64 / n).collect(), cycle_frame_count: frames.len() })
}

/// Treatment of still-occluded frames inside a cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccludedFrames {
    #[default]
    Skip,
    /// Include them as all-background frames.
    Blank,
}

/// GEI of frames `start..end` of `seq`.
pub fn cycle_gei(seq: &GaitSequence, cycle: (usize, usize), occluded: OccludedFrames) -> Result<GaitEnergyImage> {
    let (start, end) = cycle;
    if start >= end || end > seq.len() {
        return Err(Error::InvalidParameter(format!("cycle {start}..{end} outside sequence of {}", seq.len())));
    }
    let blank = SilhouetteFrame::blank(FrameStatus::Occluded);
    let frames: Vec<&SilhouetteFrame> = seq.frames()[start..end]
        .iter()
        .filter_map(|f| match (f.status(), occluded) {
            (FrameStatus::Occluded, OccludedFrames::Skip) => None,
            (FrameStatus::Occluded, OccludedFrames::Blank) => Some(&blank),
            _ => Some(f),
        })
        .collect();
    compute_gei_refs(&frames)
}

/// Fixed 4x4 block mean (partial edge blocks average what they cover),
/// flattened row-major: the forest's feature vector.
pub fn downsample_gei(gei: &GaitEnergyImage) -> Vec<f64> {
    let mut out = vec![0.0; FEATURE_DIM];
    for by in 0..FEATURE_HEIGHT {
        let rows = by * DOWNSAMPLE..((by + 1) * DOWNSAMPLE).min(FRAME_HEIGHT);
        for bx in 0..FEATURE_WIDTH {
            let cols = bx * DOWNSAMPLE..((bx + 1) * DOWNSAMPLE).min(FRAME_WIDTH);
            let mut sum = 0.0;
            for y in rows.clone() {
                sum += gei.values[y * FRAME_WIDTH + cols.start..y * FRAME_WIDTH + cols.end].iter().sum::<f64>();
            }
            out[by * FEATURE_WIDTH + bx] = sum / (rows.len() * cols.len()) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(v: u8) -> SilhouetteFrame {
        SilhouetteFrame::new(vec![v; FRAME_PIXELS], FrameStatus::Observed).unwrap()
    }

    #[test]
    fn two_frame_mean_is_half() {
        let g = compute_gei(&[filled(1), filled(0)]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.5));
        assert_eq!(g.cycle_frame_count(), 2);
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(matches!(compute_gei(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn downsample_dimensions_and_edge_blocks() {
        assert_eq!((FEATURE_HEIGHT, FEATURE_WIDTH, FEATURE_DIM), (38, 50, 1900));
        let mut values = vec![0.0; FRAME_PIXELS];
        // last block row covers only rows 148 and 149
        for x in 0..FRAME_WIDTH {
            values[149 * FRAME_WIDTH + x] = 1.0;
        }
        let d = downsample_gei(&GaitEnergyImage::new(values, 1).unwrap());
        assert_eq!(d[37 * FEATURE_WIDTH], 0.5);
        assert_eq!(d[36 * FEATURE_WIDTH], 0.0);
    }

    #[test]
    fn occluded_frames_skipped_or_blank() {
        let frames = vec![filled(1), filled(1).with_status(FrameStatus::Occluded)];
        let seq = GaitSequence::new("s", "q", frames);
        assert_eq!(cycle_gei(&seq, (0, 2), OccludedFrames::Skip).unwrap().values()[0], 1.0);
        assert_eq!(cycle_gei(&seq, (0, 2), OccludedFrames::Blank).unwrap().values()[0], 0.5);
        assert!(cycle_gei(&seq, (1, 1), OccludedFrames::Skip).is_err());
    }
}
