use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working frame height in pixels.
pub const FRAME_HEIGHT: usize = 150;
/// Working frame width in pixels.
pub const FRAME_WIDTH: usize = 200;
pub const FRAME_PIXELS: usize = FRAME_HEIGHT * FRAME_WIDTH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Observed,
    Occluded,
    Reconstructed,
}

/// Binary grid of arbitrary size, foreground = 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("image must be non-empty".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(height * width, pixels.len()));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::InvalidParameter("binary image values must be 0 or 1".into()));
        }
        Ok(BinaryImage { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryImage { height, width, pixels: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.pixels[y * self.width + x] = v as u8;
    }

    pub fn foreground(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }
}

/// One 150x200 binary silhouette with its occlusion status.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteFrame {
    pixels: Vec<u8>,
    status: FrameStatus,
}

impl SilhouetteFrame {
    pub fn new(pixels: Vec<u8>, status: FrameStatus) -> Result<Self> {
        if pixels.len() != FRAME_PIXELS {
            return Err(Error::shape(
                format!("{FRAME_HEIGHT}x{FRAME_WIDTH} frame"),
                format!("{} pixels", pixels.len()),
            ));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::InvalidParameter("silhouette pixels must be 0 or 1".into()));
        }
        Ok(SilhouetteFrame { pixels, status })
    }

    pub fn blank(status: FrameStatus) -> Self {
        SilhouetteFrame { pixels: vec![0; FRAME_PIXELS], status }
    }

    /// Thresholds a real-valued grid: values `>= threshold` become foreground.
    pub fn from_scores(scores: &[f64], threshold: f64, status: FrameStatus) -> Result<Self> {
        let pixels = scores.iter().map(|&v| (v >= threshold) as u8).collect();
        Self::new(pixels, status)
    }

    pub fn from_image(image: &BinaryImage, status: FrameStatus) -> Result<Self> {
        if image.height() != FRAME_HEIGHT || image.width() != FRAME_WIDTH {
            return Err(Error::shape(
                format!("{FRAME_HEIGHT}x{FRAME_WIDTH}"),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        Self::new(image.pixels().to_vec(), status)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn status(&self) -> FrameStatus {
        self.status
    }

    pub fn with_status(mut self, status: FrameStatus) -> Self {
        self.status = status;
        self
    }

    pub fn set_status(&mut self, status: FrameStatus) {
        self.status = status;
    }

    pub fn foreground(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }

    pub fn to_image(&self) -> BinaryImage {
        BinaryImage {
            height: FRAME_HEIGHT,
            width: FRAME_WIDTH,
            pixels: self.pixels.clone(),
        }
    }

    /// Pixels as `0.0 / 1.0` reals.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// An ordered sequence of silhouettes of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitSequence {
    frames: Vec<SilhouetteFrame>,
    subject_id: String,
    sequence_id: String,
    cycle_boundaries: Option<Vec<(usize, usize)>>,
    fps: Option<f64>,
}

/// Checks half-open `(start, end)` spans: in range, `start < end`, sorted and
/// non-overlapping.
pub fn validate_cycles(cycles: &[(usize, usize)], len: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, &(s, e)) in cycles.iter().enumerate() {
        if s >= e || e > len || (i > 0 && s < prev_end) {
            return Err(Error::InvalidParameter(format!(
                "cycle boundary {i} ({s}, {e}) invalid for {len} frames"
            )));
        }
        prev_end = e;
    }
    Ok(())
}

impl GaitSequence {
    pub fn new(subject_id: impl Into<String>, sequence_id: impl Into<String>, frames: Vec<SilhouetteFrame>) -> Self {
        GaitSequence {
            frames,
            subject_id: subject_id.into(),
            sequence_id: sequence_id.into(),
            cycle_boundaries: None,
            fps: None,
        }
    }

    /// Attaches half-open cycle spans `(start, end)`.
    pub fn with_cycles(mut self, cycles: Vec<(usize, usize)>) -> Result<Self> {
        validate_cycles(&cycles, self.frames.len())?;
        self.cycle_boundaries = Some(cycles);
        Ok(self)
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = Some(fps);
        self
    }

    pub fn frames(&self) -> &[SilhouetteFrame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &SilhouetteFrame {
        &self.frames[index]
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [SilhouetteFrame] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    pub fn cycle_boundaries(&self) -> Option<&[(usize, usize)]> {
        self.cycle_boundaries.as_deref()
    }

    pub fn fps(&self) -> Option<f64> {
        self.fps
    }

    /// Indices of frames currently marked occluded.
    pub fn occluded_indices(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.status() == FrameStatus::Occluded)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sub-sequence `[start, end)`; cycle spans fully inside are kept, shifted.
    pub fn slice(&self, start: usize, end: usize, sequence_id: impl Into<String>) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidParameter(format!(
                "slice {start}..{end} out of range for {} frames",
                self.len()
            )));
        }
        let mut out = GaitSequence::new(self.subject_id.clone(), sequence_id, self.frames[start..end].to_vec());
        out.fps = self.fps;
        if let Some(cycles) = &self.cycle_boundaries {
            let inner: Vec<_> = cycles
                .iter()
                .filter(|&&(s, e)| s >= start && e <= end)
                .map(|&(s, e)| (s - start, e - start))
                .collect();
            out.cycle_boundaries = Some(inner);
        }
        Ok(out)
    }
}
