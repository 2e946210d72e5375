//! Procedural side-view walkers: periodic binary silhouette sequences with
//! per-subject body geometry and known gait-cycle boundaries.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::silhouette::{normalize_frame, BinaryImage, GaitSequence, SilhouetteFrame};

const CANVAS_HEIGHT: usize = 320;
const CANVAS_WIDTH: usize = 280;
const HIP_Y: f64 = 150.0;
const CENTER_X: f64 = 140.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub cycles_per_subject: usize,
    /// Frames per gait cycle.
    pub period: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { subjects: 10, cycles_per_subject: 4, period: 12, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 subjects, got {}", self.subjects)));
        }
        if self.cycles_per_subject == 0 {
            return Err(Error::InvalidParameter("cycles per subject must be >= 1".into()));
        }
        if self.period < 8 {
            return Err(Error::InvalidParameter(format!("period must be >= 8, got {}", self.period)));
        }
        Ok(())
    }
}

/// Body geometry and motion of one synthetic subject, in canvas pixels and
/// radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerStyle {
    pub torso_width: f64,
    pub torso_length: f64,
    pub leg_length: f64,
    pub leg_width: f64,
    pub stride_amplitude: f64,
    pub knee_bend: f64,
    pub arm_swing: f64,
    pub head_radius: f64,
    pub lean: f64,
    /// Gait phase of the first frame, in cycles.
    pub phase: f64,
}

impl WalkerStyle {
    pub fn sample(rng: &mut impl Rng) -> Self {
        WalkerStyle {
            torso_width: rng.gen_range(26.0..52.0),
            torso_length: rng.gen_range(80.0..105.0),
            leg_length: rng.gen_range(115.0..145.0),
            leg_width: rng.gen_range(11.0..19.0),
            stride_amplitude: rng.gen_range(0.25..0.55),
            knee_bend: rng.gen_range(0.1..0.6),
            arm_swing: rng.gen_range(0.15..0.6),
            head_radius: rng.gen_range(13.0..21.0),
            lean: rng.gen_range(-0.12..0.12),
            phase: rng.gen_range(0.0..1.0),
        }
    }

    /// Renders the pose at gait phase `t` (in cycles) and normalizes it.
    pub fn render(&self, t: f64, stride_scale: f64) -> SilhouetteFrame {
        let mut img = BinaryImage::zeros(CANVAS_HEIGHT, CANVAS_WIDTH);
        let s = (2.0 * PI * (t + self.phase)).sin();
        let c = (2.0 * PI * (t + self.phase)).cos();
        let amp = self.stride_amplitude * stride_scale;
        let hip = (CENTER_X, HIP_Y);

        // legs swing in antiphase; the knee flexes while the leg swings forward
        let thigh = self.leg_length * 0.5;
        let shin = self.leg_length * 0.5;
        for (angle, flex) in [(amp * s, c.max(0.0)), (-amp * s, (-c).max(0.0))] {
            let knee = (hip.0 + thigh * angle.sin(), hip.1 + thigh * angle.cos());
            let shin_angle = angle - self.knee_bend * flex;
            let foot = (knee.0 + shin * shin_angle.sin(), knee.1 + shin * shin_angle.cos());
            capsule(&mut img, hip, knee, self.leg_width / 2.0);
            capsule(&mut img, knee, foot, self.leg_width / 2.0 * 0.85);
            capsule(&mut img, foot, (foot.0 + self.leg_width * 1.1, foot.1), self.leg_width / 2.0 * 0.6);
        }

        let shoulder = (hip.0 + self.torso_length * self.lean.sin(), hip.1 - self.torso_length * self.lean.cos());
        let steps = 6;
        for k in 0..=steps {
            let f = k as f64 / steps as f64;
            let p = (hip.0 + (shoulder.0 - hip.0) * f, hip.1 + (shoulder.1 - hip.1) * f);
            disc(&mut img, p, self.torso_width / 2.0 * (0.85 + 0.15 * f));
        }
        let head = (shoulder.0, shoulder.1 - self.head_radius * 1.3);
        disc(&mut img, head, self.head_radius);

        // a single visible arm, swinging once per cycle
        let arm_angle = -self.arm_swing * s;
        let upper = self.torso_length * 0.45;
        let elbow = (shoulder.0 + upper * arm_angle.sin(), shoulder.1 + upper * arm_angle.cos());
        let fore_angle = arm_angle + 0.3 * self.arm_swing * (1.0 + s);
        let hand = (elbow.0 + upper * fore_angle.sin(), elbow.1 + upper * fore_angle.cos());
        capsule(&mut img, shoulder, elbow, self.leg_width * 0.4);
        capsule(&mut img, elbow, hand, self.leg_width * 0.35);

        normalize_frame(&img)
    }
}

fn disc(img: &mut BinaryImage, c: (f64, f64), r: f64) {
    capsule(img, c, c, r);
}

/// Fills every pixel centre within `r` of the segment `a`-`b`.
fn capsule(img: &mut BinaryImage, a: (f64, f64), b: (f64, f64), r: f64) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + r).ceil().min(w - 1.0) as usize;
    let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
    let y1 = (a.1.max(b.1) + r).ceil().min(h - 1.0) as usize;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            if qx * qx + qy * qy <= r * r {
                img.set(y, x, true);
            }
        }
    }
}

/// Renders `cycles` consecutive gait cycles of one walker.
pub fn render_walk(
    style: &WalkerStyle,
    subject_id: &str,
    sequence_id: &str,
    cycles: usize,
    period: usize,
    rng: &mut impl Rng,
) -> Result<GaitSequence> {
    let mut frames = Vec::with_capacity(cycles * period);
    let mut boundaries = Vec::with_capacity(cycles);
    for c in 0..cycles {
        let jitter = 1.0 + rng.gen_range(-0.03..0.03);
        for k in 0..period {
            frames.push(style.render(k as f64 / period as f64, jitter));
        }
        boundaries.push((c * period, (c + 1) * period));
    }
    GaitSequence::new(subject_id, sequence_id, frames).with_cycles(boundaries)
}

/// One sequence per subject, `cycles_per_subject` cycles of exactly `period`
/// frames each. Identical configs give bit-identical corpora.
pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<GaitSequence>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let styles: Vec<WalkerStyle> = (0..config.subjects).map(|_| WalkerStyle::sample(&mut rng)).collect();
    styles
        .iter()
        .enumerate()
        .map(|(i, style)| {
            render_walk(style, &format!("s{i:03}"), "walk", config.cycles_per_subject, config.period, &mut rng)
        })
        .collect()
}
