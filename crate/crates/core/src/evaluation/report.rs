use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};

use super::sweep::{EvaluationReport, REPORT_VERSION};
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.json";
pub const TABLE_FILE: &str = "report.md";
pub const CMC_PLOT_FILE: &str = "cmc.png";
pub const DICE_PLOT_FILE: &str = "dice.png";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedFiles {
    pub results: PathBuf,
    pub table: PathBuf,
    pub cmc_plot: PathBuf,
    pub dice_plot: PathBuf,
}

pub fn report_json(report: &EvaluationReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn load_report(path: &Path) -> Result<EvaluationReport> {
    let report: EvaluationReport = serde_json::from_slice(&fs::read(path)?)?;
    if report.version != REPORT_VERSION {
        return Err(Error::InvalidParameter(format!("unsupported results version {}", report.version)));
    }
    Ok(report)
}

pub fn markdown_table(report: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Reconstruction evaluation\n");
    let _ = writeln!(s, "Dice mode: `{}`  ", serde_json::to_value(report.dice_mode).unwrap_or_default().as_str().unwrap_or(""));
    let _ = writeln!(s, "Seed: {}  ", report.metadata.seed);
    let _ = writeln!(s, "Corpus: `{}` ({} sequences)  ", report.metadata.corpus_hash, report.metadata.sequences);
    let _ = writeln!(s, "Clean rank-1: {:.4}\n", report.clean_rank1);
    let _ = writeln!(s, "| Occlusion | Mean Dice | M1 Dice | M2 Dice | Rank-1 | Probes | Occluded | Unreconstructed |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for r in &report.bands {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} | {} |",
            r.label,
            r.mean_dice,
            r.mean_dice_forward,
            r.mean_dice_backward,
            r.rank1_accuracy,
            r.probes,
            r.occluded_frames,
            r.unreconstructed_frames
        );
    }
    if !report.ablation.is_empty() {
        let _ = writeln!(s, "\n## Ablation\n\n| Model | Mean Dice |\n|---|---|");
        for a in &report.ablation {
            let _ = writeln!(s, "| {} | {:.4} |", a.model.label(), a.mean_dice);
        }
    }
    let _ = writeln!(s, "\n## CMC\n");
    let k = report.bands.iter().map(|r| r.cmc.len()).max().unwrap_or(0);
    let _ = write!(s, "| Occlusion |");
    for rank in 1..=k {
        let _ = write!(s, " R{rank} |");
    }
    let _ = write!(s, "\n|---|");
    for _ in 0..k {
        let _ = write!(s, "---|");
    }
    s.push('\n');
    for r in &report.bands {
        let _ = write!(s, "| {} |", r.label);
        for a in &r.cmc.accuracies {
            let _ = write!(s, " {a:.3} |");
        }
        s.push('\n');
    }
    if !report.metadata.checkpoints.is_empty() {
        let _ = writeln!(s, "\n## Checkpoints\n");
        for (name, hash) in &report.metadata.checkpoints {
            let _ = writeln!(s, "- {name}: `{hash}`");
        }
    }
    s
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];
const W: u32 = 640;
const H: u32 = 400;
const MARGIN: i64 = 40;

struct Canvas(RgbImage);

impl Canvas {
    fn new() -> Self {
        let mut c = Canvas(RgbImage::from_pixel(W, H, Rgb([255, 255, 255])));
        for i in 0..=4 {
            let y = c.y(i as f64 / 4.0);
            c.line((MARGIN, y), (W as i64 - MARGIN, y), [225, 225, 225], 0);
        }
        c.line((MARGIN, c.y(0.0)), (W as i64 - MARGIN, c.y(0.0)), [0, 0, 0], 0);
        c.line((MARGIN, c.y(0.0)), (MARGIN, c.y(1.0)), [0, 0, 0], 0);
        c
    }

    fn y(&self, v: f64) -> i64 {
        let span = (H as i64 - 2 * MARGIN) as f64;
        H as i64 - MARGIN - (v.clamp(0.0, 1.0) * span).round() as i64
    }

    fn x(&self, t: f64) -> i64 {
        MARGIN + (t.clamp(0.0, 1.0) * (W as i64 - 2 * MARGIN) as f64).round() as i64
    }

    fn dot(&mut self, x: i64, y: i64, color: [u8; 3], radius: i64) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (px, py) = (x + dx, y + dy);
                if (0..W as i64).contains(&px) && (0..H as i64).contains(&py) {
                    self.0.put_pixel(px as u32, py as u32, Rgb(color));
                }
            }
        }
    }

    fn line(&mut self, a: (i64, i64), b: (i64, i64), color: [u8; 3], radius: i64) {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
        for i in 0..=steps {
            let x = a.0 + (b.0 - a.0) * i / steps;
            let y = a.1 + (b.1 - a.1) * i / steps;
            self.dot(x, y, color, radius);
        }
    }

    fn rect(&mut self, x0: i64, x1: i64, y0: i64, y1: i64, color: [u8; 3]) {
        for x in x0..x1 {
            self.line((x, y0), (x, y1), color, 0);
        }
    }

    fn save(self, path: &Path) -> Result<()> {
        self.0.save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }
}

fn cmc_plot(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut c = Canvas::new();
    for (i, row) in report.bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let k = row.cmc.len();
        let pts: Vec<(i64, i64)> = row
            .cmc
            .accuracies
            .iter()
            .enumerate()
            .map(|(r, &a)| (c.x(if k > 1 { r as f64 / (k - 1) as f64 } else { 0.0 }), c.y(a)))
            .collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], color, 1);
        }
        for &(x, y) in &pts {
            c.dot(x, y, color, 3);
        }
    }
    c.save(path)
}

/// Grouped bars per band: fused, M1, M2.
fn dice_plot(report: &EvaluationReport, path: &Path) -> Result<()> {
    let mut c = Canvas::new();
    let n = report.bands.len().max(1) as f64;
    for (i, row) in report.bands.iter().enumerate() {
        for (j, v) in [row.mean_dice, row.mean_dice_forward, row.mean_dice_backward].into_iter().enumerate() {
            let left = (i as f64 + 0.15 + 0.25 * j as f64) / n;
            let right = (i as f64 + 0.15 + 0.25 * (j + 1) as f64) / n;
            let (x0, x1) = (c.x(left), c.x(right) - 1);
            let (y0, y1) = (c.y(v), c.y(0.0) - 1);
            c.rect(x0, x1, y0, y1, PALETTE[j]);
        }
    }
    c.save(path)
}

/// Writes `results.json`, `report.md`, `cmc.png` and `dice.png` into `out_dir`.
/// Output bytes depend only on the report.
pub fn emit_report(report: &EvaluationReport, out_dir: &Path) -> Result<EmittedFiles> {
    if report.bands.is_empty() {
        return Err(Error::Empty("report has no band rows".into()));
    }
    fs::create_dir_all(out_dir)?;
    let files = EmittedFiles {
        results: out_dir.join(RESULTS_FILE),
        table: out_dir.join(TABLE_FILE),
        cmc_plot: out_dir.join(CMC_PLOT_FILE),
        dice_plot: out_dir.join(DICE_PLOT_FILE),
    };
    fs::write(&files.results, report_json(report)?)?;
    fs::write(&files.table, markdown_table(report))?;
    cmc_plot(report, &files.cmc_plot)?;
    dice_plot(report, &files.dice_plot)?;
    Ok(files)
}
