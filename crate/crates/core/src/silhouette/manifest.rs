use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{read_pgm, write_pgm};
use super::{normalize_frame, validate_cycles, FrameStatus, GaitSequence, SilhouetteFrame, FRAME_HEIGHT, FRAME_WIDTH};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub sequence_id: String,
    /// Paths relative to the manifest's directory, in frame order.
    pub frame_paths: Vec<String>,
    #[serde(default)]
    pub occluded_indices: Vec<usize>,
    #[serde(default)]
    pub cycle_boundaries: Option<Vec<(usize, usize)>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Default for SequenceManifest {
    fn default() -> Self {
        SequenceManifest { version: MANIFEST_VERSION, entries: vec![] }
    }
}

impl SequenceManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InvalidManifest(format!("{} not found", path.display())),
            _ => e.into(),
        })?;
        let manifest: SequenceManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::InvalidManifest(format!("unsupported version {}", manifest.version)));
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Loads one manifest entry. Frames are binarized, normalized to 150x200
/// when they are not already that size, and marked occluded per the entry.
pub fn load_sequence(entry: &ManifestEntry, base_dir: &Path) -> Result<GaitSequence> {
    let mut seen = HashSet::new();
    for (i, p) in entry.frame_paths.iter().enumerate() {
        if !seen.insert(p.as_str()) {
            return Err(Error::DuplicateFrame(i));
        }
    }
    let n = entry.frame_paths.len();
    let mut occluded = vec![false; n];
    for &i in &entry.occluded_indices {
        if i >= n {
            return Err(Error::InvalidManifest(format!("occluded index {i} out of range for {n} frames")));
        }
        if occluded[i] {
            return Err(Error::InvalidManifest(format!("occluded index {i} listed twice")));
        }
        occluded[i] = true;
    }
    let mut frames = Vec::with_capacity(n);
    for (i, rel) in entry.frame_paths.iter().enumerate() {
        let path = base_dir.join(rel);
        let img = read_pgm(&path)?;
        let frame = if img.height() == FRAME_HEIGHT && img.width() == FRAME_WIDTH {
            SilhouetteFrame::from_image(&img, FrameStatus::Observed)?
        } else {
            normalize_frame(&img)
        };
        let status = if occluded[i] { FrameStatus::Occluded } else { FrameStatus::Observed };
        frames.push(frame.with_status(status));
    }
    let seq = GaitSequence::new(entry.subject_id.clone(), entry.sequence_id.clone(), frames);
    match &entry.cycle_boundaries {
        Some(c) => {
            validate_cycles(c, n)?;
            seq.with_cycles(c.clone())
        }
        None => Ok(seq),
    }
}

/// Loads every sequence listed in the manifest at `manifest_path`.
pub fn load_manifest(manifest_path: &Path) -> Result<Vec<GaitSequence>> {
    let manifest = SequenceManifest::read(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.entries.iter().map(|e| load_sequence(e, &base)).collect()
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn frame_entry(seq: &GaitSequence, dir: &Path) -> Result<ManifestEntry> {
    let frames_dir = PathBuf::from("frames");
    fs::create_dir_all(dir.join(&frames_dir))?;
    let stem = format!("{}_{}", file_stem(seq.subject_id()), file_stem(seq.sequence_id()));
    let mut frame_paths = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames().iter().enumerate() {
        let rel = frames_dir.join(format!("{stem}_{i:04}.pgm"));
        write_pgm(&dir.join(&rel), &frame.to_image())?;
        frame_paths.push(rel.to_string_lossy().replace('\\', "/"));
    }
    Ok(ManifestEntry {
        subject_id: seq.subject_id().to_string(),
        sequence_id: seq.sequence_id().to_string(),
        frame_paths,
        occluded_indices: seq.occluded_indices(),
        cycle_boundaries: seq.cycle_boundaries().map(<[_]>::to_vec),
    })
}

/// Writes the sequences as PGM frames plus `manifest.json` under `dir`.
/// Empty sequences contribute no entry.
pub fn save_corpus(seqs: &[GaitSequence], dir: &Path) -> Result<SequenceManifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = SequenceManifest::default();
    for seq in seqs.iter().filter(|s| !s.is_empty()) {
        manifest.entries.push(frame_entry(seq, dir)?);
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn save_sequence(seq: &GaitSequence, dir: &Path) -> Result<SequenceManifest> {
    save_corpus(std::slice::from_ref(seq), dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with(n: usize) -> SilhouetteFrame {
        let mut px = vec![0u8; super::super::FRAME_PIXELS];
        for p in px.iter_mut().skip(1000).step_by(7).take(n) {
            *p = 1;
        }
        SilhouetteFrame::new(px, FrameStatus::Observed).unwrap()
    }

    #[test]
    fn save_load_round_trip_keeps_pixels_order_and_status() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames: Vec<_> = (0..10).map(|i| frame_with(50 + i * 13)).collect();
        frames[2].set_status(FrameStatus::Occluded);
        frames[7].set_status(FrameStatus::Occluded);
        let seq = GaitSequence::new("subj 1", "seq/a", frames).with_cycles(vec![(0, 5), (5, 10)]).unwrap();
        let manifest = save_sequence(&seq, dir.path()).unwrap();
        assert_eq!(manifest.entries[0].occluded_indices, vec![2, 7]);
        let back = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, vec![seq]);
    }

    #[test]
    fn empty_sequence_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = save_sequence(&GaitSequence::new("a", "b", vec![]), dir.path()).unwrap();
        assert!(m.entries.is_empty());
        assert!(load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap().is_empty());
    }

    #[test]
    fn missing_and_duplicate_frames_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let entry = ManifestEntry {
            subject_id: "a".into(),
            sequence_id: "b".into(),
            frame_paths: vec!["nope.pgm".into()],
            occluded_indices: vec![],
            cycle_boundaries: None,
        };
        let err = load_sequence(&entry, dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing frame file"));
        let dup = ManifestEntry { frame_paths: vec!["a.pgm".into(), "a.pgm".into()], ..entry };
        assert!(matches!(load_sequence(&dup, dir.path()), Err(Error::DuplicateFrame(1))));
    }
}
