//! Scene directories: `manifest.json`, `frames/frame_XXX.bin` and an
//! optional `gt.mfld`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use bevmotion::{GridSpec, PointFrame, SceneRecipe, SceneSequence};
use serde::{Deserialize, Serialize};

use crate::formats::{decode_motion, decode_points, encode_motion, encode_points};

pub const MANIFEST: &str = "manifest.json";
pub const GT_FILE: &str = "gt.mfld";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub grid: GridSpec,
    pub frame_count: usize,
    pub current: usize,
    pub frame_dt: f64,
    /// One per frame, in file order.
    pub timestamps: Vec<f64>,
    pub seed: Option<u64>,
    pub recipe: Option<SceneRecipe>,
    pub has_ground_truth: bool,
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{i:03}.bin"))
}

/// Writes every file of the archive. Generator annotations are not stored.
pub fn write_archive(dir: &Path, seq: &SceneSequence, recipe: Option<&SceneRecipe>) -> Result<Manifest> {
    seq.validate()?;
    fs::create_dir_all(dir.join("frames")).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = Manifest {
        version: ARCHIVE_VERSION,
        grid: seq.grid,
        frame_count: seq.frames.len(),
        current: seq.current,
        frame_dt: seq.frame_dt,
        timestamps: seq.frames.iter().map(|f| f.timestamp).collect(),
        seed: recipe.map(|r| r.seed),
        recipe: recipe.cloned(),
        has_ground_truth: seq.ground_truth.is_some(),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(dir.join(MANIFEST), text).with_context(|| format!("writing {}", dir.join(MANIFEST).display()))?;
    for (i, f) in seq.frames.iter().enumerate() {
        let p = frame_path(dir, i);
        fs::write(&p, encode_points(&f.points)).with_context(|| format!("writing {}", p.display()))?;
    }
    let gt_path = dir.join(GT_FILE);
    match &seq.ground_truth {
        Some(gt) => fs::write(&gt_path, encode_motion(&gt.cast()))
            .with_context(|| format!("writing {}", gt_path.display()))?,
        None if gt_path.exists() => fs::remove_file(&gt_path)?,
        None => {}
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    ensure!(m.version == ARCHIVE_VERSION, "{}: unsupported archive version {}", p.display(), m.version);
    ensure!(
        m.timestamps.len() == m.frame_count,
        "{}: {} timestamps for {} frames",
        p.display(),
        m.timestamps.len(),
        m.frame_count
    );
    Ok(m)
}

/// Loads an archive; ground truth is read back from its f32 file.
pub fn read_archive(dir: &Path) -> Result<SceneSequence> {
    let m = read_manifest(dir)?;
    let mut frames = Vec::with_capacity(m.frame_count);
    for i in 0..m.frame_count {
        let p = frame_path(dir, i);
        let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        let points = decode_points(&bytes).with_context(|| format!("decoding {}", p.display()))?;
        frames.push(PointFrame::new(m.timestamps[i], points));
    }
    let extra = frame_path(dir, m.frame_count);
    ensure!(!extra.exists(), "{}: more frame files than the manifest's {}", dir.display(), m.frame_count);
    let ground_truth = if m.has_ground_truth {
        let p = dir.join(GT_FILE);
        let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        Some(decode_motion(&bytes).with_context(|| format!("decoding {}", p.display()))?.cast())
    } else {
        None
    };
    let seq = SceneSequence { grid: m.grid, frame_dt: m.frame_dt, frames, current: m.current, ground_truth, annotations: None };
    seq.validate().with_context(|| format!("archive {}", dir.display()))?;
    Ok(seq)
}
