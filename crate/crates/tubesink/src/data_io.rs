//! On-disk formats: dataset directories and feature stores.
//!
//! A dataset directory holds one binary file per clip plus `manifest.json`.
//! Clip files are little-endian `f32` frame values (`[T, C, H, W]` row-major)
//! followed, when masks are present, by little-endian `u16` instance ids
//! (`[T, H, W]` row-major). The manifest records the generator config, the
//! shape, per-clip labels, and file names.
//!
//! A feature store is the same idea for externally produced projection
//! targets: per-clip little-endian `f32` matrices (`[rows, dim]` row-major)
//! plus a manifest mapping clip ids to files.

use crate::error::{Error, Result};
use crate::synthetic::{GeneratorConfig, VideoClip, DIRECTION_NAMES};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: u64,
    pub file: String,
    pub label: Option<u8>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator: GeneratorConfig,
    pub clip_count: usize,
    pub has_masks: bool,
    pub label_names: Vec<String>,
    pub clips: Vec<ClipEntry>,
}

fn clip_file_name(clip_id: u64) -> String {
    format!("clip_{clip_id:06}.bin")
}

/// Write a dataset directory. Rewrites deterministically: equal inputs
/// produce byte-identical manifests and clip files.
pub fn export_dataset(dir: &Path, config: &GeneratorConfig, clips: &[VideoClip]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let has_masks = clips.iter().all(|c| c.instance_masks.is_some());
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        let file = clip_file_name(clip.clip_id);
        let mut bytes = Vec::new();
        for &v in &clip.frames {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if has_masks {
            for &m in clip.instance_masks.as_ref().expect("checked above") {
                bytes.extend_from_slice(&m.to_le_bytes());
            }
        }
        fs::write(dir.join(&file), bytes)?;
        entries.push(ClipEntry { clip_id: clip.clip_id, file, label: clip.label });
    }
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        generator: config.clone(),
        clip_count: clips.len(),
        has_masks,
        label_names: DIRECTION_NAMES.iter().map(|s| s.to_string()).collect(),
        clips: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest serialization failed: {e}")))?;
    fs::write(dir.join(DATASET_MANIFEST), json)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("bad manifest {path:?}: {e}")))?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "unsupported dataset schema version {}",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

/// Read a dataset directory back into memory.
pub fn load_dataset(dir: &Path) -> Result<(GeneratorConfig, Vec<VideoClip>)> {
    let manifest = load_manifest(dir)?;
    let g = &manifest.generator;
    let frame_len = g.frames * g.channels * g.height * g.width;
    let mask_len = g.frames * g.height * g.width;

    let mut clips = Vec::with_capacity(manifest.clips.len());
    for entry in &manifest.clips {
        let bytes = fs::read(dir.join(&entry.file))?;
        let expected = frame_len * 4 + if manifest.has_masks { mask_len * 2 } else { 0 };
        if bytes.len() != expected {
            return Err(Error::Shape(format!(
                "clip file {} has {} bytes, expected {expected}",
                entry.file,
                bytes.len()
            )));
        }
        let mut frames = Vec::with_capacity(frame_len);
        for chunk in bytes[..frame_len * 4].chunks_exact(4) {
            frames.push(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }
        let instance_masks = if manifest.has_masks {
            let mut masks = Vec::with_capacity(mask_len);
            for chunk in bytes[frame_len * 4..].chunks_exact(2) {
                masks.push(u16::from_le_bytes(chunk.try_into().expect("2-byte chunk")));
            }
            Some(masks)
        } else {
            None
        };
        clips.push(VideoClip {
            clip_id: entry.clip_id,
            frames,
            instance_masks,
            label: entry.label,
            frames_shape: [g.frames, g.channels, g.height, g.width],
        });
    }
    Ok((manifest.generator, clips))
}

pub const FEATURE_MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub schema_version: u32,
    /// Rows per clip (token count) and feature dimension.
    pub rows: usize,
    pub dim: usize,
    pub clips: Vec<ClipEntry>,
}

/// File-backed projection targets, loaded eagerly.
pub struct FeatureStore {
    pub rows: usize,
    pub dim: usize,
    features: HashMap<u64, Tensor>,
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(FEATURE_MANIFEST))?;
        let manifest: FeatureManifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("bad feature manifest: {e}")))?;
        let mut features = HashMap::new();
        for entry in &manifest.clips {
            let mut file = fs::File::open(dir.join(&entry.file))?;
            let mut bytes = Vec::new();
            file.read_to_end(&mut bytes)?;
            if bytes.len() != manifest.rows * manifest.dim * 4 {
                return Err(Error::Shape(format!(
                    "feature file {} has wrong size for [{} x {}]",
                    entry.file, manifest.rows, manifest.dim
                )));
            }
            let mut data = Vec::with_capacity(manifest.rows * manifest.dim);
            for chunk in bytes.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64);
            }
            features.insert(entry.clip_id, Tensor::from_vec(manifest.rows, manifest.dim, data));
        }
        Ok(FeatureStore { rows: manifest.rows, dim: manifest.dim, features })
    }

    /// Full `[rows, dim]` feature matrix for one clip.
    pub fn features_for(&self, clip_id: u64) -> Result<&Tensor> {
        self.features
            .get(&clip_id)
            .ok_or_else(|| Error::Lookup(format!("clip {clip_id} not in feature store")))
    }
}

/// Write a feature store directory. Values are stored as `f32`.
pub fn write_feature_store(dir: &Path, entries: &[(u64, Tensor)]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Config("feature store needs at least one clip".into()));
    }
    let (rows, dim) = entries[0].1.shape();
    fs::create_dir_all(dir)?;
    let mut clip_entries = Vec::with_capacity(entries.len());
    for (clip_id, matrix) in entries {
        if matrix.shape() != (rows, dim) {
            return Err(Error::Shape(format!(
                "feature matrix for clip {clip_id} has shape {:?}, expected ({rows}, {dim})",
                matrix.shape()
            )));
        }
        let file = format!("features_{clip_id:06}.bin");
        let mut writer = fs::File::create(dir.join(&file))?;
        for &v in matrix.as_slice() {
            writer.write_all(&(v as f32).to_le_bytes())?;
        }
        clip_entries.push(ClipEntry { clip_id: *clip_id, file, label: None });
    }
    let manifest = FeatureManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        rows,
        dim,
        clips: clip_entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("feature manifest serialization failed: {e}")))?;
    fs::write(dir.join(FEATURE_MANIFEST), json)?;
    Ok(())
}
