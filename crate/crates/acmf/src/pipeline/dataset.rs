//! Dataset layout on disk.
//!
//! ```text
//! <root>/
//!   manifest.json     {"config": {...}, "train": [entry...], "test": [entry...]}
//!   train/<video>_f<k>.tns
//!   test/<video>_f<k>.tns
//! ```
//!
//! Each manifest entry is `{video_id, frame_path, label, family}` with the
//! frame path relative to the dataset root. Frames use the tensor format;
//! consecutive entries sharing a video id form one clip.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SynthDataset;
use super::{ArtifactFamily, PipelineError, VideoClip};
use crate::tensor::io::{read_tensor, write_tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frame_path: String,
    pub label: u8,
    pub family: ArtifactFamily,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BTreeMap<String, String>,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Write `bytes` to `path` atomically (temp file in the same directory, then
/// rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp.push(".tmp");
    let tmp_path = dir.join(tmp);
    std::fs::write(&tmp_path, bytes)?;
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}

fn split_entries(videos: &[VideoClip], split: Split, dir: &Path) -> Result<Vec<ManifestEntry>, PipelineError> {
    let mut entries = Vec::new();
    for video in videos {
        for (k, frame) in video.frames.iter().enumerate() {
            let file = format!("{}_f{k:02}.tns", video.id);
            write_tensor(frame, &dir.join(&file))?;
            entries.push(ManifestEntry {
                video_id: video.id.clone(),
                frame_path: format!("{}/{file}", split.dir_name()),
                label: video.label,
                family: video.family,
            });
        }
    }
    Ok(entries)
}

/// Write both splits plus the manifest. The manifest is written last,
/// atomically, and embeds the resolved configuration.
pub fn write_dataset(
    dataset: &SynthDataset,
    root: &Path,
    config_echo: BTreeMap<String, String>,
) -> Result<(), PipelineError> {
    let train_dir = root.join(Split::Train.dir_name());
    let test_dir = root.join(Split::Test.dir_name());
    std::fs::create_dir_all(&train_dir)?;
    std::fs::create_dir_all(&test_dir)?;
    let manifest = Manifest {
        config: config_echo,
        train: split_entries(&dataset.train, Split::Train, &train_dir)?,
        test: split_entries(&dataset.test, Split::Test, &test_dir)?,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&root.join("manifest.json"), &json)?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Manifest, PipelineError> {
    let path = root.join("manifest.json");
    let bytes = std::fs::read(&path)
        .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Manifest(e.to_string()))
}

/// Load one split, grouping consecutive manifest entries by video id.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<VideoClip>, PipelineError> {
    let manifest = read_manifest(root)?;
    let entries = match split {
        Split::Train => &manifest.train,
        Split::Test => &manifest.test,
    };
    let mut videos: Vec<VideoClip> = Vec::new();
    let mut current: Option<(String, Vec<crate::tensor::Tensor<f32>>, u8, ArtifactFamily)> = None;
    for entry in entries {
        let frame = read_tensor::<f32>(&root.join(&entry.frame_path))?;
        match &mut current {
            Some((id, frames, label, family)) if *id == entry.video_id => {
                if *label != entry.label || *family != entry.family {
                    return Err(PipelineError::Manifest(format!(
                        "video {id} mixes labels or families across frames"
                    )));
                }
                frames.push(frame);
            }
            _ => {
                if let Some((id, frames, label, family)) = current.take() {
                    videos.push(VideoClip::new(id, frames, label, family)?);
                }
                current = Some((entry.video_id.clone(), vec![frame], entry.label, entry.family));
            }
        }
    }
    if let Some((id, frames, label, family)) = current {
        videos.push(VideoClip::new(id, frames, label, family)?);
    }
    if videos.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(videos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_dataset, SynthConfig};

    fn tiny() -> SynthDataset {
        synth_dataset(&SynthConfig {
            train_videos_per_class: 2,
            test_videos_per_class: 2,
            frames_per_video: 2,
            image_size: 16,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_preserves_videos_exactly() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), BTreeMap::new()).unwrap();
        let train = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(train.len(), ds.train.len());
        for (a, b) in train.iter().zip(&ds.train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.family, b.family);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert_eq!(fa, fb);
            }
        }
    }

    #[test]
    fn manifest_embeds_config_and_is_stable() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut echo = BTreeMap::new();
        echo.insert("seed".to_string(), "7".to_string());
        write_dataset(&ds, dir.path(), echo).unwrap();
        let manifest = read_manifest(dir.path()).unwrap();
        assert_eq!(manifest.config.get("seed").map(String::as_str), Some("7"));
        assert_eq!(manifest.train.len(), 4 * 2);
        // rewriting produces identical bytes
        let first = std::fs::read(dir.path().join("manifest.json")).unwrap();
        let mut echo2 = BTreeMap::new();
        echo2.insert("seed".to_string(), "7".to_string());
        write_dataset(&ds, dir.path(), echo2).unwrap();
        let second = std::fs::read(dir.path().join("manifest.json")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn missing_manifest_is_a_manifest_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_split(dir.path(), Split::Train),
            Err(PipelineError::Manifest(_))
        ));
    }
}
