//! End-to-end training and evaluation: synthetic video data, perturbations,
//! masked-frequency training, per-video attention-consistency refinement, and
//! video-level AUC evaluation.

pub mod dataset;
pub mod eval;
pub mod perturb;
pub mod refine;
pub mod synth;
pub mod train;

pub use dataset::{load_split, write_dataset, Manifest, ManifestEntry, Split};
pub use eval::{auc, evaluate, frame_accuracy, EvalOptions, EvalReport, VideoResult};
pub use perturb::{perturb, PerturbKind};
pub use refine::{compute_reference_map, refine_video, RefineConfig, RefineOutcome, RefineScope};
pub use synth::{synth_dataset, SynthConfig, SynthDataset};
pub use train::{train_mfr, train_mfr_with_progress, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::attention::AttentionError;
use crate::model::{CheckpointError, ModelError};
use crate::spectral::SpectralError;
use crate::tensor::io::TensorIoError;
use crate::tensor::{format_shape, Tensor, TensorError};

/// Upper bound on frames carried per video.
pub const MAX_FRAMES_PER_VIDEO: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid video clip: {0}")]
    InvalidClip(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("refinement requested without a reference attention map")]
    MissingReference,
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("malformed dataset manifest: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Forgery artifact family carried by a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArtifactFamily {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "hi-freq-grid")]
    HiFreqGrid,
    #[serde(rename = "lo-freq-blend")]
    LoFreqBlend,
}

impl ArtifactFamily {
    pub fn name(self) -> &'static str {
        match self {
            ArtifactFamily::None => "none",
            ArtifactFamily::HiFreqGrid => "hi-freq-grid",
            ArtifactFamily::LoFreqBlend => "lo-freq-blend",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ArtifactFamily::None),
            "hi-freq-grid" => Some(ArtifactFamily::HiFreqGrid),
            "lo-freq-blend" => Some(ArtifactFamily::LoFreqBlend),
            _ => None,
        }
    }
}

/// Ordered frames sharing one label and one video identity.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub id: String,
    pub frames: Vec<Tensor<f32>>,
    pub label: u8,
    pub family: ArtifactFamily,
}

impl VideoClip {
    pub fn new(
        id: String,
        frames: Vec<Tensor<f32>>,
        label: u8,
        family: ArtifactFamily,
    ) -> Result<Self, PipelineError> {
        if frames.is_empty() || frames.len() > MAX_FRAMES_PER_VIDEO {
            return Err(PipelineError::InvalidClip(format!(
                "video {id} has {} frames, expected 1..={MAX_FRAMES_PER_VIDEO}",
                frames.len()
            )));
        }
        if label > 1 {
            return Err(PipelineError::InvalidClip(format!("video {id} has label {label}")));
        }
        let first = frames[0].shape().to_vec();
        if first.len() != 3 {
            return Err(PipelineError::InvalidClip(format!(
                "video {id} frames must be C x H x W, got {}",
                format_shape(&first)
            )));
        }
        for f in &frames {
            if f.shape() != first {
                return Err(PipelineError::InvalidClip(format!(
                    "video {id} mixes frame extents {} and {}",
                    format_shape(&first),
                    format_shape(f.shape())
                )));
            }
        }
        Ok(Self { id, frames, label, family })
    }

    /// All frames stacked into an N x C x H x W batch.
    pub fn batch(&self) -> Tensor<f32> {
        let refs: Vec<&Tensor<f32>> = self.frames.iter().collect();
        Tensor::stack(&refs).expect("uniform extents checked at construction")
    }
}
