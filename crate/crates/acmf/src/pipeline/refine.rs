//! Stage-2 refinement: per-video minimization of the attention-consistency
//! loss before prediction.
//!
//! Every video starts from a private clone of the trained detector and a
//! fresh optimizer; refinement of one video can never influence another.

use super::{PipelineError, VideoClip};
use crate::attention::{attention_leaf, fac_loss, gradcam_map, gradcam_on_graph, mean_attention, AttentionMap};
use crate::model::{bind_params, forward_on_graph, predict_proba, Model};
use crate::rng::{stream, SplitMix64};
use crate::tensor::{adam_step, AdamHyper, AdamState, Graph, NodeId, Tensor};

/// Which parameters the refinement updates.
///
/// Because the Grad-CAM channel weights are stop-gradients, the consistency
/// loss sends no gradient into the classifier head itself (the head enters
/// the map only through those weights). `HeadOnly` therefore leaves the
/// detector effectively unrefined; it exists to make that scope explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineScope {
    AllParams,
    HeadOnly,
}

impl RefineScope {
    pub fn name(self) -> &'static str {
        match self {
            RefineScope::AllParams => "all-params",
            RefineScope::HeadOnly => "head-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all-params" => Some(RefineScope::AllParams),
            "head-only" => Some(RefineScope::HeadOnly),
            _ => None,
        }
    }
}

/// Stage-2 hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Refinement rounds `T`.
    pub rounds: usize,
    pub lr: f64,
    /// Reference frame count `N_r` (capped at the training set size).
    pub reference_frames: usize,
    /// Seed for sampling reference frames.
    pub seed: u64,
    pub scope: RefineScope,
    /// Recompute the reference map from the training frames every round
    /// instead of freezing it. Experimental; default off.
    pub recompute_reference: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            lr: 1e-4,
            reference_frames: 256,
            seed: 0,
            scope: RefineScope::AllParams,
            recompute_reference: false,
        }
    }
}

/// Mean attention map over `n_r` uniformly sampled training frames (without
/// replacement; the full set if smaller), computed once with the given model.
pub fn compute_reference_map(
    model: &Model<f32>,
    train: &[VideoClip],
    n_r: usize,
    seed: u64,
) -> Result<AttentionMap<f32>, PipelineError> {
    if train.is_empty() || n_r == 0 {
        return Err(PipelineError::EmptyDataset);
    }
    let frames: Vec<&Tensor<f32>> = train.iter().flat_map(|v| v.frames.iter()).collect();
    let mut rng = SplitMix64::new(seed).child(stream::REFERENCE);
    let picked = rng.choose_k(frames.len(), n_r.min(frames.len()));
    let maps: Vec<AttentionMap<f32>> = picked
        .iter()
        .map(|&i| gradcam_map(model, frames[i], 1))
        .collect::<Result<_, _>>()?;
    Ok(mean_attention(&maps)?)
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// Mean fake probability over the video's frames under the refined model.
    pub probability: f64,
    /// Attention-consistency loss before refinement and after each round
    /// (length `rounds + 1`).
    pub lac_trace: Vec<f64>,
    /// Set when refinement hit a non-finite loss and the unrefined
    /// prediction was used instead.
    pub fell_back: bool,
    pub refined: Model<f32>,
}

/// One round's graph: maps for every frame plus the consistency loss.
fn build_round(
    model: &Model<f32>,
    video: &VideoClip,
    reference: &AttentionMap<f32>,
) -> Result<(Graph<f32>, Vec<NodeId>, NodeId), PipelineError> {
    let mut graph = Graph::new();
    let param_nodes = bind_params(&mut graph, &model.params);
    let size = model.config.input_size;
    let mut maps = Vec::with_capacity(video.frames.len());
    for frame in &video.frames {
        let batch = Tensor::stack(&[frame])?;
        let input = graph.input(batch);
        let nodes = forward_on_graph(&mut graph, &model.config, &model.params, &param_nodes, input)?;
        maps.push(gradcam_on_graph(&mut graph, nodes.logits, nodes.tap, 1, size)?);
    }
    let ref_leaf = attention_leaf(&mut graph, reference)?;
    let loss = fac_loss(&mut graph, &maps, ref_leaf)?;
    Ok((graph, param_nodes, loss))
}

/// Refine a clone of `model` on one video against the reference map, then
/// predict. The consistency trace has `rounds + 1` entries: the initial loss
/// and the loss after each round.
pub fn refine_video(
    model: &Model<f32>,
    video: &VideoClip,
    reference: &AttentionMap<f32>,
    train_for_recompute: Option<&[VideoClip]>,
    config: &RefineConfig,
) -> Result<RefineOutcome, PipelineError> {
    let mut current = model.clone();
    let mut state = AdamState::new(AdamHyper::with_lr(config.lr), &current.params.tensors());
    let in_scope: Vec<bool> = current
        .params
        .names()
        .map(|n| match config.scope {
            RefineScope::AllParams => true,
            RefineScope::HeadOnly => n.starts_with("head."),
        })
        .collect();

    let mut lac_trace = Vec::with_capacity(config.rounds + 1);
    let mut frozen_reference = reference.clone();
    for _round in 0..config.rounds {
        if config.recompute_reference {
            if let Some(train) = train_for_recompute {
                frozen_reference =
                    compute_reference_map(&current, train, config.reference_frames, config.seed)?;
            }
        }
        let (graph, param_nodes, loss) = build_round(&current, video, &frozen_reference)?;
        let lac = graph.value(loss).item() as f64;
        if !lac.is_finite() {
            let probability = mean_probability(model, video)?;
            return Ok(RefineOutcome { probability, lac_trace, fell_back: true, refined: model.clone() });
        }
        lac_trace.push(lac);
        let grads = graph.backward(loss)?;
        let grad_refs: Vec<Option<&Tensor<f32>>> = param_nodes
            .iter()
            .zip(&in_scope)
            .map(|(&n, &scoped)| if scoped { grads.get(n) } else { None })
            .collect();
        let updated = adam_step(&current.params.tensors(), &grad_refs, &mut state)?;
        current = current.with_params(current.params.with_tensors(updated));
        if !current.params.all_finite() {
            let probability = mean_probability(model, video)?;
            return Ok(RefineOutcome { probability, lac_trace, fell_back: true, refined: model.clone() });
        }
    }

    // closing loss after the final update
    let (graph, _, loss) = build_round(&current, video, &frozen_reference)?;
    lac_trace.push(graph.value(loss).item() as f64);

    let probability = mean_probability(&current, video)?;
    Ok(RefineOutcome { probability, lac_trace, fell_back: false, refined: current })
}

/// Video score: mean per-frame fake probability.
pub(crate) fn mean_probability(model: &Model<f32>, video: &VideoClip) -> Result<f64, PipelineError> {
    let probs = predict_proba(model, &video.batch())?;
    Ok(probs.iter().map(|&p| p as f64).sum::<f64>() / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::pipeline::synth::{synth_dataset, SynthConfig};

    fn setup() -> (Model<f32>, Vec<VideoClip>, Vec<VideoClip>) {
        let config = SynthConfig {
            train_videos_per_class: 2,
            test_videos_per_class: 2,
            frames_per_video: 3,
            image_size: 16,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&config).unwrap();
        let mc = ModelConfig { in_channels: 1, input_size: 16, stem_channels: 4, blocks: 2 };
        let model = Model::init(mc, &mut SplitMix64::new(77)).unwrap();
        (model, ds.train, ds.test)
    }

    #[test]
    fn reference_of_single_frame_is_that_frames_map() {
        let (model, train, _) = setup();
        let one = vec![VideoClip::new(
            "only".into(),
            vec![train[0].frames[0].clone()],
            0,
            super::super::ArtifactFamily::None,
        )
        .unwrap()];
        let reference = compute_reference_map(&model, &one, 1, 0).unwrap();
        let direct = gradcam_map(&model, &train[0].frames[0], 1).unwrap();
        for (a, b) in reference.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn reference_over_identical_frames_equals_single_map() {
        let (model, train, _) = setup();
        let frame = train[0].frames[0].clone();
        let clones = vec![VideoClip::new(
            "same".into(),
            vec![frame.clone(); 4],
            0,
            super::super::ArtifactFamily::None,
        )
        .unwrap()];
        let reference = compute_reference_map(&model, &clones, 4, 0).unwrap();
        let single = gradcam_map(&model, &frame, 1).unwrap();
        for (a, b) in reference.values().iter().zip(single.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn full_set_reference_matches_accumulate_divide_oracle() {
        let (model, train, _) = setup();
        let total: usize = train.iter().map(|v| v.frames.len()).sum();
        let reference = compute_reference_map(&model, &train, total, 3).unwrap();
        let maps: Vec<_> = train
            .iter()
            .flat_map(|v| v.frames.iter())
            .map(|f| gradcam_map(&model, f, 1).unwrap())
            .collect();
        for i in 0..reference.values().len() {
            let oracle: f32 = maps.iter().map(|m| m.values()[i]).sum::<f32>() / total as f32;
            assert!((reference.values()[i] - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_rounds_returns_unrefined_prediction() {
        let (model, train, test) = setup();
        let reference = compute_reference_map(&model, &train, 8, 1).unwrap();
        let cfg = RefineConfig { rounds: 0, ..RefineConfig::default() };
        let out = refine_video(&model, &test[0], &reference, None, &cfg).unwrap();
        let plain = mean_probability(&model, &test[0]).unwrap();
        assert_eq!(out.probability, plain);
        assert_eq!(out.lac_trace.len(), 1);
        assert!(!out.fell_back);
    }

    #[test]
    fn matching_mean_map_gives_zero_loss_and_zero_gradient() {
        let (model, train, _) = setup();
        // a single-frame "video" whose map is its own reference
        let clip = VideoClip::new(
            "self".into(),
            vec![train[0].frames[0].clone()],
            1,
            super::super::ArtifactFamily::HiFreqGrid,
        )
        .unwrap();
        let reference = gradcam_map(&model, &clip.frames[0], 1).unwrap();
        let cfg = RefineConfig { rounds: 2, ..RefineConfig::default() };
        let out = refine_video(&model, &clip, &reference, None, &cfg).unwrap();
        assert!(out.lac_trace[0] < 1e-10, "trace starts at zero");
        // zero gradient everywhere: parameters unchanged
        for ((_, a), (_, b)) in out.refined.params.iter().zip(model.params.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn refinement_reduces_consistency_loss() {
        let (_, train, test) = setup();
        let mc = ModelConfig { in_channels: 1, input_size: 16, stem_channels: 4, blocks: 2 };
        let model = Model::init(mc, &mut SplitMix64::new(21)).unwrap();
        let reference = compute_reference_map(&model, &train, 12, 2).unwrap();
        let cfg = RefineConfig { rounds: 4, ..RefineConfig::default() };
        let out = refine_video(&model, &test[1], &reference, None, &cfg).unwrap();
        assert_eq!(out.lac_trace.len(), 5);
        assert!(
            out.lac_trace[4] < out.lac_trace[0],
            "trace {:?} should decrease",
            out.lac_trace
        );
    }

    #[test]
    fn head_only_scope_freezes_feature_extractor() {
        let (model, train, test) = setup();
        let reference = compute_reference_map(&model, &train, 8, 1).unwrap();
        let cfg = RefineConfig { rounds: 2, scope: RefineScope::HeadOnly, ..RefineConfig::default() };
        let out = refine_video(&model, &test[0], &reference, None, &cfg).unwrap();
        for ((name, a), (_, b)) in out.refined.params.iter().zip(model.params.iter()) {
            if name.starts_with("head.") {
                continue;
            }
            assert_eq!(a, b, "{name} must stay frozen under head-only scope");
        }
    }
}
