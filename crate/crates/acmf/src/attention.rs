//! Grad-CAM attention maps and the two training objectives: classification
//! cross-entropy and attention consistency.
//!
//! A map is extracted for a single image by taking the target-class logit,
//! backpropagating to the tap activations `A^k`, averaging those gradients
//! spatially into channel weights `alpha_k`, and rectifying the weighted sum
//! `relu(sum_k alpha_k A^k)`, which is then upsampled to input resolution and
//! normalized by its maximum.
//!
//! The channel weights are treated as constants (stop-gradient): when the
//! consistency loss is differentiated, gradients reach the parameters only
//! through the activations, never through `alpha_k`. The normalization
//! constant is likewise fixed at its forward value.

use std::path::Path;

use crate::model::{forward_with_taps, Model, ModelError, CLASSES};
use crate::tensor::{Graph, NodeId, Scalar, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum AttentionError {
    #[error("target class {0} out of range, detector has {CLASSES} classes")]
    InvalidClass(usize),
    #[error("expected a single C x H x W image, got {0}")]
    NotSingleImage(String),
    #[error("attention map list is empty")]
    EmptyMapList,
    #[error("attention map extent mismatch: {lhs} vs {rhs}")]
    ExtentMismatch { lhs: String, rhs: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Nonnegative H x W saliency map. When `normalized` is set and the map is
/// not identically zero, its maximum is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<E: Scalar> {
    data: Tensor<E>,
    normalized: bool,
}

impl<E: Scalar> AttentionMap<E> {
    pub fn new(data: Tensor<E>, normalized: bool) -> Result<Self, AttentionError> {
        match *data.shape() {
            [_, _] => Ok(Self { data, normalized }),
            _ => Err(AttentionError::NotSingleImage(crate::tensor::format_shape(data.shape()))),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn tensor(&self) -> &Tensor<E> {
        &self.data
    }

    pub fn values(&self) -> &[E] {
        self.data.data()
    }

    pub fn max(&self) -> E {
        self.values().iter().fold(E::zero(), |m, &v| m.max(v))
    }

    pub fn min(&self) -> E {
        self.values().iter().fold(E::infinity(), |m, &v| m.min(v))
    }

    pub fn convert<F: Scalar>(&self) -> AttentionMap<F> {
        AttentionMap { data: self.data.convert(), normalized: self.normalized }
    }
}

/// Channel weights: spatial mean of the tap gradient, per channel. These are
/// the Grad-CAM `alpha_k`, deliberately detached from the graph.
fn channel_weights<E: Scalar>(tap_grad: &Tensor<E>) -> Vec<E> {
    let [n, k, h, w] = [
        tap_grad.shape()[0],
        tap_grad.shape()[1],
        tap_grad.shape()[2],
        tap_grad.shape()[3],
    ];
    debug_assert_eq!(n, 1);
    let hw = h * w;
    let inv = E::from_f64(1.0 / hw as f64);
    (0..k)
        .map(|ki| {
            tap_grad.data()[ki * hw..(ki + 1) * hw]
                .iter()
                .fold(E::zero(), |a, &v| a + v)
                * inv
        })
        .collect()
}

/// Build a normalized Grad-CAM map node for a single-image forward pass whose
/// tap and logits already live on `graph`. The returned node has shape
/// `1 x 1 x H x W` and stays differentiable through the tap activations.
pub fn gradcam_on_graph<E: Scalar>(
    graph: &mut Graph<E>,
    logits: NodeId,
    tap: NodeId,
    target_class: usize,
    out_size: usize,
) -> Result<NodeId, AttentionError> {
    if target_class >= CLASSES {
        return Err(AttentionError::InvalidClass(target_class));
    }
    if graph.value(tap).shape()[0] != 1 {
        return Err(AttentionError::NotSingleImage(crate::tensor::format_shape(
            graph.value(tap).shape(),
        )));
    }
    let class_logit = graph.select(logits, target_class)?;
    let grads = graph.backward(class_logit)?;
    let alphas = match grads.get(tap) {
        Some(g) => channel_weights(g),
        // logit independent of the tap: all-zero weights
        None => vec![E::zero(); graph.value(tap).shape()[1]],
    };
    let combined = graph.channel_weighted_sum(tap, alphas)?;
    let rectified = graph.relu(combined)?;
    let upsampled = graph.bilinear_upsample(rectified, out_size, out_size)?;
    let peak = graph.value(upsampled).max_abs();
    if peak > E::zero() {
        Ok(graph.scale(upsampled, E::one() / peak)?)
    } else {
        // all-zero raw map: normalization skipped
        Ok(upsampled)
    }
}

/// Grad-CAM attention map of a single `C x H x W` image.
pub fn gradcam_map<E: Scalar>(
    model: &Model<E>,
    image: &Tensor<E>,
    target_class: usize,
) -> Result<AttentionMap<E>, AttentionError> {
    if image.shape().len() != 3 {
        return Err(AttentionError::NotSingleImage(crate::tensor::format_shape(image.shape())));
    }
    let batch = Tensor::stack(&[image])?;
    let mut pass = forward_with_taps(model, &batch)?;
    let size = model.config.input_size;
    let map_node = gradcam_on_graph(&mut pass.graph, pass.logits, pass.tap, target_class, size)?;
    let flat = pass.graph.value(map_node).reshape(&[size, size])?;
    AttentionMap::new(flat, true)
}

/// Pixelwise arithmetic mean of attention maps. The result is not
/// renormalized.
pub fn mean_attention<E: Scalar>(maps: &[AttentionMap<E>]) -> Result<AttentionMap<E>, AttentionError> {
    let first = maps.first().ok_or(AttentionError::EmptyMapList)?;
    let (h, w) = (first.height(), first.width());
    let mut acc = vec![E::zero(); h * w];
    for m in maps {
        if m.height() != h || m.width() != w {
            return Err(AttentionError::ExtentMismatch {
                lhs: format!("{h}x{w}"),
                rhs: format!("{}x{}", m.height(), m.width()),
            });
        }
        for (a, &v) in acc.iter_mut().zip(m.values()) {
            *a = *a + v;
        }
    }
    let inv = E::from_f64(1.0 / maps.len() as f64);
    for a in acc.iter_mut() {
        *a = *a * inv;
    }
    AttentionMap::new(Tensor::new(&[h, w], acc)?, false)
}

/// Mean cross-entropy between logits and labels, as a differentiable node.
pub fn cls_loss<E: Scalar>(
    graph: &mut Graph<E>,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId, TensorError> {
    graph.cross_entropy(logits, labels)
}

/// Insert an attention map as a constant `1 x 1 x H x W` leaf.
pub fn attention_leaf<E: Scalar>(graph: &mut Graph<E>, map: &AttentionMap<E>) -> Result<NodeId, TensorError> {
    let t = map.tensor().reshape(&[1, 1, map.height(), map.width()])?;
    Ok(graph.input(t))
}

/// Attention-consistency loss node: squared L2 norm (pixel sum of squares) of
/// the difference between the mean of `video_maps` and `reference`. Gradients
/// flow into the video maps' activations; the reference is a constant leaf.
pub fn fac_loss<E: Scalar>(
    graph: &mut Graph<E>,
    video_maps: &[NodeId],
    reference: NodeId,
) -> Result<NodeId, AttentionError> {
    let first = *video_maps.first().ok_or(AttentionError::EmptyMapList)?;
    let ref_shape = graph.value(reference).shape().to_vec();
    for &m in video_maps {
        if graph.value(m).shape() != ref_shape {
            return Err(AttentionError::ExtentMismatch {
                lhs: crate::tensor::format_shape(&ref_shape),
                rhs: crate::tensor::format_shape(graph.value(m).shape()),
            });
        }
    }
    let mut acc = first;
    for &m in &video_maps[1..] {
        acc = graph.add(acc, m)?;
    }
    let mean = graph.scale(acc, E::from_f64(1.0 / video_maps.len() as f64))?;
    let diff = graph.sub(mean, reference)?;
    Ok(graph.sum_squares(diff)?)
}

/// Value-level attention consistency: `|| mean(maps) - reference ||^2`
/// summed over pixels. Matches the graph construction in [`fac_loss`].
pub fn fac_loss_value<E: Scalar>(
    maps: &[AttentionMap<E>],
    reference: &AttentionMap<E>,
) -> Result<E, AttentionError> {
    let mean = mean_attention(maps)?;
    if mean.height() != reference.height() || mean.width() != reference.width() {
        return Err(AttentionError::ExtentMismatch {
            lhs: format!("{}x{}", mean.height(), mean.width()),
            rhs: format!("{}x{}", reference.height(), reference.width()),
        });
    }
    Ok(mean
        .values()
        .iter()
        .zip(reference.values())
        .fold(E::zero(), |a, (&m, &r)| {
            let d = m - r;
            a + d * d
        }))
}

// ----------------------------------------------------------------- export

/// Binary PGM (P5, maxval 255); values rounded from [0, 1].
pub fn encode_pgm<E: Scalar>(map: &AttentionMap<E>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.values().iter().map(|&v| {
        let clamped = v.to_f64().clamp(0.0, 1.0);
        (clamped * 255.0).round() as u8
    }));
    out
}

pub fn write_pgm<E: Scalar>(map: &AttentionMap<E>, path: &Path) -> Result<(), AttentionError> {
    std::fs::write(path, encode_pgm(map))?;
    Ok(())
}

/// Binarize at the `(1 - q)` quantile: pixels at or above the threshold go to
/// 1, the rest to 0. `q = 0.10` keeps roughly the top tenth of pixels.
pub fn binarize_top<E: Scalar>(map: &AttentionMap<E>, q: f64) -> AttentionMap<E> {
    let n = map.values().len();
    let mut sorted: Vec<E> = map.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite map values"));
    let rank = (((1.0 - q.clamp(0.0, 1.0)) * n as f64).ceil() as usize).min(n - 1);
    let threshold = sorted[rank];
    let data: Vec<E> = map
        .values()
        .iter()
        .map(|&v| if v >= threshold { E::one() } else { E::zero() })
        .collect();
    AttentionMap {
        data: Tensor::new(&[map.height(), map.width()], data).expect("same extents"),
        normalized: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, ModelParams};
    use crate::rng::SplitMix64;

    fn config() -> ModelConfig {
        ModelConfig { in_channels: 1, input_size: 16, stem_channels: 4, blocks: 2 }
    }

    fn rand_image(cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(&[cfg.in_channels, cfg.input_size, cfg.input_size], |_| rng.next_f64())
    }

    /// Model with random features but a head that reads only tap channel 0
    /// with weight +1 into the fake logit.
    fn single_channel_model(seed: u64) -> Model<f64> {
        let cfg = config();
        let base: ModelParams<f64> = init_params(&cfg, &mut SplitMix64::new(seed)).unwrap();
        let k = cfg.tap_channels();
        let mut head_w = vec![0.0; CLASSES * k];
        head_w[k] = 1.0; // class 1, channel 0
        let entries: Vec<(String, Tensor<f64>)> = base
            .iter()
            .map(|(n, t)| {
                let t = match n.as_str() {
                    "head.weight" => Tensor::new(&[CLASSES, k], head_w.clone()).unwrap(),
                    "head.bias" => Tensor::zeros(&[CLASSES]),
                    _ => t.clone(),
                };
                (n.clone(), t)
            })
            .collect();
        Model { config: cfg, params: ModelParams::from_entries(entries) }
    }

    /// Independent bilinear interpolation (align-corners false), in-test.
    fn upsample_ref(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0);
            let y0 = (sy.floor() as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..ow {
                let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0);
                let x0 = (sx.floor() as usize).min(w - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                out[oy * ow + ox] = (1.0 - fy) * ((1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1])
                    + fy * ((1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
            }
        }
        out
    }

    #[test]
    fn single_channel_oracle() {
        let model = single_channel_model(3);
        let img = rand_image(&model.config, 4);
        let map = gradcam_map(&model, &img, 1).unwrap();

        // closed form: normalized relu of tap channel 0, upsampled
        let pass = forward_with_taps(&model, &Tensor::stack(&[&img]).unwrap()).unwrap();
        let tap = pass.graph.value(pass.tap);
        let (th, tw) = (tap.shape()[2], tap.shape()[3]);
        let ch0: Vec<f64> = tap.data()[..th * tw].iter().map(|&v| v.max(0.0)).collect();
        let up = upsample_ref(&ch0, th, tw, 16, 16);
        let peak = up.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.0, "degenerate test image");
        for (got, want) in map.values().iter().zip(up.iter().map(|v| v / peak)) {
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_head_weights_give_zero_map() {
        let cfg = config();
        let base: ModelParams<f64> = init_params(&cfg, &mut SplitMix64::new(9)).unwrap();
        let entries: Vec<(String, Tensor<f64>)> = base
            .iter()
            .map(|(n, t)| {
                let t = if n.starts_with("head.") { Tensor::zeros(t.shape()) } else { t.clone() };
                (n.clone(), t)
            })
            .collect();
        let model = Model { config: cfg, params: ModelParams::from_entries(entries) };
        let map = gradcam_map(&model, &rand_image(&model.config, 10), 1).unwrap();
        assert_eq!(map.max(), 0.0, "all-zero raw map stays all-zero");
    }

    #[test]
    fn map_contract_on_random_models() {
        for seed in 0..20u64 {
            let cfg = config();
            let model = Model::<f64>::init(cfg, &mut SplitMix64::new(seed)).unwrap();
            let map = gradcam_map(&model, &rand_image(&model.config, 1000 + seed), 1).unwrap();
            assert_eq!(map.height(), 16);
            assert_eq!(map.width(), 16);
            assert!(map.min() >= 0.0);
            let max = map.max();
            assert!(max == 0.0 || (max - 1.0).abs() < 1e-12, "max {max}");
        }
    }

    #[test]
    fn rejects_out_of_range_class() {
        let model = single_channel_model(5);
        let img = rand_image(&model.config, 6);
        assert!(matches!(gradcam_map(&model, &img, 2), Err(AttentionError::InvalidClass(2))));
    }

    #[test]
    fn invariant_to_shared_bias_shift() {
        let model = single_channel_model(11);
        let img = rand_image(&model.config, 12);
        let base = gradcam_map(&model, &img, 1).unwrap();

        let entries: Vec<(String, Tensor<f64>)> = model
            .params
            .iter()
            .map(|(n, t)| {
                let t = if n == "head.bias" { t.map(|v| v + 3.7) } else { t.clone() };
                (n.clone(), t)
            })
            .collect();
        let shifted = Model { config: model.config.clone(), params: ModelParams::from_entries(entries) };
        let moved = gradcam_map(&shifted, &img, 1).unwrap();
        for (a, b) in base.values().iter().zip(moved.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_weight_scaling_leaves_normalized_map_unchanged() {
        // The raw map is linear in the head weights; normalization divides
        // the scaling back out.
        let model = single_channel_model(13);
        let img = rand_image(&model.config, 14);
        let base = gradcam_map(&model, &img, 1).unwrap();
        for lambda in [0.5, 2.0, 7.0] {
            let entries: Vec<(String, Tensor<f64>)> = model
                .params
                .iter()
                .map(|(n, t)| {
                    let t = if n == "head.weight" { t.map(|v| v * lambda) } else { t.clone() };
                    (n.clone(), t)
                })
                .collect();
            let scaled = Model { config: model.config.clone(), params: ModelParams::from_entries(entries) };
            let map = gradcam_map(&scaled, &img, 1).unwrap();
            for (a, b) in base.values().iter().zip(map.values()) {
                assert!((a - b).abs() < 1e-9, "lambda {lambda}");
            }
        }
    }

    #[test]
    fn raw_map_scales_linearly_with_head_weights() {
        let model = single_channel_model(15);
        let img = rand_image(&model.config, 16);
        let raw_peak = |m: &Model<f64>| -> f64 {
            let batch = Tensor::stack(&[&img]).unwrap();
            let mut pass = forward_with_taps(m, &batch).unwrap();
            let logit = pass.graph.select(pass.logits, 1).unwrap();
            let grads = pass.graph.backward(logit).unwrap();
            let alphas = super::channel_weights(grads.get(pass.tap).unwrap());
            let cws = pass.graph.channel_weighted_sum(pass.tap, alphas).unwrap();
            let r = pass.graph.relu(cws).unwrap();
            pass.graph.value(r).max_abs()
        };
        let base_peak = raw_peak(&model);
        let entries: Vec<(String, Tensor<f64>)> = model
            .params
            .iter()
            .map(|(n, t)| {
                let t = if n == "head.weight" { t.map(|v| v * 3.0) } else { t.clone() };
                (n.clone(), t)
            })
            .collect();
        let scaled = Model { config: model.config.clone(), params: ModelParams::from_entries(entries) };
        assert!((raw_peak(&scaled) / base_peak - 3.0).abs() < 1e-9);
    }

    fn map_from(data: Vec<f64>, h: usize, w: usize) -> AttentionMap<f64> {
        AttentionMap::new(Tensor::new(&[h, w], data).unwrap(), false).unwrap()
    }

    #[test]
    fn mean_attention_trivia() {
        let m = map_from(vec![0.1, 0.9, 0.4, 0.6], 2, 2);
        let single = mean_attention(std::slice::from_ref(&m)).unwrap();
        assert_eq!(single.values(), m.values());

        let complement = map_from(m.values().iter().map(|v| 1.0 - v).collect(), 2, 2);
        let mean = mean_attention(&[m, complement]).unwrap();
        for &v in mean.values() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_attention_matches_accumulate_divide_oracle() {
        let mut rng = SplitMix64::new(50);
        let maps: Vec<AttentionMap<f64>> = (0..50)
            .map(|_| map_from((0..64).map(|_| rng.next_f64()).collect(), 8, 8))
            .collect();
        let mean = mean_attention(&maps).unwrap();
        for i in 0..64 {
            let oracle: f64 = maps.iter().map(|m| m.values()[i]).sum::<f64>() / 50.0;
            assert!((mean.values()[i] - oracle).abs() < 1e-7);
        }
        assert!(mean_attention::<f64>(&[]).is_err());
    }

    #[test]
    fn cls_loss_trivia() {
        // logits forcing p(label) = 1 -> loss ~ 0
        let mut g = Graph::new();
        let sure = g.input(Tensor::<f64>::new(&[2, 2], vec![40.0, -40.0, -40.0, 40.0]).unwrap());
        let l = cls_loss(&mut g, sure, &[0, 1]).unwrap();
        assert!(g.value(l).item() < 1e-12);

        let zeros = g.input(Tensor::<f64>::zeros(&[4, 2]));
        let l2 = cls_loss(&mut g, zeros, &[0, 1, 1, 0]).unwrap();
        assert!((g.value(l2).item() - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn cls_loss_matches_per_sample_hand_computation() {
        let mut rng = SplitMix64::new(4);
        let logits = Tensor::<f64>::from_fn(&[16, 2], |_| rng.uniform(-2.0, 2.0));
        let labels: Vec<usize> = (0..16).map(|_| rng.below(2)).collect();
        let mut hand = 0.0;
        for (row, &y) in logits.data().chunks(2).zip(&labels) {
            let m = row[0].max(row[1]);
            let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
            hand += lse - row[y];
        }
        hand /= 16.0;
        let mut g = Graph::new();
        let li = g.input(logits);
        let l = cls_loss(&mut g, li, &labels).unwrap();
        assert!((g.value(l).item() - hand).abs() < 1e-7);
    }

    #[test]
    fn fac_loss_trivia() {
        let mut g = Graph::new();
        let ones = map_from(vec![1.0; 4], 2, 2);
        let zeros = map_from(vec![0.0; 4], 2, 2);
        let ones_leaf = attention_leaf(&mut g, &ones).unwrap();
        let zeros_leaf = attention_leaf(&mut g, &zeros).unwrap();

        // video mean equals reference -> 0
        let same = fac_loss(&mut g, &[ones_leaf], ones_leaf).unwrap();
        assert_eq!(g.value(same).item(), 0.0);

        // all-ones mean vs all-zero reference on 2x2 -> 4
        let apart = fac_loss(&mut g, &[ones_leaf], zeros_leaf).unwrap();
        assert_eq!(g.value(apart).item(), 4.0);
    }

    #[test]
    fn fac_loss_matches_flatten_subtract_dot_oracle() {
        let mut rng = SplitMix64::new(8);
        let maps: Vec<AttentionMap<f64>> = (0..7)
            .map(|_| map_from((0..16).map(|_| rng.next_f64()).collect(), 4, 4))
            .collect();
        let reference = map_from((0..16).map(|_| rng.next_f64()).collect(), 4, 4);

        let mut oracle = 0.0;
        for i in 0..16 {
            let mean: f64 = maps.iter().map(|m| m.values()[i]).sum::<f64>() / maps.len() as f64;
            let d = mean - reference.values()[i];
            oracle += d * d;
        }

        let value = fac_loss_value(&maps, &reference).unwrap();
        assert!((value - oracle).abs() < 1e-7);

        let mut g = Graph::new();
        let leaves: Vec<NodeId> = maps.iter().map(|m| attention_leaf(&mut g, m).unwrap()).collect();
        let ref_leaf = attention_leaf(&mut g, &reference).unwrap();
        let node = fac_loss(&mut g, &leaves, ref_leaf).unwrap();
        assert!((g.value(node).item() - oracle).abs() < 1e-7);
    }

    #[test]
    fn fac_loss_nonnegative_and_symmetric() {
        let mut rng = SplitMix64::new(60);
        for _ in 0..20 {
            let a: Vec<AttentionMap<f64>> =
                (0..3).map(|_| map_from((0..16).map(|_| rng.next_f64()).collect(), 4, 4)).collect();
            let b: Vec<AttentionMap<f64>> =
                (0..5).map(|_| map_from((0..16).map(|_| rng.next_f64()).collect(), 4, 4)).collect();
            let mean_a = mean_attention(&a).unwrap();
            let mean_b = mean_attention(&b).unwrap();
            let ab = fac_loss_value(&a, &mean_b).unwrap();
            let ba = fac_loss_value(&b, &mean_a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-9, "symmetric under exchanging the means");
        }
    }

    #[test]
    fn fac_loss_rejects_extent_mismatch() {
        let maps = vec![map_from(vec![0.0; 4], 2, 2)];
        let reference = map_from(vec![0.0; 16], 4, 4);
        assert!(matches!(
            fac_loss_value(&maps, &reference),
            Err(AttentionError::ExtentMismatch { .. })
        ));
    }

    #[test]
    fn pgm_encoding_is_exact() {
        let map = map_from(vec![0.0, 0.5, 1.0, 2.0], 2, 2);
        let bytes = encode_pgm(&map);
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0u8, 128, 255, 255]);
    }

    #[test]
    fn binarize_top_limits() {
        let map = map_from((0..16).map(|i| i as f64 / 15.0).collect(), 4, 4);
        let all = binarize_top(&map, 1.0);
        assert!(all.values().iter().all(|&v| v == 1.0), "q=1 selects every pixel");
        let top = binarize_top(&map, 0.25);
        let selected = top.values().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(selected, 4);
    }
}
