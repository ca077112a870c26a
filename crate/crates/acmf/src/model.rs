//! The desk-scale forgery detector: a small separable-convolution residual
//! CNN with a designated Grad-CAM tap layer, plus checkpoint serialization.
//!
//! Architecture (fixed):
//!
//! ```text
//! stem:    conv 3x3 (stride 1, pad 1) -> relu
//! block i: depthwise 3x3 (stride 2, pad 1) -> pointwise 1x1, doubling
//!          channels, with a strided 1x1 residual; relu on the sum
//! tap:     output of the last block, post-relu   (Grad-CAM reads this)
//! head:    global average pool -> dense -> 2 logits
//! ```
//!
//! With the default two blocks the tap has spatial extent `input/4`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::tensor::{format_shape, Graph, NodeId, Scalar, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch shape {got} does not match config (expects {expected})")]
    BatchMismatch { got: String, expected: String },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic line {found:?}, expected {CKPT_MAGIC:?}")]
    BadMagic { found: String },
    #[error("unsupported checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint header: {0}")]
    BadHeader(String),
    #[error("checkpoint truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("tensor {name} has shape {got}, config expects {expected}")]
    ShapeMismatch { name: String, got: String, expected: String },
    #[error("non-finite value in tensor {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Structural description of the detector. Classes are fixed at two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub stem_channels: usize,
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { in_channels: 1, input_size: 64, stem_channels: 12, blocks: 2 }
    }
}

pub const CLASSES: usize = 2;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.input_size.is_power_of_two() {
            return Err(ModelError::InvalidConfig(format!(
                "input size {} is not a power of two",
                self.input_size
            )));
        }
        if self.blocks == 0 || self.stem_channels == 0 || self.in_channels == 0 {
            return Err(ModelError::InvalidConfig("zero-sized dimension".into()));
        }
        if self.input_size >> self.blocks == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "{} blocks halve a {} input away",
                self.blocks, self.input_size
            )));
        }
        Ok(())
    }

    /// Spatial extent of the Grad-CAM tap (one halving per block).
    pub fn tap_size(&self) -> usize {
        self.input_size >> self.blocks
    }

    /// Channel count at the tap.
    pub fn tap_channels(&self) -> usize {
        self.stem_channels << self.blocks
    }

    /// Parameter names and shapes, in storage order.
    pub fn parameter_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = vec![
            ("stem.weight".into(), vec![self.stem_channels, self.in_channels, 3, 3]),
            ("stem.bias".into(), vec![self.stem_channels]),
        ];
        let mut ch = self.stem_channels;
        for b in 1..=self.blocks {
            let out = ch * 2;
            specs.push((format!("block{b}.dw.weight"), vec![ch, 3, 3]));
            specs.push((format!("block{b}.dw.bias"), vec![ch]));
            specs.push((format!("block{b}.pw.weight"), vec![out, ch, 1, 1]));
            specs.push((format!("block{b}.pw.bias"), vec![out]));
            specs.push((format!("block{b}.skip.weight"), vec![out, ch, 1, 1]));
            specs.push((format!("block{b}.skip.bias"), vec![out]));
            ch = out;
        }
        specs.push(("head.weight".into(), vec![CLASSES, ch]));
        specs.push(("head.bias".into(), vec![CLASSES]));
        specs
    }
}

/// Ordered name -> tensor parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<E: Scalar> {
    entries: Vec<(String, Tensor<E>)>,
}

impl<E: Scalar> ModelParams<E> {
    pub fn from_entries(entries: Vec<(String, Tensor<E>)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor<E>)> {
        self.entries.iter()
    }

    pub fn tensors(&self) -> Vec<Tensor<E>> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>, ModelError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))
    }

    /// Rebuild with the same names and new tensors (shapes preserved).
    pub fn with_tensors(&self, tensors: Vec<Tensor<E>>) -> Self {
        debug_assert_eq!(tensors.len(), self.entries.len());
        Self {
            entries: self
                .entries
                .iter()
                .zip(tensors)
                .map(|((n, _), t)| (n.clone(), t))
                .collect(),
        }
    }

    pub fn convert<F: Scalar>(&self) -> ModelParams<F> {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.convert())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Fan-in scaled uniform init, `U(-sqrt(3/fan_in), sqrt(3/fan_in))`, which
/// targets a variance of exactly `1/fan_in`. Biases start at zero.
pub fn init_params<E: Scalar>(config: &ModelConfig, rng: &mut SplitMix64) -> Result<ModelParams<E>, ModelError> {
    config.validate()?;
    let mut entries = Vec::new();
    for (name, shape) in config.parameter_specs() {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = match shape.len() {
                4 => shape[1] * shape[2] * shape[3], // conv: C*KH*KW
                3 => shape[1] * shape[2],            // depthwise: KH*KW
                2 => shape[1],                       // dense: F
                _ => shape.iter().product(),
            };
            let bound = (3.0 / fan_in as f64).sqrt();
            Tensor::from_fn(&shape, |_| E::from_f64(rng.uniform(-bound, bound)))
        };
        entries.push((name, tensor));
    }
    Ok(ModelParams { entries })
}

/// Detector: config plus parameters.
#[derive(Debug, Clone)]
pub struct Model<E: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<E>,
}

impl<E: Scalar> Model<E> {
    pub fn init(config: ModelConfig, rng: &mut SplitMix64) -> Result<Self, ModelError> {
        let params = init_params(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn with_params(&self, params: ModelParams<E>) -> Self {
        Self { config: self.config.clone(), params }
    }

    pub fn convert<F: Scalar>(&self) -> Model<F> {
        Model { config: self.config.clone(), params: self.params.convert() }
    }
}

/// Node handles of one forward pass.
pub struct ForwardNodes {
    pub logits: NodeId,
    pub tap: NodeId,
}

/// Full forward pass bundle: the graph, the interesting nodes, and the
/// parameter leaves in storage order.
pub struct ForwardPass<E: Scalar> {
    pub graph: Graph<E>,
    pub logits: NodeId,
    pub tap: NodeId,
    pub param_nodes: Vec<NodeId>,
}

/// Add parameter leaves for `params` to a graph, in storage order.
pub fn bind_params<E: Scalar>(graph: &mut Graph<E>, params: &ModelParams<E>) -> Vec<NodeId> {
    params.entries.iter().map(|(_, t)| graph.parameter(t.clone())).collect()
}

/// Build the detector forward pass on an existing graph. `param_nodes` must
/// come from [`bind_params`] with the same config.
pub fn forward_on_graph<E: Scalar>(
    graph: &mut Graph<E>,
    config: &ModelConfig,
    params: &ModelParams<E>,
    param_nodes: &[NodeId],
    batch: NodeId,
) -> Result<ForwardNodes, ModelError> {
    let node = |name: &str| -> Result<NodeId, ModelError> {
        let idx = params
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))?;
        Ok(param_nodes[idx])
    };

    let stem_w = node("stem.weight")?;
    let stem_b = node("stem.bias")?;
    let conv = graph.conv2d(batch, stem_w, Some(stem_b), 1, 1)?;
    let mut x = graph.relu(conv)?;
    for b in 1..=config.blocks {
        let dw = graph.depthwise_conv2d(x, node(&format!("block{b}.dw.weight"))?, Some(node(&format!("block{b}.dw.bias"))?), 2, 1)?;
        let pw = graph.conv2d(dw, node(&format!("block{b}.pw.weight"))?, Some(node(&format!("block{b}.pw.bias"))?), 1, 0)?;
        let skip = graph.conv2d(x, node(&format!("block{b}.skip.weight"))?, Some(node(&format!("block{b}.skip.bias"))?), 2, 0)?;
        let sum = graph.add(pw, skip)?;
        x = graph.relu(sum)?;
    }
    let tap = x;
    let pooled = graph.global_avg_pool(tap)?;
    let logits = graph.dense(pooled, node("head.weight")?, Some(node("head.bias")?))?;
    Ok(ForwardNodes { logits, tap })
}

/// Forward a batch, retaining logits and the Grad-CAM tap on a fresh graph.
pub fn forward_with_taps<E: Scalar>(model: &Model<E>, batch: &Tensor<E>) -> Result<ForwardPass<E>, ModelError> {
    let c = &model.config;
    let expected = [c.in_channels, c.input_size, c.input_size];
    match *batch.shape() {
        [_, bc, bh, bw] if [bc, bh, bw] == expected => {}
        _ => {
            return Err(ModelError::BatchMismatch {
                got: format_shape(batch.shape()),
                expected: format!("Nx{}x{}x{}", expected[0], expected[1], expected[2]),
            })
        }
    }
    let mut graph = Graph::new();
    let param_nodes = bind_params(&mut graph, &model.params);
    let input = graph.input(batch.clone());
    let nodes = forward_on_graph(&mut graph, c, &model.params, &param_nodes, input)?;
    Ok(ForwardPass { graph, logits: nodes.logits, tap: nodes.tap, param_nodes })
}

/// Per-sample probability of the "fake" class (class 1), via softmax.
pub fn predict_proba<E: Scalar>(model: &Model<E>, batch: &Tensor<E>) -> Result<Vec<E>, ModelError> {
    let mut pass = forward_with_taps(model, batch)?;
    let probs = pass.graph.softmax(pass.logits)?;
    let value = pass.graph.value(probs);
    Ok(value.data().chunks(CLASSES).map(|row| row[1]).collect())
}

// ------------------------------------------------------------ checkpoint

pub const CKPT_MAGIC: &str = "ACMF-CKPT v1";
pub const CKPT_VERSION: u32 = 1;

/// Training provenance stored with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: usize,
    pub cutoff: usize,
    pub mask_ratio: f64,
    /// Fully resolved run configuration, echoed for reproducibility.
    #[serde(default)]
    pub config_echo: BTreeMap<String, String>,
}

/// A trained detector as stored on disk (binary32 payload).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn model(&self) -> Model<f32> {
        Model { config: self.config.clone(), params: self.params.clone() }
    }
}

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    version: u32,
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<CkptTensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct CkptTensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

/// Serialize: ASCII magic line, one-line JSON header, then concatenated raw
/// little-endian `f32` payloads at the offsets recorded in the header.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (name, tensor) in ckpt.params.iter() {
        let offset = payload.len() as u64;
        for &v in tensor.data() {
            v.write_le(&mut payload);
        }
        tensors.push(CkptTensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            byte_len: payload.len() as u64 - offset,
        });
    }
    let header = CkptHeader {
        version: CKPT_VERSION,
        config: ckpt.config.clone(),
        meta: ckpt.meta.clone(),
        tensors,
    };
    let mut out = format!(
        "{CKPT_MAGIC}\n{}\n",
        serde_json::to_string(&header).expect("header serializes")
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let newline = |from: usize| bytes[from..].iter().position(|&b| b == b'\n').map(|p| from + p);
    let first = newline(0).ok_or_else(|| CheckpointError::BadMagic { found: String::new() })?;
    let magic = String::from_utf8_lossy(&bytes[..first]).into_owned();
    if magic != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let second = newline(first + 1).ok_or_else(|| CheckpointError::BadHeader("missing header line".into()))?;
    let header: CkptHeader = serde_json::from_slice(&bytes[first + 1..second])
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    if header.version != CKPT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: header.version, expected: CKPT_VERSION });
    }
    header.config.validate()?;

    let specs = header.config.parameter_specs();
    if specs.len() != header.tensors.len() {
        return Err(CheckpointError::BadHeader(format!(
            "config expects {} tensors, directory lists {}",
            specs.len(),
            header.tensors.len()
        )));
    }

    let payload = &bytes[second + 1..];
    let mut entries = Vec::with_capacity(specs.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(&specs) {
        if &entry.name != name || &entry.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                got: format_shape(&entry.shape),
                expected: format!("{name}: {}", format_shape(shape)),
            });
        }
        let numel: usize = shape.iter().product();
        let start = entry.offset as usize;
        let len = entry.byte_len as usize;
        if len != numel * 4 {
            return Err(CheckpointError::BadHeader(format!(
                "tensor {name} declares {len} bytes for {numel} values"
            )));
        }
        let end = start + len;
        if end > payload.len() {
            return Err(CheckpointError::Truncated { expected: end, found: payload.len() });
        }
        let data: Vec<f32> = payload[start..end].chunks_exact(4).map(f32::read_le).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        if !tensor.all_finite() {
            return Err(CheckpointError::NonFinite(name.clone()));
        }
        entries.push((name.clone(), tensor));
    }
    Ok(Checkpoint {
        config: header.config,
        params: ModelParams::from_entries(entries),
        meta: header.meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
