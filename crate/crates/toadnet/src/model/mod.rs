//! The detector: a stride-32 fully convolutional backbone, a single-filter
//! 1x1 sigmoid head producing the heat-map, and a global max pool wrapper
//! that turns the heat-map into a whole-image score.
//!
//! The backbone is a contract, not a fixed architecture: anything that maps
//! (H, W, 3) to (H/32, W/32, F) deterministically can sit under the head.
//! The reference implementation is five 3x3 stride-2 convolutions with ReLU,
//! roughly half a million parameters at the default widths, small enough to
//! train on a CPU.

mod conv;

pub use conv::{Conv2d, ConvGrads};

use crate::data::fnv1a64;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Downsampling factor between input pixels and heat-map cells.
pub const MODEL_STRIDE: usize = 32;
/// Number of stride-2 stages; fixed so the stride contract holds.
pub const STAGES: usize = 5;

const WEIGHTS_FILE: &str = "weights.bin";
const MANIFEST_FILE: &str = "manifest.json";
const WEIGHTS_MAGIC: &[u8; 4] = b"TDW1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Output channels of each stride-2 stage, last entry = F.
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { channels: vec![32, 64, 96, 128, 256], seed: 17 }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != STAGES {
            return Err(Error::Config(format!(
                "backbone needs exactly {STAGES} stage widths for stride {MODEL_STRIDE}, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("backbone stage widths must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that turns an image into a stride-32 feature map.
pub trait Backbone {
    fn feature_channels(&self) -> usize;
    fn stride(&self) -> usize {
        MODEL_STRIDE
    }
    fn features(&self, image: &Array3<f32>) -> Array3<f32>;
}

#[derive(Debug, Clone)]
pub struct ReferenceBackbone {
    pub(crate) stages: Vec<Conv2d>,
    config: BackboneConfig,
}

impl ReferenceBackbone {
    pub fn build(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(STAGES);
        let mut c_in = 3;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let seed = crate::data::mix_seed(&[config.seed, i as u64]);
            stages.push(Conv2d::he_init(3, 2, 1, c_in, c_out, seed));
            c_in = c_out;
        }
        Ok(ReferenceBackbone { stages, config: config.clone() })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Conv2d::param_count).sum()
    }

    pub fn first_layer_weight_count(&self) -> usize {
        self.stages[0].weights.len()
    }

    fn forward_cached(&self, image: &Array3<f32>) -> (Array3<f32>, Vec<conv::ConvCache>, Vec<Array3<f32>>) {
        let mut caches = Vec::with_capacity(STAGES);
        let mut post = Vec::with_capacity(STAGES);
        let mut x = image.clone();
        for stage in &self.stages {
            let (mut out, cache) = stage.forward_cached(&x);
            out.mapv_inplace(|v| v.max(0.0));
            caches.push(cache);
            post.push(out.clone());
            x = out;
        }
        (x, caches, post)
    }
}

impl Backbone for ReferenceBackbone {
    fn feature_channels(&self) -> usize {
        *self.config.channels.last().expect("validated non-empty")
    }

    fn features(&self, image: &Array3<f32>) -> Array3<f32> {
        let mut x = image.clone();
        for stage in &self.stages {
            let mut out = stage.forward(&x);
            out.mapv_inplace(|v| v.max(0.0));
            x = out;
        }
        x
    }
}

/// 1x1 single-filter convolution with sigmoid, F + 1 parameters.
#[derive(Debug, Clone)]
pub struct HeatmapHead {
    pub weights: Array1<f32>,
    /// Length-1 so optimizers can treat every tensor uniformly.
    pub bias: Array1<f32>,
    /// L2 decay applied to `weights` (not the bias) during training.
    pub weight_decay: f64,
}

pub const DEFAULT_HEAD_WEIGHT_DECAY: f64 = 1e-5;

/// Glorot-uniform head init: weights in +-sqrt(6 / (F + 1)), zero bias.
pub fn init_head(feature_channels: usize, seed: u64) -> Result<HeatmapHead> {
    if feature_channels == 0 {
        return Err(Error::Config("head needs at least one feature channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = (6.0 / (feature_channels as f64 + 1.0)).sqrt() as f32;
    let weights = Array1::from_shape_fn(feature_channels, |_| rng.gen_range(-limit..limit));
    Ok(HeatmapHead {
        weights,
        bias: Array1::zeros(1),
        weight_decay: DEFAULT_HEAD_WEIGHT_DECAY,
    })
}

fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

impl HeatmapHead {
    /// Per-cell sigmoid probability from a feature map.
    pub fn forward(&self, features: &Array3<f32>) -> Result<Array2<f32>> {
        let (h, w, f) = features.dim();
        if f != self.weights.len() {
            return Err(Error::Shape(format!(
                "feature map has {f} channels, head expects {}",
                self.weights.len()
            )));
        }
        let mut heat = Array2::<f32>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut z = self.bias[0];
                for c in 0..f {
                    z += self.weights[c] * features[(y, x, c)];
                }
                heat[(y, x)] = sigmoid(z);
            }
        }
        Ok(heat)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + 1
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub backbone: ReferenceBackbone,
    pub head: HeatmapHead,
    pub head_seed: u64,
}

/// Everything the backward pass needs from a training forward pass.
pub struct ForwardState {
    caches: Vec<conv::ConvCache>,
    /// Post-ReLU activations per stage; the last entry is the feature map.
    post: Vec<Array3<f32>>,
    heat: Array2<f32>,
}

#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub stages: Vec<ConvGrads>,
    pub head_weights: Array1<f32>,
    pub head_bias: Array1<f32>,
}

impl NetworkGrads {
    pub fn add_assign(&mut self, other: &NetworkGrads) {
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
        self.head_weights += &other.head_weights;
        self.head_bias += &other.head_bias;
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.stages {
            g.weights *= s;
            g.bias *= s;
        }
        self.head_weights *= s;
        self.head_bias *= s;
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut v = Vec::with_capacity(2 * self.stages.len() + 2);
        for g in &self.stages {
            v.push(g.weights.as_slice().expect("standard layout"));
            v.push(g.bias.as_slice().expect("standard layout"));
        }
        v.push(self.head_weights.as_slice().expect("standard layout"));
        v.push(self.head_bias.as_slice().expect("standard layout"));
        v
    }
}

fn check_input(image: &Array3<f32>) -> Result<(usize, usize)> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
    }
    if h < MODEL_STRIDE || w < MODEL_STRIDE || h % MODEL_STRIDE != 0 || w % MODEL_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "input {h}x{w} must be a positive multiple of {MODEL_STRIDE} in both dimensions"
        )));
    }
    Ok((h, w))
}

impl Network {
    pub fn build(backbone_cfg: &BackboneConfig, head_seed: u64) -> Result<Network> {
        let backbone = ReferenceBackbone::build(backbone_cfg)?;
        let head = init_head(backbone.feature_channels(), head_seed)?;
        Ok(Network { backbone, head, head_seed })
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.head.param_count()
    }

    /// (H, W, 3) normalized image -> (H/32, W/32) probability grid.
    pub fn heatmap_forward(&self, image: &Array3<f32>) -> Result<Array2<f32>> {
        let (h, w) = check_input(image)?;
        let heat = self.head.forward(&self.backbone.features(image))?;
        debug_assert_eq!(heat.dim(), (h / MODEL_STRIDE, w / MODEL_STRIDE));
        Ok(heat)
    }

    /// Whole-image score: the exact maximum over heat-map cells.
    pub fn gmp_forward(&self, image: &Array3<f32>) -> Result<f32> {
        let heat = self.heatmap_forward(image)?;
        Ok(heat_max(&heat))
    }

    pub fn forward_train(&self, image: &Array3<f32>) -> Result<(Array2<f32>, ForwardState)> {
        check_input(image)?;
        let (features, caches, post) = self.backbone.forward_cached(image);
        let heat = self.head.forward(&features)?;
        Ok((heat.clone(), ForwardState { caches, post, heat }))
    }

    /// Backward from dLoss/dProbability. The sigmoid derivative and the
    /// head's weight decay are applied here.
    pub fn backward(&self, image: &Array3<f32>, state: &ForwardState, d_prob: &Array2<f64>) -> Result<NetworkGrads> {
        let heat = &state.heat;
        if d_prob.dim() != heat.dim() {
            return Err(Error::Shape(format!(
                "gradient grid {:?} does not match heat-map {:?}",
                d_prob.dim(),
                heat.dim()
            )));
        }
        let (gh, gw) = heat.dim();
        let features = state.post.last().expect("at least one stage");
        let f = self.head.weights.len();

        // dL/dz through the sigmoid.
        let mut dz = Array2::<f32>::zeros((gh, gw));
        for ((i, j), &g) in d_prob.indexed_iter() {
            let p = heat[(i, j)] as f64;
            dz[(i, j)] = (g * p * (1.0 - p)) as f32;
        }

        let mut head_weights = Array1::<f32>::zeros(f);
        let mut head_bias = Array1::<f32>::zeros(1);
        let mut d_features = Array3::<f32>::zeros(features.dim());
        for i in 0..gh {
            for j in 0..gw {
                let d = dz[(i, j)];
                head_bias[0] += d;
                for c in 0..f {
                    head_weights[c] += d * features[(i, j, c)];
                    d_features[(i, j, c)] = d * self.head.weights[c];
                }
            }
        }
        let decay = self.head.weight_decay as f32;
        if decay != 0.0 {
            head_weights.zip_mut_with(&self.head.weights, |g, &w| *g += decay * w);
        }

        // Backbone stages in reverse, gating each gradient through ReLU.
        let mut stage_grads: Vec<ConvGrads> = Vec::with_capacity(STAGES);
        let mut d_out = d_features;
        for (idx, stage) in self.backbone.stages.iter().enumerate().rev() {
            let post = &state.post[idx];
            d_out.zip_mut_with(post, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            let (grads, dx) = stage.backward(&state.caches[idx], &d_out);
            stage_grads.push(grads);
            if idx > 0 {
                d_out = dx;
            } else {
                let _ = dx;
                d_out = Array3::zeros((0, 0, 0));
            }
        }
        stage_grads.reverse();
        let _ = image;
        Ok(NetworkGrads { stages: stage_grads, head_weights, head_bias })
    }

    pub fn zero_grads(&self) -> NetworkGrads {
        NetworkGrads {
            stages: self
                .backbone
                .stages
                .iter()
                .map(|s| ConvGrads {
                    weights: Array2::zeros(s.weights.dim()),
                    bias: Array1::zeros(s.bias.len()),
                })
                .collect(),
            head_weights: Array1::zeros(self.head.weights.len()),
            head_bias: Array1::zeros(1),
        }
    }

    /// Mutable parameter tensors in checkpoint order.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v = Vec::with_capacity(2 * STAGES + 2);
        for s in &mut self.backbone.stages {
            v.push(s.weights.as_slice_mut().expect("standard layout"));
            v.push(s.bias.as_slice_mut().expect("standard layout"));
        }
        v.push(self.head.weights.as_slice_mut().expect("standard layout"));
        v.push(self.head.bias.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn param_tensors(&self) -> Vec<&[f32]> {
        let mut v = Vec::with_capacity(2 * STAGES + 2);
        for s in &self.backbone.stages {
            v.push(s.weights.as_slice().expect("standard layout"));
            v.push(s.bias.as_slice().expect("standard layout"));
        }
        v.push(self.head.weights.as_slice().expect("standard layout"));
        v.push(self.head.bias.as_slice().expect("standard layout"));
        v
    }
}

pub fn heat_max(heat: &Array2<f32>) -> f32 {
    heat.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v))
}

/// Training context stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointProvenance {
    pub loss: crate::losses::LossKind,
    pub epoch: u32,
    pub best_val_loss: f64,
    pub restart_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub backbone: BackboneConfig,
    pub head_seed: u64,
    pub feature_channels: usize,
    pub stride: usize,
    pub weight_decay: f64,
    pub float_count: u64,
    pub checksum: String,
    pub provenance: Option<CheckpointProvenance>,
}

pub fn save_checkpoint(
    dir: &Path,
    network: &Network,
    provenance: Option<CheckpointProvenance>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = network.param_tensors();
    let float_count: u64 = tensors.iter().map(|t| t.len() as u64).sum();
    let mut payload = Vec::with_capacity(float_count as usize * 4);
    for t in &tensors {
        for v in *t {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        backbone: network.backbone.config().clone(),
        head_seed: network.head_seed,
        feature_channels: network.backbone.feature_channels(),
        stride: MODEL_STRIDE,
        weight_decay: network.head.weight_decay,
        float_count,
        checksum: format!("{:016x}", fnv1a64(&payload)),
        provenance,
    };

    let weights_path = dir.join(WEIGHTS_FILE);
    let mut file = std::fs::File::create(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    file.write_all(WEIGHTS_MAGIC).map_err(|e| Error::io(&weights_path, e))?;
    file.write_all(&float_count.to_le_bytes()).map_err(|e| Error::io(&weights_path, e))?;
    file.write_all(&payload).map_err(|e| Error::io(&weights_path, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Network, CheckpointManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| Error::Checkpoint(format!("missing or unreadable {}", manifest_path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    if manifest.stride != MODEL_STRIDE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stride {} does not match model stride {MODEL_STRIDE}",
            manifest.stride
        )));
    }

    let mut network = Network::build(&manifest.backbone, manifest.head_seed)
        .map_err(|e| Error::Checkpoint(format!("cannot rebuild architecture: {e}")))?;
    network.head.weight_decay = manifest.weight_decay;

    let weights_path = dir.join(WEIGHTS_FILE);
    let mut file = std::fs::File::open(&weights_path)
        .map_err(|_| Error::Checkpoint(format!("missing weights at {}", weights_path.display())))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("weights file truncated before header".into()))?;
    if &header[0..4] != WEIGHTS_MAGIC {
        return Err(Error::Checkpoint("weights file has the wrong magic bytes".into()));
    }
    let count = u64::from_le_bytes(header[4..12].try_into().expect("8 bytes"));
    if count != manifest.float_count {
        return Err(Error::Checkpoint(format!(
            "weights file holds {count} floats, manifest says {}",
            manifest.float_count
        )));
    }
    let expected: u64 = network.param_tensors().iter().map(|t| t.len() as u64).sum();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} floats but the architecture needs {expected}"
        )));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(&weights_path, e))?;
    if payload.len() as u64 != count * 4 {
        return Err(Error::Checkpoint(format!(
            "weights payload is {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    if format!("{:016x}", fnv1a64(&payload)) != manifest.checksum {
        return Err(Error::Checkpoint("weights checksum mismatch".into()));
    }
    let mut offset = 0;
    for tensor in network.param_tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f32::from_le_bytes(payload[offset..offset + 4].try_into().expect("4 bytes"));
            offset += 4;
        }
    }
    Ok((network, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_config(seed: u64) -> BackboneConfig {
        BackboneConfig { channels: vec![2, 2, 2, 2, 2], seed }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((h, w, 3), |_| rng.gen_range(-1.2..1.2))
    }

    #[test]
    fn stride_contract_square_and_wide() {
        let net = Network::build(&tiny_config(3), 5).unwrap();
        let heat = net.heatmap_forward(&random_image(704, 704, 1)).unwrap();
        assert_eq!(heat.dim(), (22, 22));
        let heat = net.heatmap_forward(&random_image(704, 1280, 2)).unwrap();
        assert_eq!(heat.dim(), (22, 40));
        assert!(heat.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn rejects_misaligned_input() {
        let net = Network::build(&tiny_config(3), 5).unwrap();
        assert!(net.heatmap_forward(&random_image(100, 128, 1)).is_err());
        assert!(net.heatmap_forward(&random_image(0, 0, 1)).is_err());
        let two_channel = Array3::<f32>::zeros((64, 64, 2));
        assert!(net.heatmap_forward(&two_channel).is_err());
    }

    #[test]
    fn gmp_equals_exhaustive_heatmap_max() {
        for seed in 0..20u64 {
            let net = Network::build(&tiny_config(seed), seed + 50).unwrap();
            let img = random_image(64, 96, seed + 100);
            let heat = net.heatmap_forward(&img).unwrap();
            let mut best = f32::NEG_INFINITY;
            for &v in heat.iter() {
                if v > best {
                    best = v;
                }
            }
            assert_eq!(net.gmp_forward(&img).unwrap(), best);
        }
    }

    #[test]
    fn head_on_constant_features_equals_pool_then_dense() {
        let head = init_head(6, 11).unwrap();
        let feats = Array3::from_shape_fn((4, 7, 6), |(_, _, c)| 0.3 * c as f32 - 0.5);
        let heat = head.forward(&feats).unwrap();
        // Average pooling a constant map gives the same vector, so dense +
        // sigmoid must equal every heat cell.
        let pooled: Vec<f32> = (0..6).map(|c| feats[(0, 0, c)]).collect();
        let z: f32 = pooled.iter().zip(head.weights.iter()).map(|(a, b)| a * b).sum::<f32>()
            + head.bias[0];
        let dense = sigmoid(z);
        for &v in heat.iter() {
            assert_eq!(v, dense);
        }
    }

    #[test]
    fn head_init_bounds_and_determinism() {
        let a = init_head(48, 9).unwrap();
        let b = init_head(48, 9).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias[0], 0.0);
        let limit = (6.0 / 49.0f64).sqrt() as f32;
        assert!(a.weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(init_head(48, 10).unwrap().weights, a.weights);
    }

    #[test]
    fn default_backbone_is_half_a_million_params() {
        let net = Network::build(&BackboneConfig::default(), 1).unwrap();
        assert_eq!(net.backbone.first_layer_weight_count(), 864);
        assert_eq!(net.param_count(), 480_929);
    }

    #[test]
    fn backbone_rejects_wrong_stage_count() {
        let cfg = BackboneConfig { channels: vec![8, 8, 8], seed: 1 };
        assert!(ReferenceBackbone::build(&cfg).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::build(&tiny_config(21), 33).unwrap();
        let prov = CheckpointProvenance {
            loss: crate::losses::LossKind::Mse,
            epoch: 12,
            best_val_loss: 0.0123,
            restart_index: 1,
        };
        save_checkpoint(dir.path(), &net, Some(prov.clone())).unwrap();
        let (loaded, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.provenance, Some(prov));
        for (a, b) in net.param_tensors().iter().zip(loaded.param_tensors().iter()) {
            assert_eq!(a, b);
        }
        let img = random_image(64, 64, 5);
        assert_eq!(
            net.heatmap_forward(&img).unwrap(),
            loaded.heatmap_forward(&img).unwrap()
        );
    }

    #[test]
    fn corrupt_checkpoint_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::build(&tiny_config(2), 3).unwrap();
        save_checkpoint(dir.path(), &net, None).unwrap();

        let weights = dir.path().join("weights.bin");
        let mut bytes = std::fs::read(&weights).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&weights, &bytes).unwrap();
        match load_checkpoint(dir.path()) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        // Truncation is caught by the length check.
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&weights, &bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));

        std::fs::remove_file(&weights).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn network_gradcheck_against_finite_differences() {
        // One cell per heat-map keeps the objective scalar and cheap.
        let cfg = BackboneConfig { channels: vec![2, 3, 2, 2, 3], seed: 8 };
        let net = Network::build(&cfg, 4).unwrap();
        let img = random_image(32, 32, 77);
        let target = ndarray::arr2(&[[1.0f64]]);
        let loss_cfg = crate::losses::LossConfig::default();

        let loss_of = |net: &Network| -> f64 {
            let heat = net.heatmap_forward(&img).unwrap();
            let p = heat.mapv(|v| v as f64);
            loss_cfg.loss(&target, &p).unwrap()
        };

        let (heat, state) = net.forward_train(&img).unwrap();
        let p = heat.mapv(|v| v as f64);
        let d_prob = loss_cfg.grad(&target, &p).unwrap();
        let analytic = net.backward(&img, &state, &d_prob).unwrap();
        // The gradcheck objective has no decay term.
        let mut analytic_head_w = analytic.head_weights.clone();
        analytic_head_w.zip_mut_with(&net.head.weights, |g, &w| {
            *g -= net.head.weight_decay as f32 * w;
        });

        let h = 1e-2f32;
        let mut checked = 0usize;
        let flat_analytic: Vec<f32> = {
            let mut v = Vec::new();
            for (i, g) in analytic.stages.iter().enumerate() {
                let _ = i;
                v.extend(g.weights.iter().copied());
                v.extend(g.bias.iter().copied());
            }
            v.extend(analytic_head_w.iter().copied());
            v.extend(analytic.head_bias.iter().copied());
            v
        };
        let n_params = flat_analytic.len();
        // Probe a deterministic subset; full sweep is needlessly slow.
        for idx in (0..n_params).step_by(7) {
            let numeric = {
                let mut plus = net.clone();
                bump(&mut plus, idx, h);
                let mut minus = net.clone();
                bump(&mut minus, idx, -h);
                (loss_of(&plus) - loss_of(&minus)) / (2.0 * h as f64)
            };
            let a = flat_analytic[idx] as f64;
            assert!(
                (a - numeric).abs() <= 3e-2 * numeric.abs().max(2e-4),
                "param {idx}: analytic {a} vs numeric {numeric}"
            );
            checked += 1;
        }
        assert!(checked > 20);

        fn bump(net: &mut Network, mut idx: usize, delta: f32) {
            for tensor in net.param_tensors_mut() {
                if idx < tensor.len() {
                    tensor[idx] += delta;
                    return;
                }
                idx -= tensor.len();
            }
            panic!("index out of range");
        }
    }

    proptest! {
        #[test]
        fn raising_a_cell_never_lowers_the_max(
            vals in proptest::collection::vec(0.0f32..1.0, 12),
            idx in 0usize..12,
            bump in 0.0f32..0.5,
        ) {
            let heat = Array2::from_shape_vec((3, 4), vals).unwrap();
            let mut raised = heat.clone();
            raised.as_slice_mut().unwrap()[idx] += bump;
            prop_assert!(heat_max(&raised) >= heat_max(&heat));
        }
    }
}
