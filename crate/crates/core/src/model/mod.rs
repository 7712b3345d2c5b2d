//! Action-prediction network: a small ResNet backbone, a static visual
//! tokenizer, a pre-norm transformer encoder and a two-layer head.

mod format;
mod learned;
pub mod ops;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{ObservationTensor, CHANNELS, SIDE};
use ops::{FeatureMap, Matrix};

pub use format::{
    load_golden, load_weights, read_golden, read_weights, save_golden, save_weights, write_golden,
    write_weights, GoldenCase, FORMAT_VERSION, WEIGHTS_MAGIC,
};
pub use learned::{ActionScorer, DijkstraScorer, LearnedPolicy, ScoringContext};

/// Network hyperparameters stored in every weight file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: u32,
    pub block_channels: [u32; 3],
    pub feature_h: u32,
    pub feature_w: u32,
    pub tokens: u32,
    pub token_dim: u32,
    pub encoder_layers: u32,
    pub attention_heads: u32,
    pub mlp_dim: u32,
    pub fc_hidden: u32,
    pub action_count: u32,
}

/// Strides of the three residual blocks.
pub const BLOCK_STRIDES: [usize; 3] = [2, 2, 1];

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: CHANNELS as u32,
            block_channels: [32, 64, 128],
            feature_h: 8,
            feature_w: 8,
            tokens: 16,
            token_dim: 256,
            encoder_layers: 16,
            attention_heads: 16,
            mlp_dim: 512,
            fc_hidden: 128,
            action_count: 5,
        }
    }
}

impl ModelConfig {
    /// A narrow network with the same topology, for fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            block_channels: [4, 8, 8],
            tokens: 4,
            token_dim: 8,
            encoder_layers: 2,
            attention_heads: 2,
            mlp_dim: 16,
            fc_hidden: 8,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn to_words(self) -> [u32; 13] {
        let b = self.block_channels;
        [
            self.input_channels,
            b[0],
            b[1],
            b[2],
            self.feature_h,
            self.feature_w,
            self.tokens,
            self.token_dim,
            self.encoder_layers,
            self.attention_heads,
            self.mlp_dim,
            self.fc_hidden,
            self.action_count,
        ]
    }

    pub(crate) fn from_words(w: [u32; 13]) -> Self {
        ModelConfig {
            input_channels: w[0],
            block_channels: [w[1], w[2], w[3]],
            feature_h: w[4],
            feature_w: w[5],
            tokens: w[6],
            token_dim: w[7],
            encoder_layers: w[8],
            attention_heads: w[9],
            mlp_dim: w[10],
            fc_hidden: w[11],
            action_count: w[12],
        }
    }

    /// Checks that the configuration is runnable on 32x32 observations.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::WeightFormat(format!("config: {m}")));
        if self.input_channels as usize != CHANNELS {
            return bad("input_channels must be 10");
        }
        let side = SIDE / (BLOCK_STRIDES.iter().product::<usize>());
        if self.feature_h as usize != side || self.feature_w as usize != side {
            return bad("feature map must be 8x8");
        }
        if self.action_count != 5 {
            return bad("action_count must be 5");
        }
        let dims = [
            self.block_channels[0],
            self.block_channels[1],
            self.block_channels[2],
            self.tokens,
            self.token_dim,
            self.attention_heads,
            self.mlp_dim,
            self.fc_hidden,
        ];
        if dims.contains(&0) {
            return bad("zero dimension");
        }
        if !self.token_dim.is_multiple_of(self.attention_heads) {
            return bad("token_dim not divisible by attention_heads");
        }
        Ok(())
    }

    /// Default query/key width: half the token width.
    pub fn default_qk_dim(&self) -> u32 {
        (self.token_dim / 2).max(self.attention_heads)
    }

    /// `(in, out, stride, has_downsample)` per residual block.
    pub fn blocks(&self) -> [(usize, usize, usize, bool); 3] {
        let b = self.block_channels.map(|c| c as usize);
        let ins = [b[0], b[0], b[1]];
        std::array::from_fn(|i| {
            (
                ins[i],
                b[i],
                BLOCK_STRIDES[i],
                BLOCK_STRIDES[i] != 1 || ins[i] != b[i],
            )
        })
    }

    /// Name and shape of every tensor the network needs, for a given
    /// query/key width.
    pub fn tensor_shapes(&self, qk_dim: u32) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let bn = |out: &mut Vec<(String, Vec<usize>)>, p: &str, c: usize| {
            for s in ["weight", "bias", "running_mean", "running_var"] {
                out.push((format!("{p}.{s}"), vec![c]));
            }
        };
        let c0 = self.block_channels[0] as usize;
        out.push((
            "stem.conv.weight".into(),
            vec![c0, self.input_channels as usize, 3, 3],
        ));
        bn(&mut out, "stem.bn", c0);
        for (i, (cin, cout, _, down)) in self.blocks().into_iter().enumerate() {
            out.push((format!("blocks.{i}.conv1.weight"), vec![cout, cin, 3, 3]));
            bn(&mut out, &format!("blocks.{i}.bn1"), cout);
            out.push((format!("blocks.{i}.conv2.weight"), vec![cout, cout, 3, 3]));
            bn(&mut out, &format!("blocks.{i}.bn2"), cout);
            if down {
                out.push((
                    format!("blocks.{i}.downsample.conv.weight"),
                    vec![cout, cin, 1, 1],
                ));
                bn(&mut out, &format!("blocks.{i}.downsample.bn"), cout);
            }
        }
        let c = self.block_channels[2] as usize;
        let (l, t) = (self.tokens as usize, self.token_dim as usize);
        let (m, qk) = (self.mlp_dim as usize, qk_dim as usize);
        out.push(("tokenizer.w_a".into(), vec![l, c]));
        out.push(("tokenizer.w_v".into(), vec![c, t]));
        out.push(("cls_token".into(), vec![t]));
        out.push(("pos_embedding".into(), vec![l + 1, t]));
        for k in 0..self.encoder_layers {
            let p = format!("encoder.{k}");
            for norm in ["norm1", "norm2"] {
                out.push((format!("{p}.{norm}.weight"), vec![t]));
                out.push((format!("{p}.{norm}.bias"), vec![t]));
            }
            out.push((format!("{p}.attn.k"), vec![t, qk]));
            out.push((format!("{p}.attn.q"), vec![t, qk]));
            out.push((format!("{p}.attn.v"), vec![t, t]));
            out.push((format!("{p}.attn.f"), vec![t, t]));
            out.push((format!("{p}.mlp.fc1.weight"), vec![t, m]));
            out.push((format!("{p}.mlp.fc1.bias"), vec![m]));
            out.push((format!("{p}.mlp.fc2.weight"), vec![m, t]));
            out.push((format!("{p}.mlp.fc2.bias"), vec![t]));
        }
        out.push(("final_norm.weight".into(), vec![t]));
        out.push(("final_norm.bias".into(), vec![t]));
        let (h, a) = (self.fc_hidden as usize, self.action_count as usize);
        out.push(("head.fc1.weight".into(), vec![t, h]));
        out.push(("head.fc1.bias".into(), vec![h]));
        out.push(("head.fc2.weight".into(), vec![h, a]));
        out.push(("head.fc2.bias".into(), vec![a]));
        out
    }
}

/// Named f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size");
        Tensor { shape, data }
    }
}

/// All parameters of a network, keyed by name. Linear weights are stored
/// `[in, out]`, convolutions `[out, in, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    /// Uniform fan-in initialization with non-trivial normalization
    /// statistics, deterministic in `seed`.
    pub fn random(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.tensor_shapes(config.default_qk_dim()) {
            let n: usize = shape.iter().product();
            let fan_in = match shape.len() {
                4 => shape[1] * shape[2] * shape[3],
                2 => shape[0],
                _ => 1,
            };
            let bound = (3.0 / fan_in as f32).sqrt();
            let data: Vec<f32> = if name.ends_with("running_var") {
                (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()
            } else if name.contains("bn") || name.contains("norm") {
                if name.ends_with("weight") {
                    (0..n).map(|_| rng.gen_range(0.8..1.2)).collect()
                } else {
                    (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
                }
            } else if shape.len() == 1 {
                (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
            } else {
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data));
        }
        ModelWeights { config, tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Tensor {
            name: name.into(),
            msg: "missing".into(),
        })
    }

    /// Query/key width, read from the first encoder layer.
    pub fn qk_dim(&self) -> u32 {
        self.tensors
            .get("encoder.0.attn.k")
            .and_then(|t| t.shape.get(1))
            .map_or(self.config.default_qk_dim(), |&d| d as u32)
    }

    /// Checks that every expected tensor is present with the right shape,
    /// finite, and that nothing else is present.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let qk = self.qk_dim();
        if qk == 0 || !qk.is_multiple_of(self.config.attention_heads) {
            return Err(Error::Tensor {
                name: "encoder.0.attn.k".into(),
                msg: format!(
                    "width {qk} not divisible by {} heads",
                    self.config.attention_heads
                ),
            });
        }
        let expected = self.config.tensor_shapes(qk);
        for (name, shape) in &expected {
            let t = self.get(name)?;
            if &t.shape != shape {
                return Err(Error::Tensor {
                    name: name.clone(),
                    msg: format!("shape {:?}, expected {:?}", t.shape, shape),
                });
            }
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(Error::Tensor {
                    name: name.clone(),
                    msg: "non-finite value".into(),
                });
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| !expected.iter().any(|(n, _)| n == *k))
        {
            return Err(Error::Tensor {
                name: extra.clone(),
                msg: "unexpected tensor".into(),
            });
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }
}

struct BatchNorm {
    gamma: Vec<f32>,
    beta: Vec<f32>,
    mean: Vec<f32>,
    var: Vec<f32>,
}

impl BatchNorm {
    fn load(w: &ModelWeights, p: &str) -> Result<Self> {
        let v = |s: &str| Ok::<_, Error>(w.get(&format!("{p}.{s}"))?.data.clone());
        Ok(BatchNorm {
            gamma: v("weight")?,
            beta: v("bias")?,
            mean: v("running_mean")?,
            var: v("running_var")?,
        })
    }

    fn apply(&self, fm: &mut FeatureMap) {
        ops::batch_norm(fm, &self.gamma, &self.beta, &self.mean, &self.var);
    }
}

struct Conv {
    weight: Vec<f32>,
    out: usize,
    kernel: usize,
}

impl Conv {
    fn load(w: &ModelWeights, name: &str) -> Result<Self> {
        let t = w.get(name)?;
        Ok(Conv {
            weight: t.data.clone(),
            out: t.shape[0],
            kernel: t.shape[2],
        })
    }

    fn apply(&self, x: &FeatureMap, stride: usize) -> FeatureMap {
        ops::conv2d(x, &self.weight, self.out, self.kernel, stride)
    }
}

struct ResBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    downsample: Option<(Conv, BatchNorm)>,
    stride: usize,
}

impl ResBlock {
    fn forward(&self, x: &FeatureMap) -> FeatureMap {
        let mut y = self.conv1.apply(x, self.stride);
        self.bn1.apply(&mut y);
        y.data.iter_mut().for_each(|v| *v = ops::relu(*v));
        let mut y = self.conv2.apply(&y, 1);
        self.bn2.apply(&mut y);
        let skip = match &self.downsample {
            Some((conv, bn)) => {
                let mut s = conv.apply(x, self.stride);
                bn.apply(&mut s);
                s
            }
            None => x.clone(),
        };
        for (v, s) in y.data.iter_mut().zip(&skip.data) {
            *v = ops::relu(*v + s);
        }
        y
    }
}

/// Dense layer with `[in, out]` weight.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Vec<f32>>,
}

impl Linear {
    fn load(w: &ModelWeights, p: &str) -> Result<Self> {
        Ok(Linear {
            weight: matrix(w, &format!("{p}.weight"))?,
            bias: Some(w.get(&format!("{p}.bias"))?.data.clone()),
        })
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = ops::matmul(x, &self.weight.data, self.weight.cols);
        if let Some(b) = &self.bias {
            ops::add_bias(&mut y, b);
        }
        y
    }
}

/// LayerNorm affine parameters.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl Norm {
    fn load(w: &ModelWeights, p: &str) -> Result<Self> {
        Ok(Norm {
            gamma: w.get(&format!("{p}.weight"))?.data.clone(),
            beta: w.get(&format!("{p}.bias"))?.data.clone(),
        })
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        ops::layer_norm(x, &self.gamma, &self.beta)
    }
}

fn matrix(w: &ModelWeights, name: &str) -> Result<Matrix> {
    let t = w.get(name)?;
    if t.shape.len() != 2 {
        return Err(Error::Tensor {
            name: name.into(),
            msg: format!("expected rank 2, got {:?}", t.shape),
        });
    }
    Ok(Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone()))
}

/// One encoder layer. Norms are optional so the bare attention update
/// `T + softmax((T K)(T Q)^T) (T V) F` can be evaluated directly.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: Option<Norm>,
    pub k: Matrix,
    pub q: Matrix,
    pub v: Matrix,
    pub f: Matrix,
    pub heads: usize,
    /// Divide scores by the square root of the per-head query width.
    pub scaled: bool,
    pub norm2: Option<Norm>,
    pub mlp: Option<(Linear, Linear)>,
}

impl EncoderLayer {
    fn load(w: &ModelWeights, k: u32, heads: usize) -> Result<Self> {
        let p = format!("encoder.{k}");
        Ok(EncoderLayer {
            norm1: Some(Norm::load(w, &format!("{p}.norm1"))?),
            k: matrix(w, &format!("{p}.attn.k"))?,
            q: matrix(w, &format!("{p}.attn.q"))?,
            v: matrix(w, &format!("{p}.attn.v"))?,
            f: matrix(w, &format!("{p}.attn.f"))?,
            heads,
            scaled: true,
            norm2: Some(Norm::load(w, &format!("{p}.norm2"))?),
            mlp: Some((
                Linear::load(w, &format!("{p}.mlp.fc1"))?,
                Linear::load(w, &format!("{p}.mlp.fc2"))?,
            )),
        })
    }

    /// Multi-head self-attention: per head, scores `(X K_h)(X Q_h)^T`,
    /// softmax over each row, times `X V_h`; heads are concatenated and
    /// projected by `F`.
    pub fn attention(&self, x: &Matrix) -> Matrix {
        let xk = ops::matmul(x, &self.k.data, self.k.cols);
        let xq = ops::matmul(x, &self.q.data, self.q.cols);
        let xv = ops::matmul(x, &self.v.data, self.v.cols);
        let n = x.rows;
        let dq = self.k.cols / self.heads;
        let dv = self.v.cols / self.heads;
        let scale = if self.scaled {
            1.0 / (dq as f32).sqrt()
        } else {
            1.0
        };
        let mut concat = Matrix::zeros(n, self.v.cols);
        let mut scores = Matrix::zeros(n, n);
        for h in 0..self.heads {
            for i in 0..n {
                for j in 0..n {
                    let a = &xk.row(i)[h * dq..(h + 1) * dq];
                    let b = &xq.row(j)[h * dq..(h + 1) * dq];
                    scores.data[i * n + j] =
                        a.iter().zip(b).map(|(p, q)| p * q).sum::<f32>() * scale;
                }
            }
            ops::softmax_rows(&mut scores);
            for i in 0..n {
                for j in 0..n {
                    let s = scores.at(i, j);
                    let src = &xv.row(j)[h * dv..(h + 1) * dv];
                    let dst = &mut concat.row_mut(i)[h * dv..(h + 1) * dv];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += s * v;
                    }
                }
            }
        }
        ops::matmul(&concat, &self.f.data, self.f.cols)
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let normed = match &self.norm1 {
            Some(n) => n.apply(x),
            None => x.clone(),
        };
        let mut out = x.clone();
        ops::add_assign(&mut out, &self.attention(&normed));
        if let Some((fc1, fc2)) = &self.mlp {
            let normed = match &self.norm2 {
                Some(n) => n.apply(&out),
                None => out.clone(),
            };
            let mut hidden = fc1.apply(&normed);
            hidden.data.iter_mut().for_each(|v| *v = ops::gelu(*v));
            ops::add_assign(&mut out, &fc2.apply(&hidden));
        }
        out
    }
}

/// Static tokenizer: `A = softmax over pixels of (X W_A^T)`, `V = X W_V`,
/// tokens `A^T V`. `pixels` is `[HW, C]`, `w_a` is `[L, C]`, `w_v` is
/// `[C, C_T]`.
pub fn tokenize(pixels: &Matrix, w_a: &Matrix, w_v: &Matrix) -> Matrix {
    let logits = ops::matmul(pixels, &w_a.transpose().data, w_a.rows);
    let attn = ops::softmax_cols(&logits);
    let values = ops::matmul(pixels, &w_v.data, w_v.cols);
    ops::matmul(&attn.transpose(), &values.data, values.cols)
}

/// Network with parameters unpacked into layer structs.
pub struct Model {
    config: ModelConfig,
    stem: (Conv, BatchNorm),
    blocks: Vec<ResBlock>,
    w_a: Matrix,
    w_v: Matrix,
    cls_token: Vec<f32>,
    pos_embedding: Matrix,
    encoder: Vec<EncoderLayer>,
    final_norm: Norm,
    head: (Linear, Linear),
}

fn check_finite(name: &str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Tensor {
            name: name.into(),
            msg: "non-finite activation".into(),
        })
    }
}

impl Model {
    pub fn new(weights: &ModelWeights) -> Result<Self> {
        weights.validate()?;
        let config = weights.config;
        let mut blocks = Vec::new();
        for (i, (_, _, stride, down)) in config.blocks().into_iter().enumerate() {
            let p = format!("blocks.{i}");
            blocks.push(ResBlock {
                conv1: Conv::load(weights, &format!("{p}.conv1.weight"))?,
                bn1: BatchNorm::load(weights, &format!("{p}.bn1"))?,
                conv2: Conv::load(weights, &format!("{p}.conv2.weight"))?,
                bn2: BatchNorm::load(weights, &format!("{p}.bn2"))?,
                downsample: if down {
                    Some((
                        Conv::load(weights, &format!("{p}.downsample.conv.weight"))?,
                        BatchNorm::load(weights, &format!("{p}.downsample.bn"))?,
                    ))
                } else {
                    None
                },
                stride,
            });
        }
        let heads = config.attention_heads as usize;
        Ok(Model {
            config,
            stem: (
                Conv::load(weights, "stem.conv.weight")?,
                BatchNorm::load(weights, "stem.bn")?,
            ),
            blocks,
            w_a: matrix(weights, "tokenizer.w_a")?,
            w_v: matrix(weights, "tokenizer.w_v")?,
            cls_token: weights.get("cls_token")?.data.clone(),
            pos_embedding: matrix(weights, "pos_embedding")?,
            encoder: (0..config.encoder_layers)
                .map(|k| EncoderLayer::load(weights, k, heads))
                .collect::<Result<_>>()?,
            final_norm: Norm::load(weights, "final_norm")?,
            head: (
                Linear::load(weights, "head.fc1")?,
                Linear::load(weights, "head.fc2")?,
            ),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Stem and residual blocks: `[10, 32, 32]` to `[C, 8, 8]`.
    pub fn cnn_backbone(&self, obs: &ObservationTensor) -> Result<FeatureMap> {
        if obs.data.len() != CHANNELS * SIDE * SIDE {
            return Err(Error::Tensor {
                name: "observation".into(),
                msg: format!(
                    "expected {} values, got {}",
                    CHANNELS * SIDE * SIDE,
                    obs.data.len()
                ),
            });
        }
        let input = FeatureMap {
            channels: CHANNELS,
            height: SIDE,
            width: SIDE,
            data: obs.data.clone(),
        };
        let mut x = self.stem.0.apply(&input, 1);
        self.stem.1.apply(&mut x);
        x.data.iter_mut().for_each(|v| *v = ops::relu(*v));
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x);
            check_finite(&format!("blocks.{i}"), &x.data)?;
        }
        Ok(x)
    }

    /// Tokens with the class token prepended and positions added.
    pub fn tokens(&self, features: &FeatureMap) -> Matrix {
        let t = tokenize(&features.to_pixel_rows(), &self.w_a, &self.w_v);
        let mut seq = Matrix::zeros(t.rows + 1, t.cols);
        seq.row_mut(0).copy_from_slice(&self.cls_token);
        seq.data[t.cols..].copy_from_slice(&t.data);
        ops::add_assign(&mut seq, &self.pos_embedding);
        seq
    }

    /// Action logits in `Action` index order.
    pub fn forward(&self, obs: &ObservationTensor) -> Result<Vec<f32>> {
        let features = self.cnn_backbone(obs)?;
        let mut x = self.tokens(&features);
        check_finite("tokenizer", &x.data)?;
        for (k, layer) in self.encoder.iter().enumerate() {
            x = layer.forward(&x);
            check_finite(&format!("encoder.{k}"), &x.data)?;
        }
        let x = self.final_norm.apply(&x);
        let cls = Matrix::from_vec(1, x.cols, x.row(0).to_vec());
        let mut hidden = self.head.0.apply(&cls);
        hidden.data.iter_mut().for_each(|v| *v = ops::relu(*v));
        let logits = self.head.1.apply(&hidden).data;
        check_finite("head", &logits)?;
        Ok(logits)
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(logits: &[f32]) -> usize {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }
}
