//! The f32 inference engine against a straightforward f64 re-implementation
//! built on nalgebra.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::*;
use lmstar::grid_world::{generate_instance, generate_random_map, Cell, MapfInstance};
use lmstar::model::ops::Matrix;
use lmstar::model::{
    read_golden, tokenize, write_golden, ActionScorer, GoldenCase, LearnedPolicy, Model,
    ModelConfig, ModelWeights, ScoringContext,
};
use lmstar::observation::ObservationTensor;
use lmstar::policy::PolicyProvider;

#[test]
fn tokenizer_matches_dense_reference_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..25 {
        let (p, l, c, t) = (
            rng.gen_range(1..20),
            rng.gen_range(1..6),
            rng.gen_range(1..8),
            rng.gen_range(1..8),
        );
        let x = rand_mat(&mut rng, p, c, 2.0);
        let w_a = rand_mat(&mut rng, l, c, 1.0);
        let w_v = rand_mat(&mut rng, c, t, 1.0);
        let got = tokenize(&to_f32(&x), &to_f32(&w_a), &to_f32(&w_v));
        assert!(max_diff(&got, &tokenize64(&x, &w_a, &w_v)) < 1e-5);
    }
}

#[test]
fn tokenizer_toy_case_and_uniform_attention() {
    // 4 pixels, 2 tokens, 3 channels.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_mat(&mut rng, 4, 3, 1.0);
    let w_a = rand_mat(&mut rng, 2, 3, 1.0);
    let w_v = rand_mat(&mut rng, 3, 3, 1.0);
    let got = tokenize(&to_f32(&x), &to_f32(&w_a), &to_f32(&w_v));
    assert!(max_diff(&got, &tokenize64(&x, &w_a, &w_v)) < 1e-5);

    // Zero W_A: every token is the column mean of V.
    let x = rand_mat(&mut rng, 64, 5, 1.0);
    let w_v = rand_mat(&mut rng, 5, 6, 1.0);
    let got = tokenize(&to_f32(&x), &Matrix::zeros(3, 5), &to_f32(&w_v));
    let v = &x * &w_v;
    for r in 0..3 {
        for c in 0..6 {
            assert!((got.at(r, c) as f64 - v.column(c).mean()).abs() < 1e-5);
        }
    }
}

#[test]
fn single_head_layer_is_the_plain_attention_update() {
    // Three tokens of width four.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let t = rand_mat(&mut rng, 3, 4, 1.0);
        let (k, q, v, f) = (
            rand_mat(&mut rng, 4, 4, 1.0),
            rand_mat(&mut rng, 4, 4, 1.0),
            rand_mat(&mut rng, 4, 4, 1.0),
            rand_mat(&mut rng, 4, 4, 1.0),
        );
        let expected = &t + softmax_rows64(&((&t * &k) * (&t * &q).transpose())) * (&t * &v) * &f;
        let got = bare_layer(&k, &q, &v, &f).forward(&to_f32(&t));
        assert!(max_diff(&got, &expected) < 1e-5);
    }
}

#[test]
fn full_encoder_layer_matches_reference_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..25 {
        let heads = rng.gen_range(1..4);
        let t = heads * rng.gen_range(1..4);
        let qk = heads * rng.gen_range(1..3);
        let m = rng.gen_range(1..10);
        let rows = rng.gen_range(1..8);
        let layer = rand_ref_layer(&mut rng, t, qk, m, heads);
        let x = rand_mat(&mut rng, rows, t, 1.0);
        let got = layer.to_layer().forward(&to_f32(&x));
        assert!(max_diff(&got, &layer.forward(&x)) < 1e-5);
    }
}

#[test]
fn zero_output_projections_give_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut layer = rand_ref_layer(&mut rng, 16, 8, 32, 4);
    layer.f = DMatrix::zeros(16, 16);
    layer.fc2 = (DMatrix::zeros(32, 16), vec![0.0; 16]);
    let x = rand_mat(&mut rng, 17, 16, 3.0);
    let got = layer.to_layer().forward(&to_f32(&x));
    assert!(max_diff(&got, &x) <= 1e-6);
}

#[test]
fn attention_rows_are_distributions() {
    // With V = I and F = I on a bare layer, out - in = softmax(scores), so
    // each row of the update sums to one.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let id = DMatrix::<f64>::identity(5, 5);
    for _ in 0..20 {
        let k = rand_mat(&mut rng, 5, 5, 3.0);
        let q = rand_mat(&mut rng, 5, 5, 3.0);
        let t = DMatrix::<f64>::identity(5, 5) * 2.0;
        let out = to_f64(&bare_layer(&k, &q, &id, &id).forward(&to_f32(&t)));
        let update = (out - &t) / 2.0;
        for r in 0..5 {
            assert!((update.row(r).sum() - 1.0).abs() < 1e-6);
            assert!(update.row(r).iter().all(|&v| v >= -1e-7));
        }
    }
}

// Independent full forward pass in f64.

fn tensor(w: &ModelWeights, name: &str) -> Vec<f64> {
    w.tensors[name].data.iter().map(|&v| v as f64).collect()
}

fn mat(w: &ModelWeights, name: &str) -> DMatrix<f64> {
    let t = &w.tensors[name];
    DMatrix::from_row_iterator(t.shape[0], t.shape[1], t.data.iter().map(|&v| v as f64))
}

/// `[c][y][x]` planes.
type Planes = Vec<Vec<Vec<f64>>>;

#[allow(clippy::needless_range_loop)]
fn conv64(x: &Planes, w: &ModelWeights, name: &str, stride: usize) -> Planes {
    let t = &w.tensors[name];
    let (out_c, in_c, k) = (t.shape[0], t.shape[1], t.shape[2]);
    let pad = (k / 2) as i64;
    let h = x[0].len() as i64;
    let oh = ((h + 2 * pad - k as i64) / stride as i64 + 1) as usize;
    let mut out = vec![vec![vec![0.0; oh]; oh]; out_c];
    for o in 0..out_c {
        for y in 0..oh {
            for xx in 0..oh {
                let mut acc = 0.0;
                for i in 0..in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = (y * stride + ky) as i64 - pad;
                            let sx = (xx * stride + kx) as i64 - pad;
                            if sy >= 0 && sx >= 0 && sy < h && sx < h {
                                acc += t.data[((o * in_c + i) * k + ky) * k + kx] as f64
                                    * x[i][sy as usize][sx as usize];
                            }
                        }
                    }
                }
                out[o][y][xx] = acc;
            }
        }
    }
    out
}

fn bn64(x: &mut Planes, w: &ModelWeights, p: &str) {
    let (g, b, m, v) = (
        tensor(w, &format!("{p}.weight")),
        tensor(w, &format!("{p}.bias")),
        tensor(w, &format!("{p}.running_mean")),
        tensor(w, &format!("{p}.running_var")),
    );
    for (c, plane) in x.iter_mut().enumerate() {
        for v_ in plane.iter_mut().flatten() {
            *v_ = (*v_ - m[c]) / (v[c] + 1e-5).sqrt() * g[c] + b[c];
        }
    }
}

fn relu_planes(x: &mut Planes) {
    x.iter_mut()
        .flatten()
        .flatten()
        .for_each(|v| *v = v.max(0.0));
}

fn backbone64(w: &ModelWeights, obs: &ObservationTensor) -> Planes {
    let mut x: Planes = (0..10)
        .map(|c| {
            (0..32)
                .map(|y| {
                    (0..32)
                        .map(|xx| obs.data[c * 1024 + y * 32 + xx] as f64)
                        .collect()
                })
                .collect()
        })
        .collect();
    x = conv64(&x, w, "stem.conv.weight", 1);
    bn64(&mut x, w, "stem.bn");
    relu_planes(&mut x);
    for (i, stride) in [2, 2, 1].into_iter().enumerate() {
        let p = format!("blocks.{i}");
        let mut y = conv64(&x, w, &format!("{p}.conv1.weight"), stride);
        bn64(&mut y, w, &format!("{p}.bn1"));
        relu_planes(&mut y);
        let mut y = conv64(&y, w, &format!("{p}.conv2.weight"), 1);
        bn64(&mut y, w, &format!("{p}.bn2"));
        let skip = if w
            .tensors
            .contains_key(&format!("{p}.downsample.conv.weight"))
        {
            let mut s = conv64(&x, w, &format!("{p}.downsample.conv.weight"), stride);
            bn64(&mut s, w, &format!("{p}.downsample.bn"));
            s
        } else {
            x.clone()
        };
        for (a, b) in y
            .iter_mut()
            .flatten()
            .flatten()
            .zip(skip.iter().flatten().flatten())
        {
            *a = (*a + b).max(0.0);
        }
        x = y;
    }
    x
}

fn forward64(w: &ModelWeights, obs: &ObservationTensor) -> (Vec<f64>, Planes) {
    let cfg = w.config;
    let feats = backbone64(w, obs);
    let c = feats.len();
    let pixels = DMatrix::from_fn(64, c, |p, ch| feats[ch][p / 8][p % 8]);
    let tokens = tokenize64(&pixels, &mat(w, "tokenizer.w_a"), &mat(w, "tokenizer.w_v"));
    let t = cfg.token_dim as usize;
    let mut x = DMatrix::zeros(tokens.nrows() + 1, t);
    x.row_mut(0)
        .copy_from(&DMatrix::from_row_slice(1, t, &tensor(w, "cls_token")));
    x.rows_mut(1, tokens.nrows()).copy_from(&tokens);
    x += mat(w, "pos_embedding");
    for k in 0..cfg.encoder_layers {
        let p = format!("encoder.{k}");
        let layer = RefLayer {
            n1: (
                tensor(w, &format!("{p}.norm1.weight")),
                tensor(w, &format!("{p}.norm1.bias")),
            ),
            n2: (
                tensor(w, &format!("{p}.norm2.weight")),
                tensor(w, &format!("{p}.norm2.bias")),
            ),
            k: mat(w, &format!("{p}.attn.k")),
            q: mat(w, &format!("{p}.attn.q")),
            v: mat(w, &format!("{p}.attn.v")),
            f: mat(w, &format!("{p}.attn.f")),
            fc1: (
                mat(w, &format!("{p}.mlp.fc1.weight")),
                tensor(w, &format!("{p}.mlp.fc1.bias")),
            ),
            fc2: (
                mat(w, &format!("{p}.mlp.fc2.weight")),
                tensor(w, &format!("{p}.mlp.fc2.bias")),
            ),
            heads: cfg.attention_heads as usize,
        };
        x = layer.forward(&x);
    }
    let x = layer_norm64(
        &x,
        &tensor(w, "final_norm.weight"),
        &tensor(w, "final_norm.bias"),
    );
    let cls = x.rows(0, 1).into_owned();
    let mut h = cls * mat(w, "head.fc1.weight");
    let b1 = tensor(w, "head.fc1.bias");
    for i in 0..h.ncols() {
        h[(0, i)] = (h[(0, i)] + b1[i]).max(0.0);
    }
    let out = h * mat(w, "head.fc2.weight");
    let b2 = tensor(w, "head.fc2.bias");
    (
        (0..out.ncols()).map(|i| out[(0, i)] + b2[i]).collect(),
        feats,
    )
}

fn random_observation(rng: &mut ChaCha8Rng) -> ObservationTensor {
    let mut obs = ObservationTensor::zeros(0, 0);
    for ch in 0..10 {
        for i in 0..1024 {
            obs.data[ch * 1024 + i] = match ch {
                3 | 6 => rng.gen_range(0.0..1.0),
                _ => (rng.gen_range(0..10) == 0) as u8 as f32,
            };
        }
    }
    obs
}

#[test]
fn forward_matches_f64_reference_for_tiny_and_default_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (cfg, seed) in [
        (ModelConfig::tiny(), 1),
        (ModelConfig::tiny(), 2),
        (ModelConfig::default(), 3),
    ] {
        let w = ModelWeights::random(cfg, seed);
        let model = Model::new(&w).unwrap();
        for _ in 0..2 {
            let obs = random_observation(&mut rng);
            let (expected, feats) = forward64(&w, &obs);
            let got = model.forward(&obs).unwrap();
            let diff = got
                .iter()
                .zip(&expected)
                .map(|(a, b)| (*a as f64 - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-4, "logit diff {diff}");
            let fm = model.cnn_backbone(&obs).unwrap();
            assert_eq!(
                (fm.channels, fm.height, fm.width),
                (cfg.block_channels[2] as usize, 8, 8)
            );
            for (c, plane) in feats.iter().enumerate() {
                for (p, &v) in plane.iter().flatten().enumerate() {
                    assert!((fm.data[c * 64 + p] as f64 - v).abs() <= 1e-4);
                }
            }
        }
    }
}

#[test]
fn golden_file_from_reference_is_reproduced() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::random(cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases: Vec<GoldenCase> = (0..64)
        .map(|_| {
            let input = random_observation(&mut rng);
            let (logits, feats) = forward64(&w, &input);
            GoldenCase {
                input,
                logits: logits.iter().map(|&v| v as f32).collect(),
                features: Some(
                    feats
                        .iter()
                        .flatten()
                        .flatten()
                        .map(|&v| v as f32)
                        .collect(),
                ),
            }
        })
        .collect();
    let (_, loaded) = read_golden(&write_golden(&cfg, &cases)).unwrap();
    let model = Model::new(&w).unwrap();
    let mut worst = 0.0f32;
    for case in &loaded {
        let got = model.forward(&case.input).unwrap();
        for (a, b) in got.iter().zip(&case.logits) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-4, "max abs logit diff {worst}");
}

#[test]
fn zero_weights_give_zero_features_and_forward_is_pure() {
    let cfg = ModelConfig::tiny();
    let mut w = ModelWeights::random(cfg, 9);
    for (name, t) in w.tensors.iter_mut() {
        if name.starts_with("stem") || name.starts_with("blocks") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let model = Model::new(&w).unwrap();
    let zero = ObservationTensor::zeros(0, 0);
    assert!(model
        .cnn_backbone(&zero)
        .unwrap()
        .data
        .iter()
        .all(|&v| v == 0.0));

    let model = Model::new(&ModelWeights::random(cfg, 10)).unwrap();
    let obs = random_observation(&mut ChaCha8Rng::seed_from_u64(1));
    let a = model.forward(&obs).unwrap();
    let b = model.forward(&obs.clone()).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.len(), 5);
}

struct Shifted {
    base: Vec<f32>,
    shift: f32,
}

impl ActionScorer for Shifted {
    fn scores(&mut self, _: &ScoringContext) -> lmstar::Result<Vec<f32>> {
        Ok(self.base.iter().map(|v| v + self.shift).collect())
    }
}

fn open_instance() -> MapfInstance {
    let map = generate_random_map(6, 6, 0.0, 0).unwrap();
    MapfInstance::new(map, vec![Cell::new(2, 2)], vec![Cell::new(5, 5)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn adding_a_constant_to_logits_keeps_the_chosen_cell(
        base in prop::collection::vec(-10.0f32..10.0, 5),
        shift in -100.0f32..100.0,
    ) {
        let inst = open_instance();
        let mut plain = LearnedPolicy::new(&inst, Shifted { base: base.clone(), shift: 0.0 }).unwrap();
        let mut moved = LearnedPolicy::new(&inst, Shifted { base: base.clone(), shift }).unwrap();
        let argmax = |v: &[f32]| Model::argmax(v);
        let shifted: Vec<f32> = base.iter().map(|v| v + shift).collect();
        // Floating-point addition can merge near-ties; only compare when
        // the arg-max itself is unambiguous after the shift.
        prop_assume!(argmax(&base) == argmax(&shifted));
        prop_assert_eq!(
            plain.next_cell(&inst.starts, 0).unwrap(),
            moved.next_cell(&inst.starts, 0).unwrap()
        );
    }
}

#[test]
fn learned_policy_on_random_instances_only_makes_legal_moves() {
    let model = Model::new(&ModelWeights::random(ModelConfig::tiny(), 4)).unwrap();
    let mut scorer = Some(model);
    for seed in 0..5 {
        let map = generate_random_map(10, 10, 0.3, seed).unwrap();
        let inst = generate_instance(&map, 3, seed).unwrap();
        let mut p = LearnedPolicy::new(&inst, scorer.take().unwrap()).unwrap();
        for a in 0..3 {
            let to = p.next_cell(&inst.starts, a).unwrap();
            assert!(map.is_free(to) && inst.starts[a].is_adjacent_or_same(to));
        }
        scorer = Some(p.into_scorer());
    }
}
