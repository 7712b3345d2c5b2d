//! Dense f64 reference implementations shared by the model tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use lmstar::model::ops::Matrix;
use lmstar::model::{EncoderLayer, Linear, Norm};

pub fn to_f32(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.data[r * m.ncols() + c] = m[(r, c)] as f32;
        }
    }
    out
}

pub fn to_f64(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.rows, m.cols, m.data.iter().map(|&v| v as f64))
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    // Round through f32 so both sides start from identical values.
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale) as f32 as f64)
}

pub fn max_diff(a: &Matrix, b: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..a.rows {
        for c in 0..a.cols {
            worst = worst.max((a.at(r, c) as f64 - b[(r, c)]).abs());
        }
    }
    worst
}

pub fn softmax_rows64(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for r in 0..m.nrows() {
        let max = m.row(r).max();
        let sum: f64 = m.row(r).iter().map(|v| (v - max).exp()).sum();
        for c in 0..m.ncols() {
            out[(r, c)] = (m[(r, c)] - max).exp() / sum;
        }
    }
    out
}

pub fn layer_norm64(m: &DMatrix<f64>, g: &[f64], b: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for r in 0..m.nrows() {
        let mean = m.row(r).mean();
        let var = m.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.ncols() as f64;
        for c in 0..m.ncols() {
            out[(r, c)] = (m[(r, c)] - mean) / (var + 1e-5).sqrt() * g[c] + b[c];
        }
    }
    out
}

pub fn gelu64(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

pub fn tokenize64(x: &DMatrix<f64>, w_a: &DMatrix<f64>, w_v: &DMatrix<f64>) -> DMatrix<f64> {
    let a = softmax_rows64(&(x * w_a.transpose()).transpose()).transpose();
    a.transpose() * (x * w_v)
}

pub fn bare_layer(
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    v: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> EncoderLayer {
    EncoderLayer {
        norm1: None,
        k: to_f32(k),
        q: to_f32(q),
        v: to_f32(v),
        f: to_f32(f),
        heads: 1,
        scaled: false,
        norm2: None,
        mlp: None,
    }
}

pub struct RefLayer {
    pub n1: (Vec<f64>, Vec<f64>),
    pub n2: (Vec<f64>, Vec<f64>),
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub fc1: (DMatrix<f64>, Vec<f64>),
    pub fc2: (DMatrix<f64>, Vec<f64>),
    pub heads: usize,
}

impl RefLayer {
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = layer_norm64(x, &self.n1.0, &self.n1.1);
        let (xk, xq, xv) = (&h * &self.k, &h * &self.q, &h * &self.v);
        let dq = self.k.ncols() / self.heads;
        let dv = self.v.ncols() / self.heads;
        let mut concat = DMatrix::zeros(x.nrows(), self.v.ncols());
        for head in 0..self.heads {
            let kh = xk.columns(head * dq, dq);
            let qh = xq.columns(head * dq, dq);
            let s = softmax_rows64(&((kh * qh.transpose()) / (dq as f64).sqrt()));
            concat
                .columns_mut(head * dv, dv)
                .copy_from(&(s * xv.columns(head * dv, dv)));
        }
        let x = x + concat * &self.f;
        let h = layer_norm64(&x, &self.n2.0, &self.n2.1);
        let mut a = &h * &self.fc1.0;
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                a[(r, c)] = gelu64(a[(r, c)] + self.fc1.1[c]);
            }
        }
        let mut b = a * &self.fc2.0;
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                b[(r, c)] += self.fc2.1[c];
            }
        }
        x + b
    }

    pub fn to_layer(&self) -> EncoderLayer {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        EncoderLayer {
            norm1: Some(Norm {
                gamma: f32s(&self.n1.0),
                beta: f32s(&self.n1.1),
            }),
            k: to_f32(&self.k),
            q: to_f32(&self.q),
            v: to_f32(&self.v),
            f: to_f32(&self.f),
            heads: self.heads,
            scaled: true,
            norm2: Some(Norm {
                gamma: f32s(&self.n2.0),
                beta: f32s(&self.n2.1),
            }),
            mlp: Some((
                Linear {
                    weight: to_f32(&self.fc1.0),
                    bias: Some(f32s(&self.fc1.1)),
                },
                Linear {
                    weight: to_f32(&self.fc2.0),
                    bias: Some(f32s(&self.fc2.1)),
                },
            )),
        }
    }
}

pub fn rand_ref_layer(
    rng: &mut ChaCha8Rng,
    t: usize,
    qk: usize,
    m: usize,
    heads: usize,
) -> RefLayer {
    let mut v = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n)
            .map(|_| rng.gen_range(lo..hi) as f32 as f64)
            .collect()
    };
    let n1 = (v(t, 0.5, 1.5), v(t, -0.2, 0.2));
    let n2 = (v(t, 0.5, 1.5), v(t, -0.2, 0.2));
    let b1 = v(m, -0.2, 0.2);
    let b2 = v(t, -0.2, 0.2);
    RefLayer {
        n1,
        n2,
        k: rand_mat(rng, t, qk, 0.5),
        q: rand_mat(rng, t, qk, 0.5),
        v: rand_mat(rng, t, t, 0.5),
        f: rand_mat(rng, t, t, 0.5),
        fc1: (rand_mat(rng, t, m, 0.5), b1),
        fc2: (rand_mat(rng, m, t, 0.5), b2),
        heads,
    }
}
