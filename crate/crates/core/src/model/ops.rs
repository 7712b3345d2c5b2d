//! Dense f32 kernels used by the forward pass. All buffers are row-major.

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.at(r, c);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `a [m x k] * b [k x n]`, where `b` is given as a raw row-major buffer.
pub fn matmul(a: &Matrix, b: &[f32], n: usize) -> Matrix {
    let k = a.cols;
    debug_assert_eq!(b.len(), k * n);
    let mut out = Matrix::zeros(a.rows, n);
    for i in 0..a.rows {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn add_bias(m: &mut Matrix, bias: &[f32]) {
    for r in 0..m.rows {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn add_assign(m: &mut Matrix, other: &Matrix) {
    for (v, o) in m.data.iter_mut().zip(&other.data) {
        *v += o;
    }
}

/// Numerically stable softmax of one slice, in place.
pub fn softmax_in_place(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows {
        softmax_in_place(m.row_mut(r));
    }
}

/// Softmax down each column.
pub fn softmax_cols(m: &Matrix) -> Matrix {
    let mut t = m.transpose();
    softmax_rows(&mut t);
    t.transpose()
}

pub const LAYER_NORM_EPS: f32 = 1e-5;
pub const BATCH_NORM_EPS: f32 = 1e-5;

pub fn layer_norm(m: &Matrix, gamma: &[f32], beta: &[f32]) -> Matrix {
    let mut out = m.clone();
    let n = m.cols as f32;
    for r in 0..m.rows {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f32>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    out
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

/// Channel-major feature map `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    /// `[height * width, channels]` matrix, one row per pixel.
    pub fn to_pixel_rows(&self) -> Matrix {
        let p = self.height * self.width;
        let mut m = Matrix::zeros(p, self.channels);
        for c in 0..self.channels {
            for (i, &v) in self.plane(c).iter().enumerate() {
                m.data[i * self.channels + c] = v;
            }
        }
        m
    }
}

/// 2D convolution without bias, zero padding `kernel / 2`. `weight` is
/// `[out, in, kernel, kernel]`.
pub fn conv2d(
    input: &FeatureMap,
    weight: &[f32],
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> FeatureMap {
    let pad = kernel / 2;
    let oh = (input.height + 2 * pad - kernel) / stride + 1;
    let ow = (input.width + 2 * pad - kernel) / stride + 1;
    let mut out = FeatureMap::zeros(out_channels, oh, ow);
    let in_ch = input.channels;
    let (ih, iw) = (input.height as isize, input.width as isize);
    for o in 0..out_channels {
        let oplane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..in_ch {
            let iplane = input.plane(i);
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let w = weight[((o * in_ch + i) * kernel + ky) * kernel + kx];
                    if w == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let sy = (y * stride + ky) as isize - pad as isize;
                        if sy < 0 || sy >= ih {
                            continue;
                        }
                        let irow = &iplane[sy as usize * input.width..];
                        let orow = &mut oplane[y * ow..(y + 1) * ow];
                        for (x, ov) in orow.iter_mut().enumerate() {
                            let sx = (x * stride + kx) as isize - pad as isize;
                            if sx >= 0 && sx < iw {
                                *ov += w * irow[sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inference-mode batch normalization, in place.
pub fn batch_norm(fm: &mut FeatureMap, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) {
    let p = fm.height * fm.width;
    for c in 0..fm.channels {
        let scale = gamma[c] / (var[c] + BATCH_NORM_EPS).sqrt();
        let shift = beta[c] - mean[c] * scale;
        for v in &mut fm.data[c * p..(c + 1) * p] {
            *v = *v * scale + shift;
        }
    }
}
