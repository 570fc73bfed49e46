//! Bit-exact INT8 datapath: im2col, GEMM with 32-bit accumulation,
//! power-of-two rescale, ReLU, saturating residual add and max-pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{conv_to_gemm, Activation, LayerKind, LayerSpec, ModelGraph};

/// INT8 activation tensor in HWC order (channel fastest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i8>,
    /// Real value = `q * 2^-shift`.
    pub shift: i32,
}

impl QTensor {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<i8>, shift: i32) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::DimMismatch(format!(
                "tensor {h}x{w}x{c} needs {} values, got {}",
                h * w * c,
                data.len()
            )));
        }
        Ok(QTensor { h, w, c, data, shift })
    }

    pub fn zeros(h: usize, w: usize, c: usize, shift: i32) -> Self {
        QTensor {
            h,
            w,
            c,
            data: vec![0; h * w * c],
            shift,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> i8 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    /// Returns a copy with the channel dimension zero-extended to `c`.
    pub fn pad_channels(&self, c: usize) -> QTensor {
        let mut data = vec![0i8; self.h * self.w * c];
        for px in 0..self.h * self.w {
            data[px * c..px * c + self.c].copy_from_slice(&self.data[px * self.c..(px + 1) * self.c]);
        }
        QTensor {
            c,
            data,
            ..self.clone()
        }
    }
}

/// Dense row-major int8 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i8>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i8) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<i8> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }
}

/// Weight matrix: one row per output channel, columns in im2col patch order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub n: usize,
    pub m: usize,
    pub data: Vec<i8>,
    pub shift: i32,
}

impl WeightMatrix {
    pub fn new(n: usize, m: usize, data: Vec<i8>, shift: i32) -> Result<Self> {
        if data.len() != n * m {
            return Err(Error::DimMismatch(format!(
                "weight matrix {n}x{m} needs {} values, got {}",
                n * m,
                data.len()
            )));
        }
        Ok(WeightMatrix { n, m, data, shift })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.m + c]
    }

    /// Zero-extends every row to `m_padded` columns.
    pub fn pad_to(&self, m_padded: usize) -> WeightMatrix {
        if m_padded <= self.m {
            return self.clone();
        }
        let mut data = vec![0i8; self.n * m_padded];
        for r in 0..self.n {
            data[r * m_padded..r * m_padded + self.m].copy_from_slice(&self.data[r * self.m..(r + 1) * self.m]);
        }
        WeightMatrix {
            n: self.n,
            m: m_padded,
            data,
            shift: self.shift,
        }
    }

    /// Widens a conv weight matrix laid out for `c_in` channels to `c_pad`
    /// channels per tap, inserting zero weights for the new channels.
    pub fn pad_channels(&self, taps: usize, c_in: usize, c_pad: usize) -> Result<WeightMatrix> {
        if self.m != taps * c_in {
            return Err(Error::DimMismatch(format!(
                "weight row length {} is not {taps} taps x {c_in} channels",
                self.m
            )));
        }
        let m = taps * c_pad;
        let mut data = vec![0i8; self.n * m];
        for r in 0..self.n {
            for t in 0..taps {
                let src = &self.data[r * self.m + t * c_in..r * self.m + (t + 1) * c_in];
                data[r * m + t * c_pad..r * m + t * c_pad + c_in].copy_from_slice(src);
            }
        }
        Ok(WeightMatrix {
            n: self.n,
            m,
            data,
            shift: self.shift,
        })
    }
}

/// Per-row int8 bias, applied as `b << shift` in accumulator units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasVector {
    pub values: Vec<i8>,
    pub shift: u32,
}

impl BiasVector {
    pub fn zeros(n: usize) -> Self {
        BiasVector {
            values: vec![0; n],
            shift: 0,
        }
    }
}

/// `n x p` matrix of 32-bit accumulators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccMatrix {
    pub n: usize,
    pub p: usize,
    pub data: Vec<i32>,
}

impl AccMatrix {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.p + c]
    }
}

/// Weights and bias of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: WeightMatrix,
    pub bias: BiasVector,
}

/// Builds the `m_padded x p` im2col matrix of `x` for a conv/fc layer.
///
/// Column `j` is output pixel `j` (row-major over `h_out x w_out`); a patch
/// is ordered (kh, kw, c) with c fastest. Padding taps and the alignment
/// rows `m..m_padded` are zero.
pub fn im2col(x: &QTensor, layer: &LayerSpec) -> Result<Matrix> {
    if !matches!(layer.kind, LayerKind::Conv | LayerKind::Fc) {
        return Err(Error::NotIm2col {
            layer: layer.id,
            kind: layer.kind.as_str(),
        });
    }
    check_input(x, layer)?;
    let shape = conv_to_gemm(layer)?;
    let (h_out, w_out) = layer.out_dims()?;
    let (k, s, pad) = if layer.kind == LayerKind::Fc {
        (1, 1, 0)
    } else {
        (layer.k, layer.s, layer.p)
    };
    let c = x.c;
    let mut out = Matrix::zeros(shape.m_padded, shape.p);
    for oh in 0..h_out {
        for ow in 0..w_out {
            let col = oh * w_out + ow;
            for kh in 0..k {
                let ih = (oh * s + kh) as isize - pad as isize;
                if ih < 0 || ih >= x.h as isize {
                    continue;
                }
                for kw in 0..k {
                    let iw = (ow * s + kw) as isize - pad as isize;
                    if iw < 0 || iw >= x.w as isize {
                        continue;
                    }
                    let base = (ih as usize * x.w + iw as usize) * c;
                    let row = (kh * k + kw) * c;
                    for ch in 0..c {
                        out.set(row + ch, col, x.data[base + ch]);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_input(x: &QTensor, layer: &LayerSpec) -> Result<()> {
    if x.shape() != layer.in_shape() {
        return Err(Error::DimMismatch(format!(
            "layer {} expects input {:?}, got {:?}",
            layer.id,
            layer.in_shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// `acc[i][j] = (b[i] << bias_shift) + sum_k w[i][k] x[k][j]` in exact i32.
pub fn gemm_int8(w: &WeightMatrix, x: &Matrix, b: &BiasVector) -> Result<AccMatrix> {
    if w.m != x.rows {
        return Err(Error::DimMismatch(format!(
            "weight columns {} != activation rows {}",
            w.m, x.rows
        )));
    }
    if b.values.len() != w.n {
        return Err(Error::DimMismatch(format!(
            "bias length {} != weight rows {}",
            b.values.len(),
            w.n
        )));
    }
    let p = x.cols;
    let mut data = vec![0i32; w.n * p];
    for i in 0..w.n {
        let row = &mut data[i * p..(i + 1) * p];
        row.fill((b.values[i] as i32) << b.shift);
        for kk in 0..w.m {
            let wv = w.at(i, kk) as i32;
            if wv == 0 {
                continue;
            }
            let xrow = &x.data[kk * p..(kk + 1) * p];
            for (acc, &xv) in row.iter_mut().zip(xrow) {
                *acc += wv * xv as i32;
            }
        }
    }
    Ok(AccMatrix { n: w.n, p, data })
}

/// Arithmetic right shift with round-half-away-from-zero, then int8 saturation.
#[inline]
pub fn rescale(acc: i32, shift: u32) -> i8 {
    let v = acc as i64;
    let y = if shift == 0 {
        v
    } else {
        let half = 1i64 << (shift - 1);
        let mag = (v.abs() + half) >> shift;
        if v < 0 {
            -mag
        } else {
            mag
        }
    };
    y.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

#[inline]
pub fn relu(x: i8) -> i8 {
    x.max(0)
}

#[inline]
pub fn apply_activation(x: i8, act: Activation) -> i8 {
    match act {
        Activation::Relu => relu(x),
        Activation::None => x,
    }
}

/// Saturating int8 add, as done by the SIMD adder in post-processing.
#[inline]
pub fn residual_add(a: i8, b: i8) -> i8 {
    a.saturating_add(b)
}

/// Per-channel max pooling; padding taps never win.
pub fn maxpool(x: &QTensor, k: usize, s: usize, p: usize) -> Result<QTensor> {
    if k == 0 || s == 0 || x.h + 2 * p < k || x.w + 2 * p < k {
        return Err(Error::DimMismatch(format!(
            "max-pool k={k} s={s} p={p} does not fit a {}x{} map",
            x.h, x.w
        )));
    }
    if p >= k {
        return Err(Error::DimMismatch("max-pool padding must be smaller than the window".into()));
    }
    let h_out = (x.h + 2 * p - k) / s + 1;
    let w_out = (x.w + 2 * p - k) / s + 1;
    let mut out = QTensor::zeros(h_out, w_out, x.c, x.shift);
    for oh in 0..h_out {
        for ow in 0..w_out {
            for ch in 0..x.c {
                let mut best = i8::MIN;
                let mut seen = false;
                for kh in 0..k {
                    let ih = (oh * s + kh) as isize - p as isize;
                    if ih < 0 || ih >= x.h as isize {
                        continue;
                    }
                    for kw in 0..k {
                        let iw = (ow * s + kw) as isize - p as isize;
                        if iw < 0 || iw >= x.w as isize {
                            continue;
                        }
                        best = best.max(x.at(ih as usize, iw as usize, ch));
                        seen = true;
                    }
                }
                debug_assert!(seen);
                out.data[(oh * w_out + ow) * x.c + ch] = best;
            }
        }
    }
    Ok(out)
}

/// Channel-as-column patch matrix for average pooling: column
/// `pixel * c + channel` holds that channel's `k x k` window.
fn pool_columns(x: &QTensor, layer: &LayerSpec) -> Result<Matrix> {
    let shape = conv_to_gemm(layer)?;
    let (h_out, w_out) = layer.out_dims()?;
    let (k, s, pad) = (layer.k, layer.s, layer.p);
    let mut out = Matrix::zeros(shape.m_padded, shape.p);
    for oh in 0..h_out {
        for ow in 0..w_out {
            for ch in 0..x.c {
                let col = (oh * w_out + ow) * x.c + ch;
                for kh in 0..k {
                    let ih = (oh * s + kh) as isize - pad as isize;
                    if ih < 0 || ih >= x.h as isize {
                        continue;
                    }
                    for kw in 0..k {
                        let iw = (ow * s + kw) as isize - pad as isize;
                        if iw < 0 || iw >= x.w as isize {
                            continue;
                        }
                        out.set(kh * k + kw, col, x.at(ih as usize, iw as usize, ch));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs a single weighted layer (or max-pool) on `x`.
///
/// `residual` must already be quantised to this layer's output scale; the
/// adder never rescales.
pub fn run_layer(layer: &LayerSpec, x: &QTensor, params: Option<&LayerParams>, residual: Option<&QTensor>) -> Result<QTensor> {
    check_input(x, layer)?;
    if layer.kind == LayerKind::Maxpool {
        let y = maxpool(x, layer.k, layer.s, layer.p)?;
        return Ok(QTensor {
            data: y.data.into_iter().map(|v| apply_activation(v, layer.activation)).collect(),
            ..y
        });
    }
    let params = params.ok_or(Error::MissingParams(layer.id))?;
    let shape = conv_to_gemm(layer)?;
    if params.weights.n != shape.n || params.weights.m != shape.m {
        return Err(Error::DimMismatch(format!(
            "layer {} weights are {}x{}, GEMM needs {}x{}",
            layer.id, params.weights.n, params.weights.m, shape.n, shape.m
        )));
    }
    let cols = match layer.kind {
        LayerKind::AvgpoolAsConv => pool_columns(x, layer)?,
        _ => im2col(x, layer)?,
    };
    let w = params.weights.pad_to(shape.m_padded);
    let acc = gemm_int8(&w, &cols, &params.bias)?;

    let (h_out, w_out, c_out) = layer.out_shape()?;
    let out_shift = x.shift + params.weights.shift - layer.output_shift as i32;
    if let Some(r) = residual {
        if r.shape() != (h_out, w_out, c_out) {
            return Err(Error::DimMismatch(format!("layer {} residual branch shape {:?}", layer.id, r.shape())));
        }
        if r.shift != out_shift {
            return Err(Error::ScaleMismatch {
                layer: layer.id,
                branch: r.shift,
                output: out_shift,
            });
        }
    }

    let mut data = vec![0i8; h_out * w_out * c_out];
    match layer.kind {
        LayerKind::AvgpoolAsConv => {
            for (col, out) in data.iter_mut().enumerate() {
                *out = rescale(acc.at(0, col), layer.output_shift);
            }
        }
        _ => {
            for px in 0..shape.p {
                for ch in 0..c_out {
                    data[px * c_out + ch] = rescale(acc.at(ch, px), layer.output_shift);
                }
            }
        }
    }
    for (i, v) in data.iter_mut().enumerate() {
        let y = match residual {
            Some(r) => residual_add(*v, r.data[i]),
            None => *v,
        };
        *v = apply_activation(y, layer.activation);
    }
    QTensor::new(h_out, w_out, c_out, data, out_shift)
}

/// Runs a whole graph and returns every layer's output, in layer order.
///
/// `params[i]` holds layer `i`'s weights; max-pool layers ignore theirs.
pub fn run_model(g: &ModelGraph, x: &QTensor, params: &[Option<LayerParams>]) -> Result<Vec<QTensor>> {
    let mut outs: Vec<QTensor> = Vec::with_capacity(g.layers.len());
    for (idx, layer) in g.layers.iter().enumerate() {
        let input = match g.input_of(idx) {
            Some(src) => &outs[src],
            None => x,
        };
        let residual = layer.residual_source.map(|src| &outs[src]);
        let p = params.get(idx).and_then(Option::as_ref);
        let y = run_layer(layer, input, p, residual)?;
        outs.push(y);
    }
    Ok(outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> QTensor {
        let data = (0..h * w * c).map(|_| rng.random::<i8>()).collect();
        QTensor::new(h, w, c, data, 0).unwrap()
    }

    #[test]
    fn im2col_identity_1x1() {
        let x = QTensor::new(1, 1, 1, vec![-7], 0).unwrap();
        let m = im2col(&x, &LayerSpec::conv(0, 1, 1, 0, 1, 1, 1)).unwrap();
        // One useful row, zero-padded to 32.
        assert_eq!((m.rows, m.cols), (32, 1));
        assert_eq!(m.at(0, 0), -7);
        assert!(m.data[1..].iter().all(|&v| v == 0));
    }

    #[test]
    fn im2col_3x3_same_padding() {
        let x = QTensor::new(3, 3, 1, (1..=9).collect(), 0).unwrap();
        let m = im2col(&x, &LayerSpec::conv(0, 3, 1, 1, 1, 1, 3)).unwrap();
        assert_eq!(m.cols, 9);
        let centre = m.column(4);
        assert_eq!(&centre[..9], &[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        for corner in [0, 2, 6, 8] {
            let col = m.column(corner);
            assert_eq!(col[..9].iter().filter(|&&v| v == 0).count(), 5, "corner {corner}");
        }
        // Top-left output pixel sees input (0,0),(0,1),(1,0),(1,1) at taps 4,5,7,8.
        assert_eq!(&m.column(0)[..9], &[0, 0, 0, 0, 1, 2, 0, 4, 5]);
        assert_eq!(m.column(4)[..9], oracle::patch(&x, 1, 1, 3, 1, 1));
    }

    #[test]
    fn im2col_dim_mismatch() {
        let x = QTensor::zeros(4, 4, 2, 0);
        assert!(matches!(im2col(&x, &LayerSpec::conv(0, 3, 1, 1, 3, 1, 4)), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn gemm_trivial_cases() {
        let x = Matrix {
            rows: 3,
            cols: 2,
            data: vec![1, 2, 3, 4, 5, 6],
        };
        let w = WeightMatrix::new(1, 3, vec![1, 0, 0], 0).unwrap();
        let acc = gemm_int8(&w, &x, &BiasVector::zeros(1)).unwrap();
        assert_eq!(acc.data, vec![1, 2]);

        let w = WeightMatrix::new(2, 3, vec![0; 6], 0).unwrap();
        let b = BiasVector {
            values: vec![5, 5],
            shift: 2,
        };
        let acc = gemm_int8(&w, &x, &b).unwrap();
        assert!(acc.data.iter().all(|&v| v == 20));

        let w = WeightMatrix::new(1, 2, vec![1, 1], 0).unwrap();
        assert!(gemm_int8(&w, &x, &BiasVector::zeros(1)).is_err());
    }

    #[test]
    fn gemm_matches_wide_integer_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = WeightMatrix::new(8, 8, (0..64).map(|_| rng.random()).collect(), 0).unwrap();
            let x = Matrix {
                rows: 8,
                cols: 8,
                data: (0..64).map(|_| rng.random()).collect(),
            };
            let b = BiasVector {
                values: (0..8).map(|_| rng.random()).collect(),
                shift: rng.random_range(0..8),
            };
            let acc = gemm_int8(&w, &x, &b).unwrap();
            let wide = oracle::gemm_wide(&w, &x, &b);
            for (a, e) in acc.data.iter().zip(&wide) {
                assert_eq!(*a as i128, *e);
            }
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale(300, 2), 75);
        assert_eq!(rescale(300, 0), 127);
        assert_eq!(rescale(-301, 2), -75);
        assert_eq!(rescale(-302, 2), -76);
        assert_eq!(rescale(-300, 0), -128);
        assert_eq!(rescale(i32::MIN, 0), -128);
        assert_eq!(rescale(i32::MAX, 31), 1);
    }

    #[test]
    fn rescale_matches_exact_rational_rule() {
        for shift in 0..12u32 {
            for acc in -5000..5000 {
                assert_eq!(rescale(acc, shift), oracle::rescale_exact(acc, shift), "acc={acc} shift={shift}");
            }
        }
    }

    #[test]
    fn activations_and_residual() {
        assert_eq!(relu(-5), 0);
        assert_eq!(relu(0), 0);
        assert_eq!(relu(127), 127);
        assert_eq!(residual_add(100, 100), 127);
        assert_eq!(residual_add(-100, -100), -128);
        assert_eq!(residual_add(3, -5), -2);
    }

    #[test]
    fn maxpool_cases() {
        let x = QTensor::new(2, 2, 1, vec![1, 2, 3, 4], 0).unwrap();
        assert_eq!(maxpool(&x, 2, 2, 0).unwrap().data, vec![4]);
        let x = QTensor::new(3, 3, 2, vec![-9; 18], 0).unwrap();
        let y = maxpool(&x, 3, 2, 1).unwrap();
        assert!(y.data.iter().all(|&v| v == -9));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (h, w, c) = (rng.random_range(3..10), rng.random_range(3..10), rng.random_range(1..4));
            let x = rand_tensor(&mut rng, h, w, c);
            let k = rng.random_range(2..4);
            let s = rng.random_range(1..3);
            let p = rng.random_range(0..k);
            assert_eq!(maxpool(&x, k, s, p).unwrap(), oracle::maxpool_naive(&x, k, s, p));
        }
    }

    #[test]
    fn identity_conv_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, 5, 5, 4);
        let layer = LayerSpec::conv(0, 1, 1, 0, 4, 4, 5);
        let mut w = vec![0i8; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1;
        }
        let params = LayerParams {
            weights: WeightMatrix::new(4, 4, w, 0).unwrap(),
            bias: BiasVector::zeros(4),
        };
        let g = ModelGraph::new("id", vec![layer]).unwrap();
        let out = run_model(&g, &x, &[Some(params)]).unwrap();
        assert_eq!(out[0], x);
    }

    #[test]
    fn residual_with_zero_branch_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 4, 4, 2);
        let l0 = LayerSpec::conv(0, 3, 1, 1, 2, 2, 4);
        let l1 = LayerSpec::conv(1, 3, 1, 1, 2, 2, 4).with_shifts(0, 0, 4).with_relu();
        let zero = LayerParams {
            weights: WeightMatrix::new(2, 18, vec![0; 36], 0).unwrap(),
            bias: BiasVector::zeros(2),
        };
        let w1 = LayerParams {
            weights: WeightMatrix::new(2, 18, (0..36).map(|_| rng.random()).collect(), 4).unwrap(),
            bias: BiasVector::zeros(2),
        };
        let plain = ModelGraph::new("p", vec![l0.clone(), l1.clone().with_input(0)]).unwrap();
        let with_res = ModelGraph::new("r", vec![l0, l1.with_residual(0)]).unwrap();
        let params = [Some(zero), Some(w1)];
        let a = run_model(&plain, &x, &params).unwrap();
        let b = run_model(&with_res, &x, &params).unwrap();
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn residual_scale_mismatch_is_rejected() {
        let x = QTensor::zeros(2, 2, 1, 0);
        let l0 = LayerSpec::conv(0, 1, 1, 0, 1, 1, 2);
        let l1 = LayerSpec::conv(1, 1, 1, 0, 1, 1, 2).with_residual(0).with_shifts(3, 0, 0);
        let p = |shift| LayerParams {
            weights: WeightMatrix::new(1, 1, vec![1], shift).unwrap(),
            bias: BiasVector::zeros(1),
        };
        let g = ModelGraph::new("m", vec![l0, l1]).unwrap();
        let err = run_model(&g, &x, &[Some(p(0)), Some(p(3))]).unwrap_err();
        assert!(matches!(err, Error::ScaleMismatch { layer: 1, branch: 0, output: 3 }));
    }

    #[test]
    fn avgpool_layer_averages_windows() {
        let (layer, q) = crate::workload::avgpool_to_conv(0, 2, 2, 3, 4);
        let x = QTensor::new(4, 4, 3, (0..48).map(|v| (v % 17) as i8).collect(), 0).unwrap();
        let params = LayerParams {
            weights: WeightMatrix::new(1, 4, vec![q.q; 4], 0).unwrap(),
            bias: BiasVector::zeros(1),
        };
        let y = run_layer(&layer, &x, Some(&params), None).unwrap();
        assert_eq!(y.shape(), (2, 2, 3));
        for oh in 0..2 {
            for ow in 0..2 {
                for ch in 0..3 {
                    let sum: i32 = (0..2)
                        .flat_map(|dy| (0..2).map(move |dx| (dy, dx)))
                        .map(|(dy, dx)| x.at(oh * 2 + dy, ow * 2 + dx, ch) as i32)
                        .sum();
                    assert_eq!(y.at(oh, ow, ch), rescale(sum, 2));
                }
            }
        }
    }

    #[test]
    fn channel_padding_preserves_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, 6, 6, 3);
        let layer = LayerSpec::conv(0, 3, 2, 1, 3, 4, 6).with_shifts(0, 0, 6);
        let w = WeightMatrix::new(4, 27, (0..108).map(|_| rng.random()).collect(), 0).unwrap();
        let b = BiasVector {
            values: vec![1, -2, 3, -4],
            shift: 3,
        };
        let base = run_layer(&layer, &x, Some(&LayerParams { weights: w.clone(), bias: b.clone() }), None).unwrap();
        let padded_layer = crate::workload::pad_input_channels(&layer, 32);
        let padded = LayerParams {
            weights: w.pad_channels(9, 3, 32).unwrap(),
            bias: b,
        };
        let y = run_layer(&padded_layer, &x.pad_channels(32), Some(&padded), None).unwrap();
        assert_eq!(y, base);
    }
}
