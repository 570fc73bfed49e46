//! Slow reference implementations.
//!
//! Nothing here shares code with the production paths it checks: convolution
//! is a direct loop nest over the 4-D tensors, dot products use `i128`, and
//! rounding is decided from the exact quotient and remainder.

use crate::functional::{BiasVector, LayerParams, Matrix, QTensor, WeightMatrix};
use crate::workload::{Activation, LayerKind, LayerSpec};

/// Round-half-away-from-zero of `acc / 2^shift`, saturated to int8.
pub fn rescale_exact(acc: i32, shift: u32) -> i8 {
    let mag = (acc as i128).abs();
    let d = 1i128 << shift;
    let (q, r) = (mag / d, mag % d);
    let rounded = if 2 * r >= d && shift > 0 { q + 1 } else { q };
    let y = if acc < 0 { -rounded } else { rounded };
    y.clamp(-128, 127) as i8
}

/// `i128` GEMM, row-major `n x p`.
pub fn gemm_wide(w: &WeightMatrix, x: &Matrix, b: &BiasVector) -> Vec<i128> {
    let mut out = Vec::with_capacity(w.n * x.cols);
    for i in 0..w.n {
        for j in 0..x.cols {
            let mut acc = (b.values[i] as i128) * (1i128 << b.shift);
            for k in 0..w.m {
                acc += w.data[i * w.m + k] as i128 * x.data[k * x.cols + j] as i128;
            }
            out.push(acc);
        }
    }
    out
}

/// Patch for output pixel (oh, ow) in (kh, kw, c) order, zeros for padding.
pub fn patch(x: &QTensor, oh: usize, ow: usize, k: usize, s: usize, p: usize) -> Vec<i8> {
    let mut v = Vec::with_capacity(k * k * x.c);
    for kh in 0..k {
        for kw in 0..k {
            let y = (oh * s + kh) as i64 - p as i64;
            let xx = (ow * s + kw) as i64 - p as i64;
            for c in 0..x.c {
                if y < 0 || xx < 0 || y >= x.h as i64 || xx >= x.w as i64 {
                    v.push(0);
                } else {
                    v.push(x.data[(y as usize * x.w + xx as usize) * x.c + c]);
                }
            }
        }
    }
    v
}

/// Direct convolution of a conv/fc layer, including bias, rescale and
/// activation. Weight row `co` is indexed as `[(kh*k + kw)*c_in + ci]`.
pub fn conv_naive(x: &QTensor, layer: &LayerSpec, params: &LayerParams) -> QTensor {
    let (k, s, p) = match layer.kind {
        LayerKind::Fc => (1, 1, 0),
        _ => (layer.k, layer.s, layer.p),
    };
    let h_out = (x.h + 2 * p - k) / s + 1;
    let w_out = (x.w + 2 * p - k) / s + 1;
    let c_out = layer.c_out;
    let w = &params.weights;
    let mut data = vec![0i8; h_out * w_out * c_out];
    for oh in 0..h_out {
        for ow in 0..w_out {
            for co in 0..c_out {
                let mut acc: i128 = params.bias.values[co] as i128 * (1i128 << params.bias.shift);
                for kh in 0..k {
                    for kw in 0..k {
                        for ci in 0..x.c {
                            let ih = (oh * s + kh) as i64 - p as i64;
                            let iw = (ow * s + kw) as i64 - p as i64;
                            if ih < 0 || iw < 0 || ih >= x.h as i64 || iw >= x.w as i64 {
                                continue;
                            }
                            let xv = x.data[(ih as usize * x.w + iw as usize) * x.c + ci] as i128;
                            let wv = w.data[co * w.m + (kh * k + kw) * x.c + ci] as i128;
                            acc += xv * wv;
                        }
                    }
                }
                let acc = i32::try_from(acc).expect("accumulator overflow in oracle");
                let mut y = rescale_exact(acc, layer.output_shift);
                if layer.activation == Activation::Relu && y < 0 {
                    y = 0;
                }
                data[(oh * w_out + ow) * c_out + co] = y;
            }
        }
    }
    QTensor {
        h: h_out,
        w: w_out,
        c: c_out,
        data,
        shift: x.shift + w.shift - layer.output_shift as i32,
    }
}

/// Max pooling by explicit window enumeration.
pub fn maxpool_naive(x: &QTensor, k: usize, s: usize, p: usize) -> QTensor {
    let h_out = (x.h + 2 * p - k) / s + 1;
    let w_out = (x.w + 2 * p - k) / s + 1;
    let mut data = Vec::with_capacity(h_out * w_out * x.c);
    for oh in 0..h_out {
        for ow in 0..w_out {
            for c in 0..x.c {
                let vals: Vec<i8> = (0..k * k)
                    .filter_map(|t| {
                        let y = (oh * s + t / k) as i64 - p as i64;
                        let xx = (ow * s + t % k) as i64 - p as i64;
                        (y >= 0 && xx >= 0 && y < x.h as i64 && xx < x.w as i64)
                            .then(|| x.data[(y as usize * x.w + xx as usize) * x.c + c])
                    })
                    .collect();
                data.push(*vals.iter().max().expect("window has an in-bounds tap"));
            }
        }
    }
    QTensor {
        h: h_out,
        w: w_out,
        c: x.c,
        data,
        shift: x.shift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rounding_reference_points() {
        assert_eq!(rescale_exact(300, 2), 75);
        assert_eq!(rescale_exact(-301, 2), -75);
        assert_eq!(rescale_exact(-302, 2), -76);
        assert_eq!(rescale_exact(6, 2), 2);
        assert_eq!(rescale_exact(-6, 2), -2);
        assert_eq!(rescale_exact(5, 2), 1);
        assert_eq!(rescale_exact(1000, 0), 127);
    }
}
