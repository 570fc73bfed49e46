//! Built-in models: ResNet-18, ResNet-50 (v1, stride on the first 1x1 of a
//! down-sampling bottleneck) and a small classifier for noise experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::functional::{BiasVector, LayerParams, QTensor, WeightMatrix};
use crate::workload::{avgpool_quant, avgpool_to_conv, conv_to_gemm, LayerKind, LayerSpec, ModelGraph};

/// Weight and output shift of every zoo conv, so activations keep their scale
/// through a layer and residual branches line up.
const ZOO_SHIFT: u32 = 7;

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn push(&mut self, layer: LayerSpec) -> usize {
        let id = self.layers.len();
        self.layers.push(LayerSpec { id, ..layer });
        id
    }

    fn conv(&mut self, k: usize, s: usize, c_in: usize, c_out: usize, hw: usize) -> LayerSpec {
        LayerSpec::conv(self.layers.len(), k, s, k / 2, c_in, c_out, hw).with_shifts(ZOO_SHIFT as i32, 0, ZOO_SHIFT)
    }

    fn last(&self) -> usize {
        self.layers.len() - 1
    }

    fn stem(&mut self) -> (usize, usize) {
        let c = self.conv(7, 2, 3, 64, 224).with_relu();
        self.push(c);
        self.push(LayerSpec::maxpool(0, 3, 2, 1, 64, 112));
        (self.last(), 56)
    }

    fn head(&mut self, c: usize) {
        let (pool, _) = avgpool_to_conv(0, 7, 1, c, 7);
        self.push(pool);
        let fc = LayerSpec::fc(0, c, 1000).with_shifts(ZOO_SHIFT as i32, 0, ZOO_SHIFT);
        self.push(fc);
    }

    /// Two 3x3 convs with an identity or 1x1 projection shortcut.
    fn basic_block(&mut self, input: usize, c_in: usize, c: usize, s: usize, hw: usize) -> usize {
        let shortcut = if s != 1 || c_in != c {
            let sc = self.conv(1, s, c_in, c, hw).with_input(input);
            Some(self.push(sc))
        } else {
            None
        };
        let a = self.conv(3, s, c_in, c, hw).with_relu().with_input(input);
        self.push(a);
        let b = self.conv(3, 1, c, c, hw / s).with_relu().with_residual(shortcut.unwrap_or(input));
        self.push(b)
    }

    /// 1x1 reduce (carrying the stride), 3x3, 1x1 expand.
    fn bottleneck(&mut self, input: usize, c_in: usize, mid: usize, s: usize, hw: usize) -> usize {
        let c_out = 4 * mid;
        let shortcut = if s != 1 || c_in != c_out {
            let sc = self.conv(1, s, c_in, c_out, hw).with_input(input);
            Some(self.push(sc))
        } else {
            None
        };
        let a = self.conv(1, s, c_in, mid, hw).with_relu().with_input(input);
        self.push(a);
        let b = self.conv(3, 1, mid, mid, hw / s).with_relu();
        self.push(b);
        let c = self.conv(1, 1, mid, c_out, hw / s).with_relu().with_residual(shortcut.unwrap_or(input));
        self.push(c)
    }
}

pub fn resnet18() -> ModelGraph {
    let mut b = Builder { layers: Vec::new() };
    let (mut x, mut hw) = b.stem();
    let mut c_in = 64;
    for (stage, c) in [64usize, 128, 256, 512].into_iter().enumerate() {
        for blk in 0..2 {
            let s = if stage > 0 && blk == 0 { 2 } else { 1 };
            x = b.basic_block(x, c_in, c, s, hw);
            hw /= s;
            c_in = c;
        }
    }
    b.head(512);
    ModelGraph::new("resnet18", b.layers).expect("resnet18 is well formed")
}

pub fn resnet50() -> ModelGraph {
    let mut b = Builder { layers: Vec::new() };
    let (mut x, mut hw) = b.stem();
    let mut c_in = 64;
    for (stage, (mid, blocks)) in [(64usize, 3usize), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
        for blk in 0..blocks {
            let s = if stage > 0 && blk == 0 { 2 } else { 1 };
            x = b.bottleneck(x, c_in, mid, s, hw);
            hw /= s;
            c_in = 4 * mid;
        }
    }
    b.head(2048);
    ModelGraph::new("resnet50", b.layers).expect("resnet50 is well formed")
}

/// Looks up a built-in model by name.
pub fn by_name(name: &str) -> Option<ModelGraph> {
    match name {
        "resnet18" => Some(resnet18()),
        "resnet50" => Some(resnet50()),
        "toy" => Some(toy_classifier(0).0),
        _ => None,
    }
}

/// Deterministic random parameters for every weighted layer.
///
/// Pooling layers get their uniform multiplier; conv/fc weights are drawn
/// from `[-12, 12]` and biases from `[-4, 4]`.
pub fn random_params(g: &ModelGraph, seed: u64) -> Vec<Option<LayerParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.layers
        .iter()
        .map(|l| {
            let shape = conv_to_gemm(l).ok()?;
            match l.kind {
                LayerKind::Maxpool => None,
                LayerKind::AvgpoolAsConv => {
                    let q = avgpool_quant(l.k);
                    Some(LayerParams {
                        weights: WeightMatrix::new(1, shape.m, vec![q.q; shape.m], q.shift as i32).ok()?,
                        bias: BiasVector::zeros(1),
                    })
                }
                LayerKind::Conv | LayerKind::Fc => {
                    let data = (0..shape.n * shape.m).map(|_| rng.random_range(-12..=12)).collect();
                    Some(LayerParams {
                        weights: WeightMatrix::new(shape.n, shape.m, data, l.weight_shift).ok()?,
                        bias: BiasVector {
                            values: (0..shape.n).map(|_| rng.random_range(-4..=4)).collect(),
                            shift: l.bias_shift,
                        },
                    })
                }
            }
        })
        .collect()
}

pub const TOY_FEATURES: usize = 16;
pub const TOY_CLASSES: usize = 4;
pub const TOY_SAMPLES_PER_CLASS: usize = 50;

fn hadamard(row: usize, col: usize) -> i32 {
    if (row & col).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Two-layer FC classifier with hand-set ("trained") weights and a balanced
/// labelled set of 200 samples.
///
/// Class prototypes are rows 1..=4 of a 16x16 Hadamard matrix scaled by 40;
/// samples add uniform jitter in `[-15, 15]`. Layer 0 is an identity
/// (64 I >> 6); layer 1 is a matched filter (32 sign(P) >> 8).
pub fn toy_classifier(seed: u64) -> (ModelGraph, Vec<Option<LayerParams>>, Vec<(QTensor, usize)>) {
    let l0 = LayerSpec::fc(0, TOY_FEATURES, TOY_FEATURES).with_shifts(6, 0, 6);
    let l1 = LayerSpec::fc(1, TOY_FEATURES, TOY_CLASSES).with_shifts(0, 0, 8);
    let g = ModelGraph::new("toy", vec![l0, l1]).expect("toy model is well formed");

    let mut ident = vec![0i8; TOY_FEATURES * TOY_FEATURES];
    for i in 0..TOY_FEATURES {
        ident[i * TOY_FEATURES + i] = 64;
    }
    let filter = (0..TOY_CLASSES * TOY_FEATURES)
        .map(|i| (32 * hadamard(i / TOY_FEATURES + 1, i % TOY_FEATURES)) as i8)
        .collect();
    let params = vec![
        Some(LayerParams {
            weights: WeightMatrix::new(TOY_FEATURES, TOY_FEATURES, ident, 6).expect("sized"),
            bias: BiasVector::zeros(TOY_FEATURES),
        }),
        Some(LayerParams {
            weights: WeightMatrix::new(TOY_CLASSES, TOY_FEATURES, filter, 0).expect("sized"),
            bias: BiasVector::zeros(TOY_CLASSES),
        }),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(TOY_CLASSES * TOY_SAMPLES_PER_CLASS);
    for _ in 0..TOY_SAMPLES_PER_CLASS {
        for class in 0..TOY_CLASSES {
            let x = (0..TOY_FEATURES)
                .map(|f| (40 * hadamard(class + 1, f) + rng.random_range(-15..=15)) as i8)
                .collect();
            data.push((QTensor::new(1, 1, TOY_FEATURES, x, 0).expect("sized"), class));
        }
    }
    (g, params, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::run_model;
    use crate::niu::argmax;

    #[test]
    fn resnet_structure() {
        let r18 = resnet18();
        let r50 = resnet50();
        let convs = |g: &ModelGraph| g.layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        // 17 main-path convs + 3 projections; 49 + 4 for ResNet-50.
        assert_eq!(convs(&r18), 20);
        assert_eq!(convs(&r50), 53);
        assert_eq!(r50.layers.last().unwrap().kind, LayerKind::Fc);
        assert_eq!(r50.layers[r50.layers.len() - 2].out_shape().unwrap(), (1, 1, 2048));
    }

    #[test]
    fn resnet_mac_counts() {
        let g18 = resnet18().macs().unwrap() as f64 / 1e9;
        let g50 = resnet50().macs().unwrap() as f64 / 1e9;
        assert!((1.80..1.83).contains(&g18), "resnet18 {g18} GMAC");
        assert!((3.85..3.90).contains(&g50), "resnet50 {g50} GMAC");
    }

    #[test]
    fn toy_classifier_is_accurate_without_noise() {
        let (g, params, data) = toy_classifier(1);
        let correct = data
            .iter()
            .filter(|(x, y)| argmax(run_model(&g, x, &params).unwrap().last().unwrap()) == *y)
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn random_params_cover_weighted_layers() {
        let g = resnet18();
        let p = random_params(&g, 1);
        assert_eq!(p.len(), g.layers.len());
        for (l, p) in g.layers.iter().zip(&p) {
            assert_eq!(p.is_some(), l.kind.has_weights());
        }
    }
}
