//! Layer descriptions, GEMM lowering and weight tiling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::putiming::{uram_capacity, PuConfig};

/// Minimum HBM transfer granularity in bytes; also the reduction-length
/// alignment of every GEMM operand.
pub const ALIGN_BYTES: usize = 32;

pub fn align_up(v: usize, align: usize) -> usize {
    v.div_ceil(align) * align
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Fc,
    AvgpoolAsConv,
    /// Max-pool fused into the post-processing block of the producer.
    Maxpool,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
            LayerKind::AvgpoolAsConv => "avgpool_as_conv",
            LayerKind::Maxpool => "maxpool",
        }
    }

    /// Whether the layer owns a weight matrix that must be staged in URAM.
    pub fn has_weights(self) -> bool {
        !matches!(self, LayerKind::Maxpool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    None,
}

/// One layer of a model, in the declarative form read from model files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: usize,
    pub kind: LayerKind,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default = "one")]
    pub s: usize,
    #[serde(default)]
    pub p: usize,
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default = "one")]
    pub h_in: usize,
    #[serde(default = "one")]
    pub w_in: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Layer whose output is added element-wise before the final activation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_source: Option<usize>,
    /// Layer whose output feeds this one. Defaults to the previous layer;
    /// the first layer reads the network input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_source: Option<usize>,
    #[serde(default)]
    pub weight_shift: i32,
    #[serde(default)]
    pub bias_shift: u32,
    #[serde(default)]
    pub output_shift: u32,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(id: usize, k: usize, s: usize, p: usize, c_in: usize, c_out: usize, hw: usize) -> Self {
        LayerSpec {
            id,
            kind: LayerKind::Conv,
            k,
            s,
            p,
            c_in,
            c_out,
            h_in: hw,
            w_in: hw,
            activation: Activation::None,
            residual_source: None,
            input_source: None,
            weight_shift: 0,
            bias_shift: 0,
            output_shift: 0,
        }
    }

    pub fn fc(id: usize, c_in: usize, c_out: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Fc,
            ..LayerSpec::conv(id, 1, 1, 0, c_in, c_out, 1)
        }
    }

    pub fn maxpool(id: usize, k: usize, s: usize, p: usize, c: usize, hw: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Maxpool,
            ..LayerSpec::conv(id, k, s, p, c, c, hw)
        }
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.activation = act;
        self
    }

    pub fn with_relu(self) -> Self {
        self.with_activation(Activation::Relu)
    }

    pub fn with_residual(mut self, src: usize) -> Self {
        self.residual_source = Some(src);
        self
    }

    pub fn with_input(mut self, src: usize) -> Self {
        self.input_source = Some(src);
        self
    }

    pub fn with_shifts(mut self, weight: i32, bias: u32, output: u32) -> Self {
        self.weight_shift = weight;
        self.bias_shift = bias;
        self.output_shift = output;
        self
    }

    /// Effective (k, s, p, h_in, w_in) after normalising FC layers to a 1x1 conv.
    fn geometry(&self) -> (usize, usize, usize, usize, usize) {
        match self.kind {
            LayerKind::Fc => (1, 1, 0, 1, 1),
            _ => (self.k, self.s, self.p, self.h_in, self.w_in),
        }
    }

    pub fn out_dims(&self) -> Result<(usize, usize)> {
        let (k, s, p, h, w) = self.geometry();
        let span = |d: usize| -> Result<usize> {
            if d + 2 * p < k || s == 0 {
                return Err(Error::NonPositiveOutput {
                    layer: self.id,
                    h_in: d,
                    pad: p,
                    k,
                });
            }
            Ok((d + 2 * p - k) / s + 1)
        };
        Ok((span(h)?, span(w)?))
    }

    /// Output tensor shape as (h, w, c).
    pub fn out_shape(&self) -> Result<(usize, usize, usize)> {
        let (h, w) = self.out_dims()?;
        Ok((h, w, self.c_out))
    }

    pub fn in_shape(&self) -> (usize, usize, usize) {
        let (_, _, _, h, w) = self.geometry();
        (h, w, self.c_in)
    }

    /// k=1, p=0, s in {1,2}: fetched by linear or stride-patterned transfers.
    pub fn is_fast_path(&self) -> bool {
        let (k, s, p, _, _) = self.geometry();
        k == 1 && p == 0 && (s == 1 || s == 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidLayer {
                layer: self.id,
                reason: reason.to_string(),
            })
        };
        if self.k == 0 {
            return bad("kernel size must be >= 1");
        }
        if self.s == 0 {
            return bad("stride must be >= 1");
        }
        if self.c_in == 0 || self.c_out == 0 {
            return bad("channel counts must be >= 1");
        }
        if self.h_in == 0 || self.w_in == 0 {
            return bad("input spatial dims must be >= 1");
        }
        if self.kind == LayerKind::Fc && (self.h_in != 1 || self.w_in != 1) {
            return bad("fc layers take a 1x1 input map");
        }
        if matches!(self.kind, LayerKind::AvgpoolAsConv | LayerKind::Maxpool) && self.c_in != self.c_out {
            return bad("pooling layers preserve the channel count");
        }
        self.out_dims()?;
        Ok(())
    }
}

/// GEMM geometry of a lowered layer: an `n x m` weight matrix applied to an
/// `m x p` activation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub n: usize,
    pub m: usize,
    pub m_padded: usize,
    pub p: usize,
}

impl GemmShape {
    pub fn macs(&self) -> u64 {
        (self.n * self.m * self.p) as u64
    }
}

/// Lowers a layer to its GEMM shape.
///
/// Conv: `n = c_out`, `m = k^2 c_in`, `p = h_out w_out`. FC is a 1x1 conv on
/// a 1x1 map. Average pooling runs channel-as-column: a single weight row of
/// `k^2` taps applied to `c * h_out * w_out` columns.
pub fn conv_to_gemm(layer: &LayerSpec) -> Result<GemmShape> {
    layer.validate()?;
    let (h_out, w_out) = layer.out_dims()?;
    let (n, m, p) = match layer.kind {
        LayerKind::Conv => (layer.c_out, layer.k * layer.k * layer.c_in, h_out * w_out),
        LayerKind::Fc => (layer.c_out, layer.c_in, 1),
        LayerKind::AvgpoolAsConv => (1, layer.k * layer.k, layer.c_in * h_out * w_out),
        LayerKind::Maxpool => (0, 0, h_out * w_out * layer.c_in),
    };
    Ok(GemmShape {
        n,
        m,
        m_padded: align_up(m, ALIGN_BYTES),
        p,
    })
}

/// Rounds a layer's input channels up so every pixel is a whole number of
/// 32-byte transfers. Padding channels carry zero activations and weights.
pub fn pad_input_channels(layer: &LayerSpec, align: usize) -> LayerSpec {
    let mut out = layer.clone();
    out.c_in = align_up(layer.c_in, align);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_id: usize,
    pub layer_id: usize,
    pub rows: usize,
    pub uram_entries: u64,
    pub weight_bytes: u64,
}

/// Splits a weight matrix into `R_SA`-row tiles.
///
/// `tile_id`s are numbered from `first_id`; the last tile carries the
/// ragged remainder. Timing treats ragged tiles as full height, byte counts
/// use the true row count.
pub fn tile_layer(layer_id: usize, first_id: usize, shape: &GemmShape, pu: &PuConfig) -> Result<Vec<TileSpec>> {
    if shape.n == 0 {
        return Ok(Vec::new());
    }
    let entries = shape.m_padded.div_ceil(pu.c_sa) as u64;
    let capacity = uram_capacity(pu);
    if entries > capacity {
        return Err(Error::TileTooLarge {
            layer: layer_id,
            entries,
            capacity,
        });
    }
    let count = shape.n.div_ceil(pu.r_sa);
    Ok((0..count)
        .map(|t| {
            let rows = (shape.n - t * pu.r_sa).min(pu.r_sa);
            TileSpec {
                tile_id: first_id + t,
                layer_id,
                rows,
                uram_entries: entries,
                weight_bytes: (rows * shape.m_padded) as u64,
            }
        })
        .collect())
}

/// Ordered list of layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGraph {
    #[serde(default)]
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let g = ModelGraph {
            name: name.into(),
            layers,
        };
        g.validate()?;
        Ok(g)
    }

    /// Id of the layer feeding `idx`, or `None` for the network input.
    pub fn input_of(&self, idx: usize) -> Option<usize> {
        match self.layers[idx].input_source {
            Some(src) => Some(src),
            None if idx == 0 => None,
            None => Some(idx - 1),
        }
    }

    pub fn input_shape(&self) -> Option<(usize, usize, usize)> {
        self.layers.first().map(LayerSpec::in_shape)
    }

    pub fn validate(&self) -> Result<()> {
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.id != idx {
                return Err(Error::InvalidGraph(format!(
                    "layer at position {idx} has id {}; ids must equal list order",
                    layer.id
                )));
            }
            layer.validate()?;
            if let Some(src) = self.input_of(idx) {
                if src >= idx {
                    return Err(Error::InvalidGraph(format!(
                        "layer {idx} reads from layer {src}, which is not earlier"
                    )));
                }
                let produced = self.layers[src].out_shape()?;
                if produced != layer.in_shape() {
                    return Err(Error::InvalidGraph(format!(
                        "layer {idx} expects input {:?} but layer {src} produces {:?}",
                        layer.in_shape(),
                        produced
                    )));
                }
            }
            if let Some(src) = layer.residual_source {
                if src >= idx {
                    return Err(Error::InvalidGraph(format!(
                        "layer {idx} residual source {src} is not an earlier layer"
                    )));
                }
                if self.layers[src].out_shape()? != layer.out_shape()? {
                    return Err(Error::InvalidGraph(format!(
                        "layer {idx} residual source {src} has a different output shape"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> Result<Vec<GemmShape>> {
        self.layers.iter().map(conv_to_gemm).collect()
    }

    /// Multiply-accumulates of one inference, counting true (unpadded) work.
    pub fn macs(&self) -> Result<u64> {
        Ok(self.shapes()?.iter().map(GemmShape::macs).sum())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: ModelGraph = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tiles every weighted layer of a model, numbering tiles in execution order.
pub fn tile_model(graph: &ModelGraph, pu: &PuConfig) -> Result<Vec<TileSpec>> {
    let mut tiles = Vec::new();
    for layer in &graph.layers {
        if !layer.kind.has_weights() {
            continue;
        }
        let shape = conv_to_gemm(layer)?;
        tiles.extend(tile_layer(layer.id, tiles.len(), &shape, pu)?);
    }
    Ok(tiles)
}

/// Uniform pooling weight `q` and right shift with `q / 2^shift ~ 1/k^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolQuant {
    pub q: i8,
    pub shift: u32,
}

impl PoolQuant {
    pub fn rel_error(&self, k: usize) -> f64 {
        let target = 1.0 / (k * k) as f64;
        (self.q as f64 / (1u64 << self.shift) as f64 - target).abs() / target
    }
}

pub const MAX_POOL_SHIFT: u32 = 15;

/// Chooses the pooling multiplier for a `k x k` window.
///
/// Power-of-two windows need only a shift (`q = 1`). Otherwise the largest
/// shift whose rounded multiplier still fits in an int8 weight is used,
/// which minimises the approximation error.
pub fn avgpool_quant(k: usize) -> PoolQuant {
    let area = (k * k) as u64;
    if area.is_power_of_two() {
        return PoolQuant {
            q: 1,
            shift: area.trailing_zeros(),
        };
    }
    let mut best: Option<(f64, PoolQuant)> = None;
    for shift in 0..=MAX_POOL_SHIFT {
        let q = ((1u64 << shift) as f64 / area as f64).round();
        if !(1.0..=127.0).contains(&q) {
            continue;
        }
        let cand = PoolQuant { q: q as i8, shift };
        let err = cand.rel_error(k);
        // `<=` so later (larger) shifts win exact ties.
        if best.is_none_or(|(e, _)| err <= e) {
            best = Some((err, cand));
        }
    }
    // k^2 <= 127 * 2^15 for any window we accept, so a candidate exists.
    best.map(|(_, q)| q).unwrap_or(PoolQuant { q: 1, shift: 0 })
}

/// Rewrites a `k x k` average pool over a `c`-channel map as a conv layer
/// together with its quantised uniform weight.
pub fn avgpool_to_conv(id: usize, k: usize, s: usize, c: usize, hw: usize) -> (LayerSpec, PoolQuant) {
    let quant = avgpool_quant(k);
    let layer = LayerSpec {
        kind: LayerKind::AvgpoolAsConv,
        output_shift: quant.shift,
        ..LayerSpec::conv(id, k, s, 0, c, c, hw)
    };
    (layer, quant)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_resnet_conv_pads_147_to_160() {
        let l = LayerSpec::conv(0, 7, 2, 3, 3, 64, 224);
        let g = conv_to_gemm(&l).unwrap();
        assert_eq!(
            g,
            GemmShape {
                n: 64,
                m: 147,
                m_padded: 160,
                p: 12544
            }
        );
    }

    #[test]
    fn pointwise_and_fc_shapes() {
        let g = conv_to_gemm(&LayerSpec::conv(0, 1, 1, 0, 64, 64, 56)).unwrap();
        assert_eq!((g.n, g.m, g.m_padded, g.p), (64, 64, 64, 3136));
        let g = conv_to_gemm(&LayerSpec::fc(0, 512, 1000)).unwrap();
        assert_eq!((g.n, g.m, g.m_padded, g.p), (1000, 512, 512, 1));
    }

    #[test]
    fn rejects_kernel_larger_than_padded_input() {
        let l = LayerSpec::conv(3, 5, 1, 1, 1, 1, 2);
        assert!(matches!(conv_to_gemm(&l), Err(Error::NonPositiveOutput { layer: 3, .. })));
    }

    #[test]
    fn rejects_zero_fields() {
        assert!(LayerSpec::conv(0, 0, 1, 0, 1, 1, 4).validate().is_err());
        assert!(LayerSpec::conv(0, 1, 1, 0, 0, 1, 4).validate().is_err());
        let mut fc = LayerSpec::fc(0, 4, 4);
        fc.h_in = 2;
        assert!(fc.validate().is_err());
    }

    #[test]
    fn tiling_examples() {
        let pu2 = PuConfig::pu_2x();
        let pu1 = PuConfig::pu_1x();
        let s = GemmShape { n: 256, m: 1152, m_padded: 1152, p: 1 };
        let t = tile_layer(0, 0, &s, &pu2).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|t| t.uram_entries == 144 && t.rows == 64));

        let s = GemmShape { n: 64, m: 147, m_padded: 160, p: 1 };
        let t = tile_layer(0, 0, &s, &pu2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].uram_entries, 20);
        assert_eq!(t[0].weight_bytes, 10240);

        let s = GemmShape { n: 1000, m: 512, m_padded: 512, p: 1 };
        let t = tile_layer(7, 10, &s, &pu1).unwrap();
        assert_eq!(t.len(), 16);
        assert!(t[..15].iter().all(|t| t.rows == 64));
        assert_eq!(t[15].rows, 40);
        assert!(t.iter().all(|t| t.uram_entries == 128 && t.layer_id == 7));
        assert_eq!(t[0].tile_id, 10);
        assert_eq!(t.iter().map(|t| t.rows).sum::<usize>(), 1000);
    }

    #[test]
    fn tile_exceeding_uram_is_rejected() {
        let pu = PuConfig::pu_2x();
        let s = GemmShape { n: 64, m: 40000, m_padded: 40000, p: 1 };
        assert!(matches!(tile_layer(2, 0, &s, &pu), Err(Error::TileTooLarge { layer: 2, .. })));
    }

    #[test]
    fn avgpool_quantisation() {
        assert_eq!(avgpool_quant(7), PoolQuant { q: 84, shift: 12 });
        assert_eq!(avgpool_quant(2), PoolQuant { q: 1, shift: 2 });
        assert_eq!(avgpool_quant(4), PoolQuant { q: 1, shift: 4 });
        assert_eq!(avgpool_quant(4).rel_error(4), 0.0);
        let (l, q) = avgpool_to_conv(5, 7, 1, 2048, 7);
        assert_eq!(l.output_shift, q.shift);
        assert_eq!(l.out_shape().unwrap(), (1, 1, 2048));
    }

    /// Exhaustive scan over every int8 multiplier and shift: nothing beats
    /// the chosen pair.
    #[test]
    fn avgpool_quant_is_error_minimal() {
        for k in 2..=9usize {
            let chosen = avgpool_quant(k).rel_error(k);
            for shift in 0..=MAX_POOL_SHIFT {
                for q in 1..=127i8 {
                    let e = PoolQuant { q, shift }.rel_error(k);
                    assert!(chosen <= e + 1e-15, "k={k}: q={q} shift={shift} beats the choice");
                }
            }
        }
    }

    #[test]
    fn graph_validation_catches_broken_chain() {
        let a = LayerSpec::conv(0, 3, 1, 1, 3, 8, 8);
        let b = LayerSpec::conv(1, 3, 1, 1, 4, 8, 8);
        assert!(ModelGraph::new("bad", vec![a.clone(), b]).is_err());
        let b = LayerSpec::conv(1, 3, 1, 1, 8, 8, 8).with_residual(0);
        assert!(ModelGraph::new("ok", vec![a.clone(), b]).is_ok());
        let b = LayerSpec::conv(1, 3, 2, 1, 8, 8, 8).with_residual(0);
        assert!(ModelGraph::new("shape", vec![a, b]).is_err());
    }

    #[test]
    fn json_field_names_round_trip() {
        let text = r#"{"name":"t","layers":[
            {"id":0,"kind":"conv","k":3,"s":1,"p":1,"c_in":4,"c_out":8,"h_in":6,"w_in":6,"activation":"relu",
             "weight_shift":2,"bias_shift":1,"output_shift":5},
            {"id":1,"kind":"fc","c_in":288,"c_out":10}]}"#;
        assert!(ModelGraph::from_json(text).is_err());
        let text = text.replace("\"c_in\":288", "\"c_in\":8").replace(
            "{\"id\":1",
            "{\"id\":1,\"kind\":\"avgpool_as_conv\",\"k\":6,\"c_in\":8,\"c_out\":8,\"h_in\":6,\"w_in\":6},{\"id\":2",
        );
        let g = ModelGraph::from_json(&text).unwrap();
        assert_eq!(g.layers.len(), 3);
        assert_eq!(g.layers[0].activation, Activation::Relu);
        let back = ModelGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
