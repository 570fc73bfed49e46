//! Cycle model of a single processing unit.
//!
//! All `*_cycles` values are fast-clock cycles unless the name says
//! otherwise. HBM port times are converted from the system clock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hbm::{im2col_commands, transfer_cycles, HbmPortConfig};
use crate::scheduler::SchedulePlan;
use crate::workload::{conv_to_gemm, pad_input_channels, GemmShape, LayerKind, LayerSpec, ModelGraph, ALIGN_BYTES};

/// Systolic-array geometry, clocks and URAM geometry of one PU type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuConfig {
    pub name: String,
    pub r_sa: usize,
    pub c_sa: usize,
    /// Bytes per output chunk of one row-block.
    pub r_g: usize,
    pub f_fast: f64,
    pub f_sys: f64,
    pub uram_blocks: usize,
    /// Entries per URAM block (72-bit words).
    pub uram_depth: u64,
    /// 2 when each URAM word holds two narrow weight entries.
    pub sub_regions: u64,
    /// Pipeline fill; `None` means `r_sa + c_sa + 16`.
    #[serde(default)]
    pub fill_cycles: Option<u64>,
}

impl PuConfig {
    /// 64x8 array, one URAM region per block.
    pub fn pu_2x() -> Self {
        PuConfig {
            name: "pu_2x".into(),
            r_sa: 64,
            c_sa: 8,
            r_g: 8,
            f_fast: 600e6,
            f_sys: 300e6,
            uram_blocks: 64,
            uram_depth: 4096,
            sub_regions: 1,
            fill_cycles: None,
        }
    }

    /// 64x4 array; each URAM is split into two 32-bit sub-regions.
    pub fn pu_1x() -> Self {
        PuConfig {
            name: "pu_1x".into(),
            c_sa: 4,
            sub_regions: 2,
            ..PuConfig::pu_2x()
        }
    }

    pub fn fill(&self) -> u64 {
        self.fill_cycles.unwrap_or((self.r_sa + self.c_sa + 16) as u64)
    }

    /// Fast-clock cycles per system-clock cycle.
    pub fn clock_ratio(&self) -> f64 {
        self.f_fast / self.f_sys
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPu(format!("{}: {m}", self.name)));
        if self.r_sa == 0 || self.c_sa == 0 || self.r_g == 0 {
            return bad("r_sa, c_sa and r_g must be positive".into());
        }
        if self.r_sa % self.r_g != 0 {
            return bad(format!("r_sa={} is not a multiple of r_g={}", self.r_sa, self.r_g));
        }
        if !(self.f_sys > 0.0) || (self.f_fast - 2.0 * self.f_sys).abs() > 1e-6 * self.f_fast {
            return bad("the fast clock must run at exactly twice the system clock".into());
        }
        if !matches!(self.sub_regions, 1 | 2) {
            return bad("sub_regions must be 1 or 2".into());
        }
        if self.uram_blocks < self.r_sa {
            return bad(format!("{} URAM blocks cannot feed {} rows", self.uram_blocks, self.r_sa));
        }
        Ok(())
    }
}

/// URAM column entries available to weight tiles.
pub fn uram_capacity(pu: &PuConfig) -> u64 {
    pu.uram_depth * pu.sub_regions
}

/// Accumulation rounds per wave, `ceil(m_padded / c_sa)`.
pub fn rounds(shape: &GemmShape, pu: &PuConfig) -> u64 {
    shape.m_padded.div_ceil(pu.c_sa) as u64
}

pub fn row_tiles(shape: &GemmShape, pu: &PuConfig) -> u64 {
    shape.n.div_ceil(pu.r_sa) as u64
}

fn steady_compute(shape: &GemmShape, pu: &PuConfig) -> u64 {
    shape.p as u64 * row_tiles(shape, pu) * rounds(shape, pu)
}

/// `p * ceil(n / r_sa) * ceil(m_padded / c_sa) + fill`.
pub fn compute_cycles(shape: &GemmShape, pu: &PuConfig) -> u64 {
    steady_compute(shape, pu) + pu.fill()
}

/// The reorder buffer keeps up iff `r_g >= r_sa / rounds`.
pub fn wrb_ok(shape: &GemmShape, pu: &PuConfig) -> bool {
    pu.r_g as u64 * rounds(shape, pu) >= pu.r_sa as u64
}

/// Cycles to drain all waves through the reorder buffer.
pub fn output_cycles(shape: &GemmShape, pu: &PuConfig) -> u64 {
    let drain_interval = (pu.r_sa / pu.r_g) as u64;
    shape.p as u64 * row_tiles(shape, pu) * rounds(shape, pu).max(drain_interval)
}

/// Peak tera-operations per second (one MAC = two ops).
pub fn pu_tops(pu: &PuConfig) -> f64 {
    2.0 * pu.r_sa as f64 * pu.c_sa as f64 * pu.f_fast / 1e12
}

/// The two HBM ports of a PU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PortSet {
    /// Activations in and results out.
    pub io: HbmPortConfig,
    /// Weights, biases and residual inputs.
    pub params: HbmPortConfig,
}

/// How the first layer's activations reach the PU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayerMode {
    /// The host builds the im2col matrix (patches padded to 32 bytes).
    #[default]
    Host,
    /// The IM2COL unit fetches patches; input channels are padded so each
    /// pixel is a whole number of 32-byte transfers.
    Fpga,
}

impl std::str::FromStr for FirstLayerMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "host" => Ok(FirstLayerMode::Host),
            "fpga" => Ok(FirstLayerMode::Fpga),
            other => Err(format!("unknown first-layer mode `{other}` (expected host or fpga)")),
        }
    }
}

/// Where a layer's input activations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPath {
    /// Linear read of a host-prepared im2col matrix.
    HostMatrix,
    /// IM2COL command bundles (or the linear/strided fast path).
    Im2col,
    /// Whole-tensor linear read (pooling layers).
    Tensor,
}

/// A layer after lowering decisions have been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredLayer {
    pub spec: LayerSpec,
    pub shape: GemmShape,
    pub path: InputPath,
}

/// Lowers every layer, applying the first-layer mode to layer 0.
pub fn lower_model(graph: &ModelGraph, mode: FirstLayerMode) -> Result<Vec<LoweredLayer>> {
    graph
        .layers
        .iter()
        .enumerate()
        .map(|(idx, layer)| {
            let (spec, path) = match layer.kind {
                LayerKind::AvgpoolAsConv | LayerKind::Maxpool => (layer.clone(), InputPath::Tensor),
                _ if idx == 0 && mode == FirstLayerMode::Host && !layer.is_fast_path() => {
                    (layer.clone(), InputPath::HostMatrix)
                }
                _ if !layer.is_fast_path() && layer.k * layer.c_in < ALIGN_BYTES => {
                    (pad_input_channels(layer, ALIGN_BYTES), InputPath::Im2col)
                }
                _ => (layer.clone(), InputPath::Im2col),
            };
            let shape = conv_to_gemm(&spec)?;
            Ok(LoweredLayer { spec, shape, path })
        })
        .collect()
}

/// (bytes, commands) read on the I/O port for a layer's input.
pub fn input_traffic(layer: &LoweredLayer) -> Result<(u64, u64)> {
    let (h_out, _) = layer.spec.out_dims()?;
    Ok(match layer.path {
        InputPath::HostMatrix => ((layer.shape.p * layer.shape.m_padded) as u64, h_out as u64),
        InputPath::Tensor => {
            let (h, w, c) = layer.spec.in_shape();
            ((h * w * c) as u64, h as u64)
        }
        InputPath::Im2col => {
            let plan = im2col_commands(&layer.spec, 0)?;
            (plan.total_bytes(), plan.n_commands())
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    Input,
    Output,
    Params,
}

impl Bound {
    pub fn as_str(self) -> &'static str {
        match self {
            Bound::Compute => "compute",
            Bound::Input => "input",
            Bound::Output => "output",
            Bound::Params => "params",
        }
    }
}

/// Steady-state timing of one layer with all of its tiles resident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub layer_id: usize,
    pub kind: LayerKind,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// SA cycles excluding pipeline fill.
    pub compute_cycles: u64,
    /// I/O port reads.
    pub input_cycles: u64,
    /// Reorder-buffer drain or I/O port writes, whichever is longer.
    pub output_cycles: u64,
    /// Params-port time to stream every tile once (overlap is the scheduler's job).
    pub weight_cycles: u64,
    pub residual_cycles: u64,
    pub fill_cycles: u64,
    pub latency_cycles: u64,
    pub latency_s: f64,
    pub bound: Bound,
}

fn to_fast(sys_cycles: u64, pu: &PuConfig) -> u64 {
    (sys_cycles as f64 * pu.clock_ratio()).ceil() as u64
}

/// Steady-state latency of a lowered layer.
///
/// Input and output writes share the I/O port, so their times add; the
/// latency is the slowest of SA compute, reorder-buffer drain, I/O port and
/// residual fetch, plus pipeline fill.
pub fn layer_latency(layer: &LoweredLayer, pu: &PuConfig, ports: &PortSet) -> Result<LayerTiming> {
    let spec = &layer.spec;
    let shape = &layer.shape;
    let base = LayerTiming {
        layer_id: spec.id,
        kind: spec.kind,
        n: shape.n,
        m: shape.m,
        p: shape.p,
        compute_cycles: 0,
        input_cycles: 0,
        output_cycles: 0,
        weight_cycles: 0,
        residual_cycles: 0,
        fill_cycles: 0,
        latency_cycles: 0,
        latency_s: 0.0,
        bound: Bound::Compute,
    };
    // Fused into the producer's post-processing.
    if spec.kind == LayerKind::Maxpool || shape.p == 0 {
        let fill = if spec.kind == LayerKind::Maxpool { 0 } else { pu.fill() };
        return Ok(LayerTiming {
            fill_cycles: fill,
            latency_cycles: fill,
            latency_s: fill as f64 / pu.f_fast,
            ..base
        });
    }
    let (h_out, w_out, c_out) = spec.out_shape()?;
    let out_bytes = (h_out * w_out * c_out) as u64;

    let compute = steady_compute(shape, pu);
    let drain = output_cycles(shape, pu);
    let (in_bytes, in_cmds) = input_traffic(layer)?;
    let input = to_fast(transfer_cycles(in_bytes, in_cmds, &ports.io), pu);
    let write = to_fast(transfer_cycles(out_bytes, h_out as u64, &ports.io), pu);
    let residual = if spec.residual_source.is_some() {
        to_fast(transfer_cycles(out_bytes, h_out as u64, &ports.params), pu)
    } else {
        0
    };
    let tiles = row_tiles(shape, pu);
    let weight_bytes = (shape.n * shape.m_padded) as u64;
    let weight = to_fast(transfer_cycles(weight_bytes, tiles, &ports.params), pu);

    let io = input + write;
    let io_bound = if input >= write { Bound::Input } else { Bound::Output };
    let mut bound = (Bound::Compute, compute);
    for cand in [(Bound::Output, drain), (io_bound, io), (Bound::Params, residual)] {
        if cand.1 > bound.1 {
            bound = cand;
        }
    }
    let fill = pu.fill();
    let latency_cycles = bound.1 + fill;
    Ok(LayerTiming {
        compute_cycles: compute,
        input_cycles: input,
        output_cycles: drain.max(write),
        weight_cycles: weight,
        residual_cycles: residual,
        fill_cycles: fill,
        latency_cycles,
        latency_s: latency_cycles as f64 / pu.f_fast,
        bound: bound.0,
        ..base
    })
}

/// Per-layer timings plus weight-loading stalls of one inference pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTiming {
    pub layers: Vec<LayerTiming>,
    pub compute_s: f64,
    pub stall_s: f64,
    pub latency_s: f64,
}

/// Sum of steady-state layer latencies and the plan's stalls.
pub fn model_latency(layers: &[LoweredLayer], pu: &PuConfig, ports: &PortSet, plan: &SchedulePlan) -> Result<ModelTiming> {
    let timings = layers
        .iter()
        .map(|l| layer_latency(l, pu, ports))
        .collect::<Result<Vec<_>>>()?;
    let compute_s: f64 = timings.iter().map(|t| t.latency_s).sum();
    let stall_s = plan.total_stall();
    Ok(ModelTiming {
        layers: timings,
        compute_s,
        stall_s,
        latency_s: compute_s + stall_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::LayerSpec;

    fn no_fill(mut pu: PuConfig) -> PuConfig {
        pu.fill_cycles = Some(0);
        pu
    }

    #[test]
    fn uram_capacity_examples() {
        assert_eq!(uram_capacity(&PuConfig::pu_2x()), 4096);
        assert_eq!(uram_capacity(&PuConfig::pu_1x()), 8192);
        let empty = PuConfig {
            uram_depth: 0,
            ..PuConfig::pu_2x()
        };
        assert_eq!(uram_capacity(&empty), 0);
    }

    #[test]
    fn compute_cycle_examples() {
        let pu = no_fill(PuConfig::pu_2x());
        let s = GemmShape { n: 64, m: 64, m_padded: 64, p: 3136 };
        assert_eq!(compute_cycles(&s, &pu), 25088);
        let s = GemmShape { n: 128, m: 576, m_padded: 576, p: 3136 };
        assert_eq!(compute_cycles(&s, &pu), 451_584);
        let s = GemmShape { n: 128, m: 576, m_padded: 576, p: 0 };
        assert_eq!(compute_cycles(&s, &PuConfig::pu_2x()), PuConfig::pu_2x().fill());
    }

    #[test]
    fn wrb_condition() {
        let pu = PuConfig::pu_2x();
        let s = |m| GemmShape { n: 64, m, m_padded: m, p: 10 };
        assert!(wrb_ok(&s(64), &pu));
        assert!(!wrb_ok(&s(32), &pu));
        assert!(wrb_ok(&s(1152), &pu));
        assert_eq!(output_cycles(&s(32), &pu), 10 * 8);
        assert_eq!(output_cycles(&s(1152), &pu), 10 * 144);
    }

    #[test]
    fn tops() {
        assert!((pu_tops(&PuConfig::pu_2x()) - 0.6144).abs() < 1e-12);
        assert!((pu_tops(&PuConfig::pu_1x()) - 0.3072).abs() < 1e-12);
        let sys = 5.0 * pu_tops(&PuConfig::pu_2x()) + 5.0 * pu_tops(&PuConfig::pu_1x());
        assert!((sys - 4.608).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PuConfig::pu_2x().validate().is_ok());
        assert!(PuConfig::pu_1x().validate().is_ok());
        let bad = PuConfig {
            r_g: 7,
            ..PuConfig::pu_2x()
        };
        assert!(bad.validate().is_err());
        let bad = PuConfig {
            f_fast: 500e6,
            ..PuConfig::pu_2x()
        };
        assert!(bad.validate().is_err());
    }

    fn lowered(spec: LayerSpec) -> LoweredLayer {
        let g = ModelGraph {
            name: String::new(),
            layers: vec![spec],
        };
        lower_model(&g, FirstLayerMode::Fpga).unwrap().remove(0)
    }

    #[test]
    fn resnet50_3x3_conv_is_compute_bound() {
        let pu = PuConfig::pu_2x();
        let l = lowered(LayerSpec::conv(0, 3, 1, 1, 64, 64, 56));
        let t = layer_latency(&l, &pu, &PortSet::default()).unwrap();
        assert_eq!(t.compute_cycles, 225_792);
        assert_eq!(t.bound, Bound::Compute);
        assert_eq!(t.latency_cycles, t.compute_cycles + t.fill_cycles);
        assert!((t.latency_s - (225_792 + pu.fill()) as f64 / 600e6).abs() < 1e-15);
        assert!((225_792.0_f64 / 600e6 - 376.32e-6).abs() < 1e-9);
    }

    #[test]
    fn halving_columns_doubles_compute_bound_latency() {
        let l = lowered(LayerSpec::conv(0, 3, 1, 1, 128, 128, 28));
        let t2 = layer_latency(&l, &PuConfig::pu_2x(), &PortSet::default()).unwrap();
        let t1 = layer_latency(&l, &PuConfig::pu_1x(), &PortSet::default()).unwrap();
        assert_eq!(t1.compute_cycles, 2 * t2.compute_cycles);
        let ratio = t1.latency_s / t2.latency_s;
        assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn zero_columns_cost_fill_only() {
        let pu = PuConfig::pu_2x();
        let l = LoweredLayer {
            spec: LayerSpec::conv(0, 1, 1, 0, 64, 64, 1),
            shape: GemmShape { n: 64, m: 64, m_padded: 64, p: 0 },
            path: InputPath::Im2col,
        };
        let t = layer_latency(&l, &pu, &PortSet::default()).unwrap();
        assert_eq!(t.latency_cycles, pu.fill());
    }

    #[test]
    fn maxpool_is_free() {
        let l = lowered(LayerSpec::maxpool(0, 3, 2, 1, 64, 112));
        let t = layer_latency(&l, &PuConfig::pu_2x(), &PortSet::default()).unwrap();
        assert_eq!(t.latency_s, 0.0);
    }

    #[test]
    fn first_layer_modes() {
        let g = ModelGraph::new("stem", vec![LayerSpec::conv(0, 7, 2, 3, 3, 64, 224)]).unwrap();
        let host = lower_model(&g, FirstLayerMode::Host).unwrap();
        assert_eq!(host[0].path, InputPath::HostMatrix);
        assert_eq!(host[0].shape.m_padded, 160);
        let fpga = lower_model(&g, FirstLayerMode::Fpga).unwrap();
        assert_eq!(fpga[0].spec.c_in, 32);
        assert_eq!(fpga[0].shape.m_padded, 49 * 32);
        let pu = PuConfig::pu_2x();
        let th = layer_latency(&host[0], &pu, &PortSet::default()).unwrap();
        let tf = layer_latency(&fpga[0], &pu, &PortSet::default()).unwrap();
        assert!(tf.latency_s > 5.0 * th.latency_s);
        assert_eq!(th.bound, Bound::Compute);
    }

    #[test]
    fn drain_bound_layer() {
        // m_padded = 32 on PU_2x: 4 rounds < 8-cycle drain interval.
        let l = lowered(LayerSpec::conv(0, 1, 1, 0, 32, 64, 8));
        let t = layer_latency(&l, &PuConfig::pu_2x(), &PortSet::default()).unwrap();
        assert!(t.output_cycles > t.compute_cycles);
        assert_ne!(t.bound, Bound::Compute);
    }
}
