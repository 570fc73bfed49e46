//! HBM port bandwidth and ADM command generation.
//!
//! The IM2COL unit never materialises patches in HBM. It turns every output
//! pixel into a bundle of address/length commands (one per kernel row) and
//! zero-fill directives for padding, so the activation buffer receives the
//! patch column directly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{Matrix, QTensor};
use crate::workload::{align_up, conv_to_gemm, LayerKind, LayerSpec, TileSpec, ALIGN_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbmPortConfig {
    pub width_bits: u32,
    pub clock_hz: f64,
    /// Sustained fraction of peak bandwidth.
    pub efficiency: f64,
    /// Fixed system-clock cycles charged per ADM command.
    pub cmd_overhead_cycles: u64,
}

impl Default for HbmPortConfig {
    fn default() -> Self {
        HbmPortConfig {
            width_bits: 256,
            clock_hz: 300e6,
            efficiency: 0.90,
            cmd_overhead_cycles: 4,
        }
    }
}

impl HbmPortConfig {
    pub fn bytes_per_cycle(&self) -> u64 {
        (self.width_bits / 8) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.width_bits, 128 | 256) {
            return Err(Error::InvalidPort(format!("width_bits must be 128 or 256, got {}", self.width_bits)));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidPort(format!("efficiency must be in (0, 1], got {}", self.efficiency)));
        }
        if !(self.clock_hz > 0.0) {
            return Err(Error::InvalidPort("clock_hz must be positive".into()));
        }
        Ok(())
    }
}

/// System-clock cycles to move `bytes` with `n_commands` ADM commands.
pub fn transfer_cycles(bytes: u64, n_commands: u64, port: &HbmPortConfig) -> u64 {
    let beats = bytes.div_ceil(port.bytes_per_cycle());
    // The epsilon keeps exact quotients (e.g. 90 / 0.9) from rounding up.
    let data = if beats == 0 {
        0
    } else {
        (beats as f64 / port.efficiency - 1e-9).ceil() as u64
    };
    data + n_commands * port.cmd_overhead_cycles
}

pub fn weight_load_cycles(tile: &TileSpec, port: &HbmPortConfig) -> u64 {
    transfer_cycles(tile.weight_bytes, u64::from(tile.weight_bytes > 0), port)
}

/// HBM-to-URAM load time of one tile, in seconds.
pub fn weight_load_time(tile: &TileSpec, port: &HbmPortConfig) -> f64 {
    weight_load_cycles(tile, port) as f64 / port.clock_hz
}

/// A single ADM read command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdmCommand {
    pub addr: u64,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanEntry {
    /// Contiguous read of `cmd.len` bytes; the first `keep` land in the buffer.
    Read { cmd: AdmCommand, keep: usize },
    /// Stride-patterned read: `count` chunks of `chunk` bytes every `pitch` bytes.
    Strided {
        cmd: AdmCommand,
        count: usize,
        chunk: usize,
        pitch: usize,
    },
    /// Zeros synthesised in the activation buffer; no HBM traffic.
    ZeroFill { len: usize },
}

impl PlanEntry {
    pub fn command(&self) -> Option<AdmCommand> {
        match *self {
            PlanEntry::Read { cmd, .. } | PlanEntry::Strided { cmd, .. } => Some(cmd),
            PlanEntry::ZeroFill { .. } => None,
        }
    }
}

/// Ordered command/zero-fill stream that fills an im2col matrix column by
/// column (`m` useful bytes per column).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferPlan {
    pub layer_id: usize,
    pub ifm_base: u64,
    pub m: usize,
    pub m_padded: usize,
    pub cols: usize,
    pub entries: Vec<PlanEntry>,
}

impl TransferPlan {
    pub fn commands(&self) -> impl Iterator<Item = AdmCommand> + '_ {
        self.entries.iter().filter_map(PlanEntry::command)
    }

    pub fn n_commands(&self) -> u64 {
        self.commands().count() as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.commands().map(|c| c.len as u64).sum()
    }

    pub fn total_cycles(&self, port: &HbmPortConfig) -> u64 {
        transfer_cycles(self.total_bytes(), self.n_commands(), port)
    }

    /// Debug dump: `addr,len` per command and `zfill,len` per directive.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            match e {
                PlanEntry::Read { cmd, .. } | PlanEntry::Strided { cmd, .. } => {
                    let _ = writeln!(s, "{},{}", cmd.addr, cmd.len);
                }
                PlanEntry::ZeroFill { len } => {
                    let _ = writeln!(s, "zfill,{len}");
                }
            }
        }
        s
    }
}

fn padded_cmd(addr: u64, bytes: usize) -> AdmCommand {
    AdmCommand {
        addr,
        len: align_up(bytes.max(1), ALIGN_BYTES),
    }
}

/// Commands fetching the patch of output pixel (oh, ow).
fn pixel_entries(layer: &LayerSpec, ifm_base: u64, oh: usize, ow: usize, out: &mut Vec<PlanEntry>) {
    let (k, s, p, c) = (layer.k, layer.s, layer.p, layer.c_in);
    let (h, w) = (layer.h_in as isize, layer.w_in as isize);
    let row_bytes = k * c;
    let push_zero = |out: &mut Vec<PlanEntry>, len: usize| {
        if len == 0 {
            return;
        }
        if let Some(PlanEntry::ZeroFill { len: prev }) = out.last_mut() {
            *prev += len;
        } else {
            out.push(PlanEntry::ZeroFill { len });
        }
    };
    for kh in 0..k {
        let ih = (oh * s + kh) as isize - p as isize;
        if ih < 0 || ih >= h {
            push_zero(out, row_bytes);
            continue;
        }
        let iw0 = (ow * s) as isize - p as isize;
        let lo = iw0.max(0);
        let hi = (iw0 + k as isize).min(w);
        if hi <= lo {
            push_zero(out, row_bytes);
            continue;
        }
        let left = (lo - iw0) as usize * c;
        let keep = (hi - lo) as usize * c;
        let right = row_bytes - left - keep;
        push_zero(out, left);
        let addr = ifm_base + ((ih * w + lo) as u64) * c as u64;
        out.push(PlanEntry::Read {
            cmd: padded_cmd(addr, keep),
            keep,
        });
        push_zero(out, right);
    }
}

/// Commands for one output pixel column of a general (non fast-path) conv.
pub fn im2col_column_commands(layer: &LayerSpec, ifm_base: u64, oh: usize, ow: usize) -> Result<TransferPlan> {
    check_im2col_layer(layer)?;
    let shape = conv_to_gemm(layer)?;
    let mut entries = Vec::new();
    pixel_entries(layer, ifm_base, oh, ow, &mut entries);
    Ok(TransferPlan {
        layer_id: layer.id,
        ifm_base,
        m: shape.m,
        m_padded: shape.m_padded,
        cols: 1,
        entries,
    })
}

fn check_im2col_layer(layer: &LayerSpec) -> Result<()> {
    if !matches!(layer.kind, LayerKind::Conv | LayerKind::Fc) {
        return Err(Error::NotIm2col {
            layer: layer.id,
            kind: layer.kind.as_str(),
        });
    }
    if !layer.is_fast_path() && layer.k * layer.c_in < ALIGN_BYTES {
        return Err(Error::BelowMinimumTransfer {
            layer: layer.id,
            bytes: layer.k * layer.c_in,
        });
    }
    Ok(())
}

/// Full activation-fetch plan of a conv/fc layer whose IFM (HWC, rows
/// contiguous) starts at `ifm_base`.
///
/// Fast-path layers (k=1, p=0, s in {1,2}) stream one linear or
/// stride-patterned command per output row. Everything else issues `k`
/// commands per output pixel, clipped at the borders, with zero-fill
/// directives for the padding.
pub fn im2col_commands(layer: &LayerSpec, ifm_base: u64) -> Result<TransferPlan> {
    check_im2col_layer(layer)?;
    let shape = conv_to_gemm(layer)?;
    let (h_out, w_out) = layer.out_dims()?;
    let c = layer.c_in;
    let mut entries = Vec::new();
    if layer.is_fast_path() {
        let s = if layer.kind == LayerKind::Fc { 1 } else { layer.s };
        let w_in = if layer.kind == LayerKind::Fc { 1 } else { layer.w_in };
        for oh in 0..h_out {
            let addr = ifm_base + ((oh * s * w_in) * c) as u64;
            if s == 1 {
                let keep = w_out * c;
                entries.push(PlanEntry::Read {
                    cmd: padded_cmd(addr, keep),
                    keep,
                });
            } else {
                entries.push(PlanEntry::Strided {
                    cmd: padded_cmd(addr, w_out * c),
                    count: w_out,
                    chunk: c,
                    pitch: s * c,
                });
            }
        }
    } else {
        for oh in 0..h_out {
            for ow in 0..w_out {
                pixel_entries(layer, ifm_base, oh, ow, &mut entries);
            }
        }
    }
    Ok(TransferPlan {
        layer_id: layer.id,
        ifm_base,
        m: shape.m,
        m_padded: shape.m_padded,
        cols: shape.p,
        entries,
    })
}

/// Replays a plan against the IFM bytes and returns the matrix the
/// activation buffer would hold.
pub fn reconstruct_matrix(plan: &TransferPlan, ifm: &QTensor) -> Result<Matrix> {
    let mut stream: Vec<i8> = Vec::with_capacity(plan.m * plan.cols);
    let fetch = |addr: u64, len: usize| -> Result<&[i8]> {
        let off = addr
            .checked_sub(plan.ifm_base)
            .ok_or_else(|| Error::DimMismatch(format!("command address {addr} below IFM base")))? as usize;
        ifm.data
            .get(off..off + len)
            .ok_or_else(|| Error::DimMismatch(format!("command {addr}+{len} reads past the IFM")))
    };
    for e in &plan.entries {
        match *e {
            PlanEntry::Read { cmd, keep } => stream.extend_from_slice(fetch(cmd.addr, keep)?),
            PlanEntry::Strided {
                cmd,
                count,
                chunk,
                pitch,
            } => {
                for i in 0..count {
                    stream.extend_from_slice(fetch(cmd.addr + (i * pitch) as u64, chunk)?);
                }
            }
            PlanEntry::ZeroFill { len } => stream.resize(stream.len() + len, 0),
        }
    }
    if stream.len() != plan.m * plan.cols {
        return Err(Error::DimMismatch(format!(
            "plan delivers {} bytes, matrix needs {}",
            stream.len(),
            plan.m * plan.cols
        )));
    }
    let mut out = Matrix::zeros(plan.m_padded, plan.cols);
    for (col, chunk) in stream.chunks(plan.m).enumerate() {
        for (row, &v) in chunk.iter().enumerate() {
            out.set(row, col, v);
        }
    }
    Ok(out)
}
