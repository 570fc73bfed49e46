//! System configuration file, weight blobs and activation dumps.
//!
//! All text formats are JSON. Binary blobs are raw int8 arrays, described by a `manifest.json` next to them.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{BiasVector, LayerParams, QTensor, WeightMatrix};
use crate::hbm::HbmPortConfig;
use crate::niu::NoiseSpec;
use crate::putiming::{PortSet, PuConfig};
use crate::workload::{conv_to_gemm, ModelGraph};

/// A PU type given by preset name (`"pu_1x"`, `"pu_2x"`) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PuRef {
    Preset(String),
    Custom(PuConfig),
}

impl PuRef {
    pub fn resolve(&self) -> Result<PuConfig> {
        match self {
            PuRef::Preset(name) => match name.as_str() {
                "pu_1x" => Ok(PuConfig::pu_1x()),
                "pu_2x" => Ok(PuConfig::pu_2x()),
                other => Err(Error::Config(format!("unknown PU preset `{other}` (expected pu_1x or pu_2x)"))),
            },
            PuRef::Custom(pu) => Ok(pu.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuGroup {
    pub pu: PuRef,
    pub count: usize,
}

/// A noise injection unit takes the slot of one PU instance of this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NiuConfig {
    pub replaces: String,
}

/// Named HBM address range; informational, checked for overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbmRegion {
    pub name: String,
    pub base: u64,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default = "default_pus")]
    pub pus: Vec<PuGroup>,
    #[serde(default)]
    pub io_port: HbmPortConfig,
    #[serde(default)]
    pub params_port: HbmPortConfig,
    #[serde(default)]
    pub hbm_regions: Vec<HbmRegion>,
    #[serde(default)]
    pub niu: Option<NiuConfig>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

fn default_pus() -> Vec<PuGroup> {
    vec![
        PuGroup {
            pu: PuRef::Preset("pu_1x".into()),
            count: 5,
        },
        PuGroup {
            pu: PuRef::Preset("pu_2x".into()),
            count: 5,
        },
    ]
}

impl Default for SystemConfig {
    /// Five PU_1x plus five PU_2x on default ports.
    fn default() -> Self {
        SystemConfig {
            pus: default_pus(),
            io_port: HbmPortConfig::default(),
            params_port: HbmPortConfig::default(),
            hbm_regions: Vec::new(),
            niu: None,
            noise: None,
        }
    }
}

impl SystemConfig {
    pub fn with_efficiency(mut self, eff: f64) -> Self {
        self.io_port.efficiency = eff;
        self.params_port.efficiency = eff;
        self
    }

    pub fn ports(&self) -> PortSet {
        PortSet {
            io: self.io_port,
            params: self.params_port,
        }
    }

    /// Resolved PU types with instance counts after the NIU substitution.
    pub fn instances(&self) -> Result<Vec<(PuConfig, usize)>> {
        let mut out = self
            .pus
            .iter()
            .map(|g| Ok((g.pu.resolve()?, g.count)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(niu) = &self.niu {
            let slot = out
                .iter_mut()
                .find(|(pu, n)| pu.name == niu.replaces && *n > 0)
                .ok_or_else(|| Error::Config(format!("niu.replaces: no `{}` instance to substitute", niu.replaces)))?;
            slot.1 -= 1;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.io_port.validate()?;
        self.params_port.validate()?;
        let inst = self.instances()?;
        for (pu, _) in &inst {
            pu.validate()?;
        }
        if inst.iter().all(|(_, n)| *n == 0) {
            return Err(Error::Config("system has no PU instances".into()));
        }
        let mut regions: Vec<&HbmRegion> = self.hbm_regions.iter().collect();
        regions.sort_by_key(|r| r.base);
        for w in regions.windows(2) {
            if w[0].base + w[0].size > w[1].base {
                return Err(Error::Config(format!("HBM regions `{}` and `{}` overlap", w[0].name, w[1].name)));
            }
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SystemConfig = parse_json("system config", text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Parses JSON, reporting `line L, column C` on failure.
pub fn parse_json<T: DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        // serde_json appends " at line L column C"; keep just the message.
        let msg = msg.split(" at line ").next().unwrap_or(&msg);
        Error::Config(format!("{what}: line {}, column {}: {msg}", e.line(), e.column()))
    })
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let g: ModelGraph = parse_json("model", &text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    g.validate()?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub layer_id: usize,
    pub n: usize,
    pub m: usize,
    pub weight_shift: i32,
    pub bias_shift: u32,
    pub weights_file: String,
    pub bias_file: String,
}

/// Writes `manifest.json` plus one weight and one bias blob per layer.
pub fn save_weights(dir: &Path, params: &[Option<LayerParams>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for (id, p) in params.iter().enumerate() {
        let Some(p) = p else { continue };
        let entry = WeightEntry {
            layer_id: id,
            n: p.weights.n,
            m: p.weights.m,
            weight_shift: p.weights.shift,
            bias_shift: p.bias.shift,
            weights_file: format!("layer{id:03}.w.bin"),
            bias_file: format!("layer{id:03}.b.bin"),
        };
        fs::write(dir.join(&entry.weights_file), p.weights.data.iter().map(|v| *v as u8).collect::<Vec<_>>())?;
        fs::write(dir.join(&entry.bias_file), p.bias.values.iter().map(|v| *v as u8).collect::<Vec<_>>())?;
        manifest.push(entry);
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads blobs written by [`save_weights`] and checks them against `g`.
pub fn load_weights(dir: &Path, g: &ModelGraph) -> Result<Vec<Option<LayerParams>>> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Vec<WeightEntry> = parse_json("weight manifest", &text)?;
    let mut out = vec![None; g.layers.len()];
    for e in manifest {
        let layer = g
            .layers
            .get(e.layer_id)
            .ok_or_else(|| Error::Config(format!("weight manifest names unknown layer {}", e.layer_id)))?;
        let shape = conv_to_gemm(layer)?;
        if (e.n, e.m) != (shape.n, shape.m) {
            return Err(Error::Config(format!(
                "layer {}: manifest is {}x{}, model expects {}x{}",
                e.layer_id, e.n, e.m, shape.n, shape.m
            )));
        }
        let w: Vec<i8> = fs::read(dir.join(&e.weights_file))?.into_iter().map(|b| b as i8).collect();
        let b = fs::read(dir.join(&e.bias_file))?;
        if b.len() != e.n {
            return Err(Error::Config(format!("layer {}: bias blob has {} bytes, want {}", e.layer_id, b.len(), e.n)));
        }
        let values = b.into_iter().map(|v| v as i8).collect();
        out[e.layer_id] = Some(LayerParams {
            weights: WeightMatrix::new(e.n, e.m, w, e.weight_shift)?,
            bias: BiasVector {
                values,
                shift: e.bias_shift,
            },
        });
    }
    for (l, p) in g.layers.iter().zip(&out) {
        if l.kind.has_weights() && p.is_none() {
            return Err(Error::MissingParams(l.id));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub layer: usize,
    pub round: u64,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub shift: i32,
    pub file: String,
}

/// Dumps per-layer activations (HWC int8) of one round and returns the
/// manifest records.
pub fn dump_activations(dir: &Path, round: u64, acts: &[QTensor]) -> Result<Vec<DumpEntry>> {
    fs::create_dir_all(dir)?;
    acts.iter()
        .enumerate()
        .map(|(layer, t)| {
            let file = format!("r{round:04}_l{layer:03}.bin");
            fs::write(dir.join(&file), t.data.iter().map(|v| *v as u8).collect::<Vec<_>>())?;
            Ok(DumpEntry {
                layer,
                round,
                h: t.h,
                w: t.w,
                c: t.c,
                shift: t.shift,
                file,
            })
        })
        .collect()
}
