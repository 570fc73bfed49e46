//! Noise injection unit: re-perturbs the weights of selected layers every
//! inference round, emulating analog in-memory-computing device variation.
//!
//! Noiseless weights live in a read-only region. Each round, target layers
//! are read from it, perturbed and written to the working region the PU
//! executes from; every other layer is restored to its noiseless copy.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{run_model, LayerParams, QTensor, WeightMatrix};
use crate::workload::ModelGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    AdditiveGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub model: NoiseModel,
    /// Standard deviation relative to the layer's max |weight|.
    pub sigma_rel: f64,
    #[serde(default)]
    pub seed: u64,
    pub target_layers: BTreeSet<usize>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_rel >= 0.0) || !self.sigma_rel.is_finite() {
            return Err(Error::Config(format!("sigma_rel must be finite and >= 0, got {}", self.sigma_rel)));
        }
        Ok(())
    }
}

fn row_rng(seed: u64, layer: usize, round: u64, row: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(layer as u64).to_le_bytes());
    key[16..24].copy_from_slice(&round.to_le_bytes());
    key[24..].copy_from_slice(&(row as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Perturbs `w` with fresh Gaussian noise for `(spec.seed, layer, round)`.
///
/// Each weight row draws from its own counter-keyed stream, so results do
/// not depend on evaluation order. Values are rounded to nearest and
/// clamped to int8.
pub fn inject_noise(w: &WeightMatrix, spec: &NoiseSpec, layer: usize, round: u64) -> WeightMatrix {
    let max_abs = w.data.iter().map(|v| (*v as i32).abs()).max().unwrap_or(0) as f64;
    let sigma = spec.sigma_rel * max_abs;
    if sigma == 0.0 {
        return w.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut data = Vec::with_capacity(w.data.len());
    for r in 0..w.n {
        let mut rng = row_rng(spec.seed, layer, round, r);
        for &v in &w.data[r * w.m..(r + 1) * w.m] {
            let noisy = (v as f64 + normal.sample(&mut rng)).round();
            data.push(noisy.clamp(i8::MIN as f64, i8::MAX as f64) as i8);
        }
    }
    WeightMatrix { data, ..w.clone() }
}

/// Noiseless and working copies of every layer's parameters.
#[derive(Debug, Clone)]
pub struct WeightStore {
    noiseless: BTreeMap<usize, LayerParams>,
    working: BTreeMap<usize, LayerParams>,
}

impl WeightStore {
    pub fn new(params: &[Option<LayerParams>]) -> Self {
        let noiseless: BTreeMap<usize, LayerParams> = params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.clone().map(|p| (i, p)))
            .collect();
        WeightStore {
            working: noiseless.clone(),
            noiseless,
        }
    }

    pub fn noiseless(&self, layer: usize) -> Option<&LayerParams> {
        self.noiseless.get(&layer)
    }

    pub fn working(&self, layer: usize) -> Option<&LayerParams> {
        self.working.get(&layer)
    }

    /// Stable digest of the noiseless region.
    pub fn noiseless_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (id, p) in &self.noiseless {
            id.hash(&mut h);
            p.weights.data.hash(&mut h);
            p.weights.shift.hash(&mut h);
            p.bias.values.hash(&mut h);
            p.bias.shift.hash(&mut h);
        }
        h.finish()
    }

    fn working_params(&self, n_layers: usize) -> Vec<Option<LayerParams>> {
        (0..n_layers).map(|i| self.working.get(&i).cloned()).collect()
    }

    /// Refreshes the working region for one round and returns the NIU's
    /// HBM traffic (bytes read + bytes written).
    pub fn refresh(&mut self, spec: &NoiseSpec, round: u64) -> NiuTraffic {
        let mut traffic = NiuTraffic::default();
        for (&id, clean) in &self.noiseless {
            let slot = self.working.get_mut(&id).expect("working mirrors noiseless");
            if spec.target_layers.contains(&id) {
                let bytes = clean.weights.data.len() as u64;
                traffic.read_bytes += bytes;
                traffic.write_bytes += bytes;
                slot.weights = inject_noise(&clean.weights, spec, id, round);
            } else if slot.weights != clean.weights {
                slot.weights = clean.weights.clone();
            }
        }
        traffic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NiuTraffic {
    pub read_bytes: u64,
    pub write_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub round: u64,
    /// Every layer's output activations.
    pub activations: Vec<QTensor>,
    pub traffic: NiuTraffic,
}

impl RoundOutput {
    pub fn logits(&self) -> Option<&QTensor> {
        self.activations.last()
    }
}

/// One inference round with freshly injected noise on the target layers.
pub fn emulate_round(g: &ModelGraph, x: &QTensor, store: &mut WeightStore, spec: &NoiseSpec, round: u64) -> Result<RoundOutput> {
    spec.validate()?;
    let traffic = store.refresh(spec, round);
    let activations = run_model(g, x, &store.working_params(g.layers.len()))?;
    Ok(RoundOutput {
        round,
        activations,
        traffic,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(t: &QTensor) -> usize {
    let mut best = 0;
    for (i, &v) in t.data.iter().enumerate() {
        if v > t.data[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub per_round: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AccuracyStats {
    fn from_rounds(per_round: Vec<f64>) -> Self {
        let n = per_round.len() as f64;
        let mean = per_round.iter().sum::<f64>() / n;
        let var = if per_round.len() > 1 {
            per_round.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        AccuracyStats {
            per_round,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Top-1 accuracy over `rounds` noise instances.
pub fn accuracy_eval(
    g: &ModelGraph,
    dataset: &[(QTensor, usize)],
    store: &mut WeightStore,
    spec: &NoiseSpec,
    rounds: u64,
) -> Result<AccuracyStats> {
    if rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    spec.validate()?;
    let mut per_round = Vec::with_capacity(rounds as usize);
    for round in 0..rounds {
        store.refresh(spec, round);
        let params = store.working_params(g.layers.len());
        let mut correct = 0usize;
        for (x, label) in dataset {
            let outs = run_model(g, x, &params)?;
            let logits = outs.last().ok_or_else(|| Error::InvalidGraph("empty model".into()))?;
            if argmax(logits) == *label {
                correct += 1;
            }
        }
        per_round.push(correct as f64 / dataset.len() as f64);
    }
    Ok(AccuracyStats::from_rounds(per_round))
}
