//! `pusim` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 verification
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{dump_activations, load_model, load_weights, SystemConfig};
use crate::error::{Error, Result};
use crate::functional::{run_model, LayerParams, QTensor};
use crate::niu::{accuracy_eval, argmax, emulate_round, NoiseModel, NoiseSpec, WeightStore};
use crate::putiming::{uram_capacity, FirstLayerMode};
use crate::scheduler::{plan_csv, ratios};
use crate::system::{simulate, simulate_pu};
use crate::verify::{verify_all, DEFAULT_SEED};
use crate::workload::ModelGraph;
use crate::zoo;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_VERIFY: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "pusim", version, about = "Multi-PU systolic-array accelerator simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// System config (JSON). Defaults to 5x pu_1x + 5x pu_2x.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Model JSON path, or one of resnet18, resnet50, toy.
    #[arg(long, default_value = "resnet50")]
    pub model: String,
    /// How the first layer's activations reach the PU.
    #[arg(long, default_value = "host")]
    pub first_layer: FirstLayerMode,
    /// Output directory for reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-PU latency and system throughput.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Measured wall power, for FPS/W.
        #[arg(long)]
        power_watts: Option<f64>,
    },
    /// Baseline and adaptive weight-load plans per PU type.
    Schedule {
        #[command(flatten)]
        common: Common,
    },
    /// Time and memory ratios of the adaptive plan per PU type.
    Ratios {
        #[command(flatten)]
        common: Common,
    },
    /// Oracle-equivalence suites.
    Verify {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Noise-injection accuracy emulation.
    Emulate {
        #[command(flatten)]
        common: Common,
        /// Weight blob directory (manifest.json); random weights otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Overrides the noise seed from the system config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides sigma_rel from the system config.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 20)]
        rounds: u64,
    },
}

/// Parses `args` and runs; the returned code is the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn system(common: &Common) -> Result<SystemConfig> {
    match &common.system {
        Some(p) => SystemConfig::load(p),
        None => Ok(SystemConfig::default()),
    }
}

/// Built-in name or JSON path.
pub fn resolve_model(name: &str) -> Result<ModelGraph> {
    match zoo::by_name(name) {
        Some(g) => Ok(g),
        None => load_model(Path::new(name)),
    }
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<u8> {
    match cli.command {
        Command::Simulate { common, power_watts } => {
            let cfg = system(&common)?;
            let g = resolve_model(&common.model)?;
            let report = simulate(&g, &cfg, common.first_layer, power_watts)?;
            let summary = report.summary_json()?;
            writeln!(stdout, "{summary}")?;
            if let Some(dir) = &common.out {
                write_out(dir, "summary.json", &summary)?;
                for r in &report.pus {
                    let csv = report.layer_csv(&r.pu).expect("report has this PU");
                    write_out(dir, &format!("layers_{}.csv", r.pu), &csv)?;
                }
            }
        }
        Command::Schedule { common } => schedule(&common, stdout, true)?,
        Command::Ratios { common } => schedule(&common, stdout, false)?,
        Command::Verify { seed } => {
            let report = verify_all(seed);
            write!(stdout, "{}", report.matrix())?;
            if !report.passed() {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Emulate {
            common,
            weights,
            seed,
            sigma,
            rounds,
        } => emulate(&common, weights.as_deref(), seed, sigma, rounds, stdout)?,
    }
    Ok(EXIT_OK)
}

fn schedule(common: &Common, stdout: &mut dyn Write, plans: bool) -> Result<()> {
    let cfg = system(common)?;
    let g = resolve_model(&common.model)?;
    let ports = cfg.ports();
    for (pu, count) in cfg.instances()? {
        if count == 0 {
            continue;
        }
        let run = simulate_pu(&g, &pu, &ports, common.first_layer)?;
        let ratio_csv = ratios(&run.tasks, &run.adaptive, uram_capacity(&pu)).to_csv();
        writeln!(
            stdout,
            "{}: {} tiles, stall baseline {:.3} us, adaptive {:.3} us",
            pu.name,
            run.tasks.len(),
            run.baseline.total_stall() * 1e6,
            run.adaptive.total_stall() * 1e6
        )?;
        if let Some(dir) = &common.out {
            write_out(dir, &format!("ratios_{}.csv", pu.name), &ratio_csv)?;
            if plans {
                write_out(dir, &format!("plan_baseline_{}.csv", pu.name), &plan_csv(&run.tasks, &run.baseline))?;
                write_out(dir, &format!("plan_adaptive_{}.csv", pu.name), &plan_csv(&run.tasks, &run.adaptive))?;
            }
        } else if !plans {
            write!(stdout, "{ratio_csv}")?;
        }
    }
    Ok(())
}

/// Random inputs labelled by the clean model, for models without a dataset.
fn synthetic_dataset(g: &ModelGraph, params: &[Option<LayerParams>], seed: u64, n: usize) -> Result<Vec<(QTensor, usize)>> {
    let (h, w, c) = g.input_shape().ok_or_else(|| Error::InvalidGraph("empty model".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = QTensor::new(h, w, c, (0..h * w * c).map(|_| rng.random()).collect(), 0)?;
            let outs = run_model(g, &x, params)?;
            let label = argmax(outs.last().expect("non-empty model"));
            Ok((x, label))
        })
        .collect()
}

fn emulate(common: &Common, weights: Option<&Path>, seed: Option<u64>, sigma: Option<f64>, rounds: u64, stdout: &mut dyn Write) -> Result<()> {
    let cfg = system(common)?;
    let (g, params, data) = if common.model == "toy" && weights.is_none() {
        zoo::toy_classifier(0)
    } else {
        let g = resolve_model(&common.model)?;
        let params = match weights {
            Some(dir) => load_weights(dir, &g)?,
            None => zoo::random_params(&g, 0),
        };
        let data = synthetic_dataset(&g, &params, 1, 8)?;
        (g, params, data)
    };
    let mut spec = cfg.noise.clone().unwrap_or_else(|| NoiseSpec {
        model: NoiseModel::AdditiveGaussian,
        sigma_rel: 0.05,
        seed: 0,
        target_layers: g.layers.iter().filter(|l| l.kind.has_weights()).map(|l| l.id).collect(),
    });
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(s) = sigma {
        spec.sigma_rel = s;
    }
    spec.validate()?;
    let mut store = WeightStore::new(&params);
    let stats = accuracy_eval(&g, &data, &mut store, &spec, rounds)?;
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "model": g.name,
        "noise": spec,
        "samples": data.len(),
        "accuracy": stats,
    }))?;
    writeln!(stdout, "{json}")?;
    if let Some(dir) = &common.out {
        write_out(dir, "accuracy.json", &json)?;
        let act_dir = dir.join("activations");
        let mut manifest = Vec::new();
        for round in 0..rounds {
            let out = emulate_round(&g, &data[0].0, &mut store, &spec, round)?;
            manifest.extend(dump_activations(&act_dir, round, &out.activations)?);
        }
        write_out(&act_dir, "manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (u8, String) {
        let mut out = Vec::new();
        let code = main_with_args(std::iter::once("pusim").chain(args.iter().copied()), &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn simulate_prints_summary() {
        let (code, out) = run_args(&["simulate", "--model", "resnet18", "--power-watts", "46"]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["fps"].as_f64().unwrap() > 1000.0);
        assert!(v["fps_per_watt"].is_number());
    }

    #[test]
    fn bad_inputs_exit_with_config_code() {
        assert_eq!(run_args(&["simulate", "--model", "/nonexistent.json"]).0, EXIT_CONFIG);
        assert_eq!(run_args(&["simulate", "--first-layer", "gpu"]).0, EXIT_CONFIG);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_CONFIG);
    }

    #[test]
    fn emulate_with_zero_sigma_is_clean() {
        let (code, out) = run_args(&["emulate", "--model", "toy", "--sigma", "0", "--rounds", "3"]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["accuracy"]["mean"].as_f64(), Some(1.0));
        assert_eq!(v["accuracy"]["std"].as_f64(), Some(0.0));
    }
}
