//! Multi-PU throughput: every PU instance processes its own frame, so the
//! system rate is the sum of per-instance rates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::Result;
use crate::putiming::{lower_model, model_latency, pu_tops, uram_capacity, FirstLayerMode, LayerTiming, PortSet, PuConfig};
use crate::scheduler::{tasks_from_model, two_phase_schedule, validate_plan, SchedulePlan, TileTask};
use crate::workload::ModelGraph;
use crate::Error;

/// Everything computed for one PU type.
#[derive(Debug, Clone)]
pub struct PuRun {
    pub pu: PuConfig,
    pub tasks: Vec<TileTask>,
    pub baseline: SchedulePlan,
    pub adaptive: SchedulePlan,
    pub report: PuReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuReport {
    pub pu: String,
    pub count: usize,
    pub latency_s: f64,
    pub compute_s: f64,
    pub stall_s: f64,
    pub baseline_stall_s: f64,
    pub tops: f64,
    pub layers: Vec<LayerTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub model: String,
    pub first_layer: FirstLayerMode,
    pub macs: u64,
    pub pus: Vec<PuReport>,
    pub fps: f64,
    pub tops: f64,
    pub fps_per_tops: f64,
    /// Achieved over available TOPS.
    pub efficiency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_watts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fps_per_watt: Option<f64>,
}

/// Schedules and times one inference pass of `g` on a single PU, in steady
/// state (the next pass's first tile reloads during this one).
pub fn simulate_pu(g: &ModelGraph, pu: &PuConfig, ports: &PortSet, mode: FirstLayerMode) -> Result<PuRun> {
    pu.validate()?;
    let lowered = lower_model(g, mode)?;
    let tasks = tasks_from_model(&lowered, pu, ports, true)?;
    let cap = uram_capacity(pu);
    let (baseline, adaptive) = two_phase_schedule(&tasks, cap)?;
    for plan in [&baseline, &adaptive] {
        validate_plan(&tasks, plan, cap).map_err(Error::Schedule)?;
    }
    let timing = model_latency(&lowered, pu, ports, &adaptive)?;
    Ok(PuRun {
        report: PuReport {
            pu: pu.name.clone(),
            count: 1,
            latency_s: timing.latency_s,
            compute_s: timing.compute_s,
            stall_s: timing.stall_s,
            baseline_stall_s: baseline.total_stall(),
            tops: pu_tops(pu),
            layers: timing.layers,
        },
        pu: pu.clone(),
        tasks,
        baseline,
        adaptive,
    })
}

pub fn simulate(g: &ModelGraph, cfg: &SystemConfig, mode: FirstLayerMode, power_watts: Option<f64>) -> Result<SystemReport> {
    cfg.validate()?;
    let ports = cfg.ports();
    let mut pus = Vec::new();
    for (pu, count) in cfg.instances()? {
        if count == 0 {
            continue;
        }
        let mut run = simulate_pu(g, &pu, &ports, mode)?;
        run.report.count = count;
        pus.push(run.report);
    }
    let fps: f64 = pus.iter().map(|r| r.count as f64 / r.latency_s).sum();
    let tops: f64 = pus.iter().map(|r| r.count as f64 * r.tops).sum();
    let macs = g.macs()?;
    if let Some(w) = power_watts {
        if !(w > 0.0) {
            return Err(Error::Config(format!("power must be positive, got {w}")));
        }
    }
    Ok(SystemReport {
        model: g.name.clone(),
        first_layer: mode,
        macs,
        fps,
        tops,
        fps_per_tops: fps / tops,
        efficiency: fps * 2.0 * macs as f64 / 1e12 / tops,
        power_watts,
        fps_per_watt: power_watts.map(|w| fps / w),
        pus,
    })
}

impl SystemReport {
    /// Per-layer timing CSV of one PU type.
    pub fn layer_csv(&self, pu: &str) -> Option<String> {
        let r = self.pus.iter().find(|r| r.pu == pu)?;
        let mut out = String::from("layer_id,kind,n,m,p,compute_cycles,bound,latency_us\n");
        for l in &r.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3}",
                l.layer_id,
                l.kind.as_str(),
                l.n,
                l.m,
                l.p,
                l.compute_cycles,
                l.bound.as_str(),
                l.latency_s * 1e6
            );
        }
        Some(out)
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Pu<'a> {
            pu: &'a str,
            count: usize,
            latency_ms: f64,
            stall_ms: f64,
            baseline_stall_ms: f64,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            model: &'a str,
            first_layer: FirstLayerMode,
            gmacs: f64,
            pus: Vec<Pu<'a>>,
            fps: f64,
            tops: f64,
            fps_per_tops: f64,
            efficiency: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            fps_per_watt: Option<f64>,
        }
        let s = Summary {
            model: &self.model,
            first_layer: self.first_layer,
            gmacs: self.macs as f64 / 1e9,
            pus: self
                .pus
                .iter()
                .map(|r| Pu {
                    pu: &r.pu,
                    count: r.count,
                    latency_ms: r.latency_s * 1e3,
                    stall_ms: r.stall_s * 1e3,
                    baseline_stall_ms: r.baseline_stall_s * 1e3,
                })
                .collect(),
            fps: self.fps,
            tops: self.tops,
            fps_per_tops: self.fps_per_tops,
            efficiency: self.efficiency,
            fps_per_watt: self.fps_per_watt,
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NiuConfig;
    use crate::zoo;

    #[test]
    fn aggregation_identities() {
        let g = zoo::resnet18();
        let r = simulate(&g, &SystemConfig::default(), FirstLayerMode::Host, Some(46.0)).unwrap();
        let sum: f64 = r.pus.iter().map(|p| p.count as f64 / p.latency_s).sum();
        assert_eq!(r.fps, sum);
        assert_eq!(r.fps_per_tops, r.fps / r.tops);
        assert!(r.efficiency > 0.0 && r.efficiency <= 1.0);
        assert_eq!(r.fps_per_watt, Some(r.fps / 46.0));
        for p in &r.pus {
            assert!(p.stall_s <= p.baseline_stall_s);
        }
    }

    #[test]
    fn niu_costs_one_pu() {
        let g = zoo::resnet18();
        let full = simulate(&g, &SystemConfig::default(), FirstLayerMode::Host, None).unwrap();
        let cfg = SystemConfig {
            niu: Some(NiuConfig { replaces: "pu_1x".into() }),
            ..SystemConfig::default()
        };
        let r = simulate(&g, &cfg, FirstLayerMode::Host, None).unwrap();
        let one_1x = 1.0 / full.pus[0].latency_s;
        assert!((full.fps - r.fps - one_1x).abs() < 1e-6 * full.fps);
    }

    #[test]
    fn reports_are_deterministic() {
        let g = zoo::resnet50();
        let a = simulate(&g, &SystemConfig::default(), FirstLayerMode::Fpga, None).unwrap();
        let b = simulate(&g, &SystemConfig::default(), FirstLayerMode::Fpga, None).unwrap();
        assert_eq!(a.summary_json().unwrap(), b.summary_json().unwrap());
        assert_eq!(a.layer_csv("pu_2x"), b.layer_csv("pu_2x"));
    }
}
