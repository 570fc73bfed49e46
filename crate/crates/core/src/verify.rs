//! Oracle-equivalence suites on randomized small instances.
//!
//! Each suite compares a production path against an independent reference
//! and reports how many cases disagreed. The generators are public so the
//! integration tests can reuse them.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::functional::{im2col, run_layer, BiasVector, LayerParams, QTensor, WeightMatrix};
use crate::hbm::im2col_commands;
use crate::hbm::reconstruct_matrix;
use crate::oracle::{conv_naive, rescale_exact};
use crate::scheduler::{brute_force_schedule, two_phase_schedule, validate_plan, TileTask};
use crate::workload::{conv_to_gemm, LayerSpec, ALIGN_BYTES};

pub const DEFAULT_SEED: u64 = 0x5eed;

/// A conv/fc layer with input and parameters.
#[derive(Debug, Clone)]
pub struct ConvCase {
    pub layer: LayerSpec,
    pub x: QTensor,
    pub params: LayerParams,
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> QTensor {
    let data = (0..h * w * c).map(|_| rng.random()).collect();
    QTensor::new(h, w, c, data, 0).expect("sized")
}

/// Random conv (80%) or fc layer with every dimension `<= max_dim`,
/// `k in {1, 3, 7}` and `s in {1, 2}`.
pub fn random_conv_case(rng: &mut ChaCha8Rng, max_dim: usize) -> ConvCase {
    let c_in = rng.random_range(1..=max_dim);
    let c_out = rng.random_range(1..=max_dim);
    let mut layer = if rng.random_bool(0.2) {
        LayerSpec::fc(0, c_in, c_out)
    } else {
        let k: usize = [1, 3, 7][rng.random_range(0..3)];
        let s = rng.random_range(1..=2);
        let p = rng.random_range(0..=k / 2);
        let lo = k.saturating_sub(2 * p).max(1);
        let hw = rng.random_range(lo..=max_dim.max(lo));
        LayerSpec::conv(0, k, s, p, c_in, c_out, hw)
    };
    layer = layer.with_shifts(rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..12));
    if rng.random_bool(0.5) {
        layer = layer.with_relu();
    }
    let shape = conv_to_gemm(&layer).expect("generated layer is valid");
    let x = random_tensor(rng, layer.h_in, layer.w_in, c_in);
    let weights = (0..shape.n * shape.m).map(|_| rng.random()).collect();
    let params = LayerParams {
        weights: WeightMatrix::new(shape.n, shape.m, weights, layer.weight_shift).expect("sized"),
        bias: BiasVector {
            values: (0..shape.n).map(|_| rng.random()).collect(),
            shift: layer.bias_shift,
        },
    };
    ConvCase { layer, x, params }
}

/// Random layer whose activations can be fetched through IM2COL commands:
/// either a fast-path layer or one whose kernel rows span >= 32 bytes.
pub fn random_im2col_case(rng: &mut ChaCha8Rng) -> (LayerSpec, QTensor) {
    loop {
        let k: usize = [1, 3, 5, 7][rng.random_range(0..4)];
        let s = rng.random_range(1..=2);
        let p = if k == 1 && rng.random_bool(0.5) { 0 } else { rng.random_range(0..=k / 2) };
        let c_in = rng.random_range(1..=48);
        let lo = k.saturating_sub(2 * p).max(1);
        let hw = rng.random_range(lo..=12.max(lo));
        let layer = LayerSpec::conv(0, k, s, p, c_in, rng.random_range(1..=8), hw);
        if layer.is_fast_path() || k * c_in >= ALIGN_BYTES {
            let x = random_tensor(rng, hw, hw, c_in);
            return (layer, x);
        }
    }
}

/// Random scheduling instance with integer-valued times, `n` tiles and a
/// capacity at least as large as the biggest tile.
pub fn random_schedule_case(rng: &mut ChaCha8Rng, n: usize) -> (Vec<TileTask>, u64) {
    let cap = rng.random_range(4..=32u64);
    let tasks = (0..n)
        .map(|i| {
            TileTask::new(
                i,
                rng.random_range(0..=20) as f64,
                rng.random_range(0..=20) as f64,
                rng.random_range(1..=cap),
            )
        })
        .collect();
    (tasks, cap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        SuiteResult {
            name,
            cases: 0,
            failures: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, outcome: std::result::Result<(), String>) {
        self.cases += 1;
        if let Err(msg) = outcome {
            self.failures += 1;
            self.first_failure.get_or_insert(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// im2col + GEMM + rescale against the direct-convolution oracle.
pub fn functional_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = SuiteResult::new("functional_vs_naive_conv");
    for i in 0..cases {
        let c = random_conv_case(&mut rng, 16);
        let outcome = match run_layer(&c.layer, &c.x, Some(&c.params), None) {
            Ok(y) if y == conv_naive(&c.x, &c.layer, &c.params) => Ok(()),
            Ok(_) => Err(format!("case {i}: output differs for {:?}", c.layer)),
            Err(e) => Err(format!("case {i}: {e}")),
        };
        res.record(outcome);
    }
    res
}

/// `f` against exact rounding, on random and near-tie accumulators.
pub fn rescale_suite(seed: u64, cases: usize, f: fn(i32, u32) -> i8) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = SuiteResult::new("rescale_vs_exact");
    for _ in 0..cases {
        let shift = rng.random_range(0..=20u32);
        let acc = match rng.random_range(0..3) {
            0 => rng.random::<i32>(),
            1 => rng.random_range(-(128 << shift)..=(128 << shift)),
            // An exact tie, possibly off by one.
            _ => {
                let q: i32 = rng.random_range(-130..=130);
                let tie = if shift == 0 { 0 } else { 1 << (shift - 1) };
                (q << shift) + q.signum() * tie + rng.random_range(-1..=1)
            }
        };
        let (got, want) = (f(acc, shift), rescale_exact(acc, shift));
        res.record(if got == want {
            Ok(())
        } else {
            Err(format!("acc={acc} shift={shift}: got {got}, want {want}"))
        });
    }
    res
}

/// Replayed ADM plans against im2col, plus the 32-byte command rule.
pub fn hbm_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = SuiteResult::new("hbm_reconstruct_vs_im2col");
    for i in 0..cases {
        let (layer, x) = random_im2col_case(&mut rng);
        let base = 4096 * rng.random_range(0..16u64);
        let outcome = (|| {
            let plan = im2col_commands(&layer, base).map_err(|e| e.to_string())?;
            if let Some(cmd) = plan.commands().find(|c| c.len < ALIGN_BYTES || c.len % ALIGN_BYTES != 0) {
                return Err(format!("case {i}: command {cmd:?} breaks the 32-byte rule"));
            }
            let got = reconstruct_matrix(&plan, &x).map_err(|e| e.to_string())?;
            let want = im2col(&x, &layer).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("case {i}: reconstruction differs for {layer:?}"));
            }
            Ok(())
        })();
        res.record(outcome);
    }
    res
}

/// optimal <= adaptive <= baseline, with every plan passing the validator.
pub fn scheduler_suite(seed: u64, cases: usize, max_tiles: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = SuiteResult::new("scheduler_vs_brute_force");
    for i in 0..cases {
        let n = rng.random_range(1..=max_tiles);
        let (tasks, cap) = random_schedule_case(&mut rng, n);
        res.record(check_schedule(&tasks, cap).map_err(|e| format!("case {i}: {e}")));
    }
    res
}

/// Checks one instance; returns (optimal, adaptive, baseline) stalls.
pub fn schedule_stalls(tasks: &[TileTask], cap: u64) -> std::result::Result<(f64, f64, f64), String> {
    let (base, adapt) = two_phase_schedule(tasks, cap).map_err(|e| e.to_string())?;
    let (opt, opt_plan) = brute_force_schedule(tasks, cap).map_err(|e| e.to_string())?;
    for (name, plan) in [("baseline", &base), ("adaptive", &adapt), ("optimal", &opt_plan)] {
        validate_plan(tasks, plan, cap).map_err(|e| format!("{name} plan invalid: {e}"))?;
    }
    Ok((opt, adapt.total_stall(), base.total_stall()))
}

fn check_schedule(tasks: &[TileTask], cap: u64) -> std::result::Result<(), String> {
    let (opt, adapt, base) = schedule_stalls(tasks, cap)?;
    const EPS: f64 = 1e-9;
    if opt > adapt + EPS {
        return Err(format!("optimal {opt} exceeds adaptive {adapt}"));
    }
    if adapt > base + EPS {
        return Err(format!("adaptive {adapt} exceeds baseline {base}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    /// One line per suite: `name cases failures PASS|FAIL`.
    pub fn matrix(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let _ = writeln!(
                out,
                "{:<28} {:>6} cases {:>4} failed  {}",
                s.name,
                s.cases,
                s.failures,
                if s.passed() { "PASS" } else { "FAIL" }
            );
            if let Some(msg) = &s.first_failure {
                let _ = writeln!(out, "    first failure: {msg}");
            }
        }
        out
    }
}

/// Runs every suite at desk scale.
pub fn verify_all(seed: u64) -> VerifyReport {
    VerifyReport {
        seed,
        suites: vec![
            functional_suite(seed, 200),
            rescale_suite(seed, 20_000, crate::functional::rescale),
            hbm_suite(seed, 100),
            scheduler_suite(seed, 200, 10),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let r = verify_all(DEFAULT_SEED);
        assert!(r.passed(), "{}", r.matrix());
    }

    fn rescale_truncating(acc: i32, shift: u32) -> i8 {
        (acc >> shift).clamp(-128, 127) as i8
    }

    fn rescale_off_by_one(acc: i32, shift: u32) -> i8 {
        // Ties round toward zero instead of away from it.
        let v = acc as i64;
        let half = if shift == 0 { 0 } else { (1i64 << (shift - 1)) - 1 };
        let mag = (v.abs() + half) >> shift;
        (if v < 0 { -mag } else { mag }).clamp(-128, 127) as i8
    }

    #[test]
    fn rescale_mutants_are_caught() {
        assert!(!rescale_suite(1, 2000, rescale_truncating).passed());
        assert!(!rescale_suite(1, 2000, rescale_off_by_one).passed());
    }

    #[test]
    fn generators_are_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(random_schedule_case(&mut a, 8), random_schedule_case(&mut b, 8));
        assert_eq!(random_conv_case(&mut a, 16).x, random_conv_case(&mut b, 16).x);
    }
}
