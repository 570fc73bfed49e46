//! Weight-transfer scheduling under URAM capacity.
//!
//! Tiles execute in a fixed order. Tile 0 is preloaded; every other tile's
//! load is assigned to a *window* (the execution span of an earlier tile)
//! or, when memory forbids any overlap, to a *gap* right before its own
//! execution. A tile occupies URAM from the window its load is issued in
//! until its own execution ends.
//!
//! Stall model: loads issued in window `k` share the params port serially
//! and must finish before tile `k+1` starts, so the stall in front of tile
//! `k+1` is `max(0, sum(loads in k) - e_k)` plus the load time of tile
//! `k+1` itself if it was loaded in the gap.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hbm::weight_load_cycles;
use crate::putiming::{layer_latency, LoweredLayer, PortSet, PuConfig};
use crate::workload::tile_layer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileTask {
    /// Execution-order index.
    pub id: usize,
    pub layer_id: usize,
    /// HBM to URAM load time, seconds.
    pub load_time: f64,
    /// Execution time once resident, seconds.
    pub exec_time: f64,
    /// URAM column entries.
    pub entries: u64,
}

impl TileTask {
    pub fn new(id: usize, load_time: f64, exec_time: f64, entries: u64) -> Self {
        TileTask {
            id,
            layer_id: 0,
            load_time,
            exec_time,
            entries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadSlot {
    Preloaded,
    /// Loaded while tile `k` executes.
    Window(usize),
    /// Loaded after the previous tile finished, without overlap.
    Gap,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub slots: Vec<LoadSlot>,
    /// Seconds stalled in front of each tile.
    pub stalls: Vec<f64>,
}

impl SchedulePlan {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn window_of(&self, i: usize) -> Option<usize> {
        match self.slots[i] {
            LoadSlot::Window(k) => Some(k),
            _ => None,
        }
    }

    pub fn stall_of(&self, i: usize) -> f64 {
        self.stalls[i]
    }

    pub fn total_stall(&self) -> f64 {
        self.stalls.iter().sum()
    }

    /// First window in which tile `i` occupies URAM.
    pub fn resident_from(&self, i: usize) -> usize {
        match self.slots[i] {
            LoadSlot::Preloaded | LoadSlot::Gap => i,
            LoadSlot::Window(k) => k,
        }
    }

    /// `(first window, last window)` during which tile `i` holds URAM.
    pub fn resident_interval(&self, i: usize) -> (usize, usize) {
        (self.resident_from(i), i)
    }

    fn from_slots(tasks: &[TileTask], slots: Vec<LoadSlot>) -> Self {
        let stalls = stalls_for(tasks, &slots);
        SchedulePlan { slots, stalls }
    }
}

/// Stall in front of every tile for a given slot assignment.
pub fn stalls_for(tasks: &[TileTask], slots: &[LoadSlot]) -> Vec<f64> {
    let n = tasks.len();
    let mut window_load = vec![0.0f64; n];
    for (i, slot) in slots.iter().enumerate() {
        if let LoadSlot::Window(k) = *slot {
            window_load[k] += tasks[i].load_time;
        }
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            let overflow = (window_load[i - 1] - tasks[i - 1].exec_time).max(0.0);
            let gap = if slots[i] == LoadSlot::Gap { tasks[i].load_time } else { 0.0 };
            overflow + gap
        })
        .collect()
}

/// URAM entries held during each window.
pub fn window_residency(tasks: &[TileTask], slots: &[LoadSlot]) -> Vec<u64> {
    let n = tasks.len();
    let mut occ = vec![0u64; n];
    for i in 0..n {
        let from = match slots[i] {
            LoadSlot::Window(k) => k,
            _ => i,
        };
        for w in occ.iter_mut().take(i + 1).skip(from) {
            *w += tasks[i].entries;
        }
    }
    occ
}

fn check_tasks(tasks: &[TileTask], capacity: u64) -> Result<()> {
    for t in tasks {
        if t.entries > capacity {
            return Err(Error::Schedule(format!(
                "tile {} needs {} entries, capacity is {capacity}",
                t.id, t.entries
            )));
        }
        if !(t.load_time >= 0.0 && t.exec_time >= 0.0) {
            return Err(Error::Schedule(format!("tile {} has a negative or NaN time", t.id)));
        }
    }
    Ok(())
}

/// Baseline phase: each tile's load overlaps its predecessor's execution
/// when both fit in URAM, otherwise it waits for the predecessor to finish.
pub fn baseline_schedule(tasks: &[TileTask], capacity: u64) -> Result<SchedulePlan> {
    check_tasks(tasks, capacity)?;
    let slots = (0..tasks.len())
        .map(|i| {
            if i == 0 {
                LoadSlot::Preloaded
            } else if tasks[i - 1].entries + tasks[i].entries <= capacity {
                LoadSlot::Window(i - 1)
            } else {
                LoadSlot::Gap
            }
        })
        .collect();
    Ok(SchedulePlan::from_slots(tasks, slots))
}

/// Adaptive phase: moves stalled loads into earlier windows with enough
/// spare time and memory.
///
/// Stalled tiles are visited by descending stall (ties: lower id). For each,
/// windows `j-2, j-3, ..., 0` are scanned; the load moves into the first
/// window whose unused time covers it completely and over which the longer
/// URAM residency still fits. A move is kept only if the total stall drops.
pub fn adaptive_refine(plan: &SchedulePlan, tasks: &[TileTask], capacity: u64) -> SchedulePlan {
    let n = tasks.len();
    let mut slots = plan.slots.clone();
    let mut occ = window_residency(tasks, &slots);
    let mut used = vec![0.0f64; n];
    for (i, s) in slots.iter().enumerate() {
        if let LoadSlot::Window(k) = *s {
            used[k] += tasks[i].load_time;
        }
    }
    let mut total = plan.total_stall();

    let mut order: Vec<usize> = (1..n).filter(|&i| plan.stalls[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        plan.stalls[b]
            .partial_cmp(&plan.stalls[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    for j in order {
        let need = tasks[j].load_time;
        let old_from = match slots[j] {
            LoadSlot::Window(k) => k,
            LoadSlot::Gap => j,
            LoadSlot::Preloaded => continue,
        };
        for k in (0..j.saturating_sub(1)).rev() {
            if k >= old_from {
                continue;
            }
            if tasks[k].exec_time - used[k] < need {
                continue;
            }
            // Windows k..old_from gain tile j's entries.
            if (k..old_from).any(|w| occ[w] + tasks[j].entries > capacity) {
                continue;
            }
            let prev = slots[j];
            slots[j] = LoadSlot::Window(k);
            let stalls = stalls_for(tasks, &slots);
            let new_total: f64 = stalls.iter().sum();
            if new_total < total {
                total = new_total;
                for w in occ.iter_mut().take(old_from).skip(k) {
                    *w += tasks[j].entries;
                }
                used[k] += need;
                if let LoadSlot::Window(o) = prev {
                    used[o] -= need;
                }
                break;
            }
            slots[j] = prev;
        }
    }
    SchedulePlan::from_slots(tasks, slots)
}

/// Baseline followed by the adaptive phase.
pub fn two_phase_schedule(tasks: &[TileTask], capacity: u64) -> Result<(SchedulePlan, SchedulePlan)> {
    let base = baseline_schedule(tasks, capacity)?;
    let adaptive = adaptive_refine(&base, tasks, capacity);
    Ok((base, adaptive))
}

pub const BRUTE_FORCE_MAX_TILES: usize = 10;

/// Exhaustive search for the minimum total stall over every slot
/// assignment, with per-window time budgets and memory feasibility.
///
/// Branch-and-bound; the bound charges each unassigned load at least its
/// excess over the largest remaining window slack.
pub fn brute_force_schedule(tasks: &[TileTask], capacity: u64) -> Result<(f64, SchedulePlan)> {
    if tasks.len() > BRUTE_FORCE_MAX_TILES {
        return Err(Error::InstanceTooLarge {
            max: BRUTE_FORCE_MAX_TILES,
            got: tasks.len(),
        });
    }
    check_tasks(tasks, capacity)?;
    let n = tasks.len();
    if n == 0 {
        return Ok((
            0.0,
            SchedulePlan {
                slots: Vec::new(),
                stalls: Vec::new(),
            },
        ));
    }

    struct Search<'a> {
        tasks: &'a [TileTask],
        capacity: u64,
        slots: Vec<LoadSlot>,
        load: Vec<f64>,
        occ: Vec<u64>,
        gap_cost: f64,
        best: f64,
        best_slots: Option<Vec<LoadSlot>>,
    }

    impl Search<'_> {
        fn committed(&self) -> f64 {
            let over: f64 = (0..self.tasks.len())
                .map(|k| (self.load[k] - self.tasks[k].exec_time).max(0.0))
                .sum();
            over + self.gap_cost
        }

        fn bound(&self, next: usize) -> f64 {
            let n = self.tasks.len();
            let mut lb = self.committed();
            for j in next..n {
                let slack = (0..j)
                    .map(|k| (self.tasks[k].exec_time - self.load[k]).max(0.0))
                    .fold(0.0f64, f64::max);
                lb += (self.tasks[j].load_time - slack).max(0.0);
            }
            lb
        }

        fn go(&mut self, i: usize) {
            let n = self.tasks.len();
            if i == n {
                let total = self.committed();
                if total < self.best {
                    self.best = total;
                    self.best_slots = Some(self.slots.clone());
                }
                return;
            }
            if self.bound(i) >= self.best {
                return;
            }
            let t = self.tasks[i];
            // Nearest window first, then earlier ones, then the gap.
            for k in (0..i).rev() {
                if (k..=i).any(|w| self.occ[w] + t.entries > self.capacity) {
                    continue;
                }
                for w in k..=i {
                    self.occ[w] += t.entries;
                }
                self.load[k] += t.load_time;
                self.slots[i] = LoadSlot::Window(k);
                self.go(i + 1);
                self.load[k] -= t.load_time;
                for w in k..=i {
                    self.occ[w] -= t.entries;
                }
            }
            if self.occ[i] + t.entries <= self.capacity {
                self.occ[i] += t.entries;
                self.gap_cost += t.load_time;
                self.slots[i] = LoadSlot::Gap;
                self.go(i + 1);
                self.gap_cost -= t.load_time;
                self.occ[i] -= t.entries;
            }
        }
    }

    let mut s = Search {
        tasks,
        capacity,
        slots: vec![LoadSlot::Preloaded; n],
        load: vec![0.0; n],
        occ: vec![0; n],
        gap_cost: 0.0,
        best: f64::INFINITY,
        best_slots: None,
    };
    s.occ[0] = tasks[0].entries;
    s.go(1);
    let slots = s
        .best_slots
        .ok_or_else(|| Error::Schedule("no feasible assignment".into()))?;
    let plan = SchedulePlan::from_slots(tasks, slots);
    Ok((s.best, plan))
}

/// Memory-feasibility failure found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub time: f64,
    pub resident: u64,
    pub capacity: u64,
}

/// Independent sweep-line check of a plan on a continuous timeline.
///
/// Rebuilds execution start times from the slots, allocates each tile when
/// its load actually starts, frees it when its execution ends, and checks
/// the running total against `capacity` at every event (frees first on
/// ties). Also checks structural invariants and the recorded stalls.
pub fn validate_plan(tasks: &[TileTask], plan: &SchedulePlan, capacity: u64) -> std::result::Result<(), String> {
    let n = tasks.len();
    if plan.slots.len() != n || plan.stalls.len() != n {
        return Err(format!("plan covers {} tiles, expected {n}", plan.slots.len()));
    }
    if n == 0 {
        return Ok(());
    }
    if plan.slots[0] != LoadSlot::Preloaded || plan.stalls[0] != 0.0 {
        return Err("tile 0 must be preloaded with no stall".into());
    }
    for i in 1..n {
        match plan.slots[i] {
            LoadSlot::Window(k) if k >= i => return Err(format!("tile {i} loads in window {k}, not earlier")),
            LoadSlot::Preloaded => return Err(format!("tile {i} claims to be preloaded")),
            _ => {}
        }
    }

    // Loads in a window run back to back from the window start, in tile order.
    let mut alloc_at = vec![0.0f64; n];
    let mut start = vec![0.0f64; n];
    let mut clock = 0.0f64;
    for k in 0..n {
        if k > 0 {
            let prev_end = start[k - 1] + tasks[k - 1].exec_time;
            let port_free = start[k - 1]
                + (0..n)
                    .filter(|&j| plan.slots[j] == LoadSlot::Window(k - 1))
                    .map(|j| tasks[j].load_time)
                    .sum::<f64>();
            let ready = prev_end.max(port_free);
            if plan.slots[k] == LoadSlot::Gap {
                alloc_at[k] = ready;
                clock = ready + tasks[k].load_time;
            } else {
                clock = ready;
            }
            let stall = clock - prev_end;
            if (stall - plan.stalls[k]).abs() > 1e-9 * (1.0 + stall.abs()) {
                return Err(format!("tile {k}: recorded stall {} but timeline gives {stall}", plan.stalls[k]));
            }
        }
        start[k] = clock;
        let mut offset = 0.0;
        for j in k + 1..n {
            if plan.slots[j] == LoadSlot::Window(k) {
                alloc_at[j] = start[k] + offset;
                offset += tasks[j].load_time;
            }
        }
    }

    // (time, kind, entries, tile); kind 0 = free sorts before 1 = alloc.
    let mut events: Vec<(f64, u8, u64, usize)> = Vec::with_capacity(2 * n);
    for i in 0..n {
        events.push((alloc_at[i], 1, tasks[i].entries, i));
        events.push((start[i] + tasks[i].exec_time, 0, tasks[i].entries, i));
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut resident: i128 = 0;
    for (t, kind, entries, tile) in events {
        if kind == 1 {
            resident += entries as i128;
            if resident > capacity as i128 {
                return Err(format!(
                    "at t={t:.3e}s loading tile {tile} makes {resident} entries resident (capacity {capacity})"
                ));
            }
        } else {
            resident -= entries as i128;
        }
    }
    Ok(())
}

/// Builds one task per weight tile of a lowered model.
///
/// Execution time is the tile's share of its layer's steady-state latency.
/// Load time is the params-port transfer, stretched by the share of the
/// port that residual reads take while the preceding tile executes.
/// With `steady_state`, the next pass's first tile is appended as an extra
/// zero-length task so its reload is scheduled within this pass.
pub fn tasks_from_model(layers: &[LoweredLayer], pu: &PuConfig, ports: &PortSet, steady_state: bool) -> Result<Vec<TileTask>> {
    let mut tasks: Vec<TileTask> = Vec::new();
    let mut residual_share: Vec<f64> = Vec::new();
    for l in layers {
        if !l.spec.kind.has_weights() {
            continue;
        }
        let timing = layer_latency(l, pu, ports)?;
        let tiles = tile_layer(l.spec.id, tasks.len(), &l.shape, pu)?;
        let busy = timing.latency_cycles.saturating_sub(timing.fill_cycles).max(1);
        let share = (timing.residual_cycles as f64 / busy as f64).min(0.9);
        let exec = timing.latency_s / tiles.len().max(1) as f64;
        for tile in tiles {
            tasks.push(TileTask {
                id: tile.tile_id,
                layer_id: tile.layer_id,
                load_time: weight_load_cycles(&tile, &ports.params) as f64 / ports.params.clock_hz,
                exec_time: exec,
                entries: tile.uram_entries,
            });
            residual_share.push(share);
        }
    }
    for i in 1..tasks.len() {
        tasks[i].load_time /= 1.0 - residual_share[i - 1];
    }
    if steady_state && !tasks.is_empty() {
        let first = tasks[0];
        let last_share = residual_share.last().copied().unwrap_or(0.0);
        tasks.push(TileTask {
            id: tasks.len(),
            layer_id: first.layer_id,
            load_time: first.load_time / (1.0 - last_share),
            exec_time: 0.0,
            entries: first.entries,
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub tile_id: usize,
    /// `e_i / l_{i+1}`; infinite for the last tile or a free next load.
    pub time_ratio: f64,
    /// Peak resident entries during window `i` over capacity.
    pub memory_ratio: f64,
    /// Load no longer issued in the immediately preceding window.
    pub relocated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
}

pub fn ratios(tasks: &[TileTask], plan: &SchedulePlan, capacity: u64) -> RatioReport {
    let occ = window_residency(tasks, &plan.slots);
    let rows = (0..tasks.len())
        .map(|i| {
            let next = tasks.get(i + 1).map(|t| t.load_time).unwrap_or(0.0);
            let time_ratio = if next > 0.0 {
                tasks[i].exec_time / next
            } else {
                f64::INFINITY
            };
            let relocated = i > 0 && plan.slots[i] != LoadSlot::Window(i - 1);
            RatioRow {
                tile_id: tasks[i].id,
                time_ratio,
                memory_ratio: if capacity == 0 { 0.0 } else { occ[i] as f64 / capacity as f64 },
                relocated,
            }
        })
        .collect();
    RatioReport { rows }
}

impl RatioReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tile_id,time_ratio,memory_ratio,relocated_flag\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{}",
                r.tile_id,
                fmt_ratio(r.time_ratio),
                r.memory_ratio,
                u8::from(r.relocated)
            );
        }
        s
    }
}

fn fmt_ratio(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Plan dump: `tile_id,layer_id,window,load_us,exec_us,entries,stall_us`.
pub fn plan_csv(tasks: &[TileTask], plan: &SchedulePlan) -> String {
    let mut s = String::from("tile_id,layer_id,window,load_us,exec_us,entries,stall_us\n");
    for (i, t) in tasks.iter().enumerate() {
        let window = match plan.slots[i] {
            LoadSlot::Preloaded => "pre".to_string(),
            LoadSlot::Gap => "gap".to_string(),
            LoadSlot::Window(k) => k.to_string(),
        };
        let _ = writeln!(
            s,
            "{},{},{},{:.4},{:.4},{},{:.4}",
            t.id,
            t.layer_id,
            window,
            t.load_time * 1e6,
            t.exec_time * 1e6,
            t.entries,
            plan.stalls[i] * 1e6
        );
    }
    s
}
