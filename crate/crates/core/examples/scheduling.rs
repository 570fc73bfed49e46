//! Baseline vs adaptive weight-load scheduling, checked against the
//! brute-force optimum and the sweep-line validator.

use pusim::putiming::{lower_model, uram_capacity, FirstLayerMode, PortSet, PuConfig};
use pusim::scheduler::{brute_force_schedule, plan_csv, ratios, tasks_from_model, two_phase_schedule, validate_plan, TileTask};
use pusim::zoo;

fn main() -> pusim::Result<()> {
    // Times in seconds. Tile 0 runs long enough to hide both following loads.
    let us = 1e-6;
    let tasks = [
        TileTask::new(0, 0.0, 20.0 * us, 1),
        TileTask::new(1, 10.0 * us, 5.0 * us, 1),
        TileTask::new(2, 10.0 * us, 5.0 * us, 1),
    ];
    let (base, adapt) = two_phase_schedule(&tasks, 3)?;
    let (opt, _) = brute_force_schedule(&tasks, 3)?;
    println!(
        "stall: baseline {:.1} us, adaptive {:.1} us, optimal {:.1} us",
        base.total_stall() / us,
        adapt.total_stall() / us,
        opt / us
    );
    print!("{}", plan_csv(&tasks, &adapt));
    validate_plan(&tasks, &adapt, 3).expect("adaptive plan fits in memory");

    let pu = PuConfig::pu_2x();
    let ports = PortSet::default();
    let lowered = lower_model(&zoo::resnet50(), FirstLayerMode::Host)?;
    let tasks = tasks_from_model(&lowered, &pu, &ports, true)?;
    let cap = uram_capacity(&pu);
    let (base, adapt) = two_phase_schedule(&tasks, cap)?;
    let report = ratios(&tasks, &adapt, cap);
    let moved = report.rows.iter().filter(|r| r.relocated).count();
    println!(
        "\nresnet50/{}: {} tiles, stall {:.1} us -> {:.1} us, {} loads relocated",
        pu.name,
        tasks.len(),
        base.total_stall() * 1e6,
        adapt.total_stall() * 1e6,
        moved
    );
    Ok(())
}
