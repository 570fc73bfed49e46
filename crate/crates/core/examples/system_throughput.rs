//! Throughput of the 5x PU_1x + 5x PU_2x system on the built-in ResNets.

use pusim::config::SystemConfig;
use pusim::putiming::FirstLayerMode;
use pusim::system::simulate;
use pusim::zoo;

fn main() -> pusim::Result<()> {
    let cfg = SystemConfig::default();
    for g in [zoo::resnet18(), zoo::resnet50()] {
        for mode in [FirstLayerMode::Host, FirstLayerMode::Fpga] {
            let r = simulate(&g, &cfg, mode, Some(46.0))?;
            let lat: Vec<String> = r.pus.iter().map(|p| format!("{} {:.2} ms", p.pu, p.latency_s * 1e3)).collect();
            println!(
                "{:<8} {:?}: {:>7.1} FPS  {:>5.1} FPS/TOPS  eff {:.3}  {:.1} FPS/W  [{}]",
                g.name,
                mode,
                r.fps,
                r.fps_per_tops,
                r.efficiency,
                r.fps_per_watt.unwrap_or(0.0),
                lat.join(", ")
            );
        }
    }
    Ok(())
}
