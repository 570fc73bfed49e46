//! Per-layer cycle model and bound classification for ResNet-18 on one PU.

use pusim::putiming::{layer_latency, lower_model, FirstLayerMode, PortSet, PuConfig};
use pusim::zoo;

fn main() -> pusim::Result<()> {
    let pu = PuConfig::pu_2x();
    let ports = PortSet::default();
    let layers = lower_model(&zoo::resnet18(), FirstLayerMode::Host)?;

    println!("{:>3} {:<16} {:>10} {:>8} {:>8} {:>9} {:>9}  bound", "id", "kind", "compute", "input", "output", "residual", "latency");
    let mut total = 0.0;
    for l in &layers {
        let t = layer_latency(l, &pu, &ports)?;
        total += t.latency_s;
        println!(
            "{:>3} {:<16} {:>10} {:>8} {:>8} {:>9} {:>7.1}us  {}",
            t.layer_id,
            t.kind.as_str(),
            t.compute_cycles,
            t.input_cycles,
            t.output_cycles,
            t.residual_cycles,
            t.latency_s * 1e6,
            t.bound.as_str()
        );
    }
    println!("sum of layer latencies: {:.3} ms", total * 1e3);
    Ok(())
}
