//! Lowers ResNet-50 layers to GEMM shapes and splits them into URAM tiles.

use pusim::putiming::{uram_capacity, PuConfig};
use pusim::workload::{avgpool_quant, conv_to_gemm, tile_layer};
use pusim::zoo;

fn main() -> pusim::Result<()> {
    let g = zoo::resnet50();
    let pu = PuConfig::pu_2x();
    println!("{}: {} layers, {:.2} GMAC", g.name, g.layers.len(), g.macs()? as f64 / 1e9);
    println!("URAM capacity on {}: {} entries\n", pu.name, uram_capacity(&pu));

    println!("{:>3} {:<16} {:>5} {:>6} {:>6} {:>6} {:>5} {:>8}", "id", "kind", "n", "m", "m_pad", "p", "tiles", "entries");
    let mut first_tile = 0;
    for l in g.layers.iter().take(12).chain(g.layers.iter().rev().take(2).rev()) {
        let s = conv_to_gemm(l)?;
        let tiles = tile_layer(l.id, first_tile, &s, &pu)?;
        first_tile += tiles.len();
        let entries = tiles.first().map_or(0, |t| t.uram_entries);
        println!(
            "{:>3} {:<16} {:>5} {:>6} {:>6} {:>6} {:>5} {:>8}",
            l.id,
            l.kind.as_str(),
            s.n,
            s.m,
            s.m_padded,
            s.p,
            tiles.len(),
            entries
        );
    }

    // Global 7x7 average pooling runs as a conv with a power-of-two weight.
    let q = avgpool_quant(7);
    println!("\navgpool 7x7 -> weight {} >> {} (rel. error {:.2e})", q.q, q.shift, q.rel_error(7));
    Ok(())
}
