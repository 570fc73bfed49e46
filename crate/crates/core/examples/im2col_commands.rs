//! Generates the HBM command bundles that fetch im2col columns and replays
//! them to rebuild the activation matrix.

use pusim::functional::{im2col, QTensor};
use pusim::hbm::{im2col_column_commands, im2col_commands, reconstruct_matrix, HbmPortConfig};
use pusim::workload::LayerSpec;

fn main() -> pusim::Result<()> {
    let layer = LayerSpec::conv(0, 3, 1, 1, 64, 64, 8);

    // Corner pixel: padding rows become zero-fill directives.
    let corner = im2col_column_commands(&layer, 0x1000, 0, 0)?;
    print!("pixel (0,0):\n{}", corner.dump());
    let inner = im2col_column_commands(&layer, 0x1000, 3, 3)?;
    print!("pixel (3,3):\n{}", inner.dump());

    let x = QTensor::new(8, 8, 64, (0..8 * 8 * 64).map(|i| (i % 251) as i8).collect(), 0)?;
    let plan = im2col_commands(&layer, 0x1000)?;
    let port = HbmPortConfig::default();
    println!(
        "whole layer: {} commands, {} bytes, {} port cycles",
        plan.n_commands(),
        plan.total_bytes(),
        plan.total_cycles(&port)
    );
    println!("replay equals im2col: {}", reconstruct_matrix(&plan, &x)? == im2col(&x, &layer)?);

    // The 7x7 first layer has 21-byte kernel rows, below the 32-byte minimum.
    let stem = LayerSpec::conv(0, 7, 2, 3, 3, 64, 224);
    if let Err(e) = im2col_commands(&stem, 0) {
        println!("stem: {e}");
    }
    Ok(())
}
