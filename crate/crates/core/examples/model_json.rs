//! Prints a built-in model as a JSON layer list, the format `--model` reads.
//!
//!     cargo run --example model_json -- resnet18 > resnet18.json

use pusim::zoo;

fn main() -> pusim::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "resnet18".into());
    let g = zoo::by_name(&name).ok_or_else(|| pusim::Error::Config(format!("no built-in model `{name}`")))?;
    println!("{}", g.to_json()?);
    Ok(())
}
