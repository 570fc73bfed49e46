//! Accuracy of the toy classifier as weight noise grows.

use pusim::niu::{accuracy_eval, NoiseModel, NoiseSpec, WeightStore};
use pusim::zoo;

fn main() -> pusim::Result<()> {
    let (g, params, data) = zoo::toy_classifier(0);
    let mut store = WeightStore::new(&params);
    println!("{} samples, {} classes", data.len(), zoo::TOY_CLASSES);
    for sigma in [0.0, 0.1, 0.3, 0.6, 1.0, 2.0] {
        let spec = NoiseSpec {
            model: NoiseModel::AdditiveGaussian,
            sigma_rel: sigma,
            seed: 1,
            target_layers: [0, 1].into(),
        };
        let stats = accuracy_eval(&g, &data, &mut store, &spec, 20)?;
        println!("sigma {sigma:>4}: top-1 {:.3} +- {:.3}", stats.mean, stats.std);
    }
    Ok(())
}
