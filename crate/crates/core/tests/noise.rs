use pusim::functional::run_model;
use pusim::niu::{accuracy_eval, emulate_round, inject_noise, NoiseModel, NoiseSpec, WeightStore};
use pusim::zoo;

fn spec(sigma: f64, targets: &[usize]) -> NoiseSpec {
    NoiseSpec {
        model: NoiseModel::AdditiveGaussian,
        sigma_rel: sigma,
        seed: 11,
        target_layers: targets.iter().copied().collect(),
    }
}

#[test]
fn untargeted_or_silent_rounds_match_clean_inference() {
    let (g, params, data) = zoo::toy_classifier(2);
    let mut store = WeightStore::new(&params);
    for (x, _) in data.iter().take(10) {
        let clean = run_model(&g, x, &params).unwrap();
        assert_eq!(emulate_round(&g, x, &mut store, &spec(0.8, &[]), 0).unwrap().activations, clean);
        assert_eq!(emulate_round(&g, x, &mut store, &spec(0.0, &[0, 1]), 1).unwrap().activations, clean);
    }
}

#[test]
fn noise_only_changes_downstream_activations() {
    let (g, params, data) = zoo::toy_classifier(2);
    let mut store = WeightStore::new(&params);
    let s = spec(1.0, &[1]);
    let x = &data[0].0;
    let out = emulate_round(&g, x, &mut store, &s, 4).unwrap();
    let clean = run_model(&g, x, &params).unwrap();
    assert_eq!(out.activations[0], clean[0]);

    // Same result when the perturbed weights are fed to the plain engine.
    let mut noisy = params.clone();
    let p1 = noisy[1].as_mut().unwrap();
    p1.weights = inject_noise(&p1.weights, &s, 1, 4);
    assert_eq!(out.activations, run_model(&g, x, &noisy).unwrap());
}

#[test]
fn zero_sigma_accuracy_has_no_spread() {
    let (g, params, data) = zoo::toy_classifier(3);
    let mut store = WeightStore::new(&params);
    let stats = accuracy_eval(&g, &data, &mut store, &spec(0.0, &[0, 1]), 5).unwrap();
    assert_eq!(stats.std, 0.0);
    assert_eq!(stats.mean, 1.0);
    let again = accuracy_eval(&g, &data, &mut store, &spec(0.4, &[0, 1]), 1).unwrap();
    assert_eq!(again, accuracy_eval(&g, &data, &mut store, &spec(0.4, &[0, 1]), 1).unwrap());
}

#[test]
fn heavy_noise_approaches_chance() {
    let (g, params, data) = zoo::toy_classifier(4);
    let mut store = WeightStore::new(&params);
    let stats = accuracy_eval(&g, &data, &mut store, &spec(4.0, &[0, 1]), 20).unwrap();
    let chance = 1.0 / zoo::TOY_CLASSES as f64;
    assert!((stats.mean - chance).abs() < 0.12, "mean {}", stats.mean);
}

#[test]
fn accuracy_falls_as_sigma_grows() {
    let (g, params, data) = zoo::toy_classifier(5);
    let mut store = WeightStore::new(&params);
    let rounds = 20;
    let runs: Vec<_> = [0.2, 0.6, 1.5]
        .iter()
        .map(|&s| accuracy_eval(&g, &data, &mut store, &spec(s, &[0, 1]), rounds).unwrap())
        .collect();
    for w in runs.windows(2) {
        // Allow two standard errors of slack between neighbouring sigmas.
        let se = (w[0].std.powi(2) + w[1].std.powi(2)).sqrt() / (rounds as f64).sqrt();
        assert!(w[1].mean <= w[0].mean + 2.0 * se, "{} then {}", w[0].mean, w[1].mean);
    }
}
