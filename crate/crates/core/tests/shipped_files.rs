use std::path::Path;

use pusim::config::{load_model, SystemConfig};
use pusim::zoo;

fn path(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

#[test]
fn model_files_match_builtins() {
    assert_eq!(load_model(&path("models/resnet18.json")).unwrap(), zoo::resnet18());
    assert_eq!(load_model(&path("models/resnet50.json")).unwrap(), zoo::resnet50());
}

#[test]
fn system_configs_load() {
    assert_eq!(SystemConfig::load(&path("configs/system.json")).unwrap().instances().unwrap(), SystemConfig::default().instances().unwrap());
    let niu = SystemConfig::load(&path("configs/system_niu.json")).unwrap();
    assert_eq!(niu.instances().unwrap().iter().map(|(_, n)| n).sum::<usize>(), 9);
}
