use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn pusim(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pusim")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pusim-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn simulate_writes_identical_reports() {
    let (a, b) = (scratch("sim-a"), scratch("sim-b"));
    for dir in [&a, &b] {
        let (code, _) = pusim(&["simulate", "--model", "resnet50", "--out", dir.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    for f in ["summary.json", "layers_pu_1x.csv", "layers_pu_2x.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("layers_pu_2x.csv")).unwrap();
    assert!(csv.starts_with("layer_id,kind,n,m,p,compute_cycles,bound,latency_us\n"));
    for d in [a, b] {
        fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn schedule_emits_plans_and_ratios() {
    let dir = scratch("sched");
    let (code, _) = pusim(&["schedule", "--model", "resnet18", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    let plan = fs::read_to_string(dir.join("plan_adaptive_pu_2x.csv")).unwrap();
    assert!(plan.starts_with("tile_id,layer_id,window,load_us,exec_us,entries,stall_us\n"));
    let ratios = fs::read_to_string(dir.join("ratios_pu_2x.csv")).unwrap();
    assert!(ratios.starts_with("tile_id,time_ratio,memory_ratio,relocated_flag\n"));
    for line in ratios.lines().skip(1) {
        let mem: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mem <= 1.0);
    }
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_errors_exit_1_with_line() {
    let dir = scratch("cfg");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("system.json");
    fs::write(&cfg, "{\n  \"pus\": [\n    {\"pu\": \"pu_2x\", \"count\": 5,}\n  ]\n}\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pusim"))
        .args(["simulate", "--system", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn verify_passes_on_default_seed() {
    let (code, out) = pusim(&["verify"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().filter(|l| l.ends_with("PASS")).count(), 4);
}

#[test]
fn emulate_dumps_activations() {
    let dir = scratch("emu");
    let (code, out) = pusim(&["emulate", "--model", "toy", "--rounds", "2", "--sigma", "0.1", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("\"mean\""));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("activations/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 4);
    let first = &manifest[0];
    let bytes = fs::read(dir.join("activations").join(first["file"].as_str().unwrap())).unwrap();
    let (h, w, c) = (first["h"].as_u64().unwrap(), first["w"].as_u64().unwrap(), first["c"].as_u64().unwrap());
    assert_eq!(bytes.len() as u64, h * w * c);
    fs::remove_dir_all(dir).unwrap();
}
