use sasaki_lab::cli::run_command;
use serde_json::Value;
use std::path::Path;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("sasaki-lab").chain(args.iter().copied()))
}

#[test]
fn verify_canonical_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "canonical.toml", "band_limit = 12\nseed = 3\n");
    let out = dir.path().join("verify.json");
    assert_eq!(run(&["verify", "--config", &cfg, "--samples", "5", "--out", out.to_str().unwrap()]), 0);
    let v = read(&out);
    assert_eq!(v["schema"], "sasaki-lab/verify/v1");
    assert_eq!(v["seed"], 3);
    assert_eq!(v["data"]["all_pass"], true);
}

#[test]
fn solve_estimate_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write_config(
        dir.path(),
        "even.toml",
        "band_limit = 16\nsymmetry_mode = \"even\"\nperturbation = [[2, 0, 0.05]]\nseed = 5\n[diameter]\nsamples = 600\n",
    );
    assert_eq!(run(&["--out-dir", d, "solve", "--config", &cfg, "--uniqueness-seeds", "1,2"]), 0);
    let fam = read(&dir.path().join("family.json"));
    assert_eq!(fam["data"]["family"]["reached_target"], true);
    assert!(fam["data"]["final_curvature_residual"].as_f64().unwrap() < 1e-5);
    assert!(dir.path().join("family.csv").exists());

    let family = dir.path().join("family.json");
    assert_eq!(run(&["--out-dir", d, "estimates", "--family", family.to_str().unwrap()]), 0);
    assert_eq!(run(&["--out-dir", d, "spectrum", "--config", &cfg, "--count", "12"]), 0);
    let spec = read(&dir.path().join("spectrum.json"));
    assert_eq!(spec["data"]["spectrum"]["eigenvalues"].as_array().unwrap().len(), 12);

    let inputs: Vec<String> = ["family.json", "report.json", "spectrum.json"]
        .iter()
        .map(|f| dir.path().join(f).to_str().unwrap().to_owned())
        .collect();
    let summary = dir.path().join("summary.txt");
    let mut args = vec!["report", "--out", summary.to_str().unwrap(), "--inputs"];
    args.extend(inputs.iter().map(String::as_str));
    assert_eq!(run(&args), 0);
    let text = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(!text.contains("FAIL"));
    assert!(!text.contains("MISSING"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("uniqueness") && l.contains("PASS")));
}

#[test]
fn outputs_are_deterministic_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "band_limit = 12\nperturbation = [[2, 0, 0.05]]\n");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        assert_eq!(
            run(&["functionals", "--config", &cfg, "--samples", "3", "--seed", "9", "--out", out.to_str().unwrap()]),
            0
        );
    }
    let (mut va, mut vb) = (read(&a), read(&b));
    va.as_object_mut().unwrap().remove("generated_at");
    vb.as_object_mut().unwrap().remove("generated_at");
    assert_eq!(serde_json::to_string(&va).unwrap(), serde_json::to_string(&vb).unwrap());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "band_limit = 12\nunknown_key = 1\n");
    assert_eq!(run(&["model", "--config", &bad]), 2);
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["model", "--config", missing.to_str().unwrap()]), 2);
    let odd = write_config(
        dir.path(),
        "odd.toml",
        "band_limit = 12\nsymmetry_mode = \"even\"\nperturbation = [[3, 0, 0.01]]\n",
    );
    assert_eq!(run(&["model", "--config", &odd]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "band_limit = 12\n");
    let target = dir.path().join("env_out");
    // SAFETY: this is the only test in the binary touching the environment.
    unsafe { std::env::set_var(sasaki_lab::cli::OUT_DIR_ENV, &target) };
    let code = run(&["model", "--config", &cfg]);
    unsafe { std::env::remove_var(sasaki_lab::cli::OUT_DIR_ENV) };
    assert_eq!(code, 0);
    assert!(target.join("model.json").exists());
    assert!(target.join("model.csv").exists());
}
