use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use activepinn::experiments::{build, ProblemSpec, PRESETS};
use activepinn::networks::write_network;
use tempfile::TempDir;

const TINY: &str = r#"
[problem]
u_hidden = [6]
seeds = [0, 1]

[problem.points]
obs = 48
pde = 12
bcn = 12
bcd = 12
test_obs = 8
test_pde = 4
eval = 40

[problem.schedule]
pretrain_adam = 5
pretrain_bfgs = 5
full_adam = 10
full_bfgs = 10
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_activepinn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn tiny_config(dir: &Path, head: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, format!("{head}\n{TINY}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_writes_dataset_and_sidecar() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gen");
    let o = run(&[
        "generate",
        "--case",
        "one-scar",
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["observations.csv", "observations.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let side: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("observations.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 7);
    assert_eq!(side["ld"], 0.05);
    assert!(side["sigma"].as_f64().unwrap() > 0.0);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["data_seed"], 7);
    assert_eq!(manifest["spec_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["version"]
        .as_str()
        .unwrap()
        .starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&[
            "generate",
            "--case",
            "td-scalar",
            "--seed",
            "3",
            "--out",
            s(d),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["observations.csv", "observations.json", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn invalid_case_exits_2_and_lists_ids() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "generate",
        "--case",
        "three-scar",
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("three-scar"));
    for id in PRESETS {
        assert!(err.contains(id), "{id} not listed in: {err}");
    }
}

#[test]
fn unknown_config_key_is_located() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(
        &cfg,
        "[problem]\nnoise_ld = 0.0\n\n[problem.weights]\nlambda_pdf = 1.0\n",
    )
    .unwrap();
    let o = run(&[
        "--config",
        s(&cfg),
        "generate",
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains("lambda_pdf") && err.contains("line 5"),
        "{err}"
    );
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "--config",
        s(&tmp.path().join("none.toml")),
        "generate",
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_writes_per_seed_outputs_and_refuses_to_overwrite() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "preset = \"hom-qs\"");
    let out = tmp.path().join("train");
    let o = run(&["--config", s(&cfg), "train", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "trajectory_seed0.csv",
        "trajectory_seed1.csv",
        "network_seed0.apnn",
        "network_seed1.apnn",
        "summary.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let traj = fs::read_to_string(out.join("trajectory_seed0.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 20);
    let first = fs::read(out.join("summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(summary["n_seeds"], 2);
    assert!(summary["n_success"].as_u64().unwrap() <= 2);
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);

    let again = run(&["--config", s(&cfg), "train", "--out", s(&out)]);
    assert_eq!(code(&again), 2, "{}", stderr(&again));
    let forced = run(&[
        "--config",
        s(&cfg),
        "train",
        "--overwrite",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
    assert_eq!(
        fs::read(out.join("summary.json")).unwrap(),
        first,
        "rerun summary differs"
    );
}

#[test]
fn seed_range_and_threads_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "preset = \"hom-qs\"");
    let out = tmp.path().join("t");
    let o = run(&[
        "--config",
        s(&cfg),
        "--seeds",
        "4..7",
        "--threads",
        "2",
        "-q",
        "train",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    for seed in 4..7 {
        assert!(out.join(format!("trajectory_seed{seed}.csv")).exists());
    }
    assert!(!out.join("trajectory_seed0.csv").exists());
}

#[test]
fn train_from_generated_dataset() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "preset = \"hom-qs\"");
    let data = tmp.path().join("data");
    let o = run(&["--config", s(&cfg), "generate", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = data.join("observations.csv");
    let o = run(&[
        "--config",
        s(&cfg),
        "train",
        "--dataset",
        s(&csv),
        "--out",
        s(&tmp.path().join("a")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Same data as sampling it in place.
    let o2 = run(&[
        "--config",
        s(&cfg),
        "train",
        "--out",
        s(&tmp.path().join("b")),
    ]);
    assert_eq!(code(&o2), 0);
    assert_eq!(
        fs::read(tmp.path().join("a/trajectory_seed0.csv")).unwrap(),
        fs::read(tmp.path().join("b/trajectory_seed0.csv")).unwrap()
    );
    // A dataset of another case is rejected.
    let dir = tmp.path().join("other");
    fs::create_dir(&dir).unwrap();
    let other = tiny_config(&dir, "preset = \"td-scalar\"");
    let o = run(&[
        "--config",
        s(&other),
        "train",
        "--dataset",
        s(&csv),
        "--out",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn all_seeds_failing_exits_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("fail.toml");
    // A start far from the truth with no iterations to move away from it.
    fs::write(
        &cfg,
        "[problem]\nseeds = [0, 1]\nsa = { kind = \"scalar\", initial = 1e6 }\n\
         [problem.points]\nobs = 16\npde = 4\nbcn = 4\ntest_obs = 4\ntest_pde = 2\neval = 10\n\
         [problem.schedule]\npretrain_adam = 0\npretrain_bfgs = 0\nfull_adam = 1\nfull_bfgs = 0\n",
    )
    .unwrap();
    let out = tmp.path().join("f");
    let o = run(&["--config", s(&cfg), "train", "--out", s(&out)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(out.join("summary.json").exists());
}

#[test]
fn classify_perfect_model_has_zero_rates() {
    let tmp = TempDir::new().unwrap();
    let spec = ProblemSpec::preset("hom-qs").unwrap();
    let model = build(&spec).unwrap().setup.problem.model;
    let mut params = model.init(0);
    *params.last_mut().unwrap() = 118.08_f64.sqrt();
    let net = tmp.path().join("perfect.apnn");
    write_network(fs::File::create(&net).unwrap(), &model, 0, &params).unwrap();
    let out = tmp.path().join("cls");
    let o = run(&[
        "classify",
        "--model",
        s(&net),
        "--truth",
        "hom-qs",
        "--threshold",
        "50",
        "--grid-res",
        "6",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("classification.json")).unwrap()).unwrap();
    assert_eq!(rep["report"]["fpr"], 0.0);
    assert_eq!(rep["report"]["fnr"], 0.0);
    assert_eq!(rep["report"]["tn"], 216);
    let voxels = fs::read_to_string(out.join("voxels.csv")).unwrap();
    assert_eq!(voxels.lines().count(), 1 + 216);
    assert!(voxels.lines().skip(1).all(|l| l.ends_with(",tn")));
    let sweep = fs::read_to_string(out.join("threshold_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 118);
}

#[test]
fn classify_healthy_model_on_scar_truth_misses_everything() {
    let tmp = TempDir::new().unwrap();
    let spec = ProblemSpec::preset("hom-qs").unwrap();
    let model = build(&spec).unwrap().setup.problem.model;
    let mut params = model.init(0);
    *params.last_mut().unwrap() = 118.08_f64.sqrt();
    let net = tmp.path().join("healthy.apnn");
    write_network(fs::File::create(&net).unwrap(), &model, 0, &params).unwrap();
    let out = tmp.path().join("cls");
    let o = run(&[
        "classify",
        "--model",
        s(&net),
        "--truth",
        "one-scar",
        "--grid-res",
        "8",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("classification.json")).unwrap()).unwrap();
    assert_eq!(rep["report"]["threshold"], 50.0);
    assert_eq!(rep["report"]["fnr"], 1.0);
    assert_eq!(rep["report"]["fpr"], 0.0);
}

#[test]
fn classify_rejects_a_corrupt_model() {
    let tmp = TempDir::new().unwrap();
    let net = tmp.path().join("junk.apnn");
    fs::write(&net, b"not a network").unwrap();
    let o = run(&[
        "classify",
        "--model",
        s(&net),
        "--out",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_two_cells_gives_two_trajectories_and_a_front() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "preset = \"hom-qs\"");
    let out = tmp.path().join("sw");
    let o = run(&[
        "--config",
        s(&cfg),
        "--seeds",
        "0",
        "sweep",
        "--grid",
        "obs=1;pde=0.1,1;bcn=1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("cell0.csv").exists() && out.join("cell1.csv").exists());
    assert!(!out.join("cell2.csv").exists());
    let front = fs::read_to_string(out.join("front.csv")).unwrap();
    assert_eq!(front.lines().count(), 3);
    assert!(front.starts_with("cell,lambda_obs,lambda_pde,lambda_bcn,frac_obs,frac_pde,frac_bcn"));

    let out2 = tmp.path().join("sw2");
    let o = run(&[
        "--config",
        s(&cfg),
        "--seeds",
        "0",
        "sweep",
        "--grid",
        "obs=1;pde=0.1,1;bcn=1",
        "--out",
        s(&out2),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(out.join("front.csv")).unwrap(),
        fs::read(out2.join("front.csv")).unwrap()
    );
}

#[test]
fn sweep_rejects_a_malformed_grid() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "sweep",
        "--grid",
        "obs=1;pdx=2",
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pdx"));
}

#[test]
fn ablate_weak_vs_exact_writes_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("ab");
    let o = run(&[
        "--config",
        s(&cfg),
        "--seeds",
        "0",
        "ablate",
        "--which",
        "weak-vs-exact-bcd",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "arm,n_seeds,n_success,err_param,err_u,j_obs,j_pde"
    );
    assert!(lines[1].starts_with("exact,1,"));
    assert!(lines[2].starts_with("weak,1,"));
    assert_eq!(lines.len(), 3);
    assert!(out.join("trajectories.csv").exists());
}

#[test]
fn ablate_unknown_name_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "ablate",
        "--which",
        "dropout",
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("weak-vs-exact-bcd"));
}
