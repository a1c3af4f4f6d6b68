use std::path::Path;

use dadf::cli::{read_error_file, run_args, DataManifest, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK};
use dadf::eval::EvalReport;

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_config(dir: &Path) -> String {
    write(
        &dir.join("small.toml"),
        "run_name = \"small\"\n[data]\nn = 3000\n[first_stage]\nbackbone = \"oracle\"\n[dadf]\nmax_epochs = 3\n",
    )
}

#[test]
fn gen_data_splits_eight_one_one_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_args(&["gen-data", "--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run_args(&["gen-data", "--out", b.to_str().unwrap()]), EXIT_OK);
    for name in ["train.csv", "val.csv", "test.csv"] {
        let x = std::fs::read(a.join("data").join(name)).unwrap();
        let y = std::fs::read(b.join("data").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let m: DataManifest =
        serde_json::from_str(&std::fs::read_to_string(a.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.rows, [40_000, 5_000, 5_000]);
    assert!(m.watch_time.skewness > 1.5, "skewness {}", m.watch_time.skewness);
    assert!(a.join("data/config.toml").exists());
}

#[test]
fn existing_run_directory_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(run_args(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    let before = std::fs::read(out.join("data/train.csv")).unwrap();
    assert_eq!(
        run_args(&["gen-data", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(std::fs::read(out.join("data/train.csv")).unwrap(), before);
    let siblings = std::fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("run-"))
        .count();
    assert_eq!(siblings, 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(&tmp.path().join("bad.toml"), "[dadf]\nlearning_rate = 0.1\n");
    let out = tmp.path().join("out");
    assert_eq!(run_args(&["gen-data", "--config", &bad, "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    let err = read_error_file(&out).unwrap();
    assert_eq!(err["code"], 2);
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("learning_rate"));

    let out2 = tmp.path().join("out2");
    assert_eq!(
        run_args(&["gen-data", "--variant", "no_such", "--out", out2.to_str().unwrap()]),
        EXIT_CONFIG
    );
    assert_eq!(read_error_file(&out2).unwrap()["kind"], "config");
}

#[test]
fn missing_upstream_artifact_exits_with_three_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(run_args(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run_args(&["train-dadf", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_DATA);
    let err = read_error_file(&out).unwrap();
    assert_eq!(err["kind"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("outputs_train.csv"));

    let nowhere = tmp.path().join("nowhere");
    assert_eq!(run_args(&["evaluate", "--out", nowhere.to_str().unwrap()]), EXIT_DATA);
}

#[test]
fn divergence_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        &tmp.path().join("diverge.toml"),
        "[data]\nn = 2000\n[first_stage]\nbackbone = \"oracle\"\n[dadf]\nmax_epochs = 3\n[dadf.optimizer]\nkind = \"sgd\"\nlr = 1e300\n",
    );
    let out = tmp.path().join("run");
    assert_eq!(run_args(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
    assert_eq!(
        run_args(&["train-first-stage", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(
        run_args(&["train-dadf", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_DIVERGENCE
    );
    assert_eq!(read_error_file(&out).unwrap()["kind"], "divergence");
}

#[test]
fn variants_on_a_shared_first_stage_give_comparable_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(run_args(&["gen-data", "--config", &cfg, "--out", o]), EXIT_OK);
    assert_eq!(run_args(&["train-first-stage", "--config", &cfg, "--out", o]), EXIT_OK);
    for v in ["full", "global_correction"] {
        assert_eq!(run_args(&["train-dadf", "--config", &cfg, "--variant", v, "--out", o]), EXIT_OK);
        assert_eq!(run_args(&["evaluate", "--config", &cfg, "--variant", v, "--out", o]), EXIT_OK);
    }
    let load = |v: &str| -> EvalReport {
        let p = out.join(format!("eval/small_{v}_k4_seed0/report.json"));
        serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    };
    let (full, global) = (load("full"), load("global_correction"));
    assert_eq!(full.n, global.n);
    assert_eq!(full.base_mae, global.base_mae);
    assert_eq!(full.base_xauc, global.base_xauc);
    assert!(global.notes.iter().any(|n| n.contains("approximation")));
    for dir in ["dadf/full_k4_seed0", "dadf/global_correction_k4_seed0"] {
        for f in ["model.json", "train_log.jsonl", "summary.json", "config.toml"] {
            assert!(out.join(dir).join(f).exists(), "{dir}/{f}");
        }
    }
    let log = std::fs::read_to_string(out.join("dadf/full_k4_seed0/train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "l_trans", "l_abs", "l_reg", "total", "val_mae", "val_xauc", "lambdas", "moments"] {
        assert!(first.get(key).is_some(), "log line lacks {key}");
    }
}

#[test]
fn sweep_and_appendix_commands_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        &tmp.path().join("sweep.toml"),
        "[data]\nn = 3000\n[first_stage]\nbackbone = \"oracle\"\n[dadf]\nmax_epochs = 2\n[sweep]\nks = [1, 2, 3]\n[appendix.long_tail]\nn = 200000\n",
    );
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(run_args(&["gen-data", "--config", &cfg, "--out", o]), EXIT_OK);
    assert_eq!(run_args(&["train-first-stage", "--config", &cfg, "--out", o]), EXIT_OK);
    assert_eq!(run_args(&["sweep-k", "--config", &cfg, "--out", o]), EXIT_OK);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep/sweep_report.json")).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 3);
    assert_eq!(run_args(&["check-appendix", "--config", &cfg, "--out", o]), EXIT_OK);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("appendix/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["oracle_risk_pass"], true);
    assert_eq!(summary["long_tail_pass"], true);
    assert_eq!(summary["exponential_control_pass"], true);
}

#[test]
fn output_root_places_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let root = tmp.path().join("root");
    assert_eq!(
        run_args(&["gen-data", "--config", &cfg, "--out-root", root.to_str().unwrap()]),
        EXIT_OK
    );
    assert!(root.join("small/data/manifest.json").exists());
}
