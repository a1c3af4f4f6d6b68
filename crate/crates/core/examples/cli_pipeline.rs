//! Drives the command-line pipeline in-process on a small configuration.

use dadf::cli::{run_args, EXIT_OK};

fn main() {
    let dir = std::env::temp_dir().join("dadf-cli-example");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("temp dir");
    let cfg = dir.join("small.toml");
    std::fs::write(
        &cfg,
        "run_name = \"demo\"\n[data]\nn = 5000\n[first_stage.hyper]\nepochs = 2\nhidden = [64, 32]\n[dadf]\nmax_epochs = 3\n",
    )
    .expect("write config");
    let out = dir.join("demo");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(run_args(&["run-all", "--config", c, "--out", o]), EXIT_OK);
    assert_eq!(run_args(&["train-dadf", "--config", c, "--out", o, "--variant", "no_aux"]), EXIT_OK);
    assert_eq!(run_args(&["evaluate", "--config", c, "--out", o, "--variant", "no_aux"]), EXIT_OK);

    let mut files: Vec<_> = walk(&out);
    files.sort();
    for f in files {
        println!("{}", f.strip_prefix(&out).unwrap().display());
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
