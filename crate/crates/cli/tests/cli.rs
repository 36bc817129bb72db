use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use hydra_core::dataset::{Dataset, Split};
use hydra_core::tensor_io::load_tensor;

const TINY: &str = r#"{"seed": 5, "train": {"denoiser": {"channels": [1, 4, 1]}}}"#;

fn hydra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydra"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = hydra(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    Workspace { _tmp: tmp, root, config }
}

fn gen(ws: &Workspace, name: &str, views: usize) -> PathBuf {
    let out = ws.root.join(name);
    let views = views.to_string();
    ok(&["gen-data", "--config", s(&ws.config), "--out", s(&out), "--size", "16", "--n-phantoms", "10", "--views", &views]);
    out
}

fn train(ws: &Workspace, data: &Path, name: &str, mode: &str) -> PathBuf {
    let out = ws.root.join(name);
    ok(&[
        "train", "--config", s(&ws.config), "--data", s(data), "--out", s(&out), "--mode", mode, "--max-steps", "4",
        "--eval-every", "2",
    ]);
    out
}

fn log_rows(run: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(run.join("train_log.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_honours_the_view_count() {
    let ws = workspace();
    for views in [4, 8] {
        let d = gen(&ws, &format!("d{views}"), views);
        let ds = Dataset::open(&d).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            for (_, y) in ds.noisy(split).unwrap() {
                assert_eq!((y.n_angles(), y.n_detectors()), (views, 16));
            }
        }
    }
}

#[test]
fn gen_data_and_training_are_deterministic() {
    let ws = workspace();
    let a = gen(&ws, "a", 8);
    let b = gen(&ws, "b", 8);
    assert_eq!(tree(&a), tree(&b));
    let ra = train(&ws, &a, "ra", "hydra");
    let rb = train(&ws, &a, "rb", "hydra");
    let strip = |rows: Vec<Vec<String>>| rows.into_iter().map(|mut r| { r.pop(); r }).collect::<Vec<_>>();
    assert_eq!(strip(log_rows(&ra)), strip(log_rows(&rb)));
    for step in ["ckpt_2", "ckpt_4"] {
        assert_eq!(tree(&ra.join(step)), tree(&rb.join(step)));
    }
}

#[test]
fn plain_mode_logs_no_regulariser_loss() {
    let ws = workspace();
    let d = gen(&ws, "d", 8);
    let plain = train(&ws, &d, "plain", "plain");
    let hydra = train(&ws, &d, "hydra", "hydra");
    assert!(log_rows(&plain).iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
    assert!(log_rows(&hydra).iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn malformed_sinogram_fails_without_output() {
    let ws = workspace();
    let d = gen(&ws, "d", 8);
    let bad = ws.root.join("bad.tns");
    fs::write(&bad, b"HYDRATNS\x01\x00garbage").unwrap();
    for method in ["fbp", "tv"] {
        let out = ws.root.join(format!("out_{method}"));
        let res = hydra(&["baseline", "--method", method, "--sinogram", s(&bad), "--data", s(&d), "--out", s(&out)]);
        assert!(!res.status.success());
        assert!(!String::from_utf8_lossy(&res.stderr).is_empty());
        assert!(!out.exists());
    }
    let run = train(&ws, &d, "run", "hydra");
    let out = ws.root.join("out_recon");
    let res = hydra(&["reconstruct", "--ckpt", s(&run), "--sinogram", s(&bad), "--out", s(&out)]);
    assert!(!res.status.success());
    assert!(!out.exists());
}

#[test]
fn wrong_shape_sinogram_is_rejected() {
    let ws = workspace();
    let d8 = gen(&ws, "d8", 8);
    let d4 = gen(&ws, "d4", 4);
    let y = d4.join(&Dataset::open(&d4).unwrap().samples(Split::Test).next().unwrap().noisy.path);
    let out = ws.root.join("out");
    let res = hydra(&["baseline", "--method", "fbp", "--sinogram", s(&y), "--data", s(&d8), "--out", s(&out)]);
    assert!(!res.status.success());
    assert!(!out.exists());
}

#[test]
fn effective_config_is_echoed_and_reloadable() {
    let ws = workspace();
    let d = gen(&ws, "d", 8);
    let run = train(&ws, &d, "run", "plain");
    let echoed = run.join("config.json");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&echoed).unwrap()).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(v["train"]["optim"]["max_steps"], 4);
    assert_eq!(v["train"]["loss"]["mode"], "plain");
    // The echo is itself a valid configuration that reproduces the run.
    let again = ws.root.join("again");
    ok(&["train", "--config", s(&echoed), "--data", s(&d), "--out", s(&again)]);
    assert_eq!(fs::read_to_string(&echoed).unwrap(), fs::read_to_string(again.join("config.json")).unwrap());
    assert_eq!(tree(&run.join("ckpt_4")), tree(&again.join("ckpt_4")));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let ws = workspace();
    let bad = ws.root.join("bad.json");
    fs::write(&bad, r#"{"train": {"optim": {"lr": 0.1}}}"#).unwrap();
    let res = hydra(&["gen-data", "--config", s(&bad), "--out", s(&ws.root.join("d"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen-data", "train", "reconstruct", "baseline", "eval", "sweep"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
    for cmd in ["gen-data", "train", "reconstruct", "baseline", "eval", "sweep"] {
        ok(&[cmd, "--help"]);
    }
}

#[test]
fn tiny_end_to_end_run() {
    let start = Instant::now();
    let ws = workspace();
    let d = gen(&ws, "d", 8);
    let hydra_run = train(&ws, &d, "hydra", "hydra");
    let plain_run = train(&ws, &d, "plain", "plain");

    let y = d.join(&Dataset::open(&d).unwrap().samples(Split::Test).next().unwrap().noisy.path);
    let rec = ws.root.join("rec");
    ok(&["reconstruct", "--ckpt", s(&hydra_run), "--sinogram", s(&y), "--out", s(&rec)]);
    let x = load_tensor(&rec.join("recon.tns")).unwrap();
    assert_eq!(x.shape(), &[16, 16]);
    assert!(rec.join("recon.png").is_file());
    assert!(rec.join("solve_report.json").is_file());

    for method in ["fbp", "tv"] {
        let out = ws.root.join(method);
        ok(&["baseline", "--method", method, "--sinogram", s(&y), "--data", s(&d), "--out", s(&out), "--alpha", "0.01"]);
        assert_eq!(load_tensor(&out.join("recon.tns")).unwrap().shape(), &[16, 16]);
    }

    let eval = ws.root.join("eval");
    let out = ok(&[
        "eval",
        "--data",
        s(&d),
        "--ckpt",
        &format!("hydra-auto={}", s(&hydra_run)),
        &format!("hydra-max={}", s(&hydra_run)),
        &format!("deq-plain={}", s(&plain_run)),
        "--out",
        s(&eval),
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("hydra-max"), "{table}");
    assert!(fs::read_dir(&eval).unwrap().count() > 1);
    assert!(start.elapsed().as_secs() < 60);
}
