use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dlor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlor"))
        .current_dir(dir)
        .env_remove("DLOR_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small deterministic LCG so the fixtures do not depend on the library's RNG.
fn fixture_matrix(n: usize, mut state: u64) -> Vec<Vec<f64>> {
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    (0..n).map(|_| (0..n).map(|_| next()).collect()).collect()
}

fn write_weight(dir: &Path, name: &str, w: &[Vec<f64>]) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(w).unwrap()).unwrap();
    p
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    let rows = v["rows"].as_u64().unwrap() as usize;
    let cols = v["cols"].as_u64().unwrap() as usize;
    let data: Vec<f64> = v["data"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    (0..rows).map(|i| data[i * cols..(i + 1) * cols].to_vec()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = b[0].len();
    a.iter()
        .map(|row| (0..m).map(|j| row.iter().zip(b).map(|(x, r)| x * r[j]).sum()).collect())
        .collect()
}

fn frob(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn only_run_dir(base: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(base).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "expected one run directory in {}", base.display());
    dirs[0].clone()
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dlor(tmp.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["interpolate", "decompose", "simulate", "sweep", "train", "experiment", "spectral"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    assert_eq!(code(&dlor(tmp.path(), &["decompose", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&dlor(tmp.path(), &["decompose", "--bogus"])), 1);
    assert_eq!(code(&dlor(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&dlor(tmp.path(), &[])), 1);
    assert_eq!(code(&dlor(tmp.path(), &["experiment", "--name", "nope"])), 1);
    let o = dlor(tmp.path(), &["simulate", "--plan", "missing.json", "--out", "e.csv"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn multiplicative_decompose_reconstructs_the_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let w = fixture_matrix(8, 3);
    write_weight(tmp.path(), "w.json", &w);
    let o = dlor(
        tmp.path(),
        &["decompose", "--mode", "mul", "--rank", "6", "--alpha", "0.8", "--in", "w.json", "--out", "f.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f = read_json(&tmp.path().join("f.json"));
    assert_eq!(f["order"], "left-applied-last");
    assert!(f["residual"].as_f64().unwrap() <= 1e-8);
    let alpha = f["alpha"].as_f64().unwrap();
    let comps = f["components"].as_array().unwrap();
    assert_eq!(comps.len(), 2);

    // Independent check: multiply out (αI + U Vᵀ), first component applied first.
    let mut prod: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for (c, width) in comps.iter().zip([6, 2]) {
        let u = matrix(&c["u"]);
        let v = matrix(&c["v"]);
        assert_eq!(u[0].len(), width);
        let vt: Vec<Vec<f64>> = (0..v[0].len()).map(|j| v.iter().map(|r| r[j]).collect()).collect();
        let mut m = matmul(&u, &vt);
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += alpha;
        }
        prod = matmul(&m, &prod);
    }
    let diff: Vec<Vec<f64>> = prod
        .iter()
        .zip(&w)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    assert!(frob(&diff) / frob(&w) <= 1e-8);
}

#[test]
fn additive_decompose_sums_back() {
    let tmp = tempfile::tempdir().unwrap();
    let w = fixture_matrix(6, 9);
    write_weight(tmp.path(), "w.json", &w);
    let o = dlor(tmp.path(), &["decompose", "--mode", "add", "--rank", "3", "--in", "w.json", "--out", "a.json"]);
    assert_eq!(code(&o), 0);
    let a = read_json(&tmp.path().join("a.json"));
    let parts: Vec<Vec<Vec<f64>>> = a["summands"].as_array().unwrap().iter().map(matrix).collect();
    assert_eq!(parts.len(), 3);
    for i in 0..6 {
        for j in 0..6 {
            let s: f64 = parts.iter().map(|p| p[i][j]).sum();
            assert!((s - w[i][j]).abs() < 1e-12);
        }
    }
    let betas: f64 = a["betas"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).sum();
    assert_eq!(betas, 0.0);
}

#[test]
fn singular_weight_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let w = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
    write_weight(tmp.path(), "w.json", &w);
    let o = dlor(tmp.path(), &["decompose", "--mode", "mul", "--rank", "1", "--in", "w.json", "--out", "f.json"]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("f.json").exists());
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    write_weight(tmp.path(), "w.json", &fixture_matrix(6, 4));
    fs::write(tmp.path().join("c.json"), r#"{"mode": "add", "rank": 2}"#).unwrap();
    let o = dlor(tmp.path(), &["decompose", "--config", "c.json", "--rank", "3", "--in", "w.json", "--out", "a.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = read_json(&tmp.path().join("a.json"));
    assert_eq!(a["summands"].as_array().unwrap().len(), 3);

    fs::write(tmp.path().join("bad.json"), r#"{"nonsense": 1}"#).unwrap();
    let o = dlor(tmp.path(), &["decompose", "--config", "bad.json", "--in", "w.json", "--out", "a.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn every_run_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    write_weight(tmp.path(), "w.json", &fixture_matrix(4, 1));
    let o = Command::new(env!("CARGO_BIN_EXE_dlor"))
        .current_dir(tmp.path())
        .env("DLOR_OUT_DIR", "runs")
        .args(["decompose", "--mode", "mul", "--rank", "2", "--in", "w.json", "--out", "f.json"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let run = only_run_dir(&tmp.path().join("runs/decompose"));
    let m = read_json(&run.join("manifest.json"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["command"]["subcommand"], "decompose");
    assert_eq!(m["command"]["rank"], 2);
    assert_eq!(m["command"]["alpha"], 0.8);
}

#[test]
fn construction_deep_writes_the_sweep_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dlor(tmp.path(), &["experiment", "--name", "construction-deep", "--seed", "42"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = only_run_dir(&tmp.path().join("out/construction-deep"));
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("h,err_to_dense,err_to_function"));
    assert!(lines.count() >= 3);
    assert!(!csv.contains('\r'));
    for f in ["config.json", "summary.json", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
}

#[test]
fn same_argv_gives_byte_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let files = |run: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(run)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "2"].iter().enumerate() {
        let out = format!("o{i}");
        let o = dlor(
            tmp.path(),
            &["experiment", "--name", "construction-wide", "--out-dir", &out, "--jobs", jobs],
        );
        assert_eq!(code(&o), 0);
        outputs.push(files(&only_run_dir(&tmp.path().join(&out).join("construction-wide"))));
    }
    // The manifest echoes --out-dir and --jobs, so compare it without them.
    let strip = |fs: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        fs.iter().filter(|(n, _)| n != "manifest.json").cloned().collect()
    };
    assert_eq!(strip(&outputs[0]), strip(&outputs[1]));

    write_weight(tmp.path(), "w.json", &fixture_matrix(5, 2));
    for out in ["f1.json", "f2.json"] {
        let o = dlor(tmp.path(), &["decompose", "--mode", "mul", "--rank", "2", "--in", "w.json", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(tmp.path().join("f1.json")).unwrap(), fs::read(tmp.path().join("f2.json")).unwrap());
}

#[test]
fn sweep_and_simulate_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let layer = serde_json::json!({ "w": fixture_matrix(3, 7), "b": [0.1, -0.2, 0.3] });
    fs::write(tmp.path().join("layer.json"), layer.to_string()).unwrap();
    let o = dlor(
        tmp.path(),
        &[
            "sweep", "--kind", "deep", "--rank", "2", "--in", "layer.json", "--grid", "1e-1:1e-4:4", "--out",
            "s.csv", "--plan-out", "p.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = fs::read_to_string(tmp.path().join("s.csv")).unwrap();
    let rows: Vec<(f64, f64)> = sweep
        .lines()
        .skip(1)
        .map(|l| {
            let (h, e) = l.split_once(',').unwrap();
            (h.parse().unwrap(), e.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1e-1, 1e-2, 1e-3, 1e-4]);
    assert!(rows.windows(2).all(|p| p[1].1 < p[0].1), "{sweep}");

    let plan = read_json(&tmp.path().join("p.json"));
    assert_eq!(plan["kind"], "deep");
    assert_eq!(plan["h"], 0.1);

    let o = dlor(tmp.path(), &["simulate", "--plan", "p.json", "--out", "e.csv"]);
    assert_eq!(code(&o), 0);
    let sim = fs::read_to_string(tmp.path().join("e.csv")).unwrap();
    assert_eq!(sim.lines().nth(1), sweep.lines().nth(1));

    let o = dlor(tmp.path(), &["simulate", "--plan", "p.json", "--grid", "1e-1:1e-4:4", "--out", "g.csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(tmp.path().join("g.csv")).unwrap(), sweep);
}

#[test]
fn interpolate_fits_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("d.csv"), "x_1,x_2,z\n0,1,0.5\n1,0,-1\n1,1,2\n-1,0.5,0.25\n").unwrap();
    for mode in ["scalar", "thermometer"] {
        let out = format!("{mode}.json");
        let o = dlor(tmp.path(), &["interpolate", "--data", "d.csv", "--mode", mode, "--out", &out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(report["report"]["max_abs_residual"].as_f64().unwrap() < 1e-8);
        let net = read_json(&tmp.path().join(&out));
        for key in ["v1", "u1", "b1", "v2", "b2", "activation"] {
            assert!(net.get(key).is_some(), "{key}");
        }
    }
    fs::write(tmp.path().join("bad.csv"), "x_1,y\n0,1\n").unwrap();
    assert_eq!(code(&dlor(tmp.path(), &["interpolate", "--data", "bad.csv", "--out", "n.json"])), 1);
}

#[test]
fn train_writes_a_reloadable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dlor(tmp.path(), &["train", "--kind", "wide", "--width", "8", "--k", "2", "--epochs", "30", "--out", "ck.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = read_json(&tmp.path().join("ck.json"));
    assert_eq!(ck["width"], 8);
    let curve = fs::read_to_string(tmp.path().join("ck.curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_mse,test_mse,lr\n"));
}
