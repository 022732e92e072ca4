use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_accel-leak"));
    c.env_remove("NP_SEED").env_remove("NP_OUT");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(cfg: &Path, sub: &str, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(cfg)
        .args(extra)
        .output()
        .unwrap()
}

const NP_TOY: &str = r#"{
  "network": "toy-sparse",
  "scenario": {
    "cm": { "kind": "neuroplug", "key": "desk-scaled" },
    "layers": 2,
    "runs": 6,
    "seed": 3,
    "observability": { "addresses": true, "values": true, "timing": true }
  },
  "attacks": { "list": ["ss", "kk", "si"], "expect": "held" }
}"#;

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_is_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "np.json", NP_TOY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = run(
        &cfg,
        "simulate",
        &["--out", a.to_str().unwrap(), "--jobs", "1"],
    );
    let ob = run(
        &cfg,
        "simulate",
        &["--out", b.to_str().unwrap(), "--jobs", "3"],
    );
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert!(ob.status.success());
    assert_eq!(oa.stdout, ob.stdout);
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 6 + 2);
    assert_eq!(ta, tb);
}

#[test]
fn attack_verdicts_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let held = write_config(tmp.path(), "held.json", NP_TOY);
    // no traces yet
    let r = run(&held, "attack", &["--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("simulate"));

    assert!(run(&held, "simulate", &["--out", o]).status.success());
    let r = run(&held, "attack", &["--out", o]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("attack.json")).unwrap()).unwrap();
    assert_eq!(v["verdict"], "held");

    let wrong = write_config(
        tmp.path(),
        "wrong.json",
        &NP_TOY.replace("\"held\"", "\"broken\""),
    );
    let r = run(&wrong, "attack", &["--out", o]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("to be broken, it was held"));
}

#[test]
fn baseline_volumes_are_recovered() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "b.json",
        r#"{"network": "toy-sparse", "scenario": {"cm": {"kind": "none"}, "layers": 3},
            "attacks": {"list": ["ss"], "expect": "broken"}}"#,
    );
    let o = tmp.path().join("o");
    assert!(run(&cfg, "simulate", &["--out", o.to_str().unwrap()])
        .status
        .success());
    let r = run(
        &cfg,
        "attack",
        &["--out", o.to_str().unwrap(), "--format", "csv"],
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert!(text.contains("ss,broken"));
}

#[test]
fn parse_errors_name_the_line_and_exit_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        "{\n  \"network\": \"vgg16-32\",\n  \"scenario\": { \"cm\": { \"kind\": \"none\" }, \"runs\": \"many\" }\n}\n",
    );
    let r = run(&cfg, "simulate", &[]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("bad.json:3:"), "{err}");

    let unknown = write_config(
        tmp.path(),
        "net.json",
        r#"{"network": "resnet", "scenario": {"cm": {"kind": "none"}}}"#,
    );
    assert_eq!(run(&unknown, "simulate", &[]).status.code(), Some(2));
    assert_eq!(
        bin().arg("simulate").output().unwrap().status.code(),
        Some(2)
    );
}

#[test]
fn env_seed_applies_and_flag_wins() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "np.json", NP_TOY);
    let seed_of = |o: &Output| -> u64 {
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["runs"][0]["seed"].as_u64().unwrap()
    };
    let o = tmp.path().join("o");
    let r = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .env("NP_SEED", "40")
        .env("NP_OUT", &o)
        .output()
        .unwrap();
    assert!(r.status.success());
    assert_eq!(seed_of(&r), 40);
    assert!(o.join("simulate.json").exists());
    let r = bin()
        .args(["simulate", "--seed", "7", "--config"])
        .arg(&cfg)
        .env("NP_SEED", "40")
        .env("NP_OUT", &o)
        .output()
        .unwrap();
    assert_eq!(seed_of(&r), 7);
    let bad = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .env("NP_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn searchspace_exact_observation_is_one_candidate_and_report_flags_stale() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
      "network": "toy-sparse",
      "scenario": { "cm": { "kind": "neuroplug" }, "layers": 2 },
      "searchspace": { "alphas": [0, 500, 2000], "priors": ["uniform"], "grid": 128, "cognate_seeds": [2] }
    }"#;
    let cfg = write_config(tmp.path(), "ss.json", body);
    let o = tmp.path().join("o");
    let os = o.to_str().unwrap();
    let r = run(&cfg, "searchspace", &["--out", os]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["exact_log10_size"], 0.0);
    let uniform: Vec<f64> = v["points"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["prior"] == "uniform")
        .map(|p| p["log10_size"].as_f64().unwrap())
        .collect();
    assert_eq!(uniform.len(), 3);
    assert!(uniform.windows(2).all(|w| w[1] >= w[0]), "{uniform:?}");
    let csv = fs::read_to_string(o.join("searchspace.csv")).unwrap();
    assert!(csv.lines().nth(1) == Some("alpha,prior,log10_size,outside"));

    let r = run(&cfg, "report", &["--out", os]);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v[0]["stale"], false);
    let r = run(&cfg, "report", &["--out", os, "--seed", "9"]);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v[0]["stale"], true);

    let empty = tmp.path().join("empty");
    assert_eq!(
        run(&cfg, "report", &["--out", empty.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
