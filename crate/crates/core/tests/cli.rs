use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cropheight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropheight"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_scene() -> Vec<&'static str> {
    vec![
        "--seed",
        "5",
        "--set",
        "synth.n_rows=128",
        "--set",
        "synth.n_cols=128",
        "--set",
        "synth.n_reference=400",
    ]
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = cropheight(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_usage_error() {
    let o = cropheight(&["show-config", "--set", "filter.min_confidence=3.0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error stage=config kind=config msg=\""), "{err}");

    let o = cropheight(&["show-config", "--set", "filter.no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overrides_layer_over_env() {
    let o = Command::new(env!("CARGO_BIN_EXE_cropheight"))
        .args(["show-config", "--seed", "9"])
        .env("CROPHEIGHT_FILTER__MAX_SLOPE", "3.0")
        .env("CROPHEIGHT_SEED", "4")
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9"), "{text}");
    assert!(text.contains("max_slope = 3.0"), "{text}");

    let o = Command::new(env!("CARGO_BIN_EXE_cropheight"))
        .args(["show-config", "--set", "filter.max_slope=2.0"])
        .env("CROPHEIGHT_FILTER__MAX_SLOPE", "3.0")
        .output()
        .unwrap();
    assert!(String::from_utf8(o.stdout).unwrap().contains("max_slope = 2.0"));
}

#[test]
fn missing_inputs_fail_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cropheight(&["train-cells", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error stage=train-cells kind=io msg=\""), "{err}");
    assert!(dir.path().join("train-cells._PARTIAL").exists());
    assert!(!dir.path().join("manifests/train-cells.json").exists());
}

#[test]
fn reruns_are_byte_identical_and_traceable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut args = vec!["all", "--out", dir.path().to_str().unwrap()];
        args.extend(small_scene());
        let o = cropheight(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(fb[k] == *v, "{} differs between runs", k.display());
    }

    // Every stage leaves a manifest carrying the config hash, and every
    // listed output matches its recorded digest.
    let stages = [
        "synth",
        "train-height",
        "filter-shots",
        "classify-shots",
        "fit-harmonics",
        "grid",
        "train-cells",
        "predict",
        "mosaic",
        "evaluate",
        "aggregate",
    ];
    let mut hash = None;
    for s in stages {
        let m: serde_json::Value =
            serde_json::from_slice(&fa[&PathBuf::from(format!("manifests/{s}.json"))]).unwrap();
        assert_eq!(m["stage"], s);
        assert_eq!(m["seed"], 5);
        let h = m["config_hash"].as_str().unwrap().to_string();
        assert_eq!(h.len(), 64);
        assert_eq!(*hash.get_or_insert(h.clone()), h);
        for o in m["outputs"].as_array().unwrap() {
            let path = PathBuf::from(o["path"].as_str().unwrap());
            let digest = sha256_hex(&fa[&path]);
            assert_eq!(o["sha256"], digest.as_str(), "{}", path.display());
        }
    }
    assert!(fa.keys().all(|k| !k.to_string_lossy().ends_with("_PARTIAL")));
}

#[test]
fn single_stage_rerun_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["all", "--out", out];
    args.extend(small_scene());
    assert!(cropheight(&args).status.success());
    let before = files(dir.path());
    args[0] = "grid";
    assert!(cropheight(&args).status.success());
    args[0] = "mosaic";
    assert!(cropheight(&args).status.success());
    assert_eq!(files(dir.path()), before);
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}
