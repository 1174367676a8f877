use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn backflip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backflip"))
        .args(args)
        .env_remove("BACKFLIP_CACHE_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy(dir: &Path, n: usize) -> PathBuf {
    let root = dir.join("corpus");
    let o = backflip(&["toy-corpus", "--out", s(&root), "--n", &n.to_string()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    root
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn import_masks_retention_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 6);
    let (images, masks) = (root.join("images"), root.join("masks"));

    let out = dir.path().join("idx5");
    let o = backflip(&["import-masks", "--images", s(&images), "--masks", s(&masks), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 images"));
    let report = json(&out.join("import.report.json"));
    let rows = report.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r["retained"].as_u64().unwrap() <= 5));
    assert!(rows.iter().any(|r| r["retained"].as_u64().unwrap() > 1));
    assert!(out.join("toy000").join("toy000.index.json").is_file());

    let out1 = dir.path().join("idx1");
    let o = backflip(&["import-masks", "--images", s(&images), "--masks", s(&masks), "--out", s(&out1), "--n", "1"]);
    assert_eq!(code(&o), 0);
    let rows = json(&out1.join("import.report.json"));
    assert!(rows.as_array().unwrap().iter().all(|r| r["retained"] == 1));

    let o = backflip(&["import-masks", "--images", s(&images), "--masks", "/nonexistent", "--out", s(&out1)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a directory"));
}

#[test]
fn import_masks_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 2);
    std::fs::write(root.join("masks/toy001/toy001.seg1.png"), b"not a png").unwrap();
    let out = dir.path().join("idx");
    let o = backflip(&[
        "import-masks", "--images", s(&root.join("images")), "--masks", s(&root.join("masks")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 1);
    let rows = json(&out.join("import.report.json"));
    assert_eq!(rows[1]["image_id"], "toy001");
    assert_eq!(rows[1]["skipped_masks"], 1);
    assert_eq!(rows[0]["skipped_masks"], 0);
}

#[test]
fn augment_main_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 8);
    let config = root.join("config.toml");
    assert_eq!(code(&backflip(&["preprocess", "--config", s(&config)])), 0);
    let pre = json(&root.join("preprocess.report.json"));
    assert_eq!(pre["images"], 8);
    assert_eq!(pre["incomplete"], 0);

    let out = dir.path().join("epoch");
    let o = backflip(&["augment", "--config", s(&config), "--epoch", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("epoch.report.json"));
    assert_eq!(report["epoch"], 3);
    assert_eq!(report["failures"], 0);
    assert_eq!(report["policy"]["method"], "backflip");
    assert_eq!(report["policy"]["k_segments"], 3);
    assert_eq!(report["policy"]["inpaint"]["kind"], "median");
    let per_image = report["per_image"].as_array().unwrap();
    assert_eq!(per_image.len(), 8);
    for r in per_image {
        let id = r["id"].as_str().unwrap();
        if r["split"] == "train" {
            assert_eq!(r["status"], "ok");
            assert_eq!(r["region_ok"], true);
            let side = json(&out.join(r["params_sidecar"].as_str().unwrap()));
            assert_eq!(side["image_id"], id);
            assert_eq!(side["params"]["method"], "backflip");
            assert!(out.join(format!("{id}.png")).is_file());
        } else {
            assert_eq!(r["status"], "passthrough");
            assert!(!out.join(format!("{id}.png")).exists());
        }
    }
}

#[test]
fn augment_none_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 7);
    let config = root.join("config.toml");
    assert_eq!(code(&backflip(&["preprocess", "--config", s(&config)])), 0);

    let none = dir.path().join("none");
    let o = backflip(&["augment", "--config", s(&config), "--out", s(&none), "--set", "method=none"]);
    assert_eq!(code(&o), 0);
    for id in ["toy000", "toy001", "toy002"] {
        let a = image::open(none.join(format!("{id}.png"))).unwrap();
        let b = image::open(root.join("images").join(format!("{id}.png"))).unwrap();
        assert_eq!(a.to_rgb8(), b.to_rgb8());
    }

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = backflip(&[
            "augment", "--config", s(&config), "--seed", "11", "--out", s(out), "--set", "k_segments=2", "--set",
            "transforms=hflip:0.5,rotate:0.5",
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn preprocess_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 4);
    let config = root.join("config.toml");
    assert_eq!(code(&backflip(&["preprocess", "--config", s(&config)])), 0);
    let first = tree(&root.join("masks"));
    assert_eq!(code(&backflip(&["preprocess", "--config", s(&config)])), 0);
    assert_eq!(tree(&root.join("masks")), first);
    assert_eq!(json(&root.join("preprocess.report.json"))["cached"], 4);
}

#[test]
fn augment_without_preprocess_fails_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 3);
    let out = dir.path().join("out");
    let o = backflip(&["augment", "--config", s(&root.join("config.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let report = json(&dir.path().join("out.report.json"));
    assert!(report["failures"].as_u64().unwrap() > 0);
    assert!(report["per_image"][0]["error"].as_str().unwrap().contains("preprocess"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 2);
    let config = root.join("config.toml");
    let out = dir.path().join("o");
    for args in [
        vec!["augment", "--config", s(&config), "--out", s(&out), "--set", "nope=1"],
        vec!["augment", "--config", s(&config), "--out", s(&out), "--set", "k_segments=9"],
        vec!["augment", "--config", s(&config), "--out", s(&out), "--set", "k_segments"],
        vec!["augment", "--config", "/nonexistent.toml", "--out", s(&out)],
        vec!["augment", "--config", s(&config), "--out", s(&out), "--bogus"],
        vec!["sweep", "--config", s(&config), "--axis", "k", "--out", s(&out)],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&backflip(&args)), 2, "{args:?}");
    }
}

#[test]
fn help_lists_flags() {
    let o = backflip(&["augment", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--epoch", "--seed", "--out", "--workers", "--set", "--report"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn sweep_k_axis() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 6);
    let config = root.join("config.toml");
    assert_eq!(code(&backflip(&["preprocess", "--config", s(&config)])), 0);
    let out = dir.path().join("sweep");
    let o = backflip(&["sweep", "--config", s(&config), "--axis", "k_segments", "--values", "1,3,5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("sweep.sweep.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert_eq!(report["invariants_ok"], true);
    assert!(out.join("k_segments-5").is_dir());

    let o = backflip(&["sweep", "--config", s(&config), "--axis", "k_segments", "--values", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

fn write_csv(dir: &Path, rows: &[(&str, f64, f64)]) -> PathBuf {
    let p = dir.join("pred.csv");
    let mut text = String::from("id,y_true,y_pred\n");
    for (id, t, y) in rows {
        text.push_str(&format!("{id},{t},{y}\n"));
    }
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn metrics_command() {
    let dir = tempfile::tempdir().unwrap();
    let perfect = write_csv(dir.path(), &[("a", 0.1, 0.1), ("b", 0.7, 0.7), ("c", 0.4, 0.4)]);
    let o = backflip(&["metrics", "--pred", s(&perfect)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pcc"], 1.0);
    assert_eq!(v["srcc"], 1.0);
    assert_eq!(v["accuracy_percent"], 100.0);

    // scores 1..6 on a 0..10 scale against [2,1,4,5,6,3]: centered sums give
    // sxy = 10.5, sxx = syy = 17.5, so pcc = srcc = 0.6; rows 4 and 6 cross
    // the 0.5 threshold on one side only
    let rows: Vec<(String, f64, f64)> = [2.0, 1.0, 4.0, 5.0, 6.0, 3.0]
        .iter()
        .enumerate()
        .map(|(i, &p)| (format!("r{i}"), (i + 1) as f64, p))
        .collect();
    let rows: Vec<(&str, f64, f64)> = rows.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
    let six = write_csv(dir.path(), &rows);
    let o = backflip(&["metrics", "--pred", s(&six), "--scale", "0,10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["pcc"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!((v["srcc"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert!((v["accuracy_percent"].as_f64().unwrap() - 400.0 / 6.0).abs() < 1e-12);

    let constant = write_csv(dir.path(), &[("a", 0.1, 0.5), ("b", 0.7, 0.5), ("c", 0.4, 0.5)]);
    let o = backflip(&["metrics", "--pred", s(&constant)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("variance"));

    std::fs::write(dir.path().join("bad.csv"), "id,truth\na,1\n").unwrap();
    assert_eq!(code(&backflip(&["metrics", "--pred", s(&dir.path().join("bad.csv"))])), 2);
    assert_eq!(code(&backflip(&["metrics", "--pred", s(&perfect), "--scale", "1"])), 2);
}

#[test]
fn inspect_writes_montages() {
    let dir = tempfile::tempdir().unwrap();
    let root = toy(dir.path(), 3);
    let config = root.join("config.toml");
    let out = dir.path().join("fig");
    let o = backflip(&["inspect", "--config", s(&config), "--image", "toy000", "--out", s(&out)]);
    assert_eq!(code(&o), 2, "not preprocessed yet");

    assert_eq!(code(&backflip(&["preprocess", "--config", s(&config)])), 0);
    let o = backflip(&["inspect", "--config", s(&config), "--image", "toy000", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["segments", "global_vs_local", "inpainting_methods", "transform_types", "segment_counts"] {
        assert!(out.join(format!("toy000.{name}.png")).is_file(), "{name}");
    }
    let legend = json(&out.join("toy000.legend.json"));
    assert_eq!(legend["inpainting_methods"].as_array().unwrap().len(), 6);
    let counts = legend["segment_counts"].as_array().unwrap().len();
    assert!((2..=6).contains(&counts));

    let o = backflip(&["inspect", "--config", s(&config), "--image", "missing", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}
