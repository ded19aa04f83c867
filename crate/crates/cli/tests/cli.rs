use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fmce_core::checkpoint::load_checkpoint;
use fmce_core::Partition;

fn lab(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmce-lab"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("FMCE_LAB_THREADS")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn blob_config(dir: &Path, out: &str) -> PathBuf {
    let path = dir.join(format!("{out}.toml"));
    let text = format!(
        "dataset = \"blobs\"\nblob_per_class = 20\nlevels = 3\nepochs = 4\npatience = 0\n\
         raf = [1.0, 0.0]\nseeds = [0, 1]\nfmce_epochs = 2\nfmce_batch_size = 32\n\
         gradcam_indices = [0, 3]\nout_dir = \"{}\"\n",
        dir.join(out).display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn full_chain_on_blobs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = blob_config(tmp.path(), "a");
    let out = tmp.path().join("a");
    for stage in ["prepare-data", "train-baseline", "harvest", "train-fmce", "sweep"] {
        ok(lab(&cfg, &[stage]));
    }
    let mut csvs = Vec::new();
    for raf in ["1", "0"] {
        for seed in [0, 1] {
            let dir = out.join(format!("sweep/raf-{raf}/seed-{seed}"));
            csvs.push(read(dir.join("metrics.csv")));
            assert!(dir.join("metadata.toml").exists());
            assert!(dir.join("final.fmce").exists());
        }
    }
    assert_eq!(csvs.len(), 4);
    let summary = String::from_utf8(read(out.join("sweep/summary.csv"))).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("backbone,dataset,raf,seed_count,mean_acc,std_acc\n"));

    // α = 1 joint runs equal the baseline runs
    for seed in [0, 1] {
        let base = load_checkpoint(&out.join(format!("baseline/seed-{seed}/final.fmce"))).unwrap();
        let joint = load_checkpoint(&out.join(format!("sweep/raf-1/seed-{seed}/final.fmce"))).unwrap();
        for part in [Partition::Backbone, Partition::Classifier] {
            assert_eq!(base.checksum(Some(part)), joint.checksum(Some(part)));
        }
        let base = String::from_utf8(read(out.join(format!("baseline/seed-{seed}/metrics.csv")))).unwrap();
        let joint = String::from_utf8(read(out.join(format!("sweep/raf-1/seed-{seed}/metrics.csv")))).unwrap();
        let cols = |s: &str| s.lines().map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{},{}", f[0], f[2], f[6])
        }).collect::<Vec<_>>();
        assert_eq!(cols(&base), cols(&joint));
    }

    let table = ok(lab(&cfg, &["report"]));
    assert!(table.contains("no baseline (RAF 1) row or no RAF < 1 rows"), "{table}");
    assert!(out.join("report/accuracy.svg").exists());
    assert_eq!(read(out.join("report/summary.csv")), summary.as_bytes());

    let cams = ok(lab(&cfg, &["gradcam"]));
    assert_eq!(cams.lines().count(), 2);
    for line in cams.lines() {
        let bytes = read(PathBuf::from(line));
        assert!(bytes.starts_with(b"P6\n28 28\n255\n"));
    }
    for stage in ["data", "report", "gradcam"] {
        assert!(out.join(stage).join("metadata.toml").exists(), "{stage}");
    }

    // a second run with the same configuration is byte-identical
    let cfg_b = blob_config(tmp.path(), "b");
    for stage in ["prepare-data", "train-baseline", "harvest", "train-fmce", "sweep"] {
        ok(lab(&cfg_b, &[stage]));
    }
    let b = tmp.path().join("b");
    for rel in ["sweep/raf-0/seed-1/metrics.csv", "baseline/seed-0/metrics.csv", "fmce/theta.fmce", "fmcs/fmcs.bin"] {
        assert_eq!(read(out.join(rel)), read(b.join(rel)), "{rel}");
    }
}

#[test]
fn missing_upstream_artifact_names_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = blob_config(tmp.path(), "c");
    let out = lab(&cfg, &["harvest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepare-data"));
    ok(lab(&cfg, &["prepare-data"]));
    let out = lab(&cfg, &["harvest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-baseline"));
    let out = lab(&cfg, &["sweep"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-fmce"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = blob_config(tmp.path(), "d");
    assert_eq!(lab(&cfg, &["--raf", "1.5", "sweep"]).status.code(), Some(2));
    assert_eq!(lab(&cfg, &["--levels", "9", "harvest"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "epochz = 3\n").unwrap();
    assert_eq!(lab(&bad, &["prepare-data"]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = blob_config(tmp.path(), "e");
    ok(lab(&cfg, &["prepare-data"]));
    let ckpt = tmp.path().join("junk.fmce");
    std::fs::write(&ckpt, b"FMCE\x01\x00").unwrap();
    let out = lab(&cfg, &["gradcam", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

fn metrics(accs: &[f64]) -> String {
    let mut s = String::from("epoch,lr,L_base,L_FMCS,L_RAL,train_acc,test_acc\n");
    for (i, a) in accs.iter().enumerate() {
        s.push_str(&format!("{},0.001,0.5,0.1,0.4,90,{a}\n", i + 1));
    }
    s
}

#[test]
fn report_recomputes_from_metric_files() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let fixtures = [("1", 0, vec![90.0, 95.0]), ("1", 1, vec![96.0]), ("0.9", 0, vec![97.0]), ("0.9", 1, vec![94.0, 96.5])];
    for (raf, seed, accs) in &fixtures {
        let dir = runs.join(format!("raf-{raf}/seed-{seed}"));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("metrics.csv"), metrics(accs)).unwrap();
    }
    let cfg = blob_config(tmp.path(), "f");
    let table = ok(lab(&cfg, &["report", "--runs", runs.to_str().unwrap()]));
    // finals: RAF 1 → {95, 96}: 95.5 ± 0.7071; RAF 0.9 → {97, 96.5}: 96.75 ± 0.3536
    assert!(table.contains("95.50 ± 0.71"), "{table}");
    assert!(table.contains("96.75 ± 0.35"), "{table}");
    assert!(table.contains("strict improvement: yes"));
    let csv = std::fs::read_to_string(tmp.path().join("f/report/summary.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(2).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 0.9);
    assert!((row[2] - 96.75).abs() < 1e-9);
    assert!((row[3] - 0.125f64.sqrt()).abs() < 1e-9);
}
