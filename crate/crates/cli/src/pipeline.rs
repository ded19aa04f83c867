//! Pipeline stages. Each stage reads the artifacts of its predecessors from
//! the output directory and writes its own, so stages can be re-run alone.
//!
//! ```text
//! <out>/data/                      prepare-data   IDX files + dataset.toml
//! <out>/baseline/seed-<s>/         train-baseline metrics.csv, final.fmce, checkpoints/epoch-NNN.fmce
//! <out>/fmcs/                      harvest        fmcs.bin, schedule.toml
//! <out>/fmce/                      train-fmce     theta.fmce, results.toml
//! <out>/plusplus/raf-<a>/seed-<s>/ train-plusplus metrics.csv, final.fmce
//! <out>/sweep/raf-<a>/seed-<s>/    sweep          metrics.csv, final.fmce; sweep/summary.csv
//! <out>/report/                    report         table.txt, summary.csv, accuracy.svg
//! <out>/gradcam/                   gradcam        img-NNNNN-class-C.ppm
//! ```
//!
//! Every run directory also holds a `metadata.toml`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fmce_core::checkpoint::{load_checkpoint, save_checkpoint};
use fmce_core::data::{load_cifar_binary, load_idx, synthetic_blobs, write_idx, CifarLabels, ImageDataset, Normalization, Split};
use fmce_core::fmcs::{harvest_feature_maps, load_fmcs, save_fmcs, select_checkpoints, train_fmce_net, FmceTrainConfig};
use fmce_core::gradcam::{export_overlay, gradcam};
use fmce_core::losses::RalConfig;
use fmce_core::model::{argmax_rows, infer_logits, BackboneSpec, FmceNetSpec};
use fmce_core::optim::AdamConfig;
use fmce_core::report::{parse_metrics_csv, summary_csv, svg_chart, table_text, SummaryRow};
use fmce_core::stats::RunStats;
use fmce_core::train::{train, write_metrics_csv, Objective, TrainConfig, TrainOutcome};
use fmce_core::{ParamSet, Partition};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{LabError, Result};

/// RAF values below 1 that are compared against the baseline in reports.
pub const DIRECTION_GRID: [f64; 5] = [0.95, 0.9, 0.8, 0.75, 0.7];

pub const STOPPING_RULE: &str = "fixed epoch budget with early stop once the test loss has not reached a new minimum for `patience` epochs; a substitute for a convergence-point stopping rule";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub subset_seed: u64,
    pub norm_mean: Vec<f32>,
    pub norm_std: Vec<f32>,
}

impl DatasetInfo {
    pub fn backbone(&self) -> BackboneSpec {
        BackboneSpec::desk(self.channels, self.height, self.width, self.classes)
    }

    pub fn normalization(&self) -> Normalization {
        Normalization {
            mean: self.norm_mean.clone(),
            std: self.norm_std.clone(),
        }
    }
}

/// Normalized train and test splits plus their description.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub info: DatasetInfo,
    pub train: ImageDataset,
    pub test: ImageDataset,
}

#[derive(Serialize)]
struct OptimizerMeta {
    name: &'static str,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr_max: f64,
    lr_min: f64,
    schedule: &'static str,
}

#[derive(Serialize)]
struct ThreadsMeta {
    /// `FMCE_LAB_THREADS`: parallel sweep cells / harvest workers.
    workers: usize,
    /// Threads per numerical kernel.
    kernel: usize,
}

#[derive(Serialize)]
struct Metadata<'a> {
    code_version: &'static str,
    stage: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raf: Option<f64>,
    loss_convention: &'static str,
    stopping_rule: &'static str,
    threads: ThreadsMeta,
    optimizer: OptimizerMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<&'a DatasetInfo>,
    config: &'a ExperimentConfig,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn write_metadata(
    dir: &Path,
    cfg: &ExperimentConfig,
    stage: &'static str,
    seed: Option<u64>,
    raf: Option<f64>,
    dataset: Option<&DatasetInfo>,
) -> Result<()> {
    let adam = AdamConfig::default();
    let meta = Metadata {
        code_version: env!("CARGO_PKG_VERSION"),
        stage,
        seed,
        raf,
        loss_convention: RalConfig::CONVENTION,
        stopping_rule: STOPPING_RULE,
        threads: ThreadsMeta {
            workers: ExperimentConfig::threads()?,
            kernel: 1,
        },
        optimizer: OptimizerMeta {
            name: "adam",
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lr_max: cfg.lr_max,
            lr_min: cfg.lr_min,
            schedule: "cosine annealing per epoch",
        },
        dataset,
        config: cfg,
    };
    let text = toml::to_string(&meta).map_err(|e| LabError::Config(format!("metadata: {e}")))?;
    write_text(&dir.join("metadata.toml"), &text)
}

fn require(path: PathBuf, producer: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(LabError::MissingArtifact { path, producer })
    }
}

pub fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

pub fn baseline_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join("baseline").join(format!("seed-{seed}"))
}

pub fn cell_dir(root: &Path, raf: f64, seed: u64) -> PathBuf {
    root.join(format!("raf-{raf}")).join(format!("seed-{seed}"))
}

fn first_existing(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| LabError::Config(format!("none of {names:?} found in {}", dir.display())))
}

fn load_source(cfg: &ExperimentConfig) -> Result<(ImageDataset, ImageDataset)> {
    let dir = &cfg.data_dir;
    Ok(match cfg.dataset {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let f = |stem: &str| first_existing(dir, &[&format!("{stem}.gz"), stem]);
            (
                load_idx(&f("train-images-idx3-ubyte")?, &f("train-labels-idx1-ubyte")?, Split::Train)?,
                load_idx(&f("t10k-images-idx3-ubyte")?, &f("t10k-labels-idx1-ubyte")?, Split::Test)?,
            )
        }
        DatasetKind::Cifar10 => {
            let train: Vec<PathBuf> = (1..=5)
                .map(|i| first_existing(dir, &[&format!("data_batch_{i}.bin")]))
                .collect::<Result<_>>()?;
            let test = vec![first_existing(dir, &["test_batch.bin"])?];
            (
                load_cifar_binary(&train, CifarLabels::Ten, Split::Train)?,
                load_cifar_binary(&test, CifarLabels::Ten, Split::Test)?,
            )
        }
        DatasetKind::Cifar100 => (
            load_cifar_binary(&[first_existing(dir, &["train.bin"])?], CifarLabels::Hundred, Split::Train)?,
            load_cifar_binary(&[first_existing(dir, &["test.bin"])?], CifarLabels::Hundred, Split::Test)?,
        ),
        DatasetKind::Blobs => {
            let (c, n, s) = (cfg.blob_classes, cfg.blob_per_class, cfg.blob_size);
            let test_per_class = (n / 4).max(1);
            (
                synthetic_blobs(c, n, s, cfg.subset_seed)?,
                synthetic_blobs(c, test_per_class, s, cfg.subset_seed ^ 0x7465_7374)?.with_split(Split::Test),
            )
        }
    })
}

/// Subsets the source dataset, fits normalization on the train split and
/// writes both splits as IDX files.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<DatasetInfo> {
    let (train, test) = load_source(cfg)?;
    let classes = train.classes().max(test.classes());
    let train = train.subset(cfg.train_subset, cfg.subset_seed)?.with_classes(classes)?;
    let test = test.subset(cfg.test_subset, cfg.subset_seed.wrapping_add(1))?.with_classes(classes)?;
    let norm = Normalization::fit(&train);
    let [channels, height, width] = train.image_dims();
    let info = DatasetInfo {
        name: cfg.dataset.name().to_string(),
        classes,
        channels,
        height,
        width,
        train_images: train.len(),
        test_images: test.len(),
        subset_seed: cfg.subset_seed,
        norm_mean: norm.mean,
        norm_std: norm.std,
    };
    let dir = data_dir(cfg);
    write_idx(&train, &dir.join("train-images.idx.gz"), &dir.join("train-labels.idx.gz"))?;
    write_idx(&test, &dir.join("test-images.idx.gz"), &dir.join("test-labels.idx.gz"))?;
    let text = toml::to_string(&info).map_err(|e| LabError::Config(format!("dataset info: {e}")))?;
    write_text(&dir.join("dataset.toml"), &text)?;
    write_metadata(&dir, cfg, "prepare-data", None, None, Some(&info))?;
    log::info!("prepared {} train / {} test images of {}", info.train_images, info.test_images, info.name);
    Ok(info)
}

pub fn load_prepared(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dir = data_dir(cfg);
    let info_path = require(dir.join("dataset.toml"), "prepare-data")?;
    let text = std::fs::read_to_string(&info_path).map_err(|e| LabError::io(&info_path, e))?;
    let info: DatasetInfo = toml::from_str(&text)
        .map_err(|e| fmce_core::FmceError::format(info_path.display(), e.to_string()))?;
    let load = |split: Split, stem: &str| -> Result<ImageDataset> {
        let images = require(dir.join(format!("{stem}-images.idx.gz")), "prepare-data")?;
        let labels = require(dir.join(format!("{stem}-labels.idx.gz")), "prepare-data")?;
        Ok(load_idx(&images, &labels, split)?
            .with_classes(info.classes)?
            .with_normalization(info.normalization())?)
    };
    let train = load(Split::Train, "train")?;
    let test = load(Split::Test, "test")?;
    Ok(Prepared { info, train, test })
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        lr_max: cfg.lr_max,
        lr_min: cfg.lr_min,
        patience: (cfg.patience > 0).then_some(cfg.patience),
        ..TrainConfig::default()
    }
}

/// Baseline training for every configured seed, saving a checkpoint per epoch.
pub fn train_baseline(cfg: &ExperimentConfig) -> Result<Vec<TrainOutcome>> {
    let data = load_prepared(cfg)?;
    let spec = data.info.backbone();
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let dir = baseline_dir(cfg, seed);
        let ckpt_dir = dir.join("checkpoints");
        let mut save = |p: &ParamSet<f32>, m: &fmce_core::train::EpochMetrics| -> fmce_core::Result<()> {
            save_checkpoint(&ckpt_dir.join(format!("epoch-{:03}.fmce", m.epoch)), p)
        };
        let out = train(&spec, &train_config(cfg, seed), &Objective::Baseline, &data.train, &data.test, &mut save)?;
        write_metrics_csv(&dir.join("metrics.csv"), &out.metrics)?;
        save_checkpoint(&dir.join("final.fmce"), &out.params)?;
        write_metadata(&dir, cfg, "train-baseline", Some(seed), Some(1.0), Some(&data.info))?;
        log::info!("baseline seed {seed}: {:.2}% after {} epochs", out.final_test_acc(), out.metrics.len());
        outcomes.push(out);
    }
    Ok(outcomes)
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    levels: usize,
    method: String,
    source_seed: u64,
    epochs: Vec<usize>,
    loss_curve: Vec<f64>,
}

/// Selects K checkpoints of the harvest seed's baseline run and stores the
/// training-set feature maps of each.
pub fn harvest(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let data = load_prepared(cfg)?;
    let spec = data.info.backbone();
    let bdir = baseline_dir(cfg, cfg.harvest_seed);
    let metrics_path = require(bdir.join("metrics.csv"), "train-baseline")?;
    let text = std::fs::read_to_string(&metrics_path).map_err(|e| LabError::io(&metrics_path, e))?;
    let curve: Vec<f64> = parse_metrics_csv(&metrics_path.display().to_string(), &text)?
        .iter()
        .map(|m| m.loss_ral)
        .collect();
    let schedule = select_checkpoints(&curve, cfg.levels)?;
    let checkpoints = schedule
        .epochs
        .iter()
        .map(|e| {
            let path = require(bdir.join("checkpoints").join(format!("epoch-{e:03}.fmce")), "train-baseline")?;
            Ok(load_checkpoint(&path)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = harvest_feature_maps(&checkpoints, &spec, &data.train, 500, ExperimentConfig::threads()?)?;
    let dir = cfg.out_dir.join("fmcs");
    let path = dir.join("fmcs.bin");
    save_fmcs(&path, &ds)?;
    let sched = ScheduleFile {
        levels: schedule.levels,
        method: schedule.method.to_string(),
        source_seed: cfg.harvest_seed,
        epochs: schedule.epochs.clone(),
        loss_curve: schedule.curve,
    };
    let text = toml::to_string(&sched).map_err(|e| LabError::Config(format!("schedule: {e}")))?;
    write_text(&dir.join("schedule.toml"), &text)?;
    write_metadata(&dir, cfg, "harvest", Some(cfg.harvest_seed), None, Some(&data.info))?;
    log::info!("harvested {} records at epochs {:?}", ds.len(), schedule.epochs);
    Ok(path)
}

pub fn fmce_spec(cfg: &ExperimentConfig, backbone: &BackboneSpec) -> Result<FmceNetSpec> {
    let mut spec = FmceNetSpec::for_backbone(backbone, cfg.levels)?;
    spec.channels = cfg.fmce_channels;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmceResults {
    pub levels: usize,
    pub records: usize,
    pub validation_images: usize,
    pub initial_val_acc: f64,
    pub val_acc: f64,
    pub spearman: f64,
    pub fmce_params: usize,
    pub backbone_params: usize,
    pub losses: Vec<f64>,
}

/// Trains FMCE-Net on the harvested FMCS dataset and stores the frozen θ*.
pub fn train_fmce(cfg: &ExperimentConfig) -> Result<FmceResults> {
    let data = load_prepared(cfg)?;
    let backbone = data.info.backbone();
    let path = require(cfg.out_dir.join("fmcs").join("fmcs.bin"), "harvest")?;
    let ds = load_fmcs(&path)?;
    if ds.levels() != cfg.levels {
        return Err(LabError::Config(format!(
            "FMCS dataset has K = {} but the configuration asks for {}; re-run `fmce-lab harvest`",
            ds.levels(),
            cfg.levels
        )));
    }
    let spec = fmce_spec(cfg, &backbone)?;
    let tcfg = FmceTrainConfig {
        epochs: cfg.fmce_epochs,
        batch_size: cfg.fmce_batch_size,
        lr_max: cfg.lr_max,
        lr_min: cfg.lr_min,
        seed: cfg.fmce_seed,
        ..FmceTrainConfig::default()
    };
    let out = train_fmce_net(&ds, &spec, &tcfg)?;
    let dir = cfg.out_dir.join("fmce");
    save_checkpoint(&dir.join("theta.fmce"), &out.theta)?;
    let results = FmceResults {
        levels: ds.levels(),
        records: ds.len(),
        validation_images: out.val_images.len(),
        initial_val_acc: out.initial_val_acc,
        val_acc: out.val_acc,
        spearman: out.spearman,
        fmce_params: out.theta.numel(Partition::Fmce),
        backbone_params: fmce_core::model::build_backbone::<f32>(&backbone, 0)?.numel(Partition::Backbone),
        losses: out.losses,
    };
    let text = toml::to_string(&results).map_err(|e| LabError::Config(format!("results: {e}")))?;
    write_text(&dir.join("results.toml"), &text)?;
    write_metadata(&dir, cfg, "train-fmce", Some(cfg.fmce_seed), None, Some(&data.info))?;
    log::info!(
        "FMCE-Net: held-out accuracy {:.3} (chance {:.3}), spearman {:.3}",
        results.val_acc,
        1.0 / ds.levels() as f64,
        results.spearman
    );
    Ok(results)
}

/// The stored θ*, frozen.
pub fn load_theta(cfg: &ExperimentConfig) -> Result<ParamSet<f32>> {
    let path = require(cfg.out_dir.join("fmce").join("theta.fmce"), "train-fmce")?;
    let mut theta = load_checkpoint(&path)?;
    if theta.len() != theta.select(Partition::Fmce).len() {
        return Err(fmce_core::FmceError::format(path.display(), "θ file holds non-FMCE parameters").into());
    }
    theta.freeze(Partition::Fmce)?;
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub raf: f64,
    pub seed: u64,
    pub final_acc: f64,
    pub epochs: usize,
}

/// Joint training over `raf × seeds` into `root`, cells spread over
/// `FMCE_LAB_THREADS` workers. Results come back in grid order.
pub fn run_grid(cfg: &ExperimentConfig, root: &Path, stage: &'static str) -> Result<Vec<CellResult>> {
    let data = load_prepared(cfg)?;
    let theta = load_theta(cfg)?;
    let backbone = data.info.backbone();
    let fspec = fmce_spec(cfg, &backbone)?;
    let cells: Vec<(f64, u64)> = cfg
        .raf
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let run_cell = |&(raf, seed): &(f64, u64)| -> Result<CellResult> {
        let objective = Objective::Joint {
            theta: theta.clone(),
            fmce: fspec,
            ral: RalConfig::new(raf)?,
        };
        let out = train(&backbone, &train_config(cfg, seed), &objective, &data.train, &data.test, &mut |_, _| Ok(()))?;
        let dir = cell_dir(root, raf, seed);
        write_metrics_csv(&dir.join("metrics.csv"), &out.metrics)?;
        save_checkpoint(&dir.join("final.fmce"), &out.params)?;
        write_metadata(&dir, cfg, stage, Some(seed), Some(raf), Some(&data.info))?;
        log::info!("RAF {raf} seed {seed}: {:.2}% after {} epochs", out.final_test_acc(), out.metrics.len());
        Ok(CellResult {
            raf,
            seed,
            final_acc: out.final_test_acc(),
            epochs: out.metrics.len(),
        })
    };

    let workers = ExperimentConfig::threads()?.min(cells.len());
    if workers <= 1 {
        return cells.iter().map(run_cell).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(&cells[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

pub fn train_plusplus(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    run_grid(cfg, &cfg.out_dir.join("plusplus"), "train-plusplus")
}

/// Summary rows (RAF in first-seen order) from cell results.
pub fn summarize(backbone: &str, dataset: &str, cells: &[CellResult]) -> Result<Vec<SummaryRow>> {
    let mut order: Vec<f64> = Vec::new();
    let mut by_raf: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for c in cells {
        if !order.contains(&c.raf) {
            order.push(c.raf);
        }
        by_raf.entry(c.raf.to_bits()).or_default().push(c.final_acc);
    }
    order
        .into_iter()
        .map(|raf| {
            Ok(SummaryRow {
                backbone: backbone.to_string(),
                dataset: dataset.to_string(),
                raf,
                stats: RunStats::new(&by_raf[&raf.to_bits()])?,
            })
        })
        .collect()
}

/// Full RAF × seed grid plus `sweep/summary.csv`.
pub fn sweep(cfg: &ExperimentConfig) -> Result<(Vec<CellResult>, PathBuf)> {
    let root = cfg.out_dir.join("sweep");
    let cells = run_grid(cfg, &root, "sweep")?;
    let rows = summarize(&cfg.backbone, cfg.dataset.name(), &cells)?;
    let path = root.join("summary.csv");
    write_text(&path, &summary_csv(&rows))?;
    Ok((cells, path))
}

/// Everything `report` renders.
#[derive(Clone, Debug)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub table: String,
    pub svg: String,
}

/// Reads `raf-*/seed-*/metrics.csv` under `runs`, recomputes per-RAF
/// statistics of the final test accuracy, and renders the table and chart.
pub fn build_report(runs: &Path, backbone: &str, dataset: &str) -> Result<Report> {
    let mut per_raf: BTreeMap<String, (f64, Vec<Vec<(usize, f64)>>)> = BTreeMap::new();
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| LabError::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    for raf_dir in read_dir(runs)? {
        let name = raf_dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let Some(raf_text) = name.strip_prefix("raf-") else { continue };
        let raf: f64 = raf_text
            .parse()
            .map_err(|_| LabError::Config(format!("cannot read RAF from directory `{name}`")))?;
        for seed_dir in read_dir(&raf_dir)? {
            let path = seed_dir.join("metrics.csv");
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
            let rows = parse_metrics_csv(&path.display().to_string(), &text)?;
            let curve = rows.iter().map(|m| (m.epoch, m.test_acc)).collect();
            per_raf.entry(raf_text.to_string()).or_insert((raf, Vec::new())).1.push(curve);
        }
    }
    if per_raf.is_empty() {
        return Err(LabError::MissingArtifact {
            path: runs.join("raf-*/seed-*/metrics.csv"),
            producer: "sweep",
        });
    }
    let mut groups: Vec<(f64, Vec<Vec<(usize, f64)>>)> = per_raf.into_values().collect();
    groups.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (raf, curves) in &groups {
        let finals: Vec<f64> = curves.iter().map(|c| c.last().expect("non-empty").1).collect();
        rows.push(SummaryRow {
            backbone: backbone.to_string(),
            dataset: dataset.to_string(),
            raf: *raf,
            stats: RunStats::new(&finals)?,
        });
        let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
        let mean_curve = (0..longest)
            .map(|i| {
                let vals: Vec<f64> = curves.iter().filter_map(|c| c.get(i).map(|p| p.1)).collect();
                (i + 1, vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        series.push((format!("RAF {raf}"), mean_curve));
    }
    let table = table_text(&rows, &DIRECTION_GRID);
    let svg = svg_chart(&format!("{backbone} on {dataset}: mean test accuracy"), &series);
    Ok(Report { rows, table, svg })
}

/// Renders the report for `runs` (default `<out>/sweep`) into `<out>/report`.
pub fn report(cfg: &ExperimentConfig, runs: Option<&Path>) -> Result<Report> {
    let default = cfg.out_dir.join("sweep");
    let runs = runs.unwrap_or(&default);
    if !runs.is_dir() {
        return Err(LabError::MissingArtifact {
            path: runs.to_path_buf(),
            producer: "sweep",
        });
    }
    let rep = build_report(runs, &cfg.backbone, cfg.dataset.name())?;
    let dir = cfg.out_dir.join("report");
    write_text(&dir.join("table.txt"), &rep.table)?;
    write_text(&dir.join("summary.csv"), &summary_csv(&rep.rows))?;
    write_text(&dir.join("accuracy.svg"), &rep.svg)?;
    write_metadata(&dir, cfg, "report", None, None, None)?;
    Ok(rep)
}

/// Grad-CAM overlays of the predicted class for the configured test images.
pub fn gradcam_stage(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let data = load_prepared(cfg)?;
    let spec = data.info.backbone();
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => require(baseline_dir(cfg, cfg.seeds[0]).join("final.fmce"), "train-baseline")?,
    };
    let params = load_checkpoint(&path)?;
    let dir = cfg.out_dir.join("gradcam");
    let [c, h, w] = data.test.image_dims();
    let mut written = Vec::new();
    for &i in &cfg.gradcam_indices {
        if i >= data.test.len() {
            return Err(LabError::Config(format!("image index {i} outside the {}-image test split", data.test.len())));
        }
        let image = data.test.gather(&[i])?;
        let class = argmax_rows(&infer_logits(&params, &spec, &image)?)[0];
        let heat = gradcam(&params, &spec, &image, class)?;
        let out = dir.join(format!("img-{i:05}-class-{class}.ppm"));
        export_overlay(&heat, data.test.raw_image(i), c, h, w, &out)?;
        written.push(out);
    }
    write_metadata(&dir, cfg, "gradcam", None, None, Some(&data.info))?;
    Ok(written)
}
