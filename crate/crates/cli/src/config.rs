//! Experiment configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
    Cifar100,
    Blobs,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Blobs => "blobs",
        }
    }

    pub fn needs_files(self) -> bool {
        self != DatasetKind::Blobs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Directory with the raw dataset files (IDX or CIFAR binary).
    pub data_dir: PathBuf,
    pub train_subset: usize,
    pub test_subset: usize,
    pub subset_seed: u64,
    pub backbone: String,
    /// Number of FMCS levels K.
    pub levels: usize,
    pub raf: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early-stop patience in epochs; 0 disables early stopping.
    pub patience: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Baseline seed whose checkpoints feed the FMCS dataset.
    pub harvest_seed: u64,
    pub fmce_epochs: usize,
    pub fmce_batch_size: usize,
    pub fmce_channels: usize,
    pub fmce_seed: u64,
    pub out_dir: PathBuf,
    pub blob_classes: usize,
    pub blob_per_class: usize,
    pub blob_size: usize,
    pub gradcam_indices: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist-desk"),
            train_subset: 8000,
            test_subset: 2000,
            subset_seed: 0,
            backbone: "desk".into(),
            levels: 9,
            raf: vec![1.0, 0.95, 0.9, 0.85, 0.8, 0.78, 0.75, 0.7, 0.5, 0.0],
            seeds: vec![0, 1, 2],
            epochs: 30,
            batch_size: 16,
            patience: 5,
            lr_max: 1e-3,
            lr_min: 1e-5,
            harvest_seed: 0,
            fmce_epochs: 10,
            fmce_batch_size: 64,
            fmce_channels: 4,
            fmce_seed: 0,
            out_dir: PathBuf::from("runs"),
            blob_classes: 4,
            blob_per_class: 500,
            blob_size: 28,
            gradcam_indices: vec![0, 1, 2, 3],
        }
    }
}

/// Command-line values that replace file values when given.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<DatasetKind>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Output directory for all stage artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_subset: Option<usize>,
    #[arg(long, global = true)]
    pub test_subset: Option<usize>,
    /// Number of FMCS levels K.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Comma-separated RAF values, e.g. `1,0.9,0`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub raf: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub harvest_seed: Option<u64>,
    #[arg(long, global = true)]
    pub fmce_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub blob_per_class: Option<usize>,
    /// Comma-separated test-image indices for Grad-CAM.
    #[arg(long, global = true, value_delimiter = ',')]
    pub images: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// File values (or defaults), then command-line values, then validation.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($field:ident <- $flag:ident),* $(,)?) => {
                $(if let Some(v) = &o.$flag { cfg.$field = v.clone(); })*
            };
        }
        set!(
            dataset <- dataset,
            data_dir <- data_dir,
            out_dir <- out,
            train_subset <- train_subset,
            test_subset <- test_subset,
            levels <- levels,
            raf <- raf,
            seeds <- seeds,
            epochs <- epochs,
            batch_size <- batch_size,
            patience <- patience,
            harvest_seed <- harvest_seed,
            fmce_epochs <- fmce_epochs,
            blob_per_class <- blob_per_class,
            gradcam_indices <- images,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if let Some(r) = self.raf.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("raf value {r} outside [0, 1]"));
        }
        if self.raf.is_empty() {
            return bad("raf list is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.backbone != "desk" {
            return bad(format!("unknown backbone `{}` (available: desk)", self.backbone));
        }
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.levels > self.epochs {
            return bad(format!("{} levels need at least as many epochs, got {}", self.levels, self.epochs));
        }
        if self.batch_size == 0 || self.fmce_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.train_subset == 0 || self.test_subset == 0 {
            return bad("subset sizes must be at least 1".into());
        }
        if self.fmce_epochs == 0 || self.fmce_channels == 0 {
            return bad("fmce_epochs and fmce_channels must be positive".into());
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!("learning rates {} → {} are invalid", self.lr_max, self.lr_min));
        }
        if self.dataset.needs_files() && !self.data_dir.is_dir() {
            return bad(format!("data directory {} does not exist", self.data_dir.display()));
        }
        if self.dataset == DatasetKind::Blobs && (self.blob_classes < 2 || self.blob_per_class == 0 || self.blob_size < 8) {
            return bad("blobs need ≥ 2 classes, ≥ 1 image per class and size ≥ 8".into());
        }
        Ok(())
    }

    /// Number of parallel sweep workers from `FMCE_LAB_THREADS` (default 1).
    pub fn threads() -> Result<usize> {
        match std::env::var("FMCE_LAB_THREADS") {
            Err(_) => Ok(1),
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(LabError::Config(format!("FMCE_LAB_THREADS must be a positive integer, got `{v}`"))),
            },
        }
    }
}
