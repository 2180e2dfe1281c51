use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv, load_idx, normalize_pool, synth_blobs_with, synth_regression, BlobConfig, Dataset,
    Normalization, Pool,
};
use crate::dualhead::DualHeadConfig;
use crate::error::{Error, Result};
use crate::generate::AscentConfig;
use crate::losses::Targets;
use crate::numerics::{seeded_rng, Activation, MlpArchitecture};
use crate::pdcl::{Epsilon, PdclConfig};
use crate::selection::{AllyOptions, Strategy};

fn default_center_scale() -> f64 {
    2.0
}

/// Where the pool and test set come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        n_per_class: usize,
        n_classes: usize,
        dim: usize,
        spread: f64,
        #[serde(default = "default_center_scale")]
        center_scale: f64,
        /// Test samples per class, drawn independently.
        n_test_per_class: usize,
        #[serde(default)]
        seed: u64,
    },
    Regression {
        n: usize,
        dim: usize,
        noise: f64,
        n_test: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` training samples.
        #[serde(default)]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        target_columns: Vec<String>,
        #[serde(default)]
        feature_columns: Option<Vec<String>>,
        /// Share of rows held out as the test set.
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn is_regression(&self) -> bool {
        matches!(self, DatasetSpec::Regression { .. } | DatasetSpec::Csv { .. })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                fix(test_images);
                fix(test_labels);
            }
            DatasetSpec::Csv { path, .. } => fix(path),
            _ => {}
        }
    }
}

/// Backbone shape; input and output widths come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![256, 256],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n_trajectories: usize,
    pub ascent: AscentConfig,
    /// Image shape for PGM output; grids are skipped when unset.
    pub image_shape: Option<[usize; 2]>,
    /// Clip to the per-feature data range instead of `ascent.clip_range`.
    pub clip_to_data: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 16,
            ascent: AscentConfig::default(),
            image_shape: None,
            clip_to_data: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityConfig {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub dual_trials: usize,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            step: 1e-4,
            dual_trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Cluster counts for `sweep-clusters`; 1 and the budget are always added.
    pub k_values: Vec<usize>,
    pub clone_factor: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_values: Vec::new(),
            clone_factor: 10,
        }
    }
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec::Blobs {
        n_per_class: 500,
        n_classes: 4,
        dim: 10,
        spread: 1.0,
        center_scale: default_center_scale(),
        n_test_per_class: 250,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub normalization: Normalization,
    pub arch: ArchConfig,
    pub pdcl: PdclConfig,
    pub dual_head: DualHeadConfig,
    pub strategies: Vec<Strategy>,
    pub budget: usize,
    pub initial_labeled: usize,
    pub n_rounds: usize,
    /// Cluster count for ALLY; defaults to the budget.
    pub k_clusters: Option<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub ally: AllyOptions,
    pub sweep: SweepConfig,
    pub generate: GenerateConfig,
    pub duality: DualityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: default_dataset(),
            normalization: Normalization::None,
            arch: ArchConfig::default(),
            pdcl: PdclConfig::default(),
            dual_head: DualHeadConfig::default(),
            strategies: vec![Strategy::Ally, Strategy::Random],
            budget: 200,
            initial_labeled: 100,
            n_rounds: 5,
            k_clusters: None,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs/default"),
            ally: AllyOptions::default(),
            sweep: SweepConfig::default(),
            generate: GenerateConfig::default(),
            duality: DualityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. Relative data paths resolve against `base_dir`. When the
    /// dataset is a regression task and `pdcl.epsilon` is absent, the level
    /// defaults to 0.1 instead of 0.2.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg: ExperimentConfig = raw
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let eps_given = raw
            .get("pdcl")
            .and_then(|p| p.get("epsilon"))
            .is_some();
        if !eps_given && cfg.dataset.is_regression() {
            cfg.pdcl.epsilon = Epsilon::Scalar(0.1);
        }
        if let Some(base) = base_dir {
            cfg.dataset.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn k(&self) -> usize {
        self.k_clusters.unwrap_or(self.budget)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.k() == 0 || self.k() > self.budget {
            return bad(format!("k_clusters {} must lie in 1..={}", self.k(), self.budget));
        }
        if self.initial_labeled == 0 {
            return bad("initial_labeled must be at least 1".into());
        }
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1".into());
        }
        self.pdcl.validate().map_err(|e| Error::Config(format!("pdcl: {e}")))?;
        self.dual_head
            .validate()
            .map_err(|e| Error::Config(format!("dual_head: {e}")))?;
        if let DatasetSpec::Csv { test_fraction, .. } = &self.dataset {
            if !(0.0..1.0).contains(test_fraction) {
                return bad("test_fraction must lie in [0, 1)".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn architecture(&self, input_dim: usize, output_dim: usize) -> MlpArchitecture {
        MlpArchitecture {
            input_dim,
            hidden_dims: self.arch.hidden_dims.clone(),
            output_dim,
            activation: self.arch.activation,
            dual_hidden_dims: self.dual_head.hidden_dims.clone(),
        }
    }
}

fn split_test(pool: Pool, fraction: f64, seed: u64) -> Result<Pool> {
    let n = pool.len();
    let n_test = ((n as f64) * fraction).round() as usize;
    if n_test == 0 {
        return Err(Error::Config("test split is empty".into()));
    }
    let mut rng = seeded_rng(seed, 12);
    let mut test_idx = rand::seq::index::sample(&mut rng, n, n_test).into_vec();
    test_idx.sort_unstable();
    let mut is_test = vec![false; n];
    test_idx.iter().for_each(|&i| is_test[i] = true);
    let train_idx: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    let targets = pool.targets.clone().ok_or_else(|| Error::Config("CSV pool has no targets".into()))?;
    let test = Dataset::new(pool.features.select_rows(&test_idx), targets.select(&test_idx))?;
    let train = Pool::new(pool.features.select_rows(&train_idx), Some(targets.select(&train_idx)))?;
    train.with_test(test)
}

fn with_pool_test(pool: Pool, test: Pool) -> Result<Pool> {
    let targets = test
        .targets
        .ok_or_else(|| Error::Config("test set has no labels".into()))?;
    pool.with_test(Dataset::new(test.features, targets)?)
}

/// Builds the pool (all unlabeled) with its test set, then applies the
/// configured normalization fitted on the pool.
pub fn load_dataset(spec: &DatasetSpec, normalization: Normalization) -> Result<Pool> {
    let mut pool = match spec {
        DatasetSpec::Blobs {
            n_per_class,
            n_classes,
            dim,
            spread,
            center_scale,
            n_test_per_class,
            seed,
        } => {
            let cfg = BlobConfig {
                n_per_class: *n_per_class,
                n_classes: *n_classes,
                dim: *dim,
                spread: *spread,
                center_scale: *center_scale,
            };
            let pool = synth_blobs_with(&cfg, *seed)?;
            let test = synth_blobs_with(
                &BlobConfig {
                    n_per_class: *n_test_per_class,
                    ..cfg
                },
                seed.wrapping_add(0x7e57),
            )?;
            with_pool_test(pool, test)?
        }
        DatasetSpec::Regression {
            n,
            dim,
            noise,
            n_test,
            seed,
        } => {
            let pool = synth_regression(*n, *dim, *noise, *seed)?;
            let test = synth_regression(*n_test, *dim, *noise, seed.wrapping_add(0x7e57))?;
            with_pool_test(pool, test)?
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
        } => {
            let mut pool = load_idx(train_images, train_labels)?;
            if let Some(l) = limit {
                let keep: Vec<usize> = (0..(*l).min(pool.len())).collect();
                let targets = pool.targets.as_ref().map(|t| t.select(&keep));
                pool = Pool::new(pool.features.select_rows(&keep), targets)?;
            }
            let test = load_idx(test_images, test_labels)?;
            with_pool_test(pool, test)?
        }
        DatasetSpec::Csv {
            path,
            target_columns,
            feature_columns,
            test_fraction,
            seed,
        } => {
            let pool = load_csv(path, target_columns, feature_columns.as_deref())?;
            split_test(pool, *test_fraction, *seed)?
        }
    };
    if let Some(Targets::Classes { n_classes, .. }) = &pool.targets {
        // pool and test must agree on the class count
        if let Some(test) = &mut pool.test {
            if let Targets::Classes { n_classes: tn, .. } = &mut test.targets {
                *tn = (*tn).max(*n_classes);
            }
        }
        let tn = match pool.test.as_ref().map(|t| &t.targets) {
            Some(Targets::Classes { n_classes, .. }) => *n_classes,
            _ => *n_classes,
        };
        if let Some(Targets::Classes { n_classes, .. }) = &mut pool.targets {
            *n_classes = (*n_classes).max(tn);
        }
    }
    normalize_pool(&mut pool, normalization)?;
    Ok(pool)
}
