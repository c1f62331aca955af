//! Pipeline configuration: every tunable constant lives here with its default,
//! so a run is fully described by one config file plus a root seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Thresholds of the leaf-pixel filter. A pixel is a leaf pixel iff
/// ARI2 > `min_ari2`, SIPI > `min_sipi`, P900 < `max_p900`,
/// P780 > `min_p780`, and P660 < `max_p660`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeafFilterConfig {
    pub min_ari2: f64,
    pub min_sipi: f64,
    pub max_p900: f64,
    pub min_p780: f64,
    pub max_p660: f64,
}

impl Default for LeafFilterConfig {
    fn default() -> Self {
        Self {
            min_ari2: 0.80,
            min_sipi: 0.88,
            max_p900: 6000.0,
            min_p780: 2500.0,
            max_p660: 1000.0,
        }
    }
}

/// Tree extraction parameters: grid connectivity plus the minimum crown size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    /// Side length of the non-overlapping connectivity grids.
    pub grid_size: usize,
    /// Minimum leaf pixels for a grid to count as connected.
    pub grid_min_leaf: usize,
    /// Components retaining fewer leaf pixels than this are discarded.
    pub min_tree_pixels: usize,
    pub filter: LeafFilterConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            grid_size: 4,
            grid_min_leaf: 10,
            min_tree_pixels: 40,
            filter: LeafFilterConfig::default(),
        }
    }
}

/// Wavelengths (nm) substituted for the broadband tokens of the index catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BroadbandMap {
    pub nir: f64,
    pub red: f64,
    pub green: f64,
    pub blue: f64,
}

impl Default for BroadbandMap {
    fn default() -> Self {
        Self {
            nir: 800.0,
            red: 670.0,
            green: 550.0,
            blue: 445.0,
        }
    }
}

/// Vegetation-index evaluation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    /// Gamma of the atmospheric-resistance term in ARVI.
    pub gamma: f64,
    /// Swap the MRENVI / VREI2 catalog forms for their common literature
    /// variants instead of the forms implemented by default.
    pub literature_variants: bool,
    pub broadband: BroadbandMap,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            literature_variants: false,
            broadband: BroadbandMap::default(),
        }
    }
}

/// Crown segmentation: number of concentric segments per tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub count: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { count: 5 }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.count) {
            return Err(Error::Config(format!(
                "segments.count must be within 2..=8, got {}",
                self.count
            )));
        }
        Ok(())
    }
}

/// Embedding network architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    /// Weights are initialized uniformly in [-init_range, init_range].
    pub init_range: f64,
    /// Add bias terms to the hidden and output layers.
    pub use_bias: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 600,
            learning_rate: 1e-3,
            epochs: 2000,
            dropout_rate: 0.2,
            leaky_slope: 0.01,
            init_range: 0.05,
            use_bias: false,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Distance used for embedding-space neighbor queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMetric {
    Euclidean,
    Cosine,
}

/// Clustering, classification-harness, and neighbor-query settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub kmeans_k: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Test-set fractions swept by the classification harness.
    pub test_fractions: Vec<f64>,
    /// Random splits per fraction.
    pub repetitions: usize,
    /// Resampling attempts when a split leaves a class without training data.
    pub split_retries: usize,
    pub logistic_iters: usize,
    pub logistic_lr: f64,
    pub nn_metric: NeighborMetric,
    /// Bands reported per cluster by the characterization stage.
    pub characterize_top: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            kmeans_k: 4,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            test_fractions: (1..=12).map(|i| 0.04 * i as f64).collect(),
            repetitions: 100,
            split_retries: 20,
            logistic_iters: 300,
            logistic_lr: 0.5,
            nn_metric: NeighborMetric::Euclidean,
            characterize_top: 5,
        }
    }
}

/// Whole-pipeline configuration. Loadable from a TOML file with one section
/// per stage; omitted keys fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it by name.
    pub seed: u64,
    /// Input cube header path. When absent, the `synth` section supplies the scene.
    pub cube: Option<PathBuf>,
    pub extract: ExtractConfig,
    pub indices: IndexConfig,
    pub segments: SegmentConfig,
    pub embed: EmbedConfig,
    pub analysis: AnalysisConfig,
    pub synth: crate::synth::SceneConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.segments.validate()?;
        if self.extract.grid_size < 2 {
            return Err(Error::Config(format!(
                "extract.grid_size must be at least 2, got {}",
                self.extract.grid_size
            )));
        }
        if self.embed.epochs == 0 {
            return Err(Error::Config("embed.epochs must be at least 1".into()));
        }
        for f in &self.analysis.test_fractions {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Config(format!(
                    "analysis.test_fractions entries must lie in (0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Derives a named per-stage seed from the root seed. Stable across platforms
/// and releases, so a (seed, label) pair always reproduces the same stream.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is at least 8 bytes"))
}
