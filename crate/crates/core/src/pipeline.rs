//! End-to-end pipeline orchestration with a reproducibility manifest.
//!
//! Stages communicate exclusively through files in the output directory, so
//! any contiguous suffix of the pipeline can rerun against cached artifacts.
//! The manifest records the config snapshot, the derived seeds, and a SHA-256
//! digest of every file each stage read or wrote; a digest mismatch on a
//! cached artifact aborts the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    characterize_cluster, classification_harness, confusion, direct_vectors, kmeans,
    nearest_bands_direct, nearest_bands_embedding, purity, Classifier, FeatureSpace,
};
use crate::artifacts;
use crate::banding::{build_band_table, TokenId};
use crate::config::{derive_seed, PipelineConfig};
use crate::embed::{band_contexts, CooccurrenceTable, EmbeddingModel};
use crate::error::{Error, Result};
use crate::hypercube::Hypercube;
use crate::segments::{assign_segments, monotone_histogram, segment_means, tree_geometry};
use crate::synth::generate_scene;
use crate::treevec::all_tree_vectors;
use crate::treex::{extract_trees, LeafMask};
use crate::vegindex::{compute_all, ALL_INDICES};

/// Pipeline stages in execution order. `Synth` only runs when the config
/// does not name an input cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Extract,
    Indices,
    Segment,
    Band,
    Train,
    Vectors,
    Analyze,
}

impl Stage {
    pub const ORDER: [Stage; 8] = [
        Stage::Synth,
        Stage::Extract,
        Stage::Indices,
        Stage::Segment,
        Stage::Band,
        Stage::Train,
        Stage::Vectors,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Extract => "extract",
            Stage::Indices => "indices",
            Stage::Segment => "segment",
            Stage::Band => "band",
            Stage::Train => "train",
            Stage::Vectors => "vectors",
            Stage::Analyze => "analyze",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Stage::ORDER.iter().copied().find(|s| s.name() == name)
    }
}

/// Canonical artifact paths inside an output directory.
#[derive(Debug, Clone)]
pub struct StagePaths {
    out_dir: PathBuf,
}

impl StagePaths {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn join(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn scene_header(&self) -> PathBuf {
        self.join("scene.hdr")
    }

    pub fn scene_payload(&self) -> PathBuf {
        self.join("scene.raw")
    }

    pub fn truth(&self) -> PathBuf {
        self.join("truth.csv")
    }

    pub fn trees(&self) -> PathBuf {
        self.join("trees.csv")
    }

    pub fn tree_summary(&self) -> PathBuf {
        self.join("trees_summary.json")
    }

    pub fn indices(&self) -> PathBuf {
        self.join("indices.csv")
    }

    pub fn segments(&self) -> PathBuf {
        self.join("segments.csv")
    }

    pub fn monotone_histogram(&self) -> PathBuf {
        self.join("monotone_histogram.csv")
    }

    pub fn bands(&self) -> PathBuf {
        self.join("bands.csv")
    }

    pub fn thresholds(&self) -> PathBuf {
        self.join("thresholds.json")
    }

    pub fn model(&self) -> PathBuf {
        self.join("model.json")
    }

    pub fn loss_history(&self) -> PathBuf {
        self.join("loss_history.csv")
    }

    pub fn embedding_matrix(&self) -> PathBuf {
        self.join("embeddings.csv")
    }

    pub fn tree_vectors(&self) -> PathBuf {
        self.join("tree_vectors.csv")
    }

    pub fn direct_vectors(&self) -> PathBuf {
        self.join("direct_vectors.csv")
    }

    pub fn clusters(&self, space: FeatureSpace) -> PathBuf {
        self.join(&format!("clusters_{}.csv", space.name()))
    }

    pub fn confusion(&self) -> PathBuf {
        self.join("confusion.csv")
    }

    pub fn purity(&self) -> PathBuf {
        self.join("purity.json")
    }

    pub fn accuracy(&self, space: FeatureSpace, algorithm: Classifier) -> PathBuf {
        self.join(&format!(
            "accuracy_{}_{}.csv",
            space.name(),
            algorithm.name()
        ))
    }

    pub fn characterization(&self, cluster: u32) -> PathBuf {
        self.join(&format!("characterize_cluster_{cluster}.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.join("manifest.json")
    }
}

/// Digest record of one executed (or cached) stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub cached: bool,
    /// File name -> SHA-256, for everything the stage read.
    pub inputs: BTreeMap<String, String>,
    /// File name -> SHA-256, for everything the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

/// Everything needed to reproduce a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub paper_sentinel: bool,
    pub config: PipelineConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub out_dir: PathBuf,
    /// First stage to execute; earlier stages must have cached outputs that
    /// match the previous manifest.
    pub from: Option<Stage>,
    /// Export outlier cells as the legacy -1000000 sentinel instead of an
    /// empty field.
    pub paper_sentinel: bool,
}

impl PipelineOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            from: None,
            paper_sentinel: false,
        }
    }
}

struct StageIo {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

/// Runs the configured stages in order and writes `manifest.json`.
pub fn run_pipeline(config: &PipelineConfig, options: &PipelineOptions) -> Result<RunManifest> {
    config.validate()?;
    let paths = StagePaths::new(&options.out_dir);
    std::fs::create_dir_all(paths.out_dir()).map_err(|e| Error::io(paths.out_dir(), e))?;

    let uses_synth = config.cube.is_none();
    let cube_path = match &config.cube {
        Some(path) => path.clone(),
        None => paths.scene_header(),
    };

    let stages: Vec<Stage> = Stage::ORDER
        .iter()
        .copied()
        .filter(|s| *s != Stage::Synth || uses_synth)
        .collect();

    let from = options.from.unwrap_or(stages[0]);
    if !stages.contains(&from) {
        return Err(Error::Config(format!(
            "stage `{}` is not part of this run",
            from.name()
        )));
    }

    let previous: Option<RunManifest> = if stages[0] < from {
        Some(artifacts::read_json(&paths.manifest())?)
    } else {
        None
    };

    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        paper_sentinel: options.paper_sentinel,
        config: config.clone(),
        stages: BTreeMap::new(),
    };

    for stage in stages {
        if stage < from {
            let record =
                verify_cached_stage(stage, previous.as_ref().expect("manifest loaded"), &paths)?;
            manifest.stages.insert(stage.name().to_string(), record);
            continue;
        }
        let io = execute_stage(stage, config, options, &paths, &cube_path)
            .map_err(|e| e.in_stage(stage.name()))?;
        let mut record = StageRecord::default();
        for input in &io.inputs {
            record
                .inputs
                .insert(file_key(input), artifacts::file_digest(input)?);
        }
        for output in &io.outputs {
            record
                .outputs
                .insert(file_key(output), artifacts::file_digest(output)?);
        }
        manifest.stages.insert(stage.name().to_string(), record);
    }

    artifacts::write_json(&paths.manifest(), &manifest)?;
    Ok(manifest)
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// Executes a single stage against the artifacts already in the output
/// directory, without manifest bookkeeping. The per-stage CLI subcommands
/// build on this.
pub fn run_stage(stage: Stage, config: &PipelineConfig, options: &PipelineOptions) -> Result<()> {
    config.validate()?;
    let paths = StagePaths::new(&options.out_dir);
    std::fs::create_dir_all(paths.out_dir()).map_err(|e| Error::io(paths.out_dir(), e))?;
    let cube_path = match &config.cube {
        Some(path) => path.clone(),
        None => paths.scene_header(),
    };
    execute_stage(stage, config, options, &paths, &cube_path)
        .map(|_| ())
        .map_err(|e| e.in_stage(stage.name()))
}

/// A cached stage passes when every output recorded in the previous manifest
/// still exists in the output directory with the same digest.
fn verify_cached_stage(
    stage: Stage,
    previous: &RunManifest,
    paths: &StagePaths,
) -> Result<StageRecord> {
    let record = previous.stages.get(stage.name()).ok_or_else(|| {
        Error::Config(format!(
            "previous manifest has no `{}` stage to reuse",
            stage.name()
        ))
    })?;
    for (name, digest) in &record.outputs {
        let path = paths.out_dir().join(name);
        if &artifacts::file_digest(&path)? != digest {
            return Err(Error::StaleCache { path });
        }
    }
    Ok(StageRecord {
        cached: true,
        inputs: record.inputs.clone(),
        outputs: record.outputs.clone(),
    })
}

fn execute_stage(
    stage: Stage,
    config: &PipelineConfig,
    options: &PipelineOptions,
    paths: &StagePaths,
    cube_path: &Path,
) -> Result<StageIo> {
    match stage {
        Stage::Synth => stage_synth(config, paths),
        Stage::Extract => stage_extract(config, paths, cube_path),
        Stage::Indices => stage_indices(config, paths, cube_path),
        Stage::Segment => stage_segment(config, paths),
        Stage::Band => stage_band(config, options, paths),
        Stage::Train => stage_train(config, paths),
        Stage::Vectors => stage_vectors(config, paths),
        Stage::Analyze => stage_analyze(config, paths),
    }
}

fn stage_synth(config: &PipelineConfig, paths: &StagePaths) -> Result<StageIo> {
    let (cube, truths) = generate_scene(&config.synth, derive_seed(config.seed, "synth"))?;
    cube.save(&paths.scene_header())?;
    artifacts::write_truth(&paths.truth(), &truths)?;
    Ok(StageIo {
        inputs: vec![],
        outputs: vec![paths.scene_header(), paths.scene_payload(), paths.truth()],
    })
}

fn stage_extract(config: &PipelineConfig, paths: &StagePaths, cube_path: &Path) -> Result<StageIo> {
    let cube = Hypercube::load(cube_path)?;
    let mut mask = LeafMask::classify(&cube, &config.extract.filter);
    mask.mark_connected_grids(config.extract.grid_size, config.extract.grid_min_leaf);
    let trees = extract_trees(&mask, config.extract.min_tree_pixels);
    artifacts::write_trees(&paths.trees(), &trees)?;
    artifacts::write_tree_summary(&paths.tree_summary(), &trees)?;
    Ok(StageIo {
        inputs: cube_pair(cube_path),
        outputs: vec![paths.trees(), paths.tree_summary()],
    })
}

fn stage_indices(config: &PipelineConfig, paths: &StagePaths, cube_path: &Path) -> Result<StageIo> {
    let cube = Hypercube::load(cube_path)?;
    let trees = artifacts::read_trees(&paths.trees())?;
    let mut rows = Vec::new();
    for tree in &trees {
        rows.extend(compute_all(&cube, tree, &config.indices));
    }
    artifacts::write_index_rows(&paths.indices(), &rows)?;
    let mut inputs = cube_pair(cube_path);
    inputs.push(paths.trees());
    Ok(StageIo {
        inputs,
        outputs: vec![paths.indices()],
    })
}

fn stage_segment(config: &PipelineConfig, paths: &StagePaths) -> Result<StageIo> {
    let trees = artifacts::read_trees(&paths.trees())?;
    let rows = artifacts::read_index_rows(&paths.indices())?;
    let n = config.segments.count;
    let mut profiles = Vec::with_capacity(trees.len());
    for tree in &trees {
        let tree_rows: Vec<_> = rows
            .iter()
            .filter(|r| r.tree_id == tree.id)
            .cloned()
            .collect();
        let geometry = tree_geometry(tree);
        let assignment = assign_segments(tree, &geometry, n);
        profiles.push(segment_means(tree, &assignment, &tree_rows, n)?);
    }
    artifacts::write_profiles(&paths.segments(), &profiles)?;
    let histograms: Vec<_> = ALL_INDICES
        .iter()
        .map(|index| (*index, monotone_histogram(&profiles, index.position(), n)))
        .collect();
    artifacts::write_monotone_histogram(&paths.monotone_histogram(), &histograms)?;
    Ok(StageIo {
        inputs: vec![paths.trees(), paths.indices()],
        outputs: vec![paths.segments(), paths.monotone_histogram()],
    })
}

fn stage_band(
    config: &PipelineConfig,
    options: &PipelineOptions,
    paths: &StagePaths,
) -> Result<StageIo> {
    let _ = config;
    let profiles = artifacts::read_profiles(&paths.segments())?;
    let table = build_band_table(&profiles)?;
    artifacts::write_band_table(&paths.bands(), &table, options.paper_sentinel)?;
    artifacts::write_thresholds(&paths.thresholds(), &table)?;
    Ok(StageIo {
        inputs: vec![paths.segments()],
        outputs: vec![paths.bands(), paths.thresholds()],
    })
}

fn stage_train(config: &PipelineConfig, paths: &StagePaths) -> Result<StageIo> {
    let table = artifacts::read_band_table(&paths.bands(), &paths.thresholds())?;
    let contexts = band_contexts(&table);
    let mut model = EmbeddingModel::init(
        contexts.vocab(),
        &config.embed,
        derive_seed(config.seed, "train"),
    );
    let history = model.train(&contexts)?;
    model.save(&paths.model())?;
    artifacts::write_loss_history(&paths.loss_history(), &history)?;
    artifacts::write_embedding_matrix(&paths.embedding_matrix(), &model)?;
    Ok(StageIo {
        inputs: vec![paths.bands(), paths.thresholds()],
        outputs: vec![
            paths.model(),
            paths.loss_history(),
            paths.embedding_matrix(),
        ],
    })
}

fn stage_vectors(config: &PipelineConfig, paths: &StagePaths) -> Result<StageIo> {
    let _ = config;
    let table = artifacts::read_band_table(&paths.bands(), &paths.thresholds())?;
    let profiles = artifacts::read_profiles(&paths.segments())?;
    let model = EmbeddingModel::load(&paths.model())?;
    let embeddings = all_tree_vectors(&table, &model)?;
    artifacts::write_tree_vectors(&paths.tree_vectors(), &embeddings)?;
    let direct = direct_vectors(&profiles, &table)?;
    artifacts::write_direct_vectors(&paths.direct_vectors(), &direct)?;
    Ok(StageIo {
        inputs: vec![
            paths.bands(),
            paths.thresholds(),
            paths.segments(),
            paths.model(),
        ],
        outputs: vec![paths.tree_vectors(), paths.direct_vectors()],
    })
}

fn stage_analyze(config: &PipelineConfig, paths: &StagePaths) -> Result<StageIo> {
    let embeddings = artifacts::read_tree_vectors(&paths.tree_vectors())?;
    let direct = artifacts::read_direct_vectors(&paths.direct_vectors())?;
    let table = artifacts::read_band_table(&paths.bands(), &paths.thresholds())?;
    let analysis = &config.analysis;

    let embed_features: Vec<Vec<f64>> = embeddings.iter().map(|v| v.values.clone()).collect();
    let embed_ids: Vec<u32> = embeddings.iter().map(|v| v.tree_id).collect();
    let direct_features: Vec<Vec<f64>> = direct.iter().map(|v| v.values.clone()).collect();
    let direct_ids: Vec<u32> = direct.iter().map(|v| v.tree_id).collect();

    let embedding_clusters = kmeans(
        &embed_features,
        &embed_ids,
        analysis.kmeans_k,
        derive_seed(config.seed, "kmeans:embedding"),
        FeatureSpace::Embedding,
        analysis,
    )?;
    let direct_clusters = kmeans(
        &direct_features,
        &direct_ids,
        analysis.kmeans_k,
        derive_seed(config.seed, "kmeans:direct"),
        FeatureSpace::Direct,
        analysis,
    )?;
    artifacts::write_clusters(&paths.clusters(FeatureSpace::Embedding), &embedding_clusters.assignment)?;
    artifacts::write_clusters(&paths.clusters(FeatureSpace::Direct), &direct_clusters.assignment)?;

    let matrix = confusion(&embedding_clusters.assignment, &direct_clusters.assignment)?;
    artifacts::write_confusion(&paths.confusion(), &matrix)?;
    let purity_value = purity(&embedding_clusters.assignment, &direct_clusters.assignment)?;
    artifacts::write_json(
        &paths.purity(),
        &artifacts::PuritySummary {
            purity: purity_value,
            trees: embed_ids.len(),
        },
    )?;

    let mut outputs = vec![
        paths.clusters(FeatureSpace::Embedding),
        paths.clusters(FeatureSpace::Direct),
        paths.confusion(),
        paths.purity(),
    ];

    // Each feature space is classified against its own k-means labels, so
    // neither representation borrows the other's structure.
    for (space, features, labels) in [
        (
            FeatureSpace::Embedding,
            &embed_features,
            &embedding_clusters.assignment.labels,
        ),
        (
            FeatureSpace::Direct,
            &direct_features,
            &direct_clusters.assignment.labels,
        ),
    ] {
        for algorithm in [Classifier::GaussianNaiveBayes, Classifier::MultinomialLogistic] {
            let rows = classification_harness(
                features,
                labels,
                algorithm,
                analysis,
                derive_seed(config.seed, &format!("classify:{}:{}", space.name(), algorithm.name())),
            )?;
            let path = paths.accuracy(space, algorithm);
            artifacts::write_accuracy(&path, &rows)?;
            outputs.push(path);
        }
    }

    for cluster in 1..=analysis.kmeans_k as u32 {
        let members = embedding_clusters.assignment.members(cluster);
        if members.is_empty() {
            continue;
        }
        let ranked = characterize_cluster(&members, &direct, &table, analysis.characterize_top)?;
        let path = paths.characterization(cluster);
        artifacts::write_characterization(&path, &ranked)?;
        outputs.push(path);
    }

    Ok(StageIo {
        inputs: vec![
            paths.tree_vectors(),
            paths.direct_vectors(),
            paths.bands(),
            paths.thresholds(),
        ],
        outputs,
    })
}

fn cube_pair(cube_path: &Path) -> Vec<PathBuf> {
    vec![
        cube_path.with_extension("hdr"),
        cube_path.with_extension("raw"),
    ]
}

/// Nearest-band query against the artifacts of a finished run; `space`
/// selects the trained model or the raw co-occurrence table.
pub fn neighbor_query(
    paths: &StagePaths,
    token: TokenId,
    n: usize,
    space: FeatureSpace,
    config: &PipelineConfig,
) -> Result<Vec<(TokenId, f64)>> {
    match space {
        FeatureSpace::Embedding => {
            let model = EmbeddingModel::load(&paths.model())?;
            nearest_bands_embedding(&model, token, n, config.analysis.nn_metric)
        }
        FeatureSpace::Direct => {
            let table = artifacts::read_band_table(&paths.bands(), &paths.thresholds())?;
            let contexts = CooccurrenceTable::from_band_table(&table);
            nearest_bands_direct(&contexts, token, n)
        }
    }
}
