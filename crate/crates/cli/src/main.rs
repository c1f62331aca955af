//! crownvec: hyperspectral tree-crown pipeline CLI.
//!
//! Subcommands map onto the pipeline stages (synth, extract, indices,
//! segment, band, train, vectors), the analysis queries (cluster, purity,
//! classify, characterize, nn), and the orchestrated `run`. All stages
//! communicate through CSV/JSON artifacts in the output directory.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crownvec::analysis::{
    characterize_cluster, classification_harness, confusion, kmeans, purity, Classifier,
    FeatureSpace,
};
use crownvec::artifacts;
use crownvec::banding::TokenId;
use crownvec::config::{derive_seed, NeighborMetric, PipelineConfig};
use crownvec::pipeline::{
    neighbor_query, run_pipeline, run_stage, PipelineOptions, RunManifest, Stage, StagePaths,
};

#[derive(Parser)]
#[command(
    name = "crownvec",
    version,
    about = "Tree-crown extraction, vegetation-index banding, band embeddings, and tree-level analyses for hyperspectral cubes"
)]
struct Cli {
    /// TOML config file; omitted keys use the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for stage artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Export outlier band cells as the -1000000 sentinel instead of an
    /// empty field.
    #[arg(long, global = true)]
    paper_sentinel: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpaceArg {
    Embedding,
    Direct,
}

impl From<SpaceArg> for FeatureSpace {
    fn from(space: SpaceArg) -> Self {
        match space {
            SpaceArg::Embedding => FeatureSpace::Embedding,
            SpaceArg::Direct => FeatureSpace::Direct,
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Input cube (header path or pair stem); defaults to the config cube or
    /// the scene in the output directory.
    #[arg(long)]
    cube: Option<PathBuf>,
    /// Connectivity grid side length.
    #[arg(long)]
    grid_size: Option<usize>,
    /// Leaf pixels required to mark a grid connected.
    #[arg(long)]
    grid_min_leaf: Option<usize>,
    /// ARI2 leaf threshold.
    #[arg(long)]
    min_ari2: Option<f64>,
    /// SIPI leaf threshold.
    #[arg(long)]
    min_sipi: Option<f64>,
    /// Maximum 900 nm brightness for a leaf pixel.
    #[arg(long)]
    max_p900: Option<f64>,
    /// Minimum 780 nm brightness for a leaf pixel.
    #[arg(long)]
    min_p780: Option<f64>,
    /// Maximum 660 nm brightness for a leaf pixel.
    #[arg(long)]
    max_p660: Option<f64>,
    /// Minimum retained leaf pixels per tree.
    #[arg(long)]
    min_tree_pixels: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic orchard scene with ground truth.
    Synth,
    /// Extract tree crowns from a cube into trees.csv + trees_summary.json.
    Extract(ExtractArgs),
    /// Compute the 21 vegetation indices per tree pixel.
    Indices {
        #[arg(long)]
        cube: Option<PathBuf>,
        /// ARVI gamma.
        #[arg(long)]
        gamma: Option<f64>,
        /// Use the literature forms of MRENVI and VREI2.
        #[arg(long)]
        literature_variants: bool,
    },
    /// Divide crowns into concentric segments and average the indices.
    Segment {
        /// Segments per tree (2..=8).
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Normalize, screen outliers, and band every index column.
    Band,
    /// Train the band embedding against Jaccard co-occurrence targets.
    Train(TrainArgs),
    /// Assemble per-tree embedding vectors and the direct representation.
    Vectors,
    /// K-means over one tree representation.
    Cluster {
        #[arg(long, value_enum)]
        space: SpaceArg,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Agreement between two cluster assignment CSVs.
    Purity {
        /// First assignment (rows of tree_id,cluster).
        #[arg(long)]
        a: PathBuf,
        /// Second assignment.
        #[arg(long)]
        b: PathBuf,
    },
    /// Split-sweep classification accuracy on one representation.
    Classify {
        #[arg(long, value_enum)]
        space: SpaceArg,
        /// gaussian-naive-bayes (gnb) or multinomial-logistic (logistic).
        #[arg(long)]
        algorithm: String,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Comma-separated test fractions, e.g. 0.04,0.08,0.12.
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Rank the vegetation-index bands that characterize one embedding
    /// cluster.
    Characterize {
        #[arg(long)]
        cluster: u32,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Nearest vegetation-index bands of a token.
    Nn {
        /// Token name ("Low NDVI", "V. High SRI") or numeric id 1..=84.
        #[arg(long)]
        token: String,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, value_enum)]
        space: SpaceArg,
        /// euclidean or cosine (embedding space only).
        #[arg(long)]
        metric: Option<String>,
    },
    /// Run the full pipeline (or a suffix of it) per the config.
    Run {
        /// First stage to execute; earlier stages reuse cached artifacts.
        #[arg(long)]
        from: Option<String>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn options(cli: &Cli) -> PipelineOptions {
    PipelineOptions {
        out_dir: cli.out_dir.clone(),
        from: None,
        paper_sentinel: cli.paper_sentinel,
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut config = load_config(&cli)?;
    let opts = options(&cli);
    let paths = StagePaths::new(&cli.out_dir);

    match &cli.command {
        Command::Synth => {
            run_stage(Stage::Synth, &config, &opts)?;
            println!(
                "wrote {} and {}",
                paths.scene_header().display(),
                paths.truth().display()
            );
        }
        Command::Extract(args) => {
            apply_extract_args(&mut config, args);
            run_stage(Stage::Extract, &config, &opts)?;
            let summary: artifacts::TreeSummary = artifacts::read_json(&paths.tree_summary())?;
            println!(
                "extracted {} trees (sizes {:?}) -> {}",
                summary.tree_count,
                summary.sizes,
                paths.trees().display()
            );
        }
        Command::Indices {
            cube,
            gamma,
            literature_variants,
        } => {
            if let Some(cube) = cube {
                config.cube = Some(cube.clone());
            }
            if let Some(gamma) = gamma {
                config.indices.gamma = *gamma;
            }
            if *literature_variants {
                config.indices.literature_variants = true;
            }
            run_stage(Stage::Indices, &config, &opts)?;
            println!("wrote {}", paths.indices().display());
        }
        Command::Segment { segments } => {
            if let Some(n) = segments {
                config.segments.count = *n;
            }
            run_stage(Stage::Segment, &config, &opts)?;
            println!(
                "wrote {} and {}",
                paths.segments().display(),
                paths.monotone_histogram().display()
            );
        }
        Command::Band => {
            run_stage(Stage::Band, &config, &opts)?;
            println!(
                "wrote {} and {}",
                paths.bands().display(),
                paths.thresholds().display()
            );
        }
        Command::Train(args) => {
            if let Some(epochs) = args.epochs {
                config.embed.epochs = epochs;
            }
            if let Some(lr) = args.learning_rate {
                config.embed.learning_rate = lr;
            }
            if let Some(dropout) = args.dropout {
                config.embed.dropout_rate = dropout;
            }
            run_stage(Stage::Train, &config, &opts)?;
            println!(
                "wrote {}, {}, {}",
                paths.model().display(),
                paths.loss_history().display(),
                paths.embedding_matrix().display()
            );
        }
        Command::Vectors => {
            run_stage(Stage::Vectors, &config, &opts)?;
            println!(
                "wrote {} and {}",
                paths.tree_vectors().display(),
                paths.direct_vectors().display()
            );
        }
        Command::Cluster { space, k } => {
            let space: FeatureSpace = (*space).into();
            if let Some(k) = k {
                config.analysis.kmeans_k = *k;
            }
            let (features, ids) = load_features(&paths, space)?;
            let result = kmeans(
                &features,
                &ids,
                config.analysis.kmeans_k,
                derive_seed(config.seed, &format!("kmeans:{}", space.name())),
                space,
                &config.analysis,
            )?;
            let path = paths.clusters(space);
            artifacts::write_clusters(&path, &result.assignment)?;
            println!(
                "k = {}, inertia = {:.6}, {} iterations -> {}",
                result.assignment.k,
                result.inertia,
                result.iterations,
                path.display()
            );
        }
        Command::Purity { a, b } => {
            let a = artifacts::read_clusters(a, FeatureSpace::Embedding)?;
            let b = artifacts::read_clusters(b, FeatureSpace::Direct)?;
            let matrix = confusion(&a, &b)?;
            let value = purity(&a, &b)?;
            artifacts::write_confusion(&paths.confusion(), &matrix)?;
            artifacts::write_json(
                &paths.purity(),
                &artifacts::PuritySummary {
                    purity: value,
                    trees: a.tree_ids.len(),
                },
            )?;
            for row in &matrix {
                println!("{row:?}");
            }
            println!("purity = {value:.4}");
        }
        Command::Classify {
            space,
            algorithm,
            repetitions,
            fractions,
        } => {
            let space: FeatureSpace = (*space).into();
            let algorithm = Classifier::from_name(algorithm)
                .ok_or_else(|| anyhow!("unknown algorithm `{algorithm}`"))?;
            if let Some(reps) = repetitions {
                config.analysis.repetitions = *reps;
            }
            if let Some(fractions) = fractions {
                config.analysis.test_fractions = fractions
                    .split(',')
                    .map(|f| f.trim().parse::<f64>().context("bad fraction"))
                    .collect::<Result<Vec<f64>>>()?;
            }
            config.validate()?;
            let (features, ids) = load_features(&paths, space)?;
            let labels = artifacts::read_clusters(&paths.clusters(space), space)?;
            if labels.tree_ids != ids {
                bail!("cluster labels do not match the vector table; rerun `cluster`");
            }
            let rows = classification_harness(
                &features,
                &labels.labels,
                algorithm,
                &config.analysis,
                derive_seed(
                    config.seed,
                    &format!("classify:{}:{}", space.name(), algorithm.name()),
                ),
            )?;
            let path = paths.accuracy(space, algorithm);
            artifacts::write_accuracy(&path, &rows)?;
            for row in &rows {
                println!(
                    "test fraction {:.2}: mean accuracy {:.4} ({} reps)",
                    row.test_fraction, row.mean_accuracy, row.completed
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Characterize { cluster, top } => {
            let assignment = artifacts::read_clusters(
                &paths.clusters(FeatureSpace::Embedding),
                FeatureSpace::Embedding,
            )?;
            let members = assignment.members(*cluster);
            let direct = artifacts::read_direct_vectors(&paths.direct_vectors())?;
            let table = artifacts::read_band_table(&paths.bands(), &paths.thresholds())?;
            let ranked = characterize_cluster(
                &members,
                &direct,
                &table,
                top.unwrap_or(config.analysis.characterize_top),
            )?;
            let path = paths.characterization(*cluster);
            artifacts::write_characterization(&path, &ranked)?;
            for (rank, descriptor) in ranked.iter().enumerate() {
                println!(
                    "{}. {} (segment {}, score {:.6})",
                    rank + 1,
                    descriptor.name(),
                    descriptor.segment,
                    descriptor.score
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Nn {
            token,
            n,
            space,
            metric,
        } => {
            let space: FeatureSpace = (*space).into();
            if let Some(metric) = metric {
                config.analysis.nn_metric = match metric.as_str() {
                    "euclidean" => NeighborMetric::Euclidean,
                    "cosine" => NeighborMetric::Cosine,
                    other => bail!("unknown metric `{other}`"),
                };
            }
            let token = parse_token(token)?;
            let neighbors = neighbor_query(&paths, token, *n, space, &config)?;
            let path = cli
                .out_dir
                .join(format!("nn_{}_{}.csv", space.name(), token.0));
            artifacts::write_neighbors(&path, &neighbors)?;
            println!("{} neighbors of {}:", space.name(), token.name());
            for (rank, (neighbor, score)) in neighbors.iter().enumerate() {
                println!("{}. {} ({score:.4})", rank + 1, neighbor.name());
            }
            println!("wrote {}", path.display());
        }
        Command::Run { from } => {
            let mut opts = opts;
            if let Some(from) = from {
                opts.from = Some(
                    Stage::from_name(from).ok_or_else(|| anyhow!("unknown stage `{from}`"))?,
                );
            }
            let manifest: RunManifest = run_pipeline(&config, &opts)?;
            println!(
                "pipeline complete: {} stages -> {}",
                manifest.stages.len(),
                paths.manifest().display()
            );
        }
    }
    Ok(())
}

fn apply_extract_args(config: &mut PipelineConfig, args: &ExtractArgs) {
    if let Some(cube) = &args.cube {
        config.cube = Some(cube.clone());
    }
    let extract = &mut config.extract;
    if let Some(v) = args.grid_size {
        extract.grid_size = v;
    }
    if let Some(v) = args.grid_min_leaf {
        extract.grid_min_leaf = v;
    }
    if let Some(v) = args.min_tree_pixels {
        extract.min_tree_pixels = v;
    }
    let filter = &mut extract.filter;
    if let Some(v) = args.min_ari2 {
        filter.min_ari2 = v;
    }
    if let Some(v) = args.min_sipi {
        filter.min_sipi = v;
    }
    if let Some(v) = args.max_p900 {
        filter.max_p900 = v;
    }
    if let Some(v) = args.min_p780 {
        filter.min_p780 = v;
    }
    if let Some(v) = args.max_p660 {
        filter.max_p660 = v;
    }
}

fn load_features(paths: &StagePaths, space: FeatureSpace) -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
    Ok(match space {
        FeatureSpace::Embedding => {
            let vectors = artifacts::read_tree_vectors(&paths.tree_vectors())?;
            (
                vectors.iter().map(|v| v.values.clone()).collect(),
                vectors.iter().map(|v| v.tree_id).collect(),
            )
        }
        FeatureSpace::Direct => {
            let vectors = artifacts::read_direct_vectors(&paths.direct_vectors())?;
            (
                vectors.iter().map(|v| v.values.clone()).collect(),
                vectors.iter().map(|v| v.tree_id).collect(),
            )
        }
    })
}

fn parse_token(text: &str) -> Result<TokenId> {
    if let Ok(id) = text.trim().parse::<u16>() {
        return Ok(TokenId(id));
    }
    TokenId::parse(text).ok_or_else(|| anyhow!("unknown token `{text}`"))
}
