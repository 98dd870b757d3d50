//! `cornercase`: the corner case pipeline from the command line.
//!
//! Exit status is 0 on success, 2 when the input or configuration is bad
//! and 1 for anything else.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use cornercase_core::cycle::CycleHistory;
use cornercase_core::decision::{ClassifierKind, DecisionModel};
use cornercase_core::ingest::{load_ground_truth, load_manifest, load_run, read_feature_table};
use cornercase_core::matching::{read_categorized, DatasetSummary, IouSource};
use cornercase_core::pipeline::{self, read_cluster_records, read_json, PipelineConfig};
use cornercase_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "cornercase",
    version,
    about = "Uncertainty-based corner case detection for instance segmentation"
)]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// Pipeline configuration (JSON); flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true)]
    min_cluster_size: Option<usize>,

    #[arg(long, global = true, value_parser = parse_iou_source)]
    iou_source: Option<IouSource>,

    #[arg(long, global = true)]
    tp_iou: Option<f64>,

    #[arg(long, global = true)]
    fp_iou: Option<f64>,

    #[arg(long, global = true)]
    min_cc: Option<usize>,

    #[arg(long, global = true, value_parser = parse_classifier)]
    classifier: Option<ClassifierKind>,
}

fn parse_iou_source(s: &str) -> std::result::Result<IouSource, String> {
    s.parse()
}

fn parse_classifier(s: &str) -> std::result::Result<ClassifierKind, String> {
    s.parse()
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster the sampled detections and compute the 26 criteria.
    Criteria {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detections: PathBuf,
    },
    /// Match clusters to ground truth and assign categories.
    ///
    /// Reads the clusters from `--input` (a `criteria` output directory) or
    /// computes them from `--detections`.
    Categorize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, conflicts_with = "input")]
        detections: Option<PathBuf>,
        #[arg(long, required_unless_present = "detections")]
        input: Option<PathBuf>,
        /// Ground truth NDJSON; without it every detection is FP.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Train a decision function on a labeled feature table.
    Train {
        #[arg(long)]
        labeled: PathBuf,
    },
    /// Score a trained model on a labeled feature table.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
    },
    /// Correlations with ground-truth IoU and sequential feature selection.
    Analyze {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        categorized: PathBuf,
    },
    /// Select the corner-case images of one candidate subset.
    Select {
        #[arg(long)]
        categorized: PathBuf,
        /// History of earlier cycles; omitted for the first cycle.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Image ids of the initial training set, one per line.
        #[arg(long)]
        initial_training: Option<PathBuf>,
        /// Candidate image ids without detections, one per line.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// `summary.json` of the same categorization, for the FN count.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Per-cycle table from a selection history.
    Report {
        #[arg(long)]
        history: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            let input = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .is_some_and(Error::is_input_error)
                || e.chain().any(|c| c.downcast_ref::<UsageError>().is_some());
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}

/// Bad command-line usage not caught by the argument parser.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn config(opts: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = match &opts.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    if let Some(v) = opts.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = opts.min_cluster_size {
        cfg.clustering.min_cluster_size = v;
    }
    if let Some(v) = opts.iou_source {
        cfg.matching.iou_source = v;
    }
    if let Some(v) = opts.tp_iou {
        cfg.matching.tp_iou = v;
    }
    if let Some(v) = opts.fp_iou {
        cfg.matching.fp_iou = v;
    }
    if let Some(v) = opts.min_cc {
        cfg.cycle.min_cc = v;
    }
    if let Some(v) = opts.classifier {
        cfg.classifier = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.opts)?;
    let out = cli
        .opts
        .out
        .clone()
        .ok_or_else(|| UsageError("--out is required".into()))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .context("building the worker pool")?;
    info!("config: {}", serde_json::to_string(&cfg)?);
    info!("seed: {}", cfg.seed);

    match cli.command {
        Command::Criteria { manifest, detections } => {
            let run = load_run(&manifest, &detections)?;
            let result = pipeline::run_criteria(&run, &cfg)?;
            pipeline::write_criteria_artifacts(&result, &out)?;
        }
        Command::Categorize {
            manifest,
            detections,
            input,
            gt,
        } => {
            let manifest_data = load_manifest(&manifest)?;
            let gt = match &gt {
                Some(p) => load_ground_truth(p, &manifest_data)?,
                None => Default::default(),
            };
            let (rows, clusters) = match (&detections, &input) {
                (Some(d), _) => {
                    let run = load_run(&manifest, d)?;
                    let result = pipeline::run_criteria(&run, &cfg)?;
                    pipeline::write_criteria_artifacts(&result, &out)?;
                    (result.rows, result.clusters)
                }
                (None, Some(dir)) => (
                    read_feature_table(dir.join(pipeline::FEATURES_FILE))?,
                    read_cluster_records(&dir.join(pipeline::CLUSTERS_FILE))?,
                ),
                (None, None) => return Err(UsageError("need --detections or --input".into()).into()),
            };
            let result = pipeline::run_categorize(&manifest_data, &clusters, &gt, &cfg.matching)?;
            let labeled = pipeline::label_rows(&rows, &result.records)?;
            pipeline::write_categorize_artifacts(&result, &labeled, &out)?;
            info!(
                "categories: {:?}, FN {}",
                result.summary.counts, result.summary.false_negatives
            );
        }
        Command::Train { labeled } => {
            let rows = read_feature_table(&labeled)?;
            let model = pipeline::run_train(&rows, &cfg)?;
            pipeline::ensure_dir(&out)?;
            model.save(out.join(pipeline::MODEL_FILE))?;
        }
        Command::Eval { model, labeled } => {
            let model = DecisionModel::load(&model)?;
            let rows = read_feature_table(&labeled)?;
            let report = pipeline::run_eval(&model, &rows)?;
            pipeline::write_eval_artifacts(&report, &out)?;
            info!("weighted F1 {:.4}", report.weighted_f1);
        }
        Command::Analyze { labeled, categorized } => {
            let rows = read_feature_table(&labeled)?;
            let records = read_categorized(&categorized)?;
            let result = pipeline::run_analyze(&rows, &records, &cfg)?;
            pipeline::write_analysis_artifacts(&result, &out)?;
        }
        Command::Select {
            categorized,
            history,
            initial_training,
            candidates,
            summary,
        } => {
            let records = read_categorized(&categorized)?;
            let mut hist = match &history {
                Some(p) => CycleHistory::load(p)?,
                None => CycleHistory::default(),
            };
            let initial = match &initial_training {
                Some(p) => read_id_list(p)?,
                None => BTreeSet::new(),
            };
            let extra = match &candidates {
                Some(p) => read_id_list(p)?,
                None => BTreeSet::new(),
            };
            let fn_count = match &summary {
                Some(p) => Some(read_json::<DatasetSummary>(p)?.false_negatives),
                None => None,
            };
            let selection = pipeline::run_select(&mut hist, &records, &initial, &extra, fn_count, &cfg.cycle)?;
            pipeline::write_select_artifacts(&selection, &hist, &out)?;
        }
        Command::Report { history } => {
            let hist = CycleHistory::load(&history)?;
            pipeline::write_report_artifacts(&hist, &out)?;
        }
    }
    info!("artifacts written to {}", out.display());
    Ok(())
}
