//! End-to-end stages and their on-disk artifacts.
//!
//! Each stage is a pure function over loaded inputs plus a writer for its
//! artifacts. Per-image work runs on the current rayon pool and is merged in
//! image_id order, so outputs never depend on the number of threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    correlation_report, sequential_feature_selection, CorrelationTable, Direction, SelectionResult, SfsConfig,
};
use crate::clustering::{cluster_samples, ClusteringConfig};
use crate::criteria::{compute_criteria, representative, CriteriaConfig, Representative};
use crate::cycle::{CycleConfig, CycleHistory, Selection};
use crate::decision::{
    evaluate, present_classes, random_undersample, train_forest, train_tree, ClassifierKind, DecisionModel, EvalReport,
    ForestConfig, LabeledSet, TreeConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{rle_encode, BBox, RleMask};
use crate::ingest::{write_feature_table, DetectionSample, FeatureRow, GroundTruthObject, RunData, RunManifest};
use crate::matching::{
    map_at_iou, match_image, summarize, write_categorized, CategorizedRecord, CategoryCounts, DatasetSummary,
    ImageEval, IouSource, MatchingConfig, ScoredDetection,
};

pub const FEATURES_FILE: &str = "features.csv";
pub const CLUSTERS_FILE: &str = "clusters.ndjson";
pub const CATEGORIZED_FILE: &str = "categorized.ndjson";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const LABELED_FILE: &str = "labeled.csv";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const CORRELATIONS_JSON: &str = "correlations.json";
pub const SFS_FORWARD: &str = "sfs_forward.json";
pub const SFS_BACKWARD: &str = "sfs_backward.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const HISTORY_FILE: &str = "history.json";
pub const CYCLES_CSV: &str = "cycles.csv";
pub const CYCLES_JSON: &str = "cycles.json";

/// Every knob of the pipeline in one JSON document. Missing keys take
/// their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub clustering: ClusteringConfig,
    pub criteria: CriteriaConfig,
    pub matching: MatchingConfig,
    pub classifier: ClassifierKind,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    /// Balance classes before training and feature selection.
    pub undersample: bool,
    pub sfs: SfsConfig,
    pub cycle: CycleConfig,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            clustering: ClusteringConfig::default(),
            criteria: CriteriaConfig::default(),
            matching: MatchingConfig::default(),
            classifier: ClassifierKind::Tree,
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            undersample: true,
            sfs: SfsConfig::default(),
            cycle: CycleConfig::default(),
            seed: 0,
            jobs: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.clustering.validate()?;
        self.criteria.kde.validate()?;
        self.matching.validate()?;
        self.tree.validate()?;
        self.forest.validate()?;
        self.cycle.validate()
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterStatus {
    /// All 26 criteria are defined.
    Ok,
    /// Too small or degenerate; still categorized, never a feature row.
    Undefined,
}

/// One line of `clusters.ndjson`: what categorization needs to know about
/// a cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRecord {
    pub image_id: String,
    pub cluster_id: usize,
    pub size: usize,
    pub status: ClusterStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub k_max: usize,
    pub score: f64,
    pub mean_box: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_mask: Option<RleMask>,
}

impl ClusterRecord {
    pub fn representative(&self) -> Result<Representative> {
        Ok(Representative {
            k_max: self.k_max,
            score: self.score,
            mean_box: self.mean_box,
            mean_mask: self.mean_mask.as_ref().map(RleMask::decode).transpose()?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CriteriaOutput {
    /// Clusters with defined criteria, in image_id then cluster_id order.
    pub rows: Vec<FeatureRow>,
    /// Every cluster, defined or not.
    pub clusters: Vec<ClusterRecord>,
}

impl CriteriaOutput {
    pub fn undefined(&self) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.status == ClusterStatus::Undefined)
            .count()
    }
}

fn image_criteria(
    image_id: &str,
    samples: &[DetectionSample],
    clustering: &ClusteringConfig,
    criteria: &CriteriaConfig,
) -> Result<(Vec<FeatureRow>, Vec<ClusterRecord>)> {
    let clusters = cluster_samples(samples, clustering);
    let mut rows = Vec::new();
    let mut records = Vec::with_capacity(clusters.len());
    for c in &clusters {
        let rep = representative(c)?;
        let (status, reason) = if c.size() < clustering.min_cluster_size {
            (
                ClusterStatus::Undefined,
                Some(format!("size {} below min_cluster_size", c.size())),
            )
        } else {
            match compute_criteria(c, criteria) {
                Ok(all) => {
                    rows.push(FeatureRow {
                        image_id: image_id.to_string(),
                        cluster_id: c.cluster_id,
                        values: all.vector,
                        label: None,
                    });
                    (ClusterStatus::Ok, None)
                }
                Err(e @ (Error::SingletonCluster(_) | Error::DegenerateCluster(_) | Error::MaskDegenerate(_))) => {
                    (ClusterStatus::Undefined, Some(e.to_string()))
                }
                Err(e) => return Err(e),
            }
        };
        records.push(ClusterRecord {
            image_id: image_id.to_string(),
            cluster_id: c.cluster_id,
            size: c.size(),
            status,
            reason,
            k_max: rep.k_max,
            score: rep.score,
            mean_box: rep.mean_box,
            mean_mask: rep.mean_mask.as_ref().map(rle_encode),
        });
    }
    Ok((rows, records))
}

/// Clusters every image and computes the criteria of each cluster.
pub fn run_criteria(run: &RunData, config: &PipelineConfig) -> Result<CriteriaOutput> {
    let images: Vec<(&String, &Vec<DetectionSample>)> = run.groups.iter().collect();
    let per_image: Vec<Result<(Vec<FeatureRow>, Vec<ClusterRecord>)>> = images
        .par_iter()
        .map(|(id, samples)| image_criteria(id, samples, &config.clustering, &config.criteria))
        .collect();
    let mut out = CriteriaOutput::default();
    for r in per_image {
        let (rows, records) = r?;
        out.rows.extend(rows);
        out.clusters.extend(records);
    }
    info!(
        "{} samples in {} images -> {} clusters ({} undefined)",
        run.total,
        run.groups.len(),
        out.clusters.len(),
        out.undefined()
    );
    Ok(out)
}

pub fn write_cluster_records(records: &[ClusterRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cluster_records(path: &Path) -> Result<Vec<ClusterRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_criteria_artifacts(out: &CriteriaOutput, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_feature_table(&out.rows, dir.join(FEATURES_FILE))?;
    write_cluster_records(&out.clusters, &dir.join(CLUSTERS_FILE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorizeOutput {
    pub records: Vec<CategorizedRecord>,
    pub summary: DatasetSummary,
}

/// Matches the clusters of every manifest image against its ground truth.
/// Images without detections still contribute their ground truth to FN.
pub fn run_categorize(
    manifest: &RunManifest,
    clusters: &[ClusterRecord],
    gt: &BTreeMap<String, Vec<GroundTruthObject>>,
    matching: &MatchingConfig,
) -> Result<CategorizeOutput> {
    matching.validate()?;
    let mut by_image: BTreeMap<&str, Vec<&ClusterRecord>> = BTreeMap::new();
    for img in &manifest.images {
        by_image.entry(img.image_id.as_str()).or_default();
    }
    for c in clusters {
        if manifest.image(&c.image_id).is_none() {
            return Err(Error::Validation(format!(
                "cluster record for unknown image_id {:?}",
                c.image_id
            )));
        }
        by_image.entry(c.image_id.as_str()).or_default().push(c);
    }
    let no_gt: Vec<GroundTruthObject> = Vec::new();
    let images: Vec<(&str, Vec<&ClusterRecord>)> = by_image.into_iter().collect();

    type PerImage<'a> = (
        Vec<crate::matching::MatchResult>,
        Vec<ScoredDetection>,
        &'a [GroundTruthObject],
    );
    let per_image: Vec<Result<PerImage<'_>>> = images
        .par_iter()
        .map(|(image_id, recs)| {
            let objects: &[GroundTruthObject] = gt.get(*image_id).map_or(&no_gt[..], Vec::as_slice);
            let reps: Vec<(usize, Representative)> = recs
                .iter()
                .map(|r| r.representative().map(|rep| (r.cluster_id, rep)))
                .collect::<Result<_>>()?;
            let results = match_image(&reps, objects, matching)?;
            let scored = reps
                .into_iter()
                .map(|(_, rep)| ScoredDetection {
                    class_id: rep.k_max,
                    score: rep.score,
                    rep,
                })
                .collect();
            Ok((results, scored, objects))
        })
        .collect();

    let mut records = Vec::new();
    let mut matched = Vec::with_capacity(images.len());
    let mut evals = Vec::with_capacity(images.len());
    for ((image_id, _), r) in images.iter().zip(per_image) {
        let (results, scored, objects) = r?;
        records.extend(results.iter().map(|m| CategorizedRecord::new(image_id, m)));
        matched.push((results, objects.len()));
        evals.push(ImageEval {
            detections: scored,
            gt: objects,
        });
    }
    let mut summary = summarize(matched.iter().map(|(r, n)| (r.as_slice(), *n)));
    summary.map_box = map_at_iou(&evals, 0.5, IouSource::Box)?;
    summary.map_mask = map_at_iou(&evals, 0.5, IouSource::Mask)?;
    Ok(CategorizeOutput { records, summary })
}

/// Attaches categories to feature rows by (image_id, cluster_id).
pub fn label_rows(rows: &[FeatureRow], records: &[CategorizedRecord]) -> Result<Vec<FeatureRow>> {
    let lookup: BTreeMap<(&str, usize), &CategorizedRecord> = records
        .iter()
        .map(|r| ((r.image_id.as_str(), r.cluster_id), r))
        .collect();
    rows.iter()
        .map(|row| {
            let rec = lookup.get(&(row.image_id.as_str(), row.cluster_id)).ok_or_else(|| {
                Error::Validation(format!(
                    "no categorization for cluster {} of image {:?}",
                    row.cluster_id, row.image_id
                ))
            })?;
            Ok(FeatureRow {
                label: Some(rec.category),
                ..row.clone()
            })
        })
        .collect()
}

pub fn write_categorize_artifacts(out: &CategorizeOutput, labeled: &[FeatureRow], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join(CATEGORIZED_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_categorized(&out.records, BufWriter::new(file))?;
    write_json(dir.join(SUMMARY_JSON), &out.summary)?;
    write_text(&dir.join(SUMMARY_TXT), &out.summary.render_table())?;
    write_feature_table(labeled, dir.join(LABELED_FILE))
}

/// Labeled set, balanced over the classes present when configured to.
fn training_set(rows: &[FeatureRow], config: &PipelineConfig) -> Result<LabeledSet> {
    let set = LabeledSet::from_rows(rows)?;
    info!("labeled rows: {:?}", set.class_counts());
    if !config.undersample {
        return Ok(set);
    }
    let present = present_classes(&set.y);
    let missing: Vec<&str> = crate::matching::Category::ALL
        .iter()
        .filter(|c| !present.contains(c))
        .map(|c| c.as_str())
        .collect();
    if !missing.is_empty() {
        warn!("no rows for {missing:?}; balancing over the remaining classes");
    }
    let balanced = random_undersample(&set, &present, config.seed)?;
    info!("after undersampling: {:?}", balanced.class_counts());
    Ok(balanced)
}

pub fn run_train(rows: &[FeatureRow], config: &PipelineConfig) -> Result<DecisionModel> {
    let set = training_set(rows, config)?;
    match config.classifier {
        ClassifierKind::Tree => train_tree(&set, &config.tree),
        ClassifierKind::Forest => train_forest(&set, &config.forest, config.seed),
    }
}

/// Scores a model on the rows as given; never rebalanced.
pub fn run_eval(model: &DecisionModel, rows: &[FeatureRow]) -> Result<EvalReport> {
    let set = LabeledSet::from_rows(rows)?;
    evaluate(model, &set)
}

pub fn write_eval_artifacts(report: &EvalReport, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_json(dir.join(REPORT_JSON), report)?;
    write_text(&dir.join(REPORT_TXT), &report.render_text())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub correlations: CorrelationTable,
    pub forward: SelectionResult,
    pub backward: SelectionResult,
}

/// Correlations use every matched cluster; feature selection uses the
/// labeled rows like training does.
pub fn run_analyze(
    rows: &[FeatureRow],
    records: &[CategorizedRecord],
    config: &PipelineConfig,
) -> Result<AnalysisOutput> {
    let lookup: BTreeMap<(&str, usize), &CategorizedRecord> = records
        .iter()
        .map(|r| ((r.image_id.as_str(), r.cluster_id), r))
        .collect();
    let mut features = Vec::with_capacity(rows.len());
    let mut box_iou = Vec::with_capacity(rows.len());
    let mut mask_iou = Vec::with_capacity(rows.len());
    for row in rows {
        let rec = lookup.get(&(row.image_id.as_str(), row.cluster_id));
        let matched = rec.filter(|r| r.gt_index.is_some());
        features.push(row.values);
        box_iou.push(matched.map(|r| r.iou_box_gt));
        mask_iou.push(matched.and_then(|r| r.iou_mask_gt));
    }
    let correlations = correlation_report(&features, &box_iou, &mask_iou)?;
    let set = training_set(rows, config)?;
    let sfs: &SfsConfig = &config.sfs;
    let forward = sequential_feature_selection(&set, Direction::Forward, sfs, config.seed)?;
    let backward = sequential_feature_selection(&set, Direction::Backward, sfs, config.seed)?;
    Ok(AnalysisOutput {
        correlations,
        forward,
        backward,
    })
}

pub fn write_analysis_artifacts(out: &AnalysisOutput, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    out.correlations.save_csv(dir.join(CORRELATIONS_CSV))?;
    write_json(dir.join(CORRELATIONS_JSON), &out.correlations)?;
    write_json(dir.join(SFS_FORWARD), &out.forward)?;
    write_json(dir.join(SFS_BACKWARD), &out.backward)
}

/// Evaluates one candidate subset: the candidates are every image named in
/// the categorization plus `extra_candidates`.
pub fn run_select(
    history: &mut CycleHistory,
    records: &[CategorizedRecord],
    initial_training: &BTreeSet<String>,
    extra_candidates: &BTreeSet<String>,
    false_negatives: Option<usize>,
    config: &CycleConfig,
) -> Result<Selection> {
    config.validate()?;
    let mut candidates: BTreeSet<String> = records.iter().map(|r| r.image_id.clone()).collect();
    candidates.extend(extra_candidates.iter().cloned());
    let detections = records.iter().map(|r| (r.image_id.as_str(), r.category));
    let mut state = history
        .next_state(initial_training)
        .with_selection(&candidates, detections, config);
    state.false_negatives = false_negatives;
    let selection = Selection::from(&state);
    info!(
        "cycle {}: {} of {} candidates selected",
        state.cycle,
        state.selected.len(),
        state.candidate_ids.len()
    );
    history.push(state);
    Ok(selection)
}

pub fn write_select_artifacts(selection: &Selection, history: &CycleHistory, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_json(dir.join(SELECTION_FILE), selection)?;
    history.save(dir.join(HISTORY_FILE))
}

pub fn write_report_artifacts(history: &CycleHistory, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let rows = crate::cycle::cycle_report(history);
    let path = dir.join(CYCLES_CSV);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    crate::cycle::write_report_csv(&rows, BufWriter::new(file))?;
    write_json(dir.join(CYCLES_JSON), &rows)
}

/// Category totals of a categorization, for logging.
pub fn category_totals(records: &[CategorizedRecord]) -> CategoryCounts {
    CategoryCounts::from_categories(records.iter().map(|r| r.category))
}
