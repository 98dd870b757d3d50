//! Detection dumps, ground truth, run manifests and the feature table.
//!
//! Detections and ground truth are NDJSON, one object per line. The
//! manifest is a single JSON document. Feature tables are CSV with the
//! canonical criteria names as columns.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriteriaVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::geometry::{BBox, RleMask};
use crate::matching::Category;

/// One prediction of one stochastic forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSample {
    pub image_id: String,
    pub repetition: u32,
    pub class_scores: Vec<f64>,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthObject {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageInfo {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset: String,
    pub k: usize,
    pub class_names: Vec<String>,
    pub repetitions: u32,
    pub images: Vec<ImageInfo>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Validation(format!("manifest k = {} (need >= 2)", self.k)));
        }
        if self.class_names.len() != self.k {
            return Err(Error::Validation(format!(
                "manifest lists {} class names for k = {}",
                self.class_names.len(),
                self.k
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Validation("manifest repetitions must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image_id {:?} in manifest",
                    img.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    fn image_index(&self) -> BTreeMap<&str, &ImageInfo> {
        self.images.iter().map(|i| (i.image_id.as_str(), i)).collect()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let manifest: RunManifest = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Detections of a run, grouped per image.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub manifest: RunManifest,
    /// Keyed by image_id; each group ordered by repetition, then input order.
    pub groups: BTreeMap<String, Vec<DetectionSample>>,
    /// Total number of samples (L summed over images).
    pub total: usize,
    pub clamped: usize,
}

pub fn load_run(manifest_path: impl AsRef<Path>, detections_path: impl AsRef<Path>) -> Result<RunData> {
    let manifest = load_manifest(manifest_path)?;
    let path = detections_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_detections(manifest, BufReader::new(file), path)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_mask(mask: &Option<RleMask>, img: &ImageInfo, path: &Path, line: usize) -> Result<()> {
    if let Some(m) = mask {
        if m.size != [img.height, img.width] {
            return Err(parse_err(
                path,
                line,
                format!(
                    "mask size {:?} does not match image {}x{} (HxW)",
                    m.size, img.height, img.width
                ),
            ));
        }
        m.validate().map_err(|e| parse_err(path, line, e.to_string()))?;
    }
    Ok(())
}

fn clamp_box(bbox: &mut BBox, img: &ImageInfo, path: &Path, line: usize) -> bool {
    let (clamped, moved) = bbox.clamp_to(img.width as f64, img.height as f64);
    if moved {
        warn!(
            "{}:{line}: box {:?} clamped to image bounds {}x{}",
            path.display(),
            bbox.to_array(),
            img.width,
            img.height
        );
        *bbox = clamped;
    }
    moved
}

/// Parse a detection NDJSON stream against a manifest. Blank lines are
/// skipped; every other line must be a valid [`DetectionSample`].
pub fn parse_detections(manifest: RunManifest, reader: impl BufRead, path: &Path) -> Result<RunData> {
    let index = manifest.image_index();
    let mut groups: BTreeMap<String, Vec<DetectionSample>> = BTreeMap::new();
    let mut total = 0;
    let mut clamped = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut s: DetectionSample = serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let img = *index.get(s.image_id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "{}:{lineno}: unknown image_id {:?}",
                path.display(),
                s.image_id
            ))
        })?;
        if s.class_scores.len() != manifest.k {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "class_scores has {} entries, manifest k = {}",
                    s.class_scores.len(),
                    manifest.k
                ),
            ));
        }
        if let Some(bad) = s
            .class_scores
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(parse_err(path, lineno, format!("class score {bad} outside [0, 1]")));
        }
        if s.repetition >= manifest.repetitions {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "repetition {} out of range for R = {}",
                    s.repetition, manifest.repetitions
                ),
            ));
        }
        check_mask(&s.mask, img, path, lineno)?;
        if clamp_box(&mut s.bbox, img, path, lineno) {
            clamped += 1;
        }
        total += 1;
        groups.entry(s.image_id.clone()).or_default().push(s);
    }
    for samples in groups.values_mut() {
        // stable: ties keep input order
        samples.sort_by_key(|s| s.repetition);
    }
    Ok(RunData {
        manifest,
        groups,
        total,
        clamped,
    })
}

pub fn load_ground_truth(
    path: impl AsRef<Path>,
    manifest: &RunManifest,
) -> Result<BTreeMap<String, Vec<GroundTruthObject>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(BufReader::new(file), path, manifest)
}

pub fn parse_ground_truth(
    reader: impl BufRead,
    path: &Path,
    manifest: &RunManifest,
) -> Result<BTreeMap<String, Vec<GroundTruthObject>>> {
    let index = manifest.image_index();
    let mut groups: BTreeMap<String, Vec<GroundTruthObject>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut g: GroundTruthObject =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let img = *index.get(g.image_id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "{}:{lineno}: unknown image_id {:?}",
                path.display(),
                g.image_id
            ))
        })?;
        if g.class_id >= manifest.k {
            return Err(parse_err(
                path,
                lineno,
                format!("class_id {} out of range for k = {}", g.class_id, manifest.k),
            ));
        }
        check_mask(&g.mask, img, path, lineno)?;
        clamp_box(&mut g.bbox, img, path, lineno);
        groups.entry(g.image_id.clone()).or_default().push(g);
    }
    Ok(groups)
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub cluster_id: usize,
    pub values: CriteriaVector,
    pub label: Option<Category>,
}

fn header() -> Vec<&'static str> {
    let mut h = vec!["image_id", "cluster_id"];
    h.extend(FEATURE_NAMES);
    h.push("label");
    h
}

pub fn write_feature_table_to(rows: &[FeatureRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for (ri, row) in rows.iter().enumerate() {
        let mut rec = Vec::with_capacity(FEATURE_COUNT + 3);
        rec.push(row.image_id.clone());
        rec.push(row.cluster_id.to_string());
        for (name, v) in FEATURE_NAMES.iter().zip(row.values.as_slice()) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: ri,
                    column: name.to_string(),
                });
            }
            rec.push(format!("{v:?}"));
        }
        rec.push(row.label.map(|c| c.as_str().to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<feature table>", e))?;
    Ok(())
}

pub fn write_feature_table(rows: &[FeatureRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_table_to(rows, std::io::BufWriter::new(file))
}

pub fn read_feature_table_from(input: impl Read, path: &Path) -> Result<Vec<FeatureRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = header();
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            "feature table header does not match the canonical columns",
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let lineno = i + 2;
        let rec = rec?;
        let cluster_id = rec[1]
            .parse::<usize>()
            .map_err(|e| parse_err(path, lineno, format!("cluster_id: {e}")))?;
        let mut values = [0.0; FEATURE_COUNT];
        for (j, v) in values.iter_mut().enumerate() {
            let field = &rec[2 + j];
            *v = field
                .parse::<f64>()
                .map_err(|e| parse_err(path, lineno, format!("{}: {e}", FEATURE_NAMES[j])))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("{} is not finite", FEATURE_NAMES[j])));
            }
        }
        let label_field = &rec[FEATURE_COUNT + 2];
        let label = if label_field.is_empty() {
            None
        } else {
            Some(
                label_field
                    .parse::<Category>()
                    .map_err(|e| parse_err(path, lineno, e))?,
            )
        };
        rows.push(FeatureRow {
            image_id: rec[0].to_string(),
            cluster_id,
            values: CriteriaVector(values),
            label,
        });
    }
    Ok(rows)
}

pub fn read_feature_table(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_table_from(BufReader::new(file), path)
}
