//! Image selection across training cycles.
//!
//! Each cycle looks at a fresh candidate subset, keeps the images that hold
//! at least `min_cc` corner cases, and adds them to the training set of the
//! next cycle. Nothing here trains a model.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{Category, CategoryCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub min_cc: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig { min_cc: 1 }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_cc == 0 {
            return Err(Error::InvalidConfig("min_cc must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ids of images with at least `min_cc` L-CC, C-CC or LC-CC detections.
pub fn select_corner_case_images<'a>(
    detections: impl IntoIterator<Item = (&'a str, Category)>,
    min_cc: usize,
) -> BTreeSet<String> {
    let mut per_image: BTreeMap<&str, usize> = BTreeMap::new();
    for (image, cat) in detections {
        if cat.is_corner_case() {
            *per_image.entry(image).or_default() += 1;
        }
    }
    per_image
        .into_iter()
        .filter(|&(_, n)| n >= min_cc)
        .map(|(id, _)| id.to_string())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleState {
    pub cycle: usize,
    /// Training images at the start of this cycle.
    pub training_ids: BTreeSet<String>,
    pub candidate_ids: BTreeSet<String>,
    /// Categories of all detections on the candidates.
    pub counts: CategoryCounts,
    #[serde(default, rename = "FN", skip_serializing_if = "Option::is_none")]
    pub false_negatives: Option<usize>,
    pub selected: BTreeSet<String>,
}

impl CycleState {
    pub fn initial(training_ids: BTreeSet<String>) -> Self {
        CycleState {
            training_ids,
            ..Default::default()
        }
    }

    /// Records the candidates of this cycle and the selection among them.
    /// Images already in training are never selected again.
    pub fn with_selection<'a>(
        &self,
        candidates: &BTreeSet<String>,
        detections: impl IntoIterator<Item = (&'a str, Category)> + Clone,
        config: &CycleConfig,
    ) -> CycleState {
        let counts = CategoryCounts::from_categories(
            detections
                .clone()
                .into_iter()
                .filter(|(id, _)| candidates.contains(*id))
                .map(|(_, c)| c),
        );
        let selected = select_corner_case_images(detections, config.min_cc)
            .into_iter()
            .filter(|id| candidates.contains(id) && !self.training_ids.contains(id))
            .collect();
        CycleState {
            cycle: self.cycle,
            training_ids: self.training_ids.clone(),
            candidate_ids: candidates.clone(),
            counts,
            false_negatives: None,
            selected,
        }
    }
}

/// Next cycle: training grows by the selection, everything else resets.
pub fn advance_cycle(state: &CycleState, selected: &BTreeSet<String>) -> CycleState {
    CycleState::initial(state.training_ids.union(selected).cloned().collect()).with_cycle(state.cycle + 1)
}

impl CycleState {
    fn with_cycle(mut self, cycle: usize) -> Self {
        self.cycle = cycle;
        self
    }
}

/// Completed cycles in order; `total_pool` is the number of images
/// available overall (initial training set plus all candidate subsets).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleHistory {
    pub total_pool: usize,
    pub cycles: Vec<CycleState>,
}

impl CycleHistory {
    /// State to evaluate the next candidate subset from.
    pub fn next_state(&self, initial_training: &BTreeSet<String>) -> CycleState {
        match self.cycles.last() {
            Some(last) => advance_cycle(last, &last.selected),
            None => CycleState::initial(initial_training.clone()),
        }
    }

    pub fn push(&mut self, state: CycleState) {
        let mut pool: BTreeSet<&String> = BTreeSet::new();
        for s in self.cycles.iter().chain(std::iter::once(&state)) {
            pool.extend(&s.training_ids);
            pool.extend(&s.candidate_ids);
        }
        self.total_pool = self.total_pool.max(pool.len());
        self.cycles.push(state);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `selection.json` of one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cycle: usize,
    pub selected: Vec<String>,
    pub counts: CategoryCounts,
}

impl From<&CycleState> for Selection {
    fn from(s: &CycleState) -> Self {
        Selection {
            cycle: s.cycle,
            selected: s.selected.iter().cloned().collect(),
            counts: s.counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReportRow {
    pub cycle: usize,
    pub training_images: usize,
    pub candidates: usize,
    pub selected: usize,
    /// Training images after adding this cycle's selection.
    pub used_images: usize,
    pub tp: usize,
    #[serde(rename = "FN")]
    pub false_negatives: Option<usize>,
    pub corner_cases: usize,
    pub fp: usize,
    /// `1 - used / total_pool`.
    pub reduction: f64,
}

pub fn cycle_report(history: &CycleHistory) -> Vec<CycleReportRow> {
    history
        .cycles
        .iter()
        .map(|s| {
            let used = s.training_ids.union(&s.selected).count();
            let reduction = if history.total_pool == 0 {
                0.0
            } else {
                1.0 - used as f64 / history.total_pool as f64
            };
            CycleReportRow {
                cycle: s.cycle,
                training_images: s.training_ids.len(),
                candidates: s.candidate_ids.len(),
                selected: s.selected.len(),
                used_images: used,
                tp: s.counts.tp,
                false_negatives: s.false_negatives,
                corner_cases: s.counts.corner_cases(),
                fp: s.counts.fp,
                reduction,
            }
        })
        .collect()
}

pub fn write_report_csv(rows: &[CycleReportRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "cycle",
        "training_images",
        "candidates",
        "selected",
        "used_images",
        "TP",
        "FN",
        "corner_cases",
        "FP",
        "reduction",
    ])?;
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            r.training_images.to_string(),
            r.candidates.to_string(),
            r.selected.to_string(),
            r.used_images.to_string(),
            r.tp.to_string(),
            r.false_negatives.map(|v| v.to_string()).unwrap_or_default(),
            r.corner_cases.to_string(),
            r.fp.to_string(),
            format!("{:?}", r.reduction),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<cycle report>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Category::*;

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn selection_rule() {
        let dets = [("a", Tp), ("a", LCc), ("b", Tp), ("b", Fp), ("c", CCc)];
        assert_eq!(select_corner_case_images(dets, 1), ids(&["a", "c"]));
        assert_eq!(select_corner_case_images(dets, 2), ids(&[]));
        let twice = [("d", LcCc), ("d", CCc)];
        assert_eq!(select_corner_case_images(twice, 2), ids(&["d"]));
        assert_eq!(select_corner_case_images(dets, 1), select_corner_case_images(dets, 1));
    }

    #[test]
    fn advance_grows_training() {
        let s0 = CycleState::initial(ids(&["t1", "t2"]));
        let empty = advance_cycle(&s0, &ids(&[]));
        assert_eq!(empty.training_ids, s0.training_ids);
        assert_eq!(empty.cycle, 1);
        let again = advance_cycle(&empty, &ids(&["t1", "x"]));
        assert_eq!(again.training_ids, ids(&["t1", "t2", "x"]));
    }

    #[test]
    fn disjoint_selections_add_up() {
        let mut state = CycleState::initial(ids(&[]));
        for c in 0..4 {
            let sel: BTreeSet<String> = (0..3).map(|i| format!("c{c}i{i}")).collect();
            state = advance_cycle(&state, &sel);
        }
        assert_eq!(state.training_ids.len(), 12);
        assert_eq!(state.cycle, 4);
    }

    #[test]
    fn selection_excludes_training_and_non_candidates() {
        let s = CycleState::initial(ids(&["a"]));
        let dets = [("a", LCc), ("b", LCc), ("z", LCc), ("b", Tp)];
        let next = s.with_selection(&ids(&["a", "b"]), dets, &CycleConfig::default());
        assert_eq!(next.selected, ids(&["b"]));
        assert_eq!(next.counts.l_cc, 2);
        assert_eq!(next.counts.tp, 1);
    }

    #[test]
    fn report_rows() {
        let mut h = CycleHistory::default();
        let init = ids(&["t0", "t1"]);
        let s = h.next_state(&init).with_selection(
            &ids(&["a", "b", "c", "d"]),
            [("a", LCc), ("b", Tp)],
            &CycleConfig::default(),
        );
        h.push(s);
        let s = h
            .next_state(&init)
            .with_selection(&ids(&["e", "f"]), [("f", CCc)], &CycleConfig::default());
        h.push(s);
        assert_eq!(h.total_pool, 8);
        let rows = cycle_report(&h);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].used_images, 3);
        assert!((rows[0].reduction - (1.0 - 3.0 / 8.0)).abs() < 1e-12);
        assert_eq!(rows[1].training_images, 3);
        assert_eq!(rows[1].used_images, 4);
        assert!((rows[1].reduction - 0.5).abs() < 1e-12);
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn history_json_round_trip() {
        let mut h = CycleHistory::default();
        h.push(CycleState::initial(ids(&["x"])).with_selection(&ids(&["y"]), [("y", LcCc)], &CycleConfig::default()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("history.json");
        h.save(&p).unwrap();
        assert_eq!(CycleHistory::load(&p).unwrap(), h);
        let sel = serde_json::to_value(Selection::from(&h.cycles[0])).unwrap();
        assert_eq!(sel["selected"], serde_json::json!(["y"]));
        assert_eq!(sel["counts"]["LC-CC"], 1);
    }
}
