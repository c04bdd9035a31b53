//! Prediction-to-ground-truth matching and precision / recall / F1.
//!
//! A prediction is a true positive when it is matched one-to-one to a ground
//! truth box with IoU strictly above the threshold. Matching is greedy in
//! descending score order. Overall metrics are micro-averaged: they are
//! computed from tallies summed over every class.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::taxonomy::{Superclass, Taxonomy};
use crate::voc::{AnnotationError, DatasetManifest, GroundTruthObject, ImageAnnotation, Split};

/// A prediction counts as a hit only when its IoU is strictly greater than this.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// One detector/classifier output, as stored in a JSON Lines prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image: String,
    pub label: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchTally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MatchTally {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> MatchTally {
        MatchTally { tp, fp, fn_ }
    }

    /// Number of ground-truth instances this tally covers.
    pub fn ground_truths(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predictions(&self) -> u64 {
        self.tp + self.fp
    }
}

impl Add for MatchTally {
    type Output = MatchTally;

    fn add(self, o: MatchTally) -> MatchTally {
        MatchTally::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for MatchTally {
    fn add_assign(&mut self, o: MatchTally) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and their harmonic mean. A zero denominator yields 0.
pub fn compute_metrics(t: &MatchTally) -> MetricsEntry {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(t.tp, t.tp + t.fp);
    let recall = ratio(t.tp, t.tp + t.fn_);
    MetricsEntry { precision, recall, f1: f1_score(precision, recall) }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

/// Outcome of matching one image. Indices refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

impl MatchResult {
    pub fn tally(&self) -> MatchTally {
        MatchTally::new(
            self.pairs.len() as u64,
            self.unmatched_predictions.len() as u64,
            self.unmatched_ground_truths.len() as u64,
        )
    }
}

/// Greedy one-to-one matching within a single image.
///
/// Predictions are visited by descending score, ties broken by the higher best
/// IoU against an eligible ground truth, then by input order. Each takes the
/// unmatched eligible ground truth with maximal IoU (lowest index on ties),
/// provided that IoU is strictly greater than `thr`. With `class_aware`, only
/// ground truths carrying the same label are eligible.
pub fn match_image(gts: &[GroundTruthObject], preds: &[Prediction], thr: f64, class_aware: bool) -> MatchResult {
    let eligible = |p: &Prediction, g: &GroundTruthObject| !class_aware || p.label == g.label;
    let best_iou: Vec<f64> = preds
        .iter()
        .map(|p| gts.iter().filter(|g| eligible(p, g)).map(|g| iou(&p.bbox, &g.bbox)).fold(0.0, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b].score.total_cmp(&preds[a].score).then(best_iou[b].total_cmp(&best_iou[a])).then(a.cmp(&b))
    });

    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for p in order {
        let pred = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || !eligible(pred, gt) {
                continue;
            }
            let v = iou(&pred.bbox, &gt.bbox);
            if v > thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) => {
                taken[g] = true;
                result.pairs.push(MatchedPair { prediction: p, ground_truth: g, iou: v });
            }
            None => result.unmatched_predictions.push(p),
        }
    }
    result.unmatched_predictions.sort_unstable();
    result.unmatched_ground_truths = (0..gts.len()).filter(|&g| !taken[g]).collect();
    result
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// 75 fine classes, after the classifier stage.
    #[default]
    Fine,
    /// 8 superclasses, as emitted by the detector stage.
    Superclass,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fine" => Ok(Granularity::Fine),
            "superclass" => Ok(Granularity::Superclass),
            other => Err(format!("unknown granularity `{other}` (expected fine|superclass)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub granularity: Granularity,
    pub class_aware: bool,
    /// Classes with fewer ground-truth instances are left out of the per-class table.
    pub min_instances: Option<u64>,
    /// Predictions scoring below this are dropped before matching.
    pub score_floor: f64,
    /// Restrict evaluation to one split of the manifest.
    pub split: Option<Split>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            granularity: Granularity::Fine,
            class_aware: true,
            min_instances: None,
            score_floor: 0.0,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassResult {
    pub label: String,
    pub tally: MatchTally,
    pub metrics: MetricsEntry,
    /// False when filtered out of the per-class table by `min_instances`.
    pub reported: bool,
}

/// A prediction record that was excluded from the tallies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportedViolation {
    /// 1-based line in the prediction file, or 0 for in-memory input.
    pub line: usize,
    pub image: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub iou_threshold: f64,
    pub class_aware: bool,
    pub images: usize,
    pub classes: Vec<ClassResult>,
    pub overall_tally: MatchTally,
    pub overall: MetricsEntry,
    pub violations: Vec<ReportedViolation>,
}

impl EvalReport {
    pub fn class(&self, label: &str) -> Option<&ClassResult> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Table with one row per reported class followed by overall precision, recall and F1.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}", "Label", "F1", "P", "R", "TP", "FP", "FN");
        for c in self.classes.iter().filter(|c| c.reported) {
            let _ = writeln!(
                s,
                "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>7}",
                c.label, c.metrics.f1, c.metrics.precision, c.metrics.recall, c.tally.tp, c.tally.fp, c.tally.fn_
            );
        }
        let _ = writeln!(s, "{:<10} {:>8.4}", "Precision", self.overall.precision);
        let _ = writeln!(s, "{:<10} {:>8.4}", "Recall", self.overall.recall);
        let _ = writeln!(s, "{:<10} {:>8.4}", "F1-score", self.overall.f1);
        let t = self.overall_tally;
        let _ = writeln!(s, "{:<10} TP={} FP={} FN={} over {} images", "Tally", t.tp, t.fp, t.fn_, self.images);
        if !self.violations.is_empty() {
            let _ = writeln!(s, "{} prediction record(s) excluded", self.violations.len());
        }
        s
    }
}

/// Reads a JSON Lines prediction file. Blank lines are skipped.
pub fn read_predictions(reader: impl BufRead) -> Result<Vec<(usize, Prediction)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EvalError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(&line).map_err(|e| EvalError::Parse { line: line_no, message: e.to_string() })?;
        out.push((line_no, p));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<(usize, Prediction)>, EvalError> {
    let f = File::open(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    read_predictions(BufReader::new(f))
}

pub fn write_predictions<'a>(mut w: impl Write, preds: impl IntoIterator<Item = &'a Prediction>) -> io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Maps `label` to the evaluation granularity. Returns the key and its sort position.
fn class_key(label: &str, g: Granularity, t: &Taxonomy) -> Option<(String, usize)> {
    match g {
        Granularity::Fine => t.position(label).map(|i| (label.to_string(), i)),
        Granularity::Superclass => {
            let sc = label.parse::<Superclass>().ok().or_else(|| t.superclass_of(label).ok())?;
            Some((sc.code().to_string(), sc.index()))
        }
    }
}

/// Evaluates in-memory annotations against predictions. `line` numbers are only used in violations.
pub fn evaluate_annotations(
    anns: &[ImageAnnotation],
    preds: impl IntoIterator<Item = (usize, Prediction)>,
    cfg: &EvalConfig,
    t: &Taxonomy,
) -> EvalReport {
    let index: HashMap<&str, usize> = anns.iter().enumerate().map(|(i, a)| (a.filename.as_str(), i)).collect();
    let mut per_image: Vec<Vec<Prediction>> = vec![Vec::new(); anns.len()];
    let mut violations = Vec::new();
    let mut positions: BTreeMap<String, usize> = BTreeMap::new();

    for (line, mut p) in preds {
        let reject = |reason: String| ReportedViolation { line, image: p.image.clone(), reason };
        let Some(&img) = index.get(p.image.as_str()) else {
            violations.push(reject("image not in ground truth".into()));
            continue;
        };
        if !(0.0..=1.0).contains(&p.score) {
            violations.push(reject(format!("score {} outside [0,1]", p.score)));
            continue;
        }
        let Some((key, pos)) = class_key(&p.label, cfg.granularity, t) else {
            violations.push(reject(format!("unknown label `{}`", p.label)));
            continue;
        };
        if p.score < cfg.score_floor {
            continue;
        }
        positions.insert(key.clone(), pos);
        p.label = key;
        per_image[img].push(p);
    }

    let gt_keyed: Vec<Vec<GroundTruthObject>> = anns
        .iter()
        .map(|a| {
            a.objects
                .iter()
                .filter_map(|o| class_key(&o.label, cfg.granularity, t).map(|(key, _)| GroundTruthObject { label: key, bbox: o.bbox }))
                .collect()
        })
        .collect();
    for gts in &gt_keyed {
        for g in gts {
            if let Some((_, pos)) = class_key(&g.label, cfg.granularity, t) {
                positions.insert(g.label.clone(), pos);
            }
        }
    }

    let per_image_tallies: Vec<Vec<(String, MatchTally)>> = gt_keyed
        .par_iter()
        .zip(per_image.par_iter())
        .map(|(gts, preds)| {
            let m = match_image(gts, preds, cfg.iou_threshold, cfg.class_aware);
            let mut out = Vec::with_capacity(gts.len() + preds.len());
            for pair in &m.pairs {
                out.push((gts[pair.ground_truth].label.clone(), MatchTally::new(1, 0, 0)));
            }
            for &p in &m.unmatched_predictions {
                out.push((preds[p].label.clone(), MatchTally::new(0, 1, 0)));
            }
            for &g in &m.unmatched_ground_truths {
                out.push((gts[g].label.clone(), MatchTally::new(0, 0, 1)));
            }
            out
        })
        .collect();

    let mut tallies: HashMap<String, MatchTally> = HashMap::new();
    for (label, t) in per_image_tallies.into_iter().flatten() {
        *tallies.entry(label).or_default() += t;
    }
    let mut labels: Vec<(usize, String)> = tallies.keys().map(|l| (positions[l], l.clone())).collect();
    labels.sort();

    let mut overall_tally = MatchTally::default();
    let classes = labels
        .into_iter()
        .map(|(_, label)| {
            let tally = tallies[&label];
            overall_tally += tally;
            ClassResult {
                reported: cfg.min_instances.is_none_or(|m| tally.ground_truths() >= m),
                metrics: compute_metrics(&tally),
                label,
                tally,
            }
        })
        .collect();

    EvalReport {
        granularity: cfg.granularity,
        iou_threshold: cfg.iou_threshold,
        class_aware: cfg.class_aware,
        images: anns.len(),
        classes,
        overall: compute_metrics(&overall_tally),
        overall_tally,
        violations,
    }
}

/// Evaluates a prediction file against the annotations listed in a manifest.
pub fn evaluate(
    gt: &DatasetManifest,
    predictions: &Path,
    cfg: &EvalConfig,
    t: &Taxonomy,
) -> Result<EvalReport, EvalError> {
    let manifest = match cfg.split {
        Some(s) => gt.filter_split(s),
        None => gt.clone(),
    };
    let anns: Vec<ImageAnnotation> = manifest.read_all(t)?.into_iter().map(|(a, _)| a).collect();
    let preds = load_predictions(predictions)?;
    Ok(evaluate_annotations(&anns, preds, cfg, t))
}
