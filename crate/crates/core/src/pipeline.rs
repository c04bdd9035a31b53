//! Two-stage detection: a detector proposes superclass boxes on a 512x512 view of
//! the frame, then each box is cropped to 100x100 and assigned a fine class.
//!
//! Backends are trait objects. The oracle implementations replay ground truth
//! (optionally perturbed) and stand in for trained networks.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::eval::Prediction;
use crate::geometry::{crop_region, iou, resize_frame, BBox, Crop, Frame, DETECTOR_INPUT_SIZE};
use crate::kv;
use crate::synth::{apply_noise, class_colour, derive_seed, NoiseSpec, XorShift64Star};
use crate::taxonomy::{Superclass, Taxonomy};
use crate::voc::ImageAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Detector,
    Classifier,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Detector => "detector",
            Stage::Classifier => "classifier",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("{stage} backend failed: {message}")]
    Backend { stage: Stage, message: String },
    #[error("frame `{name}`: {message}")]
    Frame { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    /// In original frame coordinates.
    pub bbox: BBox,
    pub superclass: Superclass,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPrediction {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledDetection {
    pub detection: Detection,
    pub classification: ClassPrediction,
    /// Whether the fine label belongs to the detected superclass.
    pub consistent: bool,
}

impl LabeledDetection {
    pub fn to_prediction(&self, image: &str) -> Prediction {
        Prediction {
            image: image.to_string(),
            label: self.classification.label.clone(),
            bbox: self.detection.bbox,
            score: self.detection.score,
        }
    }
}

/// What the detector sees: the resized frame plus the original geometry.
#[derive(Debug, Clone, Copy)]
pub struct DetectorInput<'a> {
    pub frame: &'a Frame,
    pub original_width: u32,
    pub original_height: u32,
    pub filename: Option<&'a str>,
}

/// Where a crop came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropProvenance<'a> {
    pub filename: &'a str,
    pub bbox: BBox,
    pub superclass: Superclass,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierInput<'a> {
    pub crop: &'a Crop,
    pub provenance: Option<CropProvenance<'a>>,
}

pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Boxes in original frame coordinates.
    fn infer(&self, input: &DetectorInput<'_>) -> Result<Vec<Detection>, BackendError>;

    /// False when `infer` must not be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;

    fn infer(&self, input: &ClassifierInput<'_>) -> Result<ClassPrediction, BackendError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// A detector box that had to be clamped (or was dropped) because it left the frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    /// Position in the detector output.
    pub index: usize,
    pub original: BBox,
    /// `None` when nothing of the box was inside the frame.
    pub clamped: Option<BBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TwoStageOutput {
    pub detections: Vec<LabeledDetection>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Runs detector then classifier on one frame.
///
/// Detections scoring below `score_floor` are discarded. Output order follows the
/// detector; stage 2 never changes boxes or detection scores.
pub fn run_two_stage(
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    frame: &Frame,
    filename: Option<&str>,
    score_floor: f64,
    t: &Taxonomy,
) -> Result<TwoStageOutput, PipelineError> {
    let det_err = |message: String| PipelineError::Backend { stage: Stage::Detector, message };
    let cls_err = |message: String| PipelineError::Backend { stage: Stage::Classifier, message };

    let resized = resize_frame(frame, DETECTOR_INPUT_SIZE, DETECTOR_INPUT_SIZE);
    let input = DetectorInput { frame: &resized, original_width: frame.width(), original_height: frame.height(), filename };
    let raw = detector.infer(&input).map_err(|e| det_err(e.0))?;

    let mut out = TwoStageOutput::default();
    for (index, mut det) in raw.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&det.score) {
            return Err(det_err(format!("detection {index} has score {} outside [0,1]", det.score)));
        }
        if det.score < score_floor {
            continue;
        }
        if !det.bbox.within(frame.width(), frame.height()) {
            let clamped = det.bbox.clamp_to(frame.width(), frame.height());
            out.diagnostics.push(Diagnostic { index, original: det.bbox, clamped });
            match clamped {
                Some(b) => det.bbox = b,
                None => continue,
            }
        }
        let crop = crop_region(frame, &det.bbox).map_err(|e| det_err(e.to_string()))?;
        let provenance = filename.map(|f| CropProvenance { filename: f, bbox: det.bbox, superclass: det.superclass });
        let class = classifier.infer(&ClassifierInput { crop: &crop, provenance }).map_err(|e| cls_err(e.0))?;
        let Some(def) = t.get(&class.label) else {
            return Err(cls_err(format!("unregistered label `{}`", class.label)));
        };
        let consistent = def.superclass == det.superclass;
        out.detections.push(LabeledDetection { detection: det, classification: class, consistent });
    }
    Ok(out)
}

/// Runs the pipeline over many frames, in parallel when both backends allow it.
///
/// `load` supplies the frame for a name; `visit` sees each frame with its output
/// (e.g. to write an annotated copy). Results keep input order.
pub fn run_batch<L, V>(
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
    names: &[String],
    load: L,
    visit: V,
    score_floor: f64,
    t: &Taxonomy,
) -> Result<Vec<TwoStageOutput>, PipelineError>
where
    L: Fn(&str) -> Result<Frame, PipelineError> + Sync,
    V: Fn(&str, &Frame, &TwoStageOutput) -> Result<(), PipelineError> + Sync,
{
    let one = |name: &String| {
        let frame = load(name)?;
        let out = run_two_stage(detector, classifier, &frame, Some(name), score_floor, t)?;
        visit(name, &frame, &out)?;
        Ok(out)
    };
    if detector.concurrent() && classifier.concurrent() {
        names.par_iter().map(one).collect()
    } else {
        names.iter().map(one).collect()
    }
}

/// Burns detection outlines into a copy of `frame`.
pub fn annotate_frame(frame: &Frame, detections: &[LabeledDetection]) -> Frame {
    let mut out = frame.clone();
    for d in detections {
        out.draw_outline(&d.detection.bbox, class_colour(&d.classification.label), 3);
    }
    out
}

pub type Fixtures = HashMap<String, ImageAnnotation>;

/// Replays ground-truth boxes as superclass detections, after applying a noise model.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    fixtures: Fixtures,
    noise: NoiseSpec,
    seed: u64,
    taxonomy: Taxonomy,
}

pub fn oracle_detector(fixtures: Fixtures, noise: NoiseSpec, seed: u64, t: &Taxonomy) -> OracleDetector {
    OracleDetector { fixtures, noise, seed, taxonomy: t.clone() }
}

impl DetectorBackend for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn infer(&self, input: &DetectorInput<'_>) -> Result<Vec<Detection>, BackendError> {
        let name = input.filename.ok_or_else(|| BackendError("frame has no filename".into()))?;
        let ann = self.fixtures.get(name).ok_or_else(|| BackendError(format!("no fixture for frame `{name}`")))?;
        let mut rng = XorShift64Star::new(derive_seed(self.seed, name));
        let boxes = apply_noise(ann, &self.noise, &mut rng, &self.taxonomy).map_err(|e| BackendError(e.to_string()))?;
        boxes
            .into_iter()
            .map(|b| {
                let superclass = self.taxonomy.superclass_of(&b.label).map_err(|e| BackendError(e.to_string()))?;
                Ok(Detection { bbox: b.bbox, superclass, score: b.score })
            })
            .collect()
    }
}

/// Labels crops with their ground-truth class, wrong with probability `error_rate`.
///
/// The true class is the fixture object overlapping the crop's box the most. A wrong
/// answer is drawn uniformly from the other classes of the same superclass. Boxes with
/// no overlapping object get a uniform label from the detected superclass.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    fixtures: Fixtures,
    error_rate: f64,
    seed: u64,
    taxonomy: Taxonomy,
}

pub fn oracle_classifier(fixtures: Fixtures, error_rate: f64, seed: u64, t: &Taxonomy) -> OracleClassifier {
    OracleClassifier { fixtures, error_rate, seed, taxonomy: t.clone() }
}

impl ClassifierBackend for OracleClassifier {
    fn name(&self) -> &str {
        "oracle"
    }

    fn infer(&self, input: &ClassifierInput<'_>) -> Result<ClassPrediction, BackendError> {
        let prov = input.provenance.ok_or_else(|| BackendError("crop has no provenance".into()))?;
        let ann = self
            .fixtures
            .get(prov.filename)
            .ok_or_else(|| BackendError(format!("no fixture for frame `{}`", prov.filename)))?;
        let mut rng = XorShift64Star::new(derive_seed(self.seed, &format!("{}:{}", prov.filename, prov.bbox)));

        let truth = ann
            .objects
            .iter()
            .map(|o| (iou(&o.bbox, &prov.bbox), o))
            .filter(|(v, _)| *v > 0.0)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, o)| o.label.as_str());
        let Some(truth) = truth else {
            let members = self.taxonomy.classes_in(prov.superclass);
            return Ok(ClassPrediction { label: rng.pick(&members).code.clone(), confidence: 0.5 });
        };
        let sc = self.taxonomy.superclass_of(truth).map_err(|e| BackendError(e.to_string()))?;
        if self.error_rate > 0.0 && rng.chance(self.error_rate) {
            let others: Vec<&str> =
                self.taxonomy.classes_in(sc).into_iter().map(|c| c.code.as_str()).filter(|c| *c != truth).collect();
            if !others.is_empty() {
                let label = rng.pick(&others).to_string();
                return Ok(ClassPrediction { label, confidence: 0.5 });
            }
        }
        Ok(ClassPrediction { label: truth.to_string(), confidence: 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Syntax(#[from] kv::KvError),
    #[error("config line {line}: unknown {stage} backend `{name}`")]
    UnknownBackend { line: usize, stage: Stage, name: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Oracle,
}

impl FromStr for DetectorKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(DetectorKind::Oracle),
            _ => Err(()),
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(ClassifierKind::Oracle),
            _ => Err(()),
        }
    }
}

/// Backend selection and noise, read from `key = value` lines.
///
/// Keys: `detector`, `classifier`, `fixtures`, `seed`, `score_floor`, `p_drop`,
/// `jitter`, `n_fp`, `fp_disjoint`, `error_rate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub detector: DetectorKind,
    pub classifier: ClassifierKind,
    /// Manifest with the ground truth the oracle backends replay.
    pub fixtures: Option<String>,
    pub seed: Option<u64>,
    pub score_floor: f64,
    pub noise: NoiseSpec,
    pub error_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: DetectorKind::Oracle,
            classifier: ClassifierKind::Oracle,
            fixtures: None,
            seed: None,
            score_floor: 0.0,
            noise: NoiseSpec::identity(),
            error_rate: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig, ConfigError> {
        let sections = kv::parse(text)?;
        if let Some(s) = sections.get(1) {
            return Err(ConfigError::Invalid(format!("line {}: sections are not used in pipeline configs", s.line)));
        }
        let mut cfg = PipelineConfig::default();
        for e in &sections[0].entries {
            match e.key.as_str() {
                "detector" => {
                    cfg.detector = e.value.parse().map_err(|_| ConfigError::UnknownBackend {
                        line: e.line,
                        stage: Stage::Detector,
                        name: e.value.clone(),
                    })?
                }
                "classifier" => {
                    cfg.classifier = e.value.parse().map_err(|_| ConfigError::UnknownBackend {
                        line: e.line,
                        stage: Stage::Classifier,
                        name: e.value.clone(),
                    })?
                }
                "fixtures" => cfg.fixtures = Some(e.value.clone()),
                "seed" => cfg.seed = Some(kv::value(e)?),
                "score_floor" => cfg.score_floor = kv::value(e)?,
                "p_drop" => cfg.noise.p_drop = kv::value(e)?,
                "jitter" => cfg.noise.jitter = kv::value(e)?,
                "n_fp" => cfg.noise.n_fp = kv::value(e)?,
                "fp_disjoint" => cfg.noise.fp_disjoint = kv::value(e)?,
                "error_rate" => cfg.error_rate = kv::value(e)?,
                _ => return Err(ConfigError::UnknownKey { line: e.line, key: e.key.clone() }),
            }
        }
        for (name, v) in [("score_floor", cfg.score_floor), ("p_drop", cfg.noise.p_drop), ("error_rate", cfg.error_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("{name} = {v} outside [0,1]")));
            }
        }
        Ok(cfg)
    }

    /// Instantiates the configured backends over `fixtures`.
    pub fn build(
        &self,
        fixtures: Fixtures,
        seed: u64,
        t: &Taxonomy,
    ) -> (Box<dyn DetectorBackend>, Box<dyn ClassifierBackend>) {
        let seed = self.seed.unwrap_or(seed);
        let detector: Box<dyn DetectorBackend> = match self.detector {
            DetectorKind::Oracle => Box::new(oracle_detector(fixtures.clone(), self.noise, seed, t)),
        };
        let classifier: Box<dyn ClassifierBackend> = match self.classifier {
            ClassifierKind::Oracle => Box::new(oracle_classifier(fixtures, self.error_rate, seed, t)),
        };
        (detector, classifier)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voc::GroundTruthObject;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn t() -> &'static Taxonomy {
        Taxonomy::embedded()
    }

    fn bx(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn fixture() -> (Fixtures, Frame) {
        let ann = ImageAnnotation {
            filename: "f.ppm".into(),
            width: 640,
            height: 360,
            objects: vec![
                GroundTruthObject { label: "DWS-01".into(), bbox: bx(10, 10, 60, 60) },
                GroundTruthObject { label: "TLS-R".into(), bbox: bx(100, 20, 130, 90) },
                GroundTruthObject { label: "SLS-50".into(), bbox: bx(300, 200, 360, 260) },
            ],
        };
        (HashMap::from([("f.ppm".to_string(), ann)]), Frame::filled(640, 360, [128; 3]))
    }

    struct Fixed(Vec<Detection>);

    impl DetectorBackend for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn infer(&self, _: &DetectorInput<'_>) -> Result<Vec<Detection>, BackendError> {
            Ok(self.0.clone())
        }
    }

    struct CountingClassifier(AtomicUsize);

    impl ClassifierBackend for CountingClassifier {
        fn name(&self) -> &str {
            "counting"
        }
        fn infer(&self, input: &ClassifierInput<'_>) -> Result<ClassPrediction, BackendError> {
            assert_eq!(input.crop.frame().width(), 100);
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(ClassPrediction { label: "DWS-02".into(), confidence: 0.7 })
        }
    }

    #[test]
    fn oracle_closure() {
        let (fx, frame) = fixture();
        let d = oracle_detector(fx.clone(), NoiseSpec::identity(), 1, t());
        let c = oracle_classifier(fx.clone(), 0.0, 1, t());
        let out = run_two_stage(&d, &c, &frame, Some("f.ppm"), 0.0, t()).unwrap();
        let got: Vec<(String, BBox)> = out.detections.iter().map(|l| (l.classification.label.clone(), l.detection.bbox)).collect();
        let want: Vec<(String, BBox)> = fx["f.ppm"].objects.iter().map(|o| (o.label.clone(), o.bbox)).collect();
        assert_eq!(got, want);
        assert!(out.detections.iter().all(|l| l.consistent && l.detection.score == 1.0));
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn no_detections_never_calls_classifier() {
        let (_, frame) = fixture();
        let c = CountingClassifier(AtomicUsize::new(0));
        let out = run_two_stage(&Fixed(vec![]), &c, &frame, None, 0.0, t()).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(c.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn score_floor_filters() {
        let (_, frame) = fixture();
        let dets = vec![
            Detection { bbox: bx(0, 0, 10, 10), superclass: Superclass::Dws, score: 0.9 },
            Detection { bbox: bx(20, 0, 30, 10), superclass: Superclass::Dws, score: 0.4 },
        ];
        let c = CountingClassifier(AtomicUsize::new(0));
        let out = run_two_stage(&Fixed(dets), &c, &frame, None, 0.5, t()).unwrap();
        assert_eq!(out.detections.len(), 1);
        assert_eq!(c.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn stub_backend_and_stage_separation() {
        let (_, frame) = fixture();
        let dets = vec![
            Detection { bbox: bx(5, 6, 70, 80), superclass: Superclass::Dws, score: 0.8 },
            Detection { bbox: bx(200, 100, 260, 150), superclass: Superclass::Tls, score: 0.3 },
        ];
        let c = CountingClassifier(AtomicUsize::new(0));
        let out = run_two_stage(&Fixed(dets.clone()), &c, &frame, None, 0.0, t()).unwrap();
        let after: Vec<Detection> = out.detections.iter().map(|l| l.detection).collect();
        assert_eq!(after, dets);
        assert_eq!(out.detections.iter().map(|l| l.consistent).collect::<Vec<_>>(), vec![true, false]);
    }

    #[test]
    fn out_of_frame_boxes_are_clamped_and_flagged() {
        let (_, frame) = fixture();
        let dets = vec![
            Detection { bbox: bx(600, 300, 700, 400), superclass: Superclass::Dws, score: 0.8 },
            Detection { bbox: bx(-50, -50, -10, -10), superclass: Superclass::Dws, score: 0.8 },
        ];
        let c = CountingClassifier(AtomicUsize::new(0));
        let out = run_two_stage(&Fixed(dets), &c, &frame, None, 0.0, t()).unwrap();
        assert_eq!(out.detections.len(), 1);
        assert_eq!(out.detections[0].detection.bbox, bx(600, 300, 640, 360));
        assert_eq!(out.diagnostics.len(), 2);
        assert_eq!(out.diagnostics[1].clamped, None);
    }

    #[test]
    fn backend_errors_name_the_stage() {
        let (fx, frame) = fixture();
        let d = oracle_detector(fx.clone(), NoiseSpec::identity(), 1, t());
        let c = oracle_classifier(fx, 0.0, 1, t());
        let err = run_two_stage(&d, &c, &frame, Some("missing.ppm"), 0.0, t()).unwrap_err();
        assert!(matches!(err, PipelineError::Backend { stage: Stage::Detector, .. }));
        let dets = vec![Detection { bbox: bx(0, 0, 10, 10), superclass: Superclass::Dws, score: 0.9 }];
        let err = run_two_stage(&Fixed(dets), &c, &frame, None, 0.0, t()).unwrap_err();
        assert!(matches!(err, PipelineError::Backend { stage: Stage::Classifier, .. }));
    }

    #[test]
    fn oracle_detector_noise_extremes() {
        let (fx, frame) = fixture();
        let small = resize_frame(&frame, 512, 512);
        let input = DetectorInput { frame: &small, original_width: 640, original_height: 360, filename: Some("f.ppm") };
        let all_drop = NoiseSpec { p_drop: 1.0, ..NoiseSpec::identity() };
        assert!(oracle_detector(fx.clone(), all_drop, 3, t()).infer(&input).unwrap().is_empty());
        let d = oracle_detector(fx.clone(), NoiseSpec { jitter: 3, n_fp: 2, ..NoiseSpec::identity() }, 3, t());
        assert_eq!(d.infer(&input).unwrap(), d.infer(&input).unwrap());
        assert_eq!(d.infer(&input).unwrap().len(), 5);
    }

    #[test]
    fn oracle_classifier_error_rates() {
        let (fx, frame) = fixture();
        let obj = &fx["f.ppm"].objects[0];
        let crop = crop_region(&frame, &obj.bbox).unwrap();
        let prov = CropProvenance { filename: "f.ppm", bbox: obj.bbox, superclass: Superclass::Dws };
        let input = ClassifierInput { crop: &crop, provenance: Some(prov) };
        let perfect = oracle_classifier(fx.clone(), 0.0, 5, t()).infer(&input).unwrap();
        assert_eq!(perfect, ClassPrediction { label: "DWS-01".into(), confidence: 1.0 });
        for seed in 0..50 {
            let wrong = oracle_classifier(fx.clone(), 1.0, seed, t()).infer(&input).unwrap();
            assert_ne!(wrong.label, "DWS-01");
            assert_eq!(t().superclass_of(&wrong.label), Ok(Superclass::Dws));
        }
        let no_prov = ClassifierInput { crop: &crop, provenance: None };
        assert!(oracle_classifier(fx, 0.0, 5, t()).infer(&no_prov).is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse("detector = oracle\nclassifier = oracle\np_drop = 0.25\nn_fp = 2\nseed = 9\n").unwrap();
        assert_eq!(cfg.noise.p_drop, 0.25);
        assert_eq!(cfg.noise.n_fp, 2);
        assert_eq!(cfg.seed, Some(9));
        assert!(matches!(PipelineConfig::parse("detector = yolo\n"), Err(ConfigError::UnknownBackend { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("speed = 3\n"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(PipelineConfig::parse("p_drop = 2\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::parse("jitter = x\n"), Err(ConfigError::Syntax(_))));
    }
}
