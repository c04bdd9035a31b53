//! Traffic sign and traffic light detection toolkit.
//!
//! Provides the class registry, PASCAL VOC annotation handling, box geometry,
//! IoU-based F1 evaluation, a two-stage detect-then-classify pipeline with
//! pluggable backends, synthetic fixture generation, and an in-process
//! publish/subscribe node graph for throughput measurement.

pub mod bag;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod kv;
pub mod pipeline;
pub mod synth;
pub mod taxonomy;
pub mod voc;

pub use geometry::{BBox, Crop, Frame};
pub use taxonomy::{load_taxonomy, ClassDef, ClassKind, Superclass, Taxonomy};
pub use voc::{DatasetManifest, GroundTruthObject, ImageAnnotation, Split, StatsReport};
pub use eval::{EvalConfig, EvalReport, Granularity, MatchTally, MetricsEntry, Prediction};
pub use graph::{build_graph, Graph, GraphConfig, QueueMode, RunOptions, RunReport};
pub use pipeline::{run_two_stage, ClassifierBackend, DetectorBackend, Detection, LabeledDetection};
