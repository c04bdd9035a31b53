//! PASCAL VOC annotation I/O, dataset manifests and per-superclass statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::ops::Add;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use quick_xml::escape::{escape, resolve_predefined_entity};
use quick_xml::events::Event;
use quick_xml::Reader;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::BBox;
use crate::taxonomy::{Superclass, Taxonomy};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("XML parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("object {object}: unknown label `{label}`")]
    UnknownLabel { object: usize, label: String },
    #[error("object {object}: {message}")]
    Bounds { object: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: Box<AnnotationError> },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl AnnotationError {
    fn in_file(self, path: &Path) -> AnnotationError {
        match self {
            e @ (AnnotationError::Io { .. } | AnnotationError::InFile { .. }) => e,
            e => AnnotationError::InFile { path: path.to_path_buf(), source: Box::new(e) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruthObject {
    pub label: String,
    pub bbox: BBox,
}

/// Ground truth for a single image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageAnnotation {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruthObject>,
}

/// Structurally parsed object whose label and box are not yet checked.
#[derive(Debug, Clone)]
struct RawObject {
    label: String,
    corners: [i64; 4],
}

#[derive(Debug, Clone)]
struct RawAnnotation {
    filename: String,
    width: u32,
    height: u32,
    objects: Vec<RawObject>,
}

/// Problem with one object of an otherwise well-formed annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
enum ObjectIssue {
    UnknownLabel(String),
    Bounds(String),
}

impl RawObject {
    fn check(&self, width: u32, height: u32, t: &Taxonomy) -> Vec<ObjectIssue> {
        let mut issues = Vec::new();
        if t.get(&self.label).is_none() {
            issues.push(ObjectIssue::UnknownLabel(self.label.clone()));
        }
        let [x0, y0, x1, y1] = self.corners;
        if x1 <= x0 || y1 <= y0 {
            issues.push(ObjectIssue::Bounds(format!("degenerate box ({x0},{y0},{x1},{y1})")));
        } else if x0 < 0 || y0 < 0 || x1 > i64::from(width) || y1 > i64::from(height) {
            issues.push(ObjectIssue::Bounds(format!("box ({x0},{y0},{x1},{y1}) outside {width}x{height} image")));
        }
        issues
    }
}

const LEAF_FILENAME: &[&str] = &["annotation", "filename"];
const LEAF_WIDTH: &[&str] = &["annotation", "size", "width"];
const LEAF_HEIGHT: &[&str] = &["annotation", "size", "height"];
const OBJECT: &[&str] = &["annotation", "object"];
const LEAF_NAME: &[&str] = &["annotation", "object", "name"];
const BNDBOX: [&str; 3] = ["annotation", "object", "bndbox"];
const CORNERS: [&str; 4] = ["xmin", "ymin", "xmax", "ymax"];

fn parse_raw(xml: &[u8]) -> Result<RawAnnotation, AnnotationError> {
    let text = std::str::from_utf8(xml).map_err(|e| AnnotationError::Parse {
        offset: e.valid_up_to() as u64,
        message: "input is not valid UTF-8".into(),
    })?;
    let mut reader = Reader::from_str(text);
    let perr = |offset: u64, message: String| AnnotationError::Parse { offset, message };

    let mut stack: Vec<String> = Vec::new();
    let mut buf = String::new();
    let mut filename: Option<String> = None;
    let mut width: Option<u32> = None;
    let mut height: Option<u32> = None;
    let mut objects = Vec::new();
    let mut cur_label: Option<String> = None;
    let mut cur_corners: [Option<i64>; 4] = [None; 4];
    let mut seen_root = false;

    loop {
        let event = reader.read_event().map_err(|e| perr(reader.error_position(), e.to_string()))?;
        let pos = reader.buffer_position();
        match event {
            Event::Start(e) => {
                let name = e.local_name().as_ref().to_string();
                if stack.is_empty() {
                    if seen_root || name != "annotation" {
                        return Err(perr(pos, format!("unexpected root element <{name}>")));
                    }
                    seen_root = true;
                }
                stack.push(name);
                buf.clear();
                if stack == OBJECT {
                    cur_label = None;
                    cur_corners = [None; 4];
                }
            }
            Event::Empty(e) => {
                let name = e.local_name().as_ref().to_string();
                if stack.is_empty() {
                    return Err(perr(pos, format!("unexpected empty root element <{name}/>")));
                }
                stack.push(name);
                buf.clear();
                if stack == OBJECT {
                    return Err(perr(pos, "object without name or bndbox".into()));
                }
                close_leaf(&stack, "", pos, &mut filename, &mut width, &mut height, &mut cur_label, &mut cur_corners)?;
                stack.pop();
            }
            Event::Text(t) => buf.push_str(&t.xml10_content()),
            Event::CData(t) => buf.push_str(&t.xml10_content()),
            Event::GeneralRef(r) => {
                if let Some(ch) = r.resolve_char_ref().map_err(|e| perr(pos, e.to_string()))? {
                    buf.push(ch);
                } else {
                    let name = r.xml10_content();
                    let resolved =
                        resolve_predefined_entity(&name).ok_or_else(|| perr(pos, format!("unknown entity &{name};")))?;
                    buf.push_str(resolved);
                }
            }
            Event::End(_) => {
                if stack == OBJECT {
                    let label = cur_label.take().ok_or_else(|| perr(pos, "object without <name>".into()))?;
                    let mut corners = [0i64; 4];
                    for (i, c) in cur_corners.iter().enumerate() {
                        corners[i] = c.ok_or_else(|| perr(pos, format!("object `{label}` lacks <{}>", CORNERS[i])))?;
                    }
                    objects.push(RawObject { label, corners });
                } else {
                    close_leaf(&stack, &buf, pos, &mut filename, &mut width, &mut height, &mut cur_label, &mut cur_corners)?;
                }
                stack.pop();
                buf.clear();
            }
            Event::Eof => {
                if !stack.is_empty() {
                    return Err(perr(pos, format!("unclosed element <{}>", stack.last().unwrap())));
                }
                break;
            }
            _ => {}
        }
    }
    let end = xml.len() as u64;
    if !seen_root {
        return Err(perr(end, "missing <annotation> root".into()));
    }
    let filename = filename.ok_or_else(|| perr(end, "missing <filename>".into()))?;
    let width = width.ok_or_else(|| perr(end, "missing <size><width>".into()))?;
    let height = height.ok_or_else(|| perr(end, "missing <size><height>".into()))?;
    if width == 0 || height == 0 {
        return Err(perr(end, format!("image size {width}x{height} must be positive")));
    }
    Ok(RawAnnotation { filename, width, height, objects })
}

#[allow(clippy::too_many_arguments)]
fn close_leaf(
    stack: &[String],
    text: &str,
    pos: u64,
    filename: &mut Option<String>,
    width: &mut Option<u32>,
    height: &mut Option<u32>,
    label: &mut Option<String>,
    corners: &mut [Option<i64>; 4],
) -> Result<(), AnnotationError> {
    let number = |what: &str| -> Result<i64, AnnotationError> {
        text.trim().parse::<i64>().map_err(|_| AnnotationError::Parse {
            offset: pos,
            message: format!("<{what}> is not an integer: `{}`", text.trim()),
        })
    };
    if stack == LEAF_FILENAME {
        *filename = Some(text.trim().to_string());
    } else if stack == LEAF_WIDTH || stack == LEAF_HEIGHT {
        let v = number(stack.last().unwrap())?;
        let v = u32::try_from(v).map_err(|_| AnnotationError::Parse { offset: pos, message: format!("bad image size {v}") })?;
        if stack == LEAF_WIDTH {
            *width = Some(v);
        } else {
            *height = Some(v);
        }
    } else if stack == LEAF_NAME {
        *label = Some(text.trim().to_string());
    } else if stack.len() == 4 && stack[..3] == BNDBOX {
        if let Some(i) = CORNERS.iter().position(|c| *c == stack[3]) {
            corners[i] = Some(number(CORNERS[i])?);
        }
    }
    Ok(())
}

/// Parses one VOC XML document, checking labels against `t` and boxes against the image size.
pub fn parse_annotation(xml: &[u8], t: &Taxonomy) -> Result<ImageAnnotation, AnnotationError> {
    let raw = parse_raw(xml)?;
    let mut objects = Vec::with_capacity(raw.objects.len());
    for (i, o) in raw.objects.into_iter().enumerate() {
        if let Some(issue) = o.check(raw.width, raw.height, t).into_iter().next() {
            return Err(match issue {
                ObjectIssue::UnknownLabel(label) => AnnotationError::UnknownLabel { object: i, label },
                ObjectIssue::Bounds(message) => AnnotationError::Bounds { object: i, message },
            });
        }
        let [x0, y0, x1, y1] = o.corners;
        let bbox = BBox::new(x0 as i32, y0 as i32, x1 as i32, y1 as i32)
            .map_err(|e| AnnotationError::Bounds { object: i, message: e.to_string() })?;
        objects.push(GroundTruthObject { label: o.label, bbox });
    }
    Ok(ImageAnnotation { filename: raw.filename, width: raw.width, height: raw.height, objects })
}

pub fn read_annotation(path: &Path, t: &Taxonomy) -> Result<ImageAnnotation, AnnotationError> {
    let bytes = fs::read(path).map_err(|source| AnnotationError::Io { path: path.to_path_buf(), source })?;
    parse_annotation(&bytes, t).map_err(|e| e.in_file(path))
}

pub fn serialize_annotation(a: &ImageAnnotation) -> Vec<u8> {
    let mut s = String::with_capacity(256 + a.objects.len() * 256);
    s.push_str("<annotation>\n");
    let _ = writeln!(s, "  <filename>{}</filename>", escape(a.filename.as_str()));
    let _ = writeln!(s, "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>", a.width, a.height);
    for o in &a.objects {
        let [x0, y0, x1, y1] = o.bbox.corners();
        s.push_str("  <object>\n");
        let _ = writeln!(s, "    <name>{}</name>", escape(o.label.as_str()));
        s.push_str("    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n");
        let _ = writeln!(
            s,
            "    <bndbox>\n      <xmin>{x0}</xmin>\n      <ymin>{y0}</ymin>\n      <xmax>{x1}</xmax>\n      <ymax>{y1}</ymax>\n    </bndbox>"
        );
        s.push_str("  </object>\n");
    }
    s.push_str("</annotation>\n");
    s.into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

/// List of annotation files with their split, one `path<TAB>split` per line.
///
/// Relative paths are resolved against the manifest's own directory when loaded from disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<DatasetManifest, AnnotationError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| AnnotationError::Manifest { line: i + 1, message };
            let (path, split) = line.split_once('\t').ok_or_else(|| bad("expected `path<TAB>split`".into()))?;
            let split = split.trim().parse().map_err(bad)?;
            entries.push(ManifestEntry { path: base.join(path), split });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn load(path: &Path) -> Result<DatasetManifest, AnnotationError> {
        let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        DatasetManifest::parse(&text, base).map_err(|e| e.in_file(path))
    }

    /// Serializes with paths made relative to `base` where possible.
    pub fn to_tsv(&self, base: &Path) -> String {
        self.entries
            .iter()
            .map(|e| {
                let p = e.path.strip_prefix(base).unwrap_or(&e.path);
                format!("{}\t{}\n", p.display(), e.split)
            })
            .collect()
    }

    pub fn filter_split(&self, split: Split) -> DatasetManifest {
        DatasetManifest { entries: self.entries.iter().filter(|e| e.split == split).cloned().collect() }
    }

    /// Parses every entry (in parallel), keeping manifest order. Stops at the first failure.
    pub fn read_all(&self, t: &Taxonomy) -> Result<Vec<(ImageAnnotation, Split)>, AnnotationError> {
        self.entries
            .par_iter()
            .map(|e| read_annotation(&e.path, t).map(|a| (a, e.split)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: u64,
    pub test: u64,
    pub total: u64,
}

impl SplitCounts {
    pub fn new(train: u64, test: u64) -> SplitCounts {
        SplitCounts { train, test, total: train + test }
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Test => self.test += 1,
        }
        self.total += 1;
    }
}

impl Add for SplitCounts {
    type Output = SplitCounts;

    fn add(self, o: SplitCounts) -> SplitCounts {
        SplitCounts::new(self.train + o.train, self.test + o.test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuperclassRow {
    pub superclass: Superclass,
    pub name: &'static str,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassRow {
    pub code: String,
    pub superclass: Superclass,
    pub counts: SplitCounts,
    /// Total below the reporting threshold; such classes are left out of test-set tables.
    pub below_min: bool,
}

/// Instance counts by superclass and class, shaped like the dataset summary table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsReport {
    pub superclasses: Vec<SuperclassRow>,
    /// Classes with at least one instance, in registry order.
    pub classes: Vec<ClassRow>,
    pub images: SplitCounts,
    pub total: SplitCounts,
    pub min_instances: Option<u64>,
}

/// Counts instances of already-parsed annotations.
pub fn stats_from_annotations<'a>(
    items: impl IntoIterator<Item = (&'a ImageAnnotation, Split)>,
    t: &Taxonomy,
) -> StatsReport {
    let mut per_class = vec![SplitCounts::default(); t.len()];
    let mut images = SplitCounts::default();
    for (ann, split) in items {
        images.bump(split);
        for o in &ann.objects {
            // parsed annotations only carry registered labels
            if let Some(i) = t.position(&o.label) {
                per_class[i].bump(split);
            }
        }
    }
    build_report(t, &per_class, images, None)
}

fn build_report(t: &Taxonomy, per_class: &[SplitCounts], images: SplitCounts, min: Option<u64>) -> StatsReport {
    let mut sc_counts = [SplitCounts::default(); 8];
    let mut classes = Vec::new();
    for (def, &c) in t.classes().iter().zip(per_class) {
        sc_counts[def.superclass.index()] = sc_counts[def.superclass.index()] + c;
        if c.total > 0 {
            classes.push(ClassRow {
                code: def.code.clone(),
                superclass: def.superclass,
                counts: c,
                below_min: min.is_some_and(|m| c.total < m),
            });
        }
    }
    let superclasses = Superclass::ALL
        .iter()
        .map(|&sc| SuperclassRow { superclass: sc, name: sc.display_name(), counts: sc_counts[sc.index()] })
        .collect();
    let total = sc_counts.iter().fold(SplitCounts::default(), |a, &b| a + b);
    StatsReport { superclasses, classes, images, total, min_instances: min }
}

/// Reads every manifest entry and tallies instances per superclass and class.
pub fn dataset_stats(m: &DatasetManifest, t: &Taxonomy) -> Result<StatsReport, AnnotationError> {
    let anns = m.read_all(t)?;
    Ok(stats_from_annotations(anns.iter().map(|(a, s)| (a, *s)), t))
}

impl StatsReport {
    pub fn empty(t: &Taxonomy) -> StatsReport {
        build_report(t, &vec![SplitCounts::default(); t.len()], SplitCounts::default(), None)
    }

    /// Flags classes whose total falls below `min` (reporting only; counts are untouched).
    pub fn with_min_instances(mut self, min: Option<u64>) -> StatsReport {
        self.min_instances = min;
        for c in &mut self.classes {
            c.below_min = min.is_some_and(|m| c.counts.total < m);
        }
        self
    }

    pub fn superclass(&self, sc: Superclass) -> SplitCounts {
        self.superclasses[sc.index()].counts
    }

    /// Element-wise sum, for stats over disjoint manifests.
    pub fn combine(&self, other: &StatsReport, t: &Taxonomy) -> StatsReport {
        let mut per_class = vec![SplitCounts::default(); t.len()];
        for row in self.classes.iter().chain(&other.classes) {
            if let Some(i) = t.position(&row.code) {
                per_class[i] = per_class[i] + row.counts;
            }
        }
        build_report(t, &per_class, self.images + other.images, self.min_instances)
    }

    /// Aligned text table: superclass rows, totals, image counts, then per-class rows.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<42} {:>7} {:>7} {:>7}", "Superclass", "Train", "Test", "Total");
        for r in &self.superclasses {
            let label = format!("{} ({})", r.name, r.superclass);
            let _ = writeln!(s, "{:<42} {:>7} {:>7} {:>7}", label, r.counts.train, r.counts.test, r.counts.total);
        }
        let _ = writeln!(s, "{:<42} {:>7} {:>7} {:>7}", "Total", self.total.train, self.total.test, self.total.total);
        let _ = writeln!(s, "{:<42} {:>7} {:>7} {:>7}", "Images", self.images.train, self.images.test, self.images.total);
        if !self.classes.is_empty() {
            s.push('\n');
            let _ = writeln!(s, "{:<12} {:<5} {:>7} {:>7} {:>7}", "Class", "Super", "Train", "Test", "Total");
            for c in &self.classes {
                let mark = if c.below_min { "  (below min)" } else { "" };
                let _ = writeln!(
                    s,
                    "{:<12} {:<5} {:>7} {:>7} {:>7}{mark}",
                    c.code, c.superclass, c.counts.train, c.counts.test, c.counts.total
                );
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Unreadable { path: PathBuf, message: String },
    Unparseable { path: PathBuf, offset: u64, message: String },
    UnknownLabel { path: PathBuf, object: usize, label: String },
    Bounds { path: PathBuf, object: usize, message: String },
    DuplicateFilename { path: PathBuf, split: Split, filename: String, first: PathBuf },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unreadable { path, message } => write!(f, "{}: unreadable: {message}", path.display()),
            Violation::Unparseable { path, offset, message } => {
                write!(f, "{}: parse error at byte {offset}: {message}", path.display())
            }
            Violation::UnknownLabel { path, object, label } => {
                write!(f, "{}: object {object}: unknown label `{label}`", path.display())
            }
            Violation::Bounds { path, object, message } => write!(f, "{}: object {object}: {message}", path.display()),
            Violation::DuplicateFilename { path, split, filename, first } => write!(
                f,
                "{}: filename `{filename}` already used in {split} split by {}",
                path.display(),
                first.display()
            ),
        }
    }
}

/// Collects every problem in the dataset instead of stopping at the first.
pub fn validate_dataset(m: &DatasetManifest, t: &Taxonomy) -> Vec<Violation> {
    let per_file: Vec<Result<RawAnnotation, Violation>> = m
        .entries
        .par_iter()
        .map(|e| {
            let bytes = fs::read(&e.path)
                .map_err(|err| Violation::Unreadable { path: e.path.clone(), message: err.to_string() })?;
            parse_raw(&bytes).map_err(|err| match err {
                AnnotationError::Parse { offset, message } => {
                    Violation::Unparseable { path: e.path.clone(), offset, message }
                }
                other => Violation::Unreadable { path: e.path.clone(), message: other.to_string() },
            })
        })
        .collect();

    let mut violations = Vec::new();
    let mut seen: HashMap<(Split, String), PathBuf> = HashMap::new();
    for (entry, result) in m.entries.iter().zip(per_file) {
        let raw = match result {
            Ok(raw) => raw,
            Err(v) => {
                violations.push(v);
                continue;
            }
        };
        for (i, o) in raw.objects.iter().enumerate() {
            for issue in o.check(raw.width, raw.height, t) {
                violations.push(match issue {
                    ObjectIssue::UnknownLabel(label) => {
                        Violation::UnknownLabel { path: entry.path.clone(), object: i, label }
                    }
                    ObjectIssue::Bounds(message) => Violation::Bounds { path: entry.path.clone(), object: i, message },
                });
            }
        }
        match seen.get(&(entry.split, raw.filename.clone())) {
            Some(first) => violations.push(Violation::DuplicateFilename {
                path: entry.path.clone(),
                split: entry.split,
                filename: raw.filename,
                first: first.clone(),
            }),
            None => {
                seen.insert((entry.split, raw.filename), entry.path.clone());
            }
        }
    }
    violations
}

/// Maps image filename to its annotation, for lookups by prediction records.
pub fn index_by_filename(anns: impl IntoIterator<Item = ImageAnnotation>) -> BTreeMap<String, ImageAnnotation> {
    anns.into_iter().map(|a| (a.filename.clone(), a)).collect()
}
