//! Registry of the 75 fine classes (70 traffic signs, 5 traffic lights) and
//! the 8 superclasses they are grouped under.
//!
//! The registry is compiled into the binary from `data/taxonomy.tsv`, one class
//! per line: `code<TAB>superclass<TAB>kind<TAB>provisional`. Lines starting with
//! `#` are comments.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const EMBEDDED_REGISTRY: &str = include_str!("../data/taxonomy.tsv");

/// Total number of fine classes the classifier predicts over.
pub const CLASS_COUNT: usize = 75;
/// Number of traffic-light classes within the registry.
pub const LIGHT_CLASS_COUNT: usize = 5;

/// Codes whose prefix does not name their superclass.
const PREFIX_EXCEPTIONS: &[&str] = &["RSS-02"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown superclass `{0}`")]
    UnknownSuperclass(String),
    #[error("corrupt class registry at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// Coarse category predicted by the detector stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Superclass {
    #[serde(rename = "DWS")]
    Dws,
    #[serde(rename = "MNS")]
    Mns,
    #[serde(rename = "PHS")]
    Phs,
    #[serde(rename = "PRS")]
    Prs,
    #[serde(rename = "SLS")]
    Sls,
    #[serde(rename = "OSD")]
    Osd,
    #[serde(rename = "APR")]
    Apr,
    #[serde(rename = "TLS")]
    Tls,
}

impl Superclass {
    /// All superclasses in reporting order.
    pub const ALL: [Superclass; 8] = [
        Superclass::Dws,
        Superclass::Mns,
        Superclass::Phs,
        Superclass::Prs,
        Superclass::Sls,
        Superclass::Osd,
        Superclass::Apr,
        Superclass::Tls,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Superclass::Dws => "DWS",
            Superclass::Mns => "MNS",
            Superclass::Phs => "PHS",
            Superclass::Prs => "PRS",
            Superclass::Sls => "SLS",
            Superclass::Osd => "OSD",
            Superclass::Apr => "APR",
            Superclass::Tls => "TLS",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Superclass::Dws => "Danger Warning Signs",
            Superclass::Mns => "Mandatory Signs",
            Superclass::Phs => "Prohibitory Signs",
            Superclass::Prs => "Priority Signs",
            Superclass::Sls => "Speed Limit Signs",
            Superclass::Osd => "Other Signs Useful for Drivers",
            Superclass::Apr => "Additional Regulatory Signs",
            Superclass::Tls => "Traffic Light Signs",
        }
    }

    /// Position within [`Superclass::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Superclass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Superclass {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Superclass::ALL
            .into_iter()
            .find(|sc| sc.code() == s)
            .ok_or_else(|| TaxonomyError::UnknownSuperclass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Sign,
    Light,
}

impl ClassKind {
    fn as_str(self) -> &'static str {
        match self {
            ClassKind::Sign => "sign",
            ClassKind::Light => "light",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub code: String,
    pub superclass: Superclass,
    pub kind: ClassKind,
    /// Not part of the published per-class results; numbered within its superclass.
    pub provisional: bool,
}

/// The full class registry. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes: Vec<ClassDef>,
    by_code: HashMap<String, usize>,
}

/// Loads the embedded registry.
///
/// Panics if the embedded data file is corrupt, which is a build defect.
pub fn load_taxonomy() -> Taxonomy {
    Taxonomy::embedded().clone()
}

impl Taxonomy {
    /// Shared instance of the embedded registry.
    pub fn embedded() -> &'static Taxonomy {
        static REGISTRY: OnceLock<Taxonomy> = OnceLock::new();
        REGISTRY.get_or_init(|| {
            Taxonomy::parse(EMBEDDED_REGISTRY)
                .unwrap_or_else(|e| panic!("embedded class registry: {e}"))
        })
    }

    /// Parses and validates a registry table.
    pub fn parse(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let mut classes = Vec::with_capacity(CLASS_COUNT);
        let mut by_code = HashMap::with_capacity(CLASS_COUNT);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let corrupt = |reason: String| TaxonomyError::Corrupt { line: line_no, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [code, sc, kind, provisional] = fields[..] else {
                return Err(corrupt(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let superclass: Superclass = sc.parse().map_err(|_| corrupt(format!("bad superclass `{sc}`")))?;
            let kind = match kind {
                "sign" => ClassKind::Sign,
                "light" => ClassKind::Light,
                other => return Err(corrupt(format!("bad kind `{other}`"))),
            };
            let provisional = match provisional {
                "true" => true,
                "false" => false,
                other => return Err(corrupt(format!("bad provisional flag `{other}`"))),
            };
            if (kind == ClassKind::Light) != (superclass == Superclass::Tls) {
                return Err(corrupt(format!("`{code}`: kind {} inconsistent with {superclass}", kind.as_str())));
            }
            let prefix = code.split('-').next().unwrap_or_default();
            if prefix != superclass.code() && !PREFIX_EXCEPTIONS.contains(&code) {
                return Err(corrupt(format!("`{code}` does not carry prefix {superclass}")));
            }
            if by_code.insert(code.to_string(), classes.len()).is_some() {
                return Err(corrupt(format!("duplicate code `{code}`")));
            }
            classes.push(ClassDef { code: code.to_string(), superclass, kind, provisional });
        }
        let lights = classes.iter().filter(|c| c.kind == ClassKind::Light).count();
        if classes.len() != CLASS_COUNT || lights != LIGHT_CLASS_COUNT {
            return Err(TaxonomyError::Corrupt {
                line: 0,
                reason: format!(
                    "expected {CLASS_COUNT} classes with {LIGHT_CLASS_COUNT} lights, found {} with {lights}",
                    classes.len()
                ),
            });
        }
        Ok(Taxonomy { classes, by_code })
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&ClassDef> {
        self.by_code.get(code).map(|&i| &self.classes[i])
    }

    /// Registry position of `code`, used to order reports.
    pub fn position(&self, code: &str) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    pub fn superclass_of(&self, code: &str) -> Result<Superclass, TaxonomyError> {
        self.get(code)
            .map(|c| c.superclass)
            .ok_or_else(|| TaxonomyError::UnknownLabel(code.to_string()))
    }

    /// Classes owned by `sc`, in registry order.
    pub fn classes_in(&self, sc: Superclass) -> Vec<&ClassDef> {
        self.classes.iter().filter(|c| c.superclass == sc).collect()
    }

    /// Serializes back to the registry table format (without comments).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", c.code, c.superclass, c.kind.as_str(), c.provisional));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn registry_counts() {
        let t = load_taxonomy();
        assert_eq!(t.len(), 75);
        assert_eq!(t.classes().iter().filter(|c| c.kind == ClassKind::Light).count(), 5);
        assert_eq!(t.classes().iter().filter(|c| c.provisional).count(), 16);
    }

    #[test]
    fn named_codes_resolve() {
        let t = load_taxonomy();
        assert_eq!(t.superclass_of("DWS-01"), Ok(Superclass::Dws));
        assert_eq!(t.superclass_of("SLS-50"), Ok(Superclass::Sls));
        assert_eq!(t.superclass_of("TLS-G"), Ok(Superclass::Tls));
        let red = t.get("TLS-R").unwrap();
        assert_eq!(red.superclass, Superclass::Tls);
        assert_eq!(red.kind, ClassKind::Light);
        assert_eq!(t.superclass_of("RSS-02"), Ok(Superclass::Prs));
        assert_eq!(t.superclass_of("XYZ-99"), Err(TaxonomyError::UnknownLabel("XYZ-99".into())));
    }

    #[test]
    fn classes_in_partitions_registry() {
        let t = load_taxonomy();
        assert_eq!(t.classes_in(Superclass::Tls).len(), 5);
        let total: usize = Superclass::ALL.iter().map(|&sc| t.classes_in(sc).len()).sum();
        assert_eq!(total, 75);
        let sls: Vec<&str> = t.classes_in(Superclass::Sls).iter().map(|c| c.code.as_str()).collect();
        for code in ["SLS-100", "SLS-15", "SLS-40", "SLS-50", "SLS-60", "SLS-70", "SLS-80"] {
            assert!(sls.contains(&code), "{code} missing");
        }
    }

    #[test]
    fn load_is_idempotent_and_export_round_trips() {
        let a = load_taxonomy();
        let b = load_taxonomy();
        assert_eq!(a, b);
        assert_eq!(Taxonomy::parse(&a.to_tsv()).unwrap(), a);
    }

    #[test]
    fn superclass_parse_is_closed() {
        for sc in Superclass::ALL {
            assert_eq!(sc.code().parse::<Superclass>(), Ok(sc));
        }
        assert!("RSS".parse::<Superclass>().is_err());
        assert!("dws".parse::<Superclass>().is_err());
    }

    #[test]
    fn corrupt_registries_are_rejected() {
        let good = load_taxonomy().to_tsv();
        let dup = format!("{good}DWS-01\tDWS\tsign\tfalse\n");
        assert!(matches!(Taxonomy::parse(&dup), Err(TaxonomyError::Corrupt { .. })));
        let short: String = good.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(Taxonomy::parse(&short).is_err());
        let bad_kind = good.replacen("DWS-01\tDWS\tsign", "DWS-01\tDWS\tlight", 1);
        assert!(Taxonomy::parse(&bad_kind).is_err());
        let bad_prefix = good.replacen("DWS-01\tDWS", "DWS-01\tMNS", 1);
        assert!(Taxonomy::parse(&bad_prefix).is_err());
        assert!(Taxonomy::parse("DWS-01\tDWS\tsign\n").is_err());
    }

    proptest! {
        #[test]
        fn random_codes_outside_registry_fail(code in "[A-Z0-9-]{8}") {
            let t = Taxonomy::embedded();
            prop_assume!(t.get(&code).is_none());
            prop_assert_eq!(t.superclass_of(&code), Err(TaxonomyError::UnknownLabel(code.clone())));
        }
    }

    #[test]
    fn every_registered_code_resolves() {
        let t = Taxonomy::embedded();
        for c in t.classes() {
            assert_eq!(t.superclass_of(&c.code), Ok(c.superclass));
        }
    }
}
