use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde_json::Value;

use super::kind::{ResourceId, ResourceKind};
use super::resource::{field_def, FhirResource, FieldType};
use super::wire::{self, ParseMode};
use super::FhirError;

/// An ordered set of resources transported together.
///
/// Ids listed in `external` are known to live outside the bundle (for
/// instance already on a server) and are not reported as dangling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bundle {
    pub resources: Vec<FhirResource>,
    pub external: BTreeSet<ResourceId>,
}

impl Bundle {
    pub fn new(resources: Vec<FhirResource>) -> Self {
        Bundle {
            resources,
            external: BTreeSet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn first_of(&self, kind: ResourceKind) -> Option<&FhirResource> {
        self.resources.iter().find(|r| r.kind() == kind)
    }

    pub fn of_kind(&self, kind: ResourceKind) -> impl Iterator<Item = &FhirResource> {
        self.resources.iter().filter(move |r| r.kind() == kind)
    }

    pub fn get(&self, id: &ResourceId) -> Option<&FhirResource> {
        self.resources
            .iter()
            .find(|r| r.kind() == id.kind() && r.id_value() == id.value())
    }

    /// `{"resourceType":"Bundle","type":"collection","entry":[{"resource":…},…]}`
    pub fn to_json(&self) -> String {
        let mut out = String::from(r#"{"resourceType":"Bundle","type":"collection","entry":["#);
        for (i, r) in self.resources.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(r#"{"resource":"#);
            out.push_str(&wire::serialize_resource(r));
            out.push('}');
        }
        out.push_str("]}");
        out
    }

    pub fn from_json(text: &str, mode: ParseMode) -> Result<Bundle, FhirError> {
        let v: Value = serde_json::from_str(text).map_err(|e| FhirError::Malformed(e.to_string()))?;
        Bundle::from_value(&v, mode)
    }

    /// Accepts both `collection` and `searchset` bundles.
    pub fn from_value(v: &Value, mode: ParseMode) -> Result<Bundle, FhirError> {
        if v.get("resourceType").and_then(Value::as_str) != Some("Bundle") {
            return Err(FhirError::Malformed("document is not a Bundle".into()));
        }
        let entries = match v.get("entry") {
            None => return Ok(Bundle::default()),
            Some(Value::Array(a)) => a,
            Some(_) => return Err(FhirError::Malformed("`entry` is not an array".into())),
        };
        let resources = entries
            .iter()
            .map(|e| {
                let r = e
                    .get("resource")
                    .ok_or_else(|| FhirError::Malformed("bundle entry without `resource`".into()))?;
                wire::from_value(r, mode)
            })
            .collect::<Result<_, _>>()?;
        Ok(Bundle::new(resources))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    Duplicate {
        id: ResourceId,
    },
    /// `path` is `Kind.field`, e.g. `Encounter.subject`.
    Dangling {
        source: ResourceId,
        path: String,
        target: ResourceId,
    },
    KindMismatch {
        source: ResourceId,
        path: String,
        expected: ResourceKind,
        target: ResourceId,
    },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Duplicate { id } => write!(f, "duplicate resource {id}"),
            Issue::Dangling { source, path, target } => {
                write!(f, "{source}: {path} references missing {target}")
            }
            Issue::KindMismatch {
                source,
                path,
                expected,
                target,
            } => write!(f, "{source}: {path} must reference a {expected}, found {target}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Reports duplicates, dangling references and reference kind mismatches.
/// An empty report means the bundle is closed under references.
pub fn validate_bundle(b: &Bundle) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen: HashMap<ResourceId, usize> = HashMap::new();
    for r in &b.resources {
        let id = r.id();
        let count = seen.entry(id.clone()).or_default();
        *count += 1;
        if *count == 2 {
            issues.push(Issue::Duplicate { id });
        }
    }
    for r in &b.resources {
        let source = r.id();
        for (field, target) in r.references() {
            let path = format!("{}.{field}", r.kind());
            if let Some(FieldType::Ref(expected)) = field_def(r.kind(), field).map(|d| d.ty) {
                if target.kind() != expected {
                    issues.push(Issue::KindMismatch {
                        source: source.clone(),
                        path,
                        expected,
                        target: target.clone(),
                    });
                    continue;
                }
            }
            if !seen.contains_key(target) && !b.external.contains(target) {
                issues.push(Issue::Dangling {
                    source: source.clone(),
                    path,
                    target: target.clone(),
                });
            }
        }
    }
    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fhir::resource::{Condition, Encounter, Patient};

    fn patient(id: &str) -> FhirResource {
        FhirResource::Patient(Patient {
            id: id.into(),
            identifier: None,
            identifier_type: None,
            gender: None,
            birth_date: None,
            age_group: None,
            deceased_year: None,
            deceased_month: None,
            county_name: None,
            county_number: None,
        })
    }

    fn encounter(id: &str, subject: ResourceId) -> FhirResource {
        FhirResource::Encounter(Encounter {
            id: id.into(),
            identifier: None,
            status: None,
            subject,
            participant: None,
            location: None,
            period_start: None,
            period_end: None,
            arrival_mode: None,
            discharge_location: None,
        })
    }

    fn rid(kind: ResourceKind, v: &str) -> ResourceId {
        ResourceId::new(kind, v).unwrap()
    }

    #[test]
    fn empty_bundle_is_valid() {
        assert!(validate_bundle(&Bundle::default()).is_empty());
    }

    #[test]
    fn linked_bundle_is_valid() {
        let b = Bundle::new(vec![patient("p1"), encounter("e1", rid(ResourceKind::Patient, "p1"))]);
        assert!(validate_bundle(&b).is_empty());
    }

    #[test]
    fn dangling_subject() {
        let b = Bundle::new(vec![encounter("e1", rid(ResourceKind::Patient, "p9"))]);
        let report = validate_bundle(&b);
        assert_eq!(report.issues.len(), 1);
        match &report.issues[0] {
            Issue::Dangling { path, target, .. } => {
                assert_eq!(path, "Encounter.subject");
                assert_eq!(target.value(), "p9");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn external_references_are_not_dangling() {
        let mut b = Bundle::new(vec![encounter("e1", rid(ResourceKind::Patient, "pat-4"))]);
        b.external.insert(rid(ResourceKind::Patient, "pat-4"));
        assert!(validate_bundle(&b).is_empty());
    }

    #[test]
    fn duplicates_and_kind_mismatch() {
        let cond = FhirResource::Condition(Condition {
            id: "c1".into(),
            subject: rid(ResourceKind::Encounter, "e1"),
            encounter: None,
            diagnosis_code: None,
        });
        let b = Bundle::new(vec![
            patient("p1"),
            patient("p1"),
            encounter("e1", rid(ResourceKind::Patient, "p1")),
            cond,
        ]);
        let report = validate_bundle(&b);
        assert_eq!(report.issues.len(), 2);
        assert!(matches!(report.issues[0], Issue::Duplicate { .. }));
        assert!(matches!(
            &report.issues[1],
            Issue::KindMismatch { path, expected: ResourceKind::Patient, .. } if path == "Condition.subject"
        ));
    }

    #[test]
    fn bundle_json_round_trip() {
        let b = Bundle::new(vec![patient("p1"), encounter("e1", rid(ResourceKind::Patient, "p1"))]);
        let text = b.to_json();
        assert_eq!(Bundle::from_json(&text, ParseMode::Strict).unwrap(), b);
    }
}
