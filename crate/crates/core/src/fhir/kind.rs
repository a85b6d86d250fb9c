use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FhirError;

/// The resource kinds this crate models.
///
/// Variant order is the upload dependency order: every kind only references
/// kinds that precede it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceKind {
    Practitioner,
    Patient,
    Location,
    Medication,
    Encounter,
    Condition,
    MedicationRequest,
    MedicationDispense,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 8] = [
        ResourceKind::Practitioner,
        ResourceKind::Patient,
        ResourceKind::Location,
        ResourceKind::Medication,
        ResourceKind::Encounter,
        ResourceKind::Condition,
        ResourceKind::MedicationRequest,
        ResourceKind::MedicationDispense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Practitioner => "Practitioner",
            ResourceKind::Patient => "Patient",
            ResourceKind::Location => "Location",
            ResourceKind::Medication => "Medication",
            ResourceKind::Encounter => "Encounter",
            ResourceKind::Condition => "Condition",
            ResourceKind::MedicationRequest => "MedicationRequest",
            ResourceKind::MedicationDispense => "MedicationDispense",
        }
    }

    /// Prefix of server-assigned ids, e.g. `pat-1`.
    pub fn id_prefix(self) -> &'static str {
        match self {
            ResourceKind::Practitioner => "prac",
            ResourceKind::Patient => "pat",
            ResourceKind::Location => "loc",
            ResourceKind::Medication => "med",
            ResourceKind::Encounter => "enc",
            ResourceKind::Condition => "cond",
            ResourceKind::MedicationRequest => "medreq",
            ResourceKind::MedicationDispense => "meddisp",
        }
    }

    /// Position in [`ResourceKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceKind {
    type Err = FhirError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FhirError::UnknownResourceType(s.to_string()))
    }
}

/// A typed resource identity: kind plus id value.
///
/// The value is either a local placeholder (`urn:local:<n>`) assigned before
/// upload, or an opaque server-assigned id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceId {
    kind: ResourceKind,
    value: String,
}

pub const LOCAL_ID_PREFIX: &str = "urn:local:";

impl ResourceId {
    pub fn new(kind: ResourceKind, value: impl Into<String>) -> Result<Self, FhirError> {
        let value = value.into();
        if value.is_empty() {
            return Err(FhirError::InvalidValue {
                kind,
                path: "id".into(),
                reason: "id must be nonempty".into(),
            });
        }
        if value.contains('/') || value.chars().any(char::is_whitespace) {
            return Err(FhirError::InvalidValue {
                kind,
                path: "id".into(),
                reason: format!("id `{value}` contains '/' or whitespace"),
            });
        }
        Ok(ResourceId { kind, value })
    }

    pub fn local(kind: ResourceKind, n: u64) -> Self {
        ResourceId {
            kind,
            value: format!("{LOCAL_ID_PREFIX}{n}"),
        }
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn is_local(&self) -> bool {
        self.value.starts_with(LOCAL_ID_PREFIX)
    }

    /// Reference string as used on the wire: `Kind/value`.
    pub fn reference(&self) -> String {
        format!("{}/{}", self.kind, self.value)
    }

    pub fn parse_reference(s: &str) -> Result<Self, FhirError> {
        let (kind, value) = s
            .split_once('/')
            .ok_or_else(|| FhirError::Malformed(format!("reference `{s}` is not of the form Kind/id")))?;
        ResourceId::new(kind.parse()?, value)
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.value)
    }
}

/// Sort key that orders `pat-2` before `pat-10`.
pub fn natural_id_key(id: &str) -> (String, u64, String) {
    let digits_at = id.rfind(|c: char| !c.is_ascii_digit()).map(|i| i + 1).unwrap_or(0);
    let (head, tail) = id.split_at(digits_at);
    match tail.parse::<u64>() {
        Ok(n) if !tail.is_empty() => (head.to_string(), n, id.to_string()),
        _ => (id.to_string(), 0, id.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_through_names() {
        for k in ResourceKind::ALL {
            assert_eq!(k.as_str().parse::<ResourceKind>().unwrap(), k);
            assert_eq!(ResourceKind::ALL[k.index()], k);
        }
        assert!("Observation".parse::<ResourceKind>().is_err());
    }

    #[test]
    fn reference_parsing() {
        let id = ResourceId::parse_reference("Patient/pat-1").unwrap();
        assert_eq!(id.kind(), ResourceKind::Patient);
        assert_eq!(id.value(), "pat-1");
        assert!(ResourceId::parse_reference("pat-1").is_err());
        assert!(ResourceId::parse_reference("Patient/").is_err());
        assert!(ResourceId::local(ResourceKind::Encounter, 3).is_local());
    }

    #[test]
    fn natural_order() {
        let mut ids = vec!["pat-10", "pat-2", "pat-1"];
        ids.sort_by_key(|s| natural_id_key(s));
        assert_eq!(ids, vec!["pat-1", "pat-2", "pat-10"]);
    }
}
