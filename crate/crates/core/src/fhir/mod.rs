//! Typed FHIR R4 subset: eight linked resource kinds, their canonical JSON
//! wire format and reference-integrity validation.

mod bundle;
mod kind;
mod resource;
mod wire;

pub use bundle::{validate_bundle, Bundle, Issue, ValidationReport};
pub use kind::{natural_id_key, ResourceId, ResourceKind, LOCAL_ID_PREFIX};
pub use resource::{
    field_def, parse_date, schema, Condition, Encounter, FhirResource, FieldCodec, FieldDef, FieldType, FieldValue,
    Gender, Location, Medication, MedicationDispense, MedicationRequest, Patient, Practitioner,
};
pub use wire::{from_value, parse_resource, serialize_resource, to_value, ParseMode};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FhirError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown resourceType `{0}`")]
    UnknownResourceType(String),
    #[error("{kind} is missing mandatory field `{field}`")]
    MissingField { kind: ResourceKind, field: String },
    #[error("{kind} has unknown field `{path}`")]
    UnknownField { kind: ResourceKind, path: String },
    #[error("{kind}.{path}: {reason}")]
    InvalidValue {
        kind: ResourceKind,
        path: String,
        reason: String,
    },
    #[error("{path} must reference a {expected}, found a {found}")]
    ReferenceKindMismatch {
        path: String,
        expected: ResourceKind,
        found: ResourceKind,
    },
}
