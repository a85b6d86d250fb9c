//! Table ⇄ FHIR bundle translation driven by a mapping index and per-kind
//! templates.

mod convert;
mod index;
mod template;
mod transform;

pub use convert::{columns_for_resource, csv_to_fhir, csv_to_fhir_with, fhir_to_csv, flatten_resource};
pub use index::{FieldBinding, Link, MappingIndex, ResourceMapping, NPR_NORPD_INDEX};
pub use template::{render_template, TemplateSet};
pub use transform::Transform;

use crate::fhir::{FhirError, ResourceKind};

/// Flat image of a resource: `Kind.path` to string value, ordered.
pub type FlatRecord = indexmap::IndexMap<String, String>;

#[derive(Debug, thiserror::Error)]
pub enum WranglingError {
    #[error("index: {0}")]
    IndexSyntax(String),
    #[error("index: unknown resource kind `{0}`")]
    UnknownKind(String),
    #[error("index: duplicate section for {0}")]
    DuplicateSection(ResourceKind),
    #[error("index: unknown field path `{0}`")]
    UnknownFieldPath(String),
    #[error("index: `{0}` is a reference; bind it with a [[link]]")]
    ReferenceBoundToColumn(String),
    #[error("index: field path `{0}` bound twice")]
    DuplicateFieldPath(String),
    #[error("index: unknown transform `{0}`")]
    UnknownTransform(String),
    #[error("index: column `{0}` bound more than once")]
    DuplicateColumnBinding(String),
    #[error("index: link source `{0}` is not a reference field")]
    LinkNotReference(String),
    #[error("table lacks column `{0}` required by the index")]
    MissingColumn(String),
    #[error("row {row}, column {column}: cannot transform `{value}`: {reason}")]
    TransformFailed {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("{path}: cannot invert value: {reason}")]
    InverseFailed { path: String, reason: String },
    #[error("row {row}: {kind} lacks mandatory field `{field}` after mapping")]
    MissingMandatory {
        row: usize,
        kind: ResourceKind,
        field: String,
    },
    #[error("template for {kind}: mandatory slot `{slot}` is unfilled")]
    UnfilledSlot { kind: ResourceKind, slot: String },
    #[error("bundle {bundle} has no {kind} resource but the index maps columns to it")]
    MissingKind { bundle: usize, kind: ResourceKind },
    #[error("row {row}: generated bundle is not link-closed: {report}")]
    InvalidBundle { row: usize, report: String },
    #[error("template: {0}")]
    Template(String),
    #[error(transparent)]
    Fhir(#[from] FhirError),
}
