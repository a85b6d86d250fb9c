//! The mapping index: which dataset column feeds which resource field, and
//! how resources of one row link to each other. See `docs/mapping-index.md`.

use std::collections::HashSet;

use serde::Deserialize;

use super::transform::Transform;
use super::WranglingError;
use crate::fhir::{field_def, FieldDef, FieldType, ResourceKind};

/// Index shipped with the crate for the 35-column hospitalization and
/// prescription dataset.
pub const NPR_NORPD_INDEX: &str = include_str!("../../resources/npr-norpd.index");

#[derive(Debug, Clone, PartialEq)]
pub struct MappingIndex {
    pub dataset: String,
    /// In resource kind order.
    pub resources: Vec<ResourceMapping>,
    pub links: Vec<Link>,
    column_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceMapping {
    pub kind: ResourceKind,
    pub fields: Vec<FieldBinding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldBinding {
    pub def: &'static FieldDef,
    pub columns: Vec<String>,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub from_kind: ResourceKind,
    /// Reference field path within `from_kind`.
    pub from_field: &'static str,
    pub to: ResourceKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIndex {
    dataset: String,
    #[serde(default)]
    resource: Vec<RawResource>,
    #[serde(default)]
    link: Vec<RawLink>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResource {
    kind: String,
    #[serde(default)]
    fields: Vec<RawField>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    path: String,
    column: Option<String>,
    columns: Option<Vec<String>>,
    transform: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    from: String,
    to: String,
}

impl MappingIndex {
    /// Parses and validates an index document (TOML).
    pub fn load(doc: &str) -> Result<MappingIndex, WranglingError> {
        let raw: RawIndex = toml::from_str(doc).map_err(|e| WranglingError::IndexSyntax(e.to_string()))?;
        let mut resources: Vec<ResourceMapping> = Vec::new();
        let mut bound_columns = HashSet::new();
        for rr in raw.resource {
            let kind: ResourceKind = rr
                .kind
                .parse()
                .map_err(|_| WranglingError::UnknownKind(rr.kind.clone()))?;
            if resources.iter().any(|m| m.kind == kind) {
                return Err(WranglingError::DuplicateSection(kind));
            }
            let mut fields: Vec<FieldBinding> = Vec::new();
            for rf in rr.fields {
                let full = format!("{kind}.{}", rf.path);
                let def = field_def(kind, &rf.path).ok_or_else(|| WranglingError::UnknownFieldPath(full.clone()))?;
                if matches!(def.ty, FieldType::Ref(_)) {
                    return Err(WranglingError::ReferenceBoundToColumn(full));
                }
                if fields.iter().any(|f| f.def.path == def.path) {
                    return Err(WranglingError::DuplicateFieldPath(full));
                }
                let transform = match rf.transform.as_deref() {
                    None => Transform::Identity,
                    Some(name) => name
                        .parse()
                        .map_err(|_| WranglingError::UnknownTransform(name.to_string()))?,
                };
                let columns = match (rf.column, rf.columns) {
                    (Some(c), None) => vec![c],
                    (None, Some(cs)) => cs,
                    _ => {
                        return Err(WranglingError::IndexSyntax(format!(
                            "{full}: give exactly one of `column` or `columns`"
                        )))
                    }
                };
                if columns.len() != transform.arity() {
                    return Err(WranglingError::IndexSyntax(format!(
                        "{full}: transform {transform} takes {} column(s), {} given",
                        transform.arity(),
                        columns.len()
                    )));
                }
                if !transform.fits(def.ty) {
                    return Err(WranglingError::IndexSyntax(format!(
                        "{full}: transform {transform} cannot produce a {:?} value",
                        def.ty
                    )));
                }
                for c in &columns {
                    if c.is_empty() {
                        return Err(WranglingError::IndexSyntax(format!("{full}: empty column name")));
                    }
                    if !bound_columns.insert(c.clone()) {
                        return Err(WranglingError::DuplicateColumnBinding(c.clone()));
                    }
                }
                fields.push(FieldBinding {
                    def,
                    columns,
                    transform,
                });
            }
            resources.push(ResourceMapping { kind, fields });
        }

        let mut links = Vec::new();
        for rl in raw.link {
            let (kind_s, field) = rl
                .from
                .split_once('.')
                .ok_or_else(|| WranglingError::UnknownFieldPath(rl.from.clone()))?;
            let from_kind: ResourceKind = kind_s
                .parse()
                .map_err(|_| WranglingError::UnknownKind(kind_s.to_string()))?;
            let def = field_def(from_kind, field).ok_or_else(|| WranglingError::UnknownFieldPath(rl.from.clone()))?;
            let FieldType::Ref(target) = def.ty else {
                return Err(WranglingError::LinkNotReference(rl.from.clone()));
            };
            let to: ResourceKind = rl.to.parse().map_err(|_| WranglingError::UnknownKind(rl.to.clone()))?;
            if to != target {
                return Err(WranglingError::IndexSyntax(format!(
                    "link {} must point to {target}, not {to}",
                    rl.from
                )));
            }
            for k in [from_kind, to] {
                if !resources.iter().any(|m| m.kind == k) {
                    return Err(WranglingError::IndexSyntax(format!(
                        "link {} -> {to} needs a [[resource]] section for {k}",
                        rl.from
                    )));
                }
            }
            if links
                .iter()
                .any(|l: &Link| l.from_kind == from_kind && l.from_field == def.path)
            {
                return Err(WranglingError::IndexSyntax(format!("duplicate link {}", rl.from)));
            }
            links.push(Link {
                from_kind,
                from_field: def.path,
                to,
            });
        }

        let column_order = resources
            .iter()
            .flat_map(|m| m.fields.iter().flat_map(|f| f.columns.iter().cloned()))
            .collect();
        // Bundles follow kind order; columns follow the file.
        resources.sort_by_key(|m| m.kind);
        Ok(MappingIndex {
            dataset: raw.dataset,
            resources,
            links,
            column_order,
        })
    }

    pub fn npr_norpd() -> MappingIndex {
        MappingIndex::load(NPR_NORPD_INDEX).expect("bundled index is valid")
    }

    pub fn section(&self, kind: ResourceKind) -> Option<&ResourceMapping> {
        self.resources.iter().find(|m| m.kind == kind)
    }

    /// Dataset columns in first-appearance order of the index file.
    pub fn columns(&self) -> &[String] {
        &self.column_order
    }

    /// The binding that consumes `column`.
    pub fn binding_for_column(&self, column: &str) -> Option<(ResourceKind, &FieldBinding)> {
        self.resources.iter().find_map(|m| {
            m.fields
                .iter()
                .find(|f| f.columns.iter().any(|c| c == column))
                .map(|f| (m.kind, f))
        })
    }
}
