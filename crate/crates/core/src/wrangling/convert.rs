use std::collections::HashMap;

use rayon::prelude::*;

use super::index::{FieldBinding, MappingIndex};
use super::template::TemplateSet;
use super::{FlatRecord, WranglingError};
use crate::fhir::{validate_bundle, Bundle, FhirResource, FieldValue, ResourceId};
use crate::table::Table;

/// Collapses a resource to `Kind.path` keys in schema order, `Kind.id`
/// first. References flatten to their bare id.
pub fn flatten_resource(r: &FhirResource) -> FlatRecord {
    let kind = r.kind();
    let mut out = FlatRecord::new();
    out.insert(format!("{kind}.id"), r.id_value().to_string());
    for (def, v) in r.values() {
        out.insert(format!("{kind}.{}", def.path), v.to_flat_string());
    }
    out
}

/// One bundle per table row. Local ids are `urn:local:<row * 8 + kind index>`.
pub fn csv_to_fhir(t: &Table, idx: &MappingIndex) -> Result<Vec<Bundle>, WranglingError> {
    csv_to_fhir_with(t, idx, TemplateSet::builtin())
}

pub fn csv_to_fhir_with(t: &Table, idx: &MappingIndex, templates: &TemplateSet) -> Result<Vec<Bundle>, WranglingError> {
    let mut col_pos = HashMap::new();
    for c in idx.columns() {
        let pos = t
            .column_index(c)
            .ok_or_else(|| WranglingError::MissingColumn(c.clone()))?;
        col_pos.insert(c.as_str(), pos);
    }
    let results: Vec<Result<Bundle, WranglingError>> = t
        .rows()
        .par_iter()
        .enumerate()
        .map(|(row_idx, row)| row_to_bundle(row_idx, row, &col_pos, idx, templates))
        .collect();
    results.into_iter().collect()
}

fn local_id(row: usize, kind: crate::fhir::ResourceKind) -> ResourceId {
    ResourceId::local(kind, (row * 8 + kind.index()) as u64)
}

fn row_to_bundle(
    row_idx: usize,
    row: &[String],
    col_pos: &HashMap<&str, usize>,
    idx: &MappingIndex,
    templates: &TemplateSet,
) -> Result<Bundle, WranglingError> {
    let mut resources = Vec::with_capacity(idx.resources.len());
    for m in &idx.resources {
        let kind = m.kind;
        let mut rec = FlatRecord::new();
        rec.insert(format!("{kind}.id"), local_id(row_idx, kind).value().to_string());
        for b in &m.fields {
            let cells: Vec<&str> = b.columns.iter().map(|c| row[col_pos[c.as_str()]].as_str()).collect();
            if cells.iter().all(|c| c.is_empty()) {
                continue;
            }
            let fail = |reason: String| WranglingError::TransformFailed {
                row: row_idx,
                column: b.columns.join("+"),
                value: cells.join("+"),
                reason,
            };
            if cells.iter().any(|c| c.is_empty()) {
                return Err(fail("partially empty multi-column value".into()));
            }
            let v = b.transform.forward(&cells).map_err(fail)?;
            FieldValue::from_flat_str(b.def.ty, &v).map_err(fail)?;
            rec.insert(format!("{kind}.{}", b.def.path), v);
        }
        for l in idx.links.iter().filter(|l| l.from_kind == kind) {
            rec.insert(
                format!("{kind}.{}", l.from_field),
                local_id(row_idx, l.to).value().to_string(),
            );
        }
        let r = templates.render(kind, &rec).map_err(|e| match e {
            WranglingError::UnfilledSlot { kind, slot } => WranglingError::MissingMandatory {
                row: row_idx,
                kind,
                field: slot,
            },
            other => other,
        })?;
        resources.push(r);
    }
    let bundle = Bundle::new(resources);
    let report = validate_bundle(&bundle);
    if !report.is_empty() {
        return Err(WranglingError::InvalidBundle {
            row: row_idx,
            report: report.to_string(),
        });
    }
    Ok(bundle)
}

fn binding_cells(b: &FieldBinding, r: &FhirResource) -> Result<Option<Vec<String>>, WranglingError> {
    match r.get(b.def.path) {
        None => Ok(None),
        Some(v) => b
            .transform
            .inverse(&v.to_flat_string())
            .map(Some)
            .map_err(|reason| WranglingError::InverseFailed {
                path: format!("{}.{}", r.kind(), b.def.path),
                reason,
            }),
    }
}

/// Dataset cells recoverable from one resource: `(column, value)` pairs for
/// every column the index binds to a field of this resource's kind. Absent
/// fields yield empty cells.
pub fn columns_for_resource(idx: &MappingIndex, r: &FhirResource) -> Result<Vec<(String, String)>, WranglingError> {
    let mut out = Vec::new();
    if let Some(m) = idx.section(r.kind()) {
        for b in &m.fields {
            match binding_cells(b, r)? {
                Some(cells) => out.extend(b.columns.iter().cloned().zip(cells)),
                None => out.extend(b.columns.iter().map(|c| (c.clone(), String::new()))),
            }
        }
    }
    Ok(out)
}

/// Inverse of [`csv_to_fhir`]: one row per bundle, columns exactly the
/// index's dataset columns. The first resource of each kind is used.
pub fn fhir_to_csv(bundles: &[Bundle], idx: &MappingIndex) -> Result<Table, WranglingError> {
    let header: Vec<String> = idx.columns().to_vec();
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(bundles.len());
    for (bi, b) in bundles.iter().enumerate() {
        let mut row = vec![String::new(); header.len()];
        for m in &idx.resources {
            let Some(r) = b.first_of(m.kind) else {
                if m.fields.is_empty() {
                    continue;
                }
                return Err(WranglingError::MissingKind {
                    bundle: bi,
                    kind: m.kind,
                });
            };
            for (col, val) in columns_for_resource(idx, r)? {
                row[pos[col.as_str()]] = val;
            }
        }
        rows.push(row);
    }
    Ok(Table::new(header, rows).expect("index columns are unique"))
}
