//! Canonical JSON wire format.
//!
//! A document is a JSON object with `resourceType` first, then `id`, then
//! the present fields in schema order. Dotted schema paths become nested
//! objects; references are `{"reference":"Kind/id"}`. Output is compact
//! JSON without insignificant whitespace.

use std::collections::HashMap;

use serde_json::{Map, Value};

use super::kind::{ResourceId, ResourceKind};
use super::resource::{parse_date, schema, FhirResource, FieldDef, FieldType, FieldValue};
use super::FhirError;

/// How unknown fields are treated while parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ParseMode {
    /// Unknown fields are an error.
    #[default]
    Strict,
    /// Unknown fields are ignored.
    Lenient,
}

pub fn serialize_resource(r: &FhirResource) -> String {
    serde_json::to_string(&to_value(r)).expect("json values always serialize")
}

pub fn to_value(r: &FhirResource) -> Value {
    let mut root = Map::new();
    root.insert("resourceType".into(), Value::String(r.kind().as_str().into()));
    root.insert("id".into(), Value::String(r.id_value().into()));
    for (def, v) in r.values() {
        let leaf = match v {
            FieldValue::Str(s) => Value::String(s),
            FieldValue::Int(n) => Value::from(n),
            FieldValue::Date(d) => Value::String(d.format("%Y-%m-%d").to_string()),
            FieldValue::Gender(g) => Value::String(g.as_str().into()),
            FieldValue::Ref(id) => {
                let mut m = Map::new();
                m.insert("reference".into(), Value::String(id.reference()));
                Value::Object(m)
            }
        };
        insert_path(&mut root, def.path, leaf);
    }
    Value::Object(root)
}

fn insert_path(root: &mut Map<String, Value>, path: &str, leaf: Value) {
    let mut parts = path.split('.').peekable();
    let mut cur = root;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(part.to_string(), leaf);
            return;
        }
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("schema paths never collide with leaves");
    }
}

pub fn parse_resource(text: &str, mode: ParseMode) -> Result<FhirResource, FhirError> {
    let v: Value = serde_json::from_str(text).map_err(|e| FhirError::Malformed(e.to_string()))?;
    from_value(&v, mode)
}

pub fn from_value(v: &Value, mode: ParseMode) -> Result<FhirResource, FhirError> {
    let obj = v
        .as_object()
        .ok_or_else(|| FhirError::Malformed("document is not a JSON object".into()))?;
    let kind: ResourceKind = match obj.get("resourceType") {
        Some(Value::String(s)) => s.parse()?,
        Some(_) => return Err(FhirError::Malformed("`resourceType` is not a string".into())),
        None => return Err(FhirError::Malformed("missing `resourceType`".into())),
    };
    let id = match obj.get("id") {
        Some(Value::String(s)) => ResourceId::new(kind, s.clone())?.value().to_string(),
        Some(_) => {
            return Err(FhirError::InvalidValue {
                kind,
                path: "id".into(),
                reason: "expected a string".into(),
            })
        }
        None => {
            return Err(FhirError::MissingField {
                kind,
                field: "id".into(),
            })
        }
    };

    let defs = schema(kind);
    let mut values: HashMap<&'static str, FieldValue> = HashMap::new();
    let mut leaves = Vec::new();
    for (key, child) in obj {
        if key == "resourceType" || key == "id" {
            continue;
        }
        collect_leaves(defs, key.clone(), child, &mut leaves);
    }
    for (path, leaf) in leaves {
        match defs.iter().find(|d| d.path == path) {
            Some(def) => {
                values.insert(def.path, parse_leaf(kind, def, leaf)?);
            }
            None if mode == ParseMode::Lenient => {}
            None => return Err(FhirError::UnknownField { kind, path }),
        }
    }
    FhirResource::from_values(kind, id, values)
}

/// Walks nested objects down to schema leaves. Objects sitting at a
/// reference path are leaves themselves.
fn collect_leaves<'a>(defs: &[FieldDef], path: String, v: &'a Value, out: &mut Vec<(String, &'a Value)>) {
    let is_ref = defs.iter().any(|d| d.path == path && matches!(d.ty, FieldType::Ref(_)));
    match v {
        Value::Object(m) if !is_ref => {
            if m.is_empty() {
                out.push((path, v));
                return;
            }
            for (k, child) in m {
                collect_leaves(defs, format!("{path}.{k}"), child, out);
            }
        }
        _ => out.push((path, v)),
    }
}

fn parse_leaf(kind: ResourceKind, def: &FieldDef, v: &Value) -> Result<FieldValue, FhirError> {
    let invalid = |reason: String| FhirError::InvalidValue {
        kind,
        path: def.path.to_string(),
        reason,
    };
    match def.ty {
        FieldType::Str => match v {
            Value::String(s) if !s.is_empty() => Ok(FieldValue::Str(s.clone())),
            Value::String(_) => Err(invalid("empty string".into())),
            _ => Err(invalid("expected a string".into())),
        },
        FieldType::Int => v
            .as_i64()
            .map(FieldValue::Int)
            .ok_or_else(|| invalid("expected an integer".into())),
        FieldType::Date => match v {
            Value::String(s) => parse_date(s).map(FieldValue::Date).map_err(invalid),
            _ => Err(invalid("expected a date string".into())),
        },
        FieldType::Gender => match v {
            Value::String(s) => s.parse().map(FieldValue::Gender).map_err(invalid),
            _ => Err(invalid("expected a gender code".into())),
        },
        FieldType::Ref(expected) => {
            let obj = v
                .as_object()
                .ok_or_else(|| invalid("expected a reference object".into()))?;
            if let Some(extra) = obj.keys().find(|k| k.as_str() != "reference") {
                return Err(invalid(format!("unexpected key `{extra}` in reference")));
            }
            let s = obj
                .get("reference")
                .and_then(Value::as_str)
                .ok_or_else(|| invalid("reference object lacks a `reference` string".into()))?;
            let target = ResourceId::parse_reference(s)?;
            if target.kind() != expected {
                return Err(FhirError::ReferenceKindMismatch {
                    path: format!("{kind}.{}", def.path),
                    expected,
                    found: target.kind(),
                });
            }
            Ok(FieldValue::Ref(target))
        }
    }
}
