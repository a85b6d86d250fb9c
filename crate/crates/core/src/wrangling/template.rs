//! Per-kind resource templates: JSON documents whose string leaves carry
//! `{{Kind.path}}` slots. A leaf whose slots are all filled is kept; a leaf
//! with an empty or missing slot is dropped, and objects left empty are
//! dropped with it. Rendering goes through the strict parser, so the output
//! is always a valid typed resource.

use std::path::Path;
use std::sync::OnceLock;

use serde_json::{Map, Value};

use super::{FlatRecord, WranglingError};
use crate::fhir::{self, field_def, FhirError, FhirResource, FieldType, ParseMode, ResourceKind};

const BUILTIN: [(ResourceKind, &str); 8] = [
    (
        ResourceKind::Practitioner,
        include_str!("../../templates/Practitioner.json"),
    ),
    (ResourceKind::Patient, include_str!("../../templates/Patient.json")),
    (ResourceKind::Location, include_str!("../../templates/Location.json")),
    (
        ResourceKind::Medication,
        include_str!("../../templates/Medication.json"),
    ),
    (ResourceKind::Encounter, include_str!("../../templates/Encounter.json")),
    (ResourceKind::Condition, include_str!("../../templates/Condition.json")),
    (
        ResourceKind::MedicationRequest,
        include_str!("../../templates/MedicationRequest.json"),
    ),
    (
        ResourceKind::MedicationDispense,
        include_str!("../../templates/MedicationDispense.json"),
    ),
];

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<Value>,
}

impl TemplateSet {
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            TemplateSet::from_sources(BUILTIN.iter().map(|(k, s)| (*k, s.to_string())))
                .expect("builtin templates parse")
        })
    }

    /// Loads `<Kind>.json` for every kind from a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<TemplateSet, WranglingError> {
        let dir = dir.as_ref();
        let mut sources = Vec::new();
        for kind in ResourceKind::ALL {
            let path = dir.join(format!("{kind}.json"));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| WranglingError::Template(format!("{}: {e}", path.display())))?;
            sources.push((kind, text));
        }
        TemplateSet::from_sources(sources)
    }

    fn from_sources(sources: impl IntoIterator<Item = (ResourceKind, String)>) -> Result<TemplateSet, WranglingError> {
        let mut templates = vec![Value::Null; ResourceKind::ALL.len()];
        for (kind, text) in sources {
            let v: Value =
                serde_json::from_str(&text).map_err(|e| WranglingError::Template(format!("{kind} template: {e}")))?;
            if v.get("resourceType").and_then(Value::as_str) != Some(kind.as_str()) {
                return Err(WranglingError::Template(format!(
                    "{kind} template has the wrong resourceType"
                )));
            }
            templates[kind.index()] = v;
        }
        Ok(TemplateSet { templates })
    }

    pub fn render(&self, kind: ResourceKind, values: &FlatRecord) -> Result<FhirResource, WranglingError> {
        let doc = render_value(&self.templates[kind.index()], kind, values)?.unwrap_or(Value::Null);
        fhir::from_value(&doc, ParseMode::Strict).map_err(|e| match e {
            FhirError::MissingField { kind, field } => WranglingError::UnfilledSlot {
                kind,
                slot: format!("{kind}.{field}"),
            },
            other => WranglingError::Fhir(other),
        })
    }
}

/// Renders a resource of `kind` from a flat record using the builtin templates.
pub fn render_template(kind: ResourceKind, values: &FlatRecord) -> Result<FhirResource, WranglingError> {
    TemplateSet::builtin().render(kind, values)
}

fn render_value(v: &Value, kind: ResourceKind, values: &FlatRecord) -> Result<Option<Value>, WranglingError> {
    match v {
        Value::String(s) if s.contains("{{") => render_string(s, kind, values),
        Value::Object(m) => {
            let mut out = Map::new();
            for (k, child) in m {
                if let Some(rendered) = render_value(child, kind, values)? {
                    out.insert(k.clone(), rendered);
                }
            }
            if out.is_empty() {
                Ok(None)
            } else {
                Ok(Some(Value::Object(out)))
            }
        }
        Value::Array(a) => {
            let items: Vec<Value> = a
                .iter()
                .map(|x| render_value(x, kind, values))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .flatten()
                .collect();
            Ok((!items.is_empty()).then_some(Value::Array(items)))
        }
        other => Ok(Some(other.clone())),
    }
}

fn render_string(s: &str, kind: ResourceKind, values: &FlatRecord) -> Result<Option<Value>, WranglingError> {
    let mut out = String::new();
    let mut rest = s;
    let mut only_slot: Option<&str> = None;
    let mut n_slots = 0;
    while let Some(open) = rest.find("{{") {
        let close = rest[open..]
            .find("}}")
            .ok_or_else(|| WranglingError::Template(format!("unterminated slot in `{s}`")))?
            + open;
        let name = rest[open + 2..close].trim();
        n_slots += 1;
        only_slot = Some(name);
        match values.get(name) {
            Some(v) if !v.is_empty() => {
                out.push_str(&rest[..open]);
                out.push_str(v);
            }
            _ => return Ok(None),
        }
        rest = &rest[close + 2..];
    }
    out.push_str(rest);

    // A leaf that is exactly one slot of an integer field renders as a number.
    if n_slots == 1 && s.trim().starts_with("{{") && s.trim().ends_with("}}") {
        if let Some(slot) = only_slot {
            let path = slot.strip_prefix(kind.as_str()).and_then(|p| p.strip_prefix('.'));
            if let Some(def) = path.and_then(|p| field_def(kind, p)) {
                if def.ty == FieldType::Int {
                    let n: i64 = out.parse().map_err(|_| {
                        WranglingError::Fhir(FhirError::InvalidValue {
                            kind,
                            path: def.path.to_string(),
                            reason: format!("`{out}` is not an integer"),
                        })
                    })?;
                    return Ok(Some(Value::from(n)));
                }
            }
        }
    }
    Ok(Some(Value::String(out)))
}
