use std::collections::BTreeMap;

use crate::fhir::{
    natural_id_key, parse_resource, serialize_resource, FhirResource, FieldValue, ParseMode, ResourceId, ResourceKind,
};

/// A stored resource: its canonical body plus the references search needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stored {
    pub canonical: String,
    pub resource: FhirResource,
    subject: Option<String>,
    encounter: Option<String>,
}

impl Stored {
    pub fn new(resource: FhirResource) -> Stored {
        let ref_value = |path: &str| match resource.get(path) {
            Some(FieldValue::Ref(id)) => Some(id.value().to_string()),
            _ => None,
        };
        let subject = ref_value("subject");
        let encounter = ref_value("encounter");
        Stored {
            canonical: serialize_resource(&resource),
            resource,
            subject,
            encounter,
        }
    }

    pub fn from_canonical(text: &str) -> Result<Stored, String> {
        let r = parse_resource(text, ParseMode::Strict).map_err(|e| e.to_string())?;
        r.validate().map_err(|e| e.to_string())?;
        let s = Stored::new(r);
        if s.canonical != text {
            return Err("resource body is not in canonical form".into());
        }
        Ok(s)
    }

    fn matches(&self, kind: ResourceKind, q: &SearchQuery) -> bool {
        let own = |k: ResourceKind| (kind == k).then(|| self.resource.id_value());
        let check = |want: &Option<String>, field: &Option<String>, k: ResourceKind| match want {
            None => true,
            Some(w) => own(k).or(field.as_deref()) == Some(w.as_str()),
        };
        check(&q.patient, &self.subject, ResourceKind::Patient)
            && check(&q.encounter, &self.encounter, ResourceKind::Encounter)
    }
}

/// Search filters. `patient` matches a Patient's own id or any resource's
/// `subject`; `encounter` likewise for Encounters and `encounter`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchQuery {
    pub patient: Option<String>,
    pub encounter: Option<String>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct KindStore {
    counter: u64,
    items: BTreeMap<(String, u64, String), Stored>,
}

/// Per-kind maps from id to canonical resource, each with its own monotone
/// id counter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Store {
    kinds: [KindStore; 8],
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    pub fn counter(&self, kind: ResourceKind) -> u64 {
        self.kinds[kind.index()].counter
    }

    pub fn set_counter(&mut self, kind: ResourceKind, n: u64) {
        self.kinds[kind.index()].counter = n;
    }

    pub fn len(&self, kind: ResourceKind) -> usize {
        self.kinds[kind.index()].items.len()
    }

    pub fn total(&self) -> usize {
        self.kinds.iter().map(|k| k.items.len()).sum()
    }

    pub fn get(&self, kind: ResourceKind, id: &str) -> Option<&Stored> {
        self.kinds[kind.index()].items.get(&natural_id_key(id))
    }

    pub fn contains(&self, id: &ResourceId) -> bool {
        self.get(id.kind(), id.value()).is_some()
    }

    /// Assigns the next `<prefix>-<counter>` id and stores the resource
    /// under it. Ids already present are skipped, never reused.
    pub fn create(&mut self, mut resource: FhirResource) -> &Stored {
        let kind = resource.kind();
        let ks = &mut self.kinds[kind.index()];
        let id = loop {
            ks.counter += 1;
            let id = format!("{}-{}", kind.id_prefix(), ks.counter);
            if !ks.items.contains_key(&natural_id_key(&id)) {
                break id;
            }
        };
        resource.set_id(id.clone());
        let key = natural_id_key(&id);
        ks.items.insert(key.clone(), Stored::new(resource));
        &ks.items[&key]
    }

    /// Stores a resource under its own id, replacing nothing.
    pub fn insert(&mut self, stored: Stored) -> Result<(), String> {
        let kind = stored.resource.kind();
        let key = natural_id_key(stored.resource.id_value());
        let ks = &mut self.kinds[kind.index()];
        if ks.items.contains_key(&key) {
            return Err(format!("duplicate id {}", stored.resource.id()));
        }
        ks.items.insert(key, stored);
        Ok(())
    }

    /// Resources of `kind` in natural id order.
    pub fn iter(&self, kind: ResourceKind) -> impl Iterator<Item = &Stored> {
        self.kinds[kind.index()].items.values()
    }

    /// Matches in natural id order, and the match count before `count`
    /// truncation.
    pub fn search(&self, kind: ResourceKind, q: &SearchQuery) -> (Vec<&Stored>, usize) {
        let hits: Vec<&Stored> = self.iter(kind).filter(|s| s.matches(kind, q)).collect();
        let total = hits.len();
        let shown = hits.into_iter().take(q.count.unwrap_or(usize::MAX)).collect();
        (shown, total)
    }
}

/// `{"resourceType":"Bundle","type":"searchset","total":n,"entry":[…]}`
pub fn searchset_json(hits: &[&Stored], total: usize) -> String {
    let mut out = format!(r#"{{"resourceType":"Bundle","type":"searchset","total":{total},"entry":["#);
    for (i, s) in hits.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(r#"{"resource":"#);
        out.push_str(&s.canonical);
        out.push('}');
    }
    out.push_str("]}");
    out
}
