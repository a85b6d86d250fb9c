use std::collections::{BTreeSet, HashMap};

use crate::fhir::{natural_id_key, Bundle, FhirResource, FieldValue, ResourceId, ResourceKind};

/// Kind order, then natural id order.
pub(crate) fn sort_resources(rs: &mut [FhirResource]) {
    rs.sort_by_cached_key(|r| (r.kind().index(), natural_id_key(r.id_value())));
}

fn ref_field(r: &FhirResource, path: &str) -> Option<ResourceId> {
    match r.get(path) {
        Some(FieldValue::Ref(id)) => Some(id),
        _ => None,
    }
}

/// Splits a server's contents into one bundle per Encounter: the
/// Encounter, the Conditions and MedicationRequests naming it, the
/// MedicationDispenses authorized by those requests, and everything they
/// reference. Bundles follow Encounter id order. Resources reachable from
/// no Encounter are left out. A reference to something absent fails with
/// the `(holder, target)` pair.
pub fn group_by_encounter(resources: Vec<FhirResource>) -> Result<Vec<Bundle>, (ResourceId, ResourceId)> {
    let index: HashMap<ResourceId, &FhirResource> = resources.iter().map(|r| (r.id(), r)).collect();
    let mut by_encounter: HashMap<ResourceId, Vec<&FhirResource>> = HashMap::new();
    let mut by_request: HashMap<ResourceId, Vec<&FhirResource>> = HashMap::new();
    for r in &resources {
        match r.kind() {
            ResourceKind::Condition | ResourceKind::MedicationRequest => {
                if let Some(e) = ref_field(r, "encounter") {
                    by_encounter.entry(e).or_default().push(r);
                }
            }
            ResourceKind::MedicationDispense => {
                if let Some(q) = ref_field(r, "authorizingRequest") {
                    by_request.entry(q).or_default().push(r);
                }
            }
            _ => {}
        }
    }
    let mut encounters: Vec<&FhirResource> = resources
        .iter()
        .filter(|r| r.kind() == ResourceKind::Encounter)
        .collect();
    encounters.sort_by_cached_key(|r| natural_id_key(r.id_value()));

    let mut out = Vec::with_capacity(encounters.len());
    for enc in encounters {
        let mut members: Vec<&FhirResource> = vec![enc];
        for child in by_encounter.get(&enc.id()).into_iter().flatten() {
            members.push(child);
            if child.kind() == ResourceKind::MedicationRequest {
                members.extend(by_request.get(&child.id()).into_iter().flatten());
            }
        }
        let mut seen: BTreeSet<ResourceId> = members.iter().map(|r| r.id()).collect();
        let mut i = 0;
        while i < members.len() {
            let holder = members[i];
            for (_, target) in holder.references() {
                if seen.contains(target) {
                    continue;
                }
                let found = index.get(target).ok_or_else(|| (holder.id(), target.clone()))?;
                seen.insert(target.clone());
                members.push(found);
            }
            i += 1;
        }
        let mut rs: Vec<FhirResource> = members.into_iter().cloned().collect();
        sort_resources(&mut rs);
        out.push(Bundle::new(rs));
    }
    Ok(out)
}
