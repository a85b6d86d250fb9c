use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;

use super::kind::{ResourceId, ResourceKind};
use super::FhirError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
    Other,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            "other" => Ok(Gender::Other),
            "unknown" => Ok(Gender::Unknown),
            _ => Err(format!("`{s}` is not an administrative gender")),
        }
    }
}

/// Value type of a schema field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Str,
    Int,
    Date,
    Gender,
    Ref(ResourceKind),
}

/// One field of a resource schema. `path` is the dotted path in the wire
/// document, e.g. `identifier.value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldDef {
    pub path: &'static str,
    pub ty: FieldType,
    pub required: bool,
}

/// A typed field value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Str(String),
    Int(i64),
    Date(NaiveDate),
    Gender(Gender),
    Ref(ResourceId),
}

impl FieldValue {
    /// Flat string rendering; references render as their bare id.
    pub fn to_flat_string(&self) -> String {
        match self {
            FieldValue::Str(s) => s.clone(),
            FieldValue::Int(n) => n.to_string(),
            FieldValue::Date(d) => d.format("%Y-%m-%d").to_string(),
            FieldValue::Gender(g) => g.as_str().to_string(),
            FieldValue::Ref(r) => r.value().to_string(),
        }
    }

    /// Parses the flat string rendering back into a value of type `ty`.
    pub fn from_flat_str(ty: FieldType, s: &str) -> Result<FieldValue, String> {
        match ty {
            FieldType::Str => {
                if s.is_empty() {
                    Err("empty string".into())
                } else {
                    Ok(FieldValue::Str(s.to_string()))
                }
            }
            FieldType::Int => s
                .parse::<i64>()
                .map(FieldValue::Int)
                .map_err(|_| format!("`{s}` is not an integer")),
            FieldType::Date => parse_date(s).map(FieldValue::Date),
            FieldType::Gender => s.parse().map(FieldValue::Gender),
            FieldType::Ref(kind) => ResourceId::new(kind, s).map(FieldValue::Ref).map_err(|e| e.to_string()),
        }
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    if s.len() != 10 {
        return Err(format!("`{s}` is not a YYYY-MM-DD date"));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("`{s}` is not a YYYY-MM-DD date"))
}

/// Conversion between a struct field's Rust type and [`FieldValue`].
#[allow(clippy::result_unit_err)]
pub trait FieldCodec: Sized {
    const REQUIRED: bool;
    fn encode(&self) -> Option<FieldValue>;
    /// `None` input means the field is absent. Returns `Err(())` when a
    /// required field is absent or the value has the wrong variant.
    fn decode(v: Option<FieldValue>) -> Result<Self, ()>;
    fn reference_mut(&mut self) -> Option<&mut ResourceId> {
        None
    }
    fn reference(&self) -> Option<&ResourceId> {
        None
    }
}

macro_rules! optional_codec {
    ($ty:ty, $variant:ident) => {
        impl FieldCodec for Option<$ty> {
            const REQUIRED: bool = false;
            fn encode(&self) -> Option<FieldValue> {
                self.clone().map(FieldValue::$variant)
            }
            fn decode(v: Option<FieldValue>) -> Result<Self, ()> {
                match v {
                    None => Ok(None),
                    Some(FieldValue::$variant(x)) => Ok(Some(x)),
                    Some(_) => Err(()),
                }
            }
        }
    };
}

optional_codec!(String, Str);
optional_codec!(i64, Int);
optional_codec!(NaiveDate, Date);
optional_codec!(Gender, Gender);

impl FieldCodec for Option<ResourceId> {
    const REQUIRED: bool = false;
    fn encode(&self) -> Option<FieldValue> {
        self.clone().map(FieldValue::Ref)
    }
    fn decode(v: Option<FieldValue>) -> Result<Self, ()> {
        match v {
            None => Ok(None),
            Some(FieldValue::Ref(x)) => Ok(Some(x)),
            Some(_) => Err(()),
        }
    }
    fn reference_mut(&mut self) -> Option<&mut ResourceId> {
        self.as_mut()
    }
    fn reference(&self) -> Option<&ResourceId> {
        self.as_ref()
    }
}

impl FieldCodec for ResourceId {
    const REQUIRED: bool = true;
    fn encode(&self) -> Option<FieldValue> {
        Some(FieldValue::Ref(self.clone()))
    }
    fn decode(v: Option<FieldValue>) -> Result<Self, ()> {
        match v {
            Some(FieldValue::Ref(x)) => Ok(x),
            _ => Err(()),
        }
    }
    fn reference_mut(&mut self) -> Option<&mut ResourceId> {
        Some(self)
    }
    fn reference(&self) -> Option<&ResourceId> {
        Some(self)
    }
}

macro_rules! define_resources {
    ($(
        $(#[$meta:meta])*
        $kind:ident {
            $( $(#[$fmeta:meta])* $field:ident : $rty:ty = $path:literal => $fty:expr ),* $(,)?
        }
    )*) => {
        $(
            $(#[$meta])*
            #[derive(Debug, Clone, PartialEq, Eq)]
            pub struct $kind {
                pub id: String,
                $( $(#[$fmeta])* pub $field: $rty, )*
            }

            impl $kind {
                pub const FIELDS: &'static [FieldDef] = &[
                    $( FieldDef { path: $path, ty: $fty, required: <$rty as FieldCodec>::REQUIRED }, )*
                ];

                fn values(&self) -> Vec<(&'static FieldDef, FieldValue)> {
                    let mut out = Vec::new();
                    let mut defs = Self::FIELDS.iter();
                    $(
                        let def = defs.next().expect("schema length");
                        if let Some(v) = FieldCodec::encode(&self.$field) {
                            out.push((def, v));
                        }
                    )*
                    let _ = defs;
                    out
                }

                fn from_values(
                    id: String,
                    values: &mut HashMap<&'static str, FieldValue>,
                ) -> Result<Self, FhirError> {
                    Ok($kind {
                        id,
                        $( $field: <$rty as FieldCodec>::decode(values.remove($path)).map_err(|_| {
                            FhirError::MissingField {
                                kind: ResourceKind::$kind,
                                field: $path.to_string(),
                            }
                        })?, )*
                    })
                }

                fn references(&self) -> Vec<(&'static str, &ResourceId)> {
                    let mut out = Vec::new();
                    $(
                        if let Some(r) = FieldCodec::reference(&self.$field) {
                            out.push(($path, r));
                        }
                    )*
                    out
                }

                fn references_mut(&mut self) -> Vec<(&'static str, &mut ResourceId)> {
                    let mut out = Vec::new();
                    $(
                        if let Some(r) = FieldCodec::reference_mut(&mut self.$field) {
                            out.push(($path, r));
                        }
                    )*
                    out
                }
            }

            impl From<$kind> for FhirResource {
                fn from(r: $kind) -> Self {
                    FhirResource::$kind(r)
                }
            }
        )*

        /// One resource of any supported kind.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub enum FhirResource {
            $( $kind($kind), )*
        }

        impl FhirResource {
            pub fn kind(&self) -> ResourceKind {
                match self {
                    $( FhirResource::$kind(_) => ResourceKind::$kind, )*
                }
            }

            pub fn id_value(&self) -> &str {
                match self {
                    $( FhirResource::$kind(r) => &r.id, )*
                }
            }

            pub fn set_id(&mut self, id: impl Into<String>) {
                match self {
                    $( FhirResource::$kind(r) => r.id = id.into(), )*
                }
            }

            /// Present field values in schema order (excluding `id`).
            pub fn values(&self) -> Vec<(&'static FieldDef, FieldValue)> {
                match self {
                    $( FhirResource::$kind(r) => r.values(), )*
                }
            }

            /// Every present reference with the path of the field holding it.
            pub fn references(&self) -> Vec<(&'static str, &ResourceId)> {
                match self {
                    $( FhirResource::$kind(r) => r.references(), )*
                }
            }

            pub fn references_mut(&mut self) -> Vec<(&'static str, &mut ResourceId)> {
                match self {
                    $( FhirResource::$kind(r) => r.references_mut(), )*
                }
            }

            /// Builds a resource from typed field values keyed by path.
            /// Leftover values with unknown paths are an error.
            pub fn from_values(
                kind: ResourceKind,
                id: String,
                mut values: HashMap<&'static str, FieldValue>,
            ) -> Result<FhirResource, FhirError> {
                let r = match kind {
                    $( ResourceKind::$kind => FhirResource::$kind($kind::from_values(id, &mut values)?), )*
                };
                if let Some(path) = values.keys().next() {
                    return Err(FhirError::UnknownField { kind, path: path.to_string() });
                }
                r.validate()?;
                Ok(r)
            }
        }

        /// Field schema of a kind, in canonical wire order (excluding `id`).
        pub fn schema(kind: ResourceKind) -> &'static [FieldDef] {
            match kind {
                $( ResourceKind::$kind => $kind::FIELDS, )*
            }
        }
    };
}

define_resources! {
    Practitioner {
        identifier: Option<String> = "identifier.value" => FieldType::Str,
        identifier_type: Option<String> = "identifier.type" => FieldType::Str,
        gender: Option<Gender> = "gender" => FieldType::Gender,
        birth_date: Option<NaiveDate> = "birthDate" => FieldType::Date,
    }

    Patient {
        identifier: Option<String> = "identifier.value" => FieldType::Str,
        identifier_type: Option<String> = "identifier.type" => FieldType::Str,
        gender: Option<Gender> = "gender" => FieldType::Gender,
        birth_date: Option<NaiveDate> = "birthDate" => FieldType::Date,
        age_group: Option<String> = "ageGroup" => FieldType::Str,
        deceased_year: Option<i64> = "deceased.year" => FieldType::Int,
        deceased_month: Option<i64> = "deceased.month" => FieldType::Int,
        county_name: Option<String> = "address.county" => FieldType::Str,
        county_number: Option<String> = "address.countyNumber" => FieldType::Str,
    }

    Location {
        institute_name: Option<String> = "name" => FieldType::Str,
        county_name: Option<String> = "address.county" => FieldType::Str,
        county_number: Option<String> = "address.countyNumber" => FieldType::Str,
    }

    Medication {
        drug_id: Option<String> = "identifier.value" => FieldType::Str,
        drug_name: Option<String> = "name" => FieldType::Str,
        /// ATC classification code.
        atc_code: Option<String> = "code" => FieldType::Str,
        defined_daily_dosage: Option<String> = "definedDailyDosage" => FieldType::Str,
    }

    Encounter {
        identifier: Option<String> = "identifier.value" => FieldType::Str,
        status: Option<String> = "status" => FieldType::Str,
        subject: ResourceId = "subject" => FieldType::Ref(ResourceKind::Patient),
        participant: Option<ResourceId> = "participant" => FieldType::Ref(ResourceKind::Practitioner),
        location: Option<ResourceId> = "location" => FieldType::Ref(ResourceKind::Location),
        period_start: Option<NaiveDate> = "period.start" => FieldType::Date,
        period_end: Option<NaiveDate> = "period.end" => FieldType::Date,
        arrival_mode: Option<String> = "hospitalization.arrivalMode" => FieldType::Str,
        discharge_location: Option<String> = "hospitalization.dischargeLocation" => FieldType::Str,
    }

    Condition {
        subject: ResourceId = "subject" => FieldType::Ref(ResourceKind::Patient),
        encounter: Option<ResourceId> = "encounter" => FieldType::Ref(ResourceKind::Encounter),
        /// ICD or ICPC diagnosis code.
        diagnosis_code: Option<String> = "code" => FieldType::Str,
    }

    MedicationRequest {
        prescription_id: Option<String> = "identifier.value" => FieldType::Str,
        subject: ResourceId = "subject" => FieldType::Ref(ResourceKind::Patient),
        encounter: Option<ResourceId> = "encounter" => FieldType::Ref(ResourceKind::Encounter),
        requester: Option<ResourceId> = "requester" => FieldType::Ref(ResourceKind::Practitioner),
        medication: ResourceId = "medication" => FieldType::Ref(ResourceKind::Medication),
        category: Option<String> = "category.text" => FieldType::Str,
        category_code: Option<String> = "category.code" => FieldType::Str,
        reimbursement_category: Option<String> = "reimbursement.category" => FieldType::Str,
        reimbursement_category_code: Option<String> = "reimbursement.categoryCode" => FieldType::Str,
        reimbursement_code: Option<String> = "reimbursement.code" => FieldType::Str,
    }

    MedicationDispense {
        subject: ResourceId = "subject" => FieldType::Ref(ResourceKind::Patient),
        medication: ResourceId = "medication" => FieldType::Ref(ResourceKind::Medication),
        authorizing_request: Option<ResourceId> = "authorizingRequest" => FieldType::Ref(ResourceKind::MedicationRequest),
        dispense_day: Option<i64> = "dispenseDay" => FieldType::Int,
        dispense_year: Option<i64> = "dispenseYear" => FieldType::Int,
        packages_dispensed: Option<i64> = "packagesDispensed" => FieldType::Int,
        ddd_dispensed: Option<String> = "dddDispensed" => FieldType::Str,
    }
}

impl FhirResource {
    pub fn id(&self) -> ResourceId {
        ResourceId::new(self.kind(), self.id_value()).expect("validated resource id")
    }

    /// Checks the type invariants that construction alone cannot enforce:
    /// nonempty id and string values. Reference kinds are checked by
    /// bundle validation so that mismatches can be reported, not rejected.
    pub fn validate(&self) -> Result<(), FhirError> {
        ResourceId::new(self.kind(), self.id_value())?;
        for (def, v) in self.values() {
            if let FieldValue::Str(s) = &v {
                if s.is_empty() {
                    return Err(FhirError::InvalidValue {
                        kind: self.kind(),
                        path: def.path.to_string(),
                        reason: "empty string value".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Looks up a present field value by path.
    pub fn get(&self, path: &str) -> Option<FieldValue> {
        self.values()
            .into_iter()
            .find(|(def, _)| def.path == path)
            .map(|(_, v)| v)
    }
}

pub fn field_def(kind: ResourceKind, path: &str) -> Option<&'static FieldDef> {
    schema(kind).iter().find(|d| d.path == path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_required_fields() {
        let required: Vec<_> = ResourceKind::ALL
            .iter()
            .flat_map(|&k| {
                schema(k)
                    .iter()
                    .filter(|d| d.required)
                    .map(move |d| format!("{k}.{}", d.path))
            })
            .collect();
        assert_eq!(
            required,
            vec![
                "Encounter.subject",
                "Condition.subject",
                "MedicationRequest.subject",
                "MedicationRequest.medication",
                "MedicationDispense.subject",
                "MedicationDispense.medication",
            ]
        );
    }

    #[test]
    fn from_values_reports_missing_required() {
        let err = FhirResource::from_values(ResourceKind::Encounter, "e1".into(), HashMap::new()).unwrap_err();
        assert!(matches!(err, FhirError::MissingField { ref field, .. } if field == "subject"));
    }

    #[test]
    fn reference_listing() {
        let enc = Encounter {
            id: "e1".into(),
            identifier: None,
            status: None,
            subject: ResourceId::new(ResourceKind::Patient, "p1").unwrap(),
            participant: None,
            location: Some(ResourceId::new(ResourceKind::Location, "l1").unwrap()),
            period_start: None,
            period_end: None,
            arrival_mode: None,
            discharge_location: None,
        };
        let r = FhirResource::from(enc);
        let refs: Vec<_> = r.references().into_iter().map(|(p, id)| (p, id.to_string())).collect();
        assert_eq!(
            refs,
            vec![
                ("subject", "Patient/p1".to_string()),
                ("location", "Location/l1".to_string())
            ]
        );
    }
}
