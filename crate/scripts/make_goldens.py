#!/usr/bin/env python3
"""Writes the golden corpus under testdata/golden/.

For each of the eight kinds:
  <Kind>.input.json   a hand-written document with keys shuffled and loose
                      whitespace, as a foreign server might send it
  <Kind>.json         its canonical form
  <Kind>.flat.json    its flat record as an ordered list of [key, value]

The field order below is typed from docs/wire-format.md, not read from the
Rust sources, so the Rust serializer is checked against a separate reading
of the format. Run from the repository root; the output is deterministic.
"""

import json
import random
from pathlib import Path

# (path, type) in canonical order after resourceType and id.
# Types: str, int, date, gender, ref:<Kind>.
SCHEMA = {
    "Practitioner": [
        ("identifier.value", "str"),
        ("identifier.type", "str"),
        ("gender", "gender"),
        ("birthDate", "date"),
    ],
    "Patient": [
        ("identifier.value", "str"),
        ("identifier.type", "str"),
        ("gender", "gender"),
        ("birthDate", "date"),
        ("ageGroup", "str"),
        ("deceased.year", "int"),
        ("deceased.month", "int"),
        ("address.county", "str"),
        ("address.countyNumber", "str"),
    ],
    "Location": [
        ("name", "str"),
        ("address.county", "str"),
        ("address.countyNumber", "str"),
    ],
    "Medication": [
        ("identifier.value", "str"),
        ("name", "str"),
        ("code", "str"),
        ("definedDailyDosage", "str"),
    ],
    "Encounter": [
        ("identifier.value", "str"),
        ("status", "str"),
        ("subject", "ref:Patient"),
        ("participant", "ref:Practitioner"),
        ("location", "ref:Location"),
        ("period.start", "date"),
        ("period.end", "date"),
        ("hospitalization.arrivalMode", "str"),
        ("hospitalization.dischargeLocation", "str"),
    ],
    "Condition": [
        ("subject", "ref:Patient"),
        ("encounter", "ref:Encounter"),
        ("code", "str"),
    ],
    "MedicationRequest": [
        ("identifier.value", "str"),
        ("subject", "ref:Patient"),
        ("encounter", "ref:Encounter"),
        ("requester", "ref:Practitioner"),
        ("medication", "ref:Medication"),
        ("category.text", "str"),
        ("category.code", "str"),
        ("reimbursement.category", "str"),
        ("reimbursement.categoryCode", "str"),
        ("reimbursement.code", "str"),
    ],
    "MedicationDispense": [
        ("subject", "ref:Patient"),
        ("medication", "ref:Medication"),
        ("authorizingRequest", "ref:MedicationRequest"),
        ("dispenseDay", "int"),
        ("dispenseYear", "int"),
        ("packagesDispensed", "int"),
        ("dddDispensed", "str"),
    ],
}

# One example per kind. Optional fields are left out in a few places so the
# corpus covers omission too.
VALUES = {
    "Practitioner": ("prac-1", {
        "identifier.value": "9120044",
        "identifier.type": "HPR",
        "gender": "female",
        "birthDate": "1971-03-09",
    }),
    "Patient": ("pat-1", {
        "identifier.value": "P-000017",
        "identifier.type": "pseudonym",
        "gender": "male",
        "ageGroup": "75-79",
        "deceased.year": 2021,
        "deceased.month": 11,
        "address.county": "Troms og Finnmark",
        "address.countyNumber": "54",
    }),
    "Location": ("loc-1", {
        "name": "Universitetssykehuset Nord-Norge, Tromsø",
        "address.county": "Troms og Finnmark",
        "address.countyNumber": "54",
    }),
    "Medication": ("med-1", {
        "identifier.value": "421890",
        "name": "Metformin \"Sandoz\" 500 mg",
        "code": "A10BA02",
        "definedDailyDosage": "2 g",
    }),
    "Encounter": ("enc-1", {
        "identifier.value": "E-88",
        "status": "finished",
        "subject": "pat-1",
        "participant": "prac-1",
        "location": "loc-1",
        "period.start": "2019-02-27",
        "period.end": "2019-03-04",
        "hospitalization.arrivalMode": "emergency",
        "hospitalization.dischargeLocation": "home",
    }),
    "Condition": ("cond-1", {
        "subject": "pat-1",
        "encounter": "enc-1",
        "code": "E11",
    }),
    "MedicationRequest": ("mreq-1", {
        "identifier.value": "RX-5531",
        "subject": "pat-1",
        "encounter": "enc-1",
        "requester": "prac-1",
        "medication": "med-1",
        "category.text": "Blå resept",
        "category.code": "B",
        "reimbursement.code": "-72",
    }),
    "MedicationDispense": ("mdisp-1", {
        "subject": "pat-1",
        "medication": "med-1",
        "authorizingRequest": "mreq-1",
        "dispenseDay": 63,
        "dispenseYear": 2019,
        "packagesDispensed": 2,
        "dddDispensed": "50.5",
    }),
}


def leaf(ty, v):
    if ty.startswith("ref:"):
        return {"reference": f"{ty[4:]}/{v}"}
    return v


def nest(doc, path, v):
    parts = path.split(".")
    for p in parts[:-1]:
        doc = doc.setdefault(p, {})
    doc[parts[-1]] = v


def canonical(kind, rid, values):
    doc = {"resourceType": kind, "id": rid}
    for path, ty in SCHEMA[kind]:
        if path in values:
            nest(doc, path, leaf(ty, values[path]))
    return doc


def flat(kind, rid, values):
    out = [[f"{kind}.id", rid]]
    for path, ty in SCHEMA[kind]:
        if path in values:
            out.append([f"{kind}.{path}", str(values[path])])
    return out


def shuffled(v, rng):
    if not isinstance(v, dict):
        return v
    items = list(v.items())
    rng.shuffle(items)
    return {k: shuffled(x, rng) for k, x in items}


def main():
    out = Path("testdata/golden")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240611)
    for kind in SCHEMA:
        rid, values = VALUES[kind]
        doc = canonical(kind, rid, values)
        text = json.dumps(doc, separators=(",", ":"), ensure_ascii=False)
        (out / f"{kind}.json").write_text(text + "\n", encoding="utf-8")
        loose = json.dumps(shuffled(doc, rng), indent=3, ensure_ascii=False)
        (out / f"{kind}.input.json").write_text(loose + "\n", encoding="utf-8")
        rows = flat(kind, rid, values)
        (out / f"{kind}.flat.json").write_text(json.dumps(rows, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
