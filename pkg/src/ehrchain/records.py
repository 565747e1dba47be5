"""The health record and its canonical byte form."""

from __future__ import annotations

import datetime as dt
import enum
import random
from dataclasses import asdict, dataclass, fields

from .encoding import pack_strings, unpack_strings


class Gender(str, enum.Enum):
    FEMALE = "F"
    MALE = "M"
    OTHER = "O"
    UNKNOWN = "U"


@dataclass(frozen=True)
class HealthRecord:
    patient_id: str
    gender: Gender
    age: int
    disease: str
    diagnosis: str
    location: str
    medication: str
    suggestion: str
    next_review: dt.date
    notes: str
    date: dt.date
    doctor_name: str
    hospital_id: str

    def __post_init__(self):
        object.__setattr__(self, "gender", Gender(self.gender))
        if self.age < 0:
            raise ValueError("age must be non-negative")

    def to_bytes(self) -> bytes:
        values = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Gender):
                v = v.value
            elif isinstance(v, dt.date):
                v = v.isoformat()
            values.append(str(v))
        return pack_strings(values)

    @classmethod
    def from_bytes(cls, data: bytes) -> "HealthRecord":
        v = unpack_strings(data, len(fields(cls)))
        return cls(
            patient_id=v[0],
            gender=Gender(v[1]),
            age=int(v[2]),
            disease=v[3],
            diagnosis=v[4],
            location=v[5],
            medication=v[6],
            suggestion=v[7],
            next_review=dt.date.fromisoformat(v[8]),
            notes=v[9],
            date=dt.date.fromisoformat(v[10]),
            doctor_name=v[11],
            hospital_id=v[12],
        )

    @classmethod
    def from_fields(cls, **kw) -> "HealthRecord":
        """Build a record from text values, filling missing fields with blanks."""
        defaults = {
            "patient_id": "",
            "gender": "U",
            "age": "0",
            "next_review": "1970-01-01",
            "date": "1970-01-01",
        }
        values = {f.name: kw.get(f.name, defaults.get(f.name, "")) for f in fields(cls)}
        unknown = set(kw) - set(values)
        if unknown:
            raise ValueError(f"unknown record fields: {sorted(unknown)}")
        values["age"] = int(values["age"])
        for key in ("next_review", "date"):
            if isinstance(values[key], str):
                values[key] = dt.date.fromisoformat(values[key])
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)


DISEASES = (
    "influenza",
    "diabetes",
    "hypertension",
    "asthma",
    "malaria",
    "tuberculosis",
    "dengue",
    "migraine",
)
LOCATIONS = ("Allahabad", "Delhi", "Mumbai", "Chennai", "Kolkata")
_WORDS = ("rest", "fluids", "review", "follow-up", "x-ray", "blood test", "diet", "exercise")


def random_record(rng: random.Random, patient_id: str = "P1", hospital_id: str = "H1") -> HealthRecord:
    """A plausible random record; all randomness comes from ``rng``."""
    day = dt.date(2019, 1, 1) + dt.timedelta(days=rng.randrange(365))
    return HealthRecord(
        patient_id=patient_id,
        gender=rng.choice(list(Gender)),
        age=rng.randrange(0, 100),
        disease=rng.choice(DISEASES),
        diagnosis=" ".join(rng.choices(_WORDS, k=3)),
        location=rng.choice(LOCATIONS),
        medication=f"drug-{rng.randrange(1000):03d} {rng.randrange(1, 4) * 250}mg",
        suggestion=rng.choice(_WORDS),
        next_review=day + dt.timedelta(days=rng.randrange(7, 90)),
        notes="".join(rng.choices("abcdefghij klmnopqrstuvwxyzéह", k=rng.randrange(0, 80))),
        date=day,
        doctor_name=f"Dr. {rng.choice(['Rao', 'Singh', 'Iyer', 'Das', 'Khan'])}",
        hospital_id=hospital_id,
    )
