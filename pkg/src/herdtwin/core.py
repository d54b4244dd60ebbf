"""Domain vocabulary: animals, states, treatments, records and hourly series."""
from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional

import numpy as np

from .errors import IllegalTreatment, TimestampBeforeEpoch, UnknownTreatmentCode

MINUTES_PER_HOUR = 60
HOURS_PER_DAY = 24


class StateLabel(enum.Enum):
    """Behavioral state of one animal during one minute.

    The enum value is the CSV code; ``index`` is the column used by the
    counting kernels.
    """

    Resting = "REST"
    Rumination = "RUMINATE"
    HighActivity = "HIGH"
    MediumActivity = "MEDIUM"
    Panting = "PANT"
    Grazing = "GRAZE"
    Walking = "WALK"
    Eating = "EAT"

    @property
    def index(self) -> int:
        return _STATE_INDEX[self]

    @classmethod
    def from_code(cls, code: str) -> "StateLabel":
        return cls(code.strip().upper())

    @classmethod
    def parse(cls, text: str) -> "StateLabel":
        """Accept either the CSV code or the member name (case-insensitive)."""
        t = text.strip()
        try:
            return cls(t.upper())
        except ValueError:
            pass
        for member in cls:
            if member.name.lower() == t.lower():
                return member
        raise ValueError(f"unknown state {text!r}")


STATES = tuple(StateLabel)
N_STATES = len(STATES)
_STATE_INDEX = {s: i for i, s in enumerate(STATES)}


class Breed(enum.Enum):
    Angus = "Angus"
    Brahman = "Brahman"
    Brangus = "Brangus"
    Charolais = "Charolais"
    Crossbred = "Crossbred"

    @classmethod
    def parse(cls, text: str) -> "Breed":
        t = text.strip().lower()
        for member in cls:
            if member.value.lower() == t:
                return member
        raise ValueError(f"unknown breed {text!r}")


class Sex(enum.Enum):
    Female = "F"
    Male = "M"

    @classmethod
    def parse(cls, text: str) -> "Sex":
        t = text.strip().upper()
        for member in cls:
            if t in (member.value, member.name.upper()):
                return member
        raise ValueError(f"unknown sex {text!r}")


class Procedure(enum.Enum):
    Castrating = "C"
    Dehorning = "D"
    DehorningAndCastrating = "D+C"
    None_ = "NONE"


class Relief(enum.Enum):
    NegativeControl = "N"
    TopicalAnaesthetic = "T"
    Meloxicam = "M"
    TopicalPlusMeloxicam = "T+M"
    PositiveControl = "P"


class Quality(enum.Enum):
    Valid = "OK"
    Corrupted = "BAD"


@functools.total_ordering
@dataclass(frozen=True)
class CombinedTreatment:
    procedure: Procedure
    relief: Relief

    def __post_init__(self):
        if (self.procedure, self.relief) not in _TREATMENT_ORDER:
            raise IllegalTreatment(
                f"illegal combination ({self.procedure.name}, {self.relief.name})"
            )

    @property
    def code(self) -> str:
        return format_treatment(self)

    @property
    def order(self) -> int:
        """Row position in the canonical treatment table."""
        return _TREATMENT_ORDER[(self.procedure, self.relief)]

    @property
    def is_positive_control(self) -> bool:
        return self.relief is Relief.PositiveControl

    def __lt__(self, other):
        if not isinstance(other, CombinedTreatment):
            return NotImplemented
        return self.order < other.order

    def __str__(self):
        return self.code


_P, _R = Procedure, Relief
_TREATMENT_ROWS = (
    (_P.Castrating, _R.NegativeControl),
    (_P.Castrating, _R.TopicalAnaesthetic),
    (_P.Castrating, _R.Meloxicam),
    (_P.Castrating, _R.TopicalPlusMeloxicam),
    (_P.Dehorning, _R.TopicalAnaesthetic),
    (_P.Dehorning, _R.Meloxicam),
    (_P.Dehorning, _R.TopicalPlusMeloxicam),
    (_P.Dehorning, _R.NegativeControl),
    (_P.DehorningAndCastrating, _R.TopicalAnaesthetic),
    (_P.DehorningAndCastrating, _R.Meloxicam),
    (_P.DehorningAndCastrating, _R.TopicalPlusMeloxicam),
    (_P.DehorningAndCastrating, _R.NegativeControl),
    (_P.None_, _R.PositiveControl),
)
_TREATMENT_ORDER = {row: i for i, row in enumerate(_TREATMENT_ROWS)}


TREATMENTS = tuple(CombinedTreatment(p, r) for p, r in _TREATMENT_ROWS)
POSITIVE_CONTROL = TREATMENTS[-1]


def format_treatment(t: CombinedTreatment) -> str:
    if t.relief is Relief.PositiveControl:
        return "P"
    return f"{t.procedure.value},{t.relief.value}"


_CODE_TABLE = {format_treatment(t): t for t in TREATMENTS}


def parse_treatment(code: str) -> CombinedTreatment:
    """Parse an abbreviation such as ``"C,T+M"``, ``"(D+C, N)"`` or ``"p"``."""
    if not isinstance(code, str):
        raise UnknownTreatmentCode(f"not a treatment code: {code!r}")
    text = re.sub(r"\s+", "", code).upper()
    if text.startswith("(") and text.endswith(")"):
        text = text[1:-1]
    try:
        return _CODE_TABLE[text]
    except KeyError:
        raise UnknownTreatmentCode(f"unknown treatment code {code!r}") from None


@functools.total_ordering
@dataclass(frozen=True)
class CohortKey:
    breed: Breed
    sex: Sex
    treatment: CombinedTreatment

    @property
    def sort_key(self):
        return (list(Breed).index(self.breed), list(Sex).index(self.sex), self.treatment.order)

    def __lt__(self, other):
        if not isinstance(other, CohortKey):
            return NotImplemented
        return self.sort_key < other.sort_key

    @property
    def slug(self) -> str:
        code = self.treatment.code.replace(",", "_").replace("+", "p")
        return f"{self.breed.value}-{self.sex.value}-{code}"

    def __str__(self):
        return f"{self.breed.value}/{self.sex.value}/{self.treatment.code}"

    def to_json(self) -> dict:
        return {"breed": self.breed.value, "sex": self.sex.value, "treatment": self.treatment.code}

    @classmethod
    def from_json(cls, d: dict) -> "CohortKey":
        return cls(Breed.parse(d["breed"]), Sex.parse(d["sex"]), parse_treatment(d["treatment"]))


@dataclass(frozen=True)
class SensorRecord:
    animal_id: str
    timestamp: datetime
    state: Optional[StateLabel]
    quality: Quality = Quality.Valid

    def __post_init__(self):
        ts = self.timestamp
        if ts.second or ts.microsecond:
            object.__setattr__(self, "timestamp", ts.replace(second=0, microsecond=0))


def floor_hour(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def hour_serial(timestamp: datetime, epoch_start: datetime) -> int:
    """1-based index of the clock hour containing ``timestamp``."""
    start = floor_hour(epoch_start)
    if timestamp < start:
        raise TimestampBeforeEpoch(f"{timestamp} precedes epoch {start}")
    delta = floor_hour(timestamp) - start
    return 1 + int(delta // timedelta(hours=1))


_UNIX = datetime(1970, 1, 1)


def to_minute(ts: datetime) -> int:
    """Naive timestamp -> whole minutes since 1970-01-01 00:00."""
    return int((ts - _UNIX) // timedelta(minutes=1))


def from_minute(m: int) -> datetime:
    return _UNIX + timedelta(minutes=int(m))


@dataclass(frozen=True)
class Origin:
    kind: str  # "animal" | "cohort"
    animal_id: Optional[str] = None
    n_animals: Optional[int] = None

    @classmethod
    def single(cls, animal_id: str) -> "Origin":
        return cls("animal", animal_id=animal_id)

    @classmethod
    def cohort(cls, n_animals: int) -> "Origin":
        return cls("cohort", n_animals=n_animals)


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HourlySeries:
    """Minutes per hour spent in one state, indexed by hour serial.

    ``support`` counts contributing animals per point (cohort averages) and
    ``imputed`` flags points filled in by gap interpolation.
    """

    cohort: Optional[CohortKey]
    state: StateLabel
    serials: np.ndarray
    minutes: np.ndarray
    origin: Origin = field(default_factory=lambda: Origin.cohort(0))
    start_hour: int = 0
    support: Optional[np.ndarray] = None
    imputed: Optional[np.ndarray] = None

    def __post_init__(self):
        serials = _frozen(self.serials, np.int64)
        minutes = _frozen(self.minutes, np.float64)
        if serials.ndim != 1 or serials.shape != minutes.shape:
            raise ValueError("serials and minutes must be equal-length vectors")
        if serials.size:
            if serials[0] < 1:
                raise ValueError("hour serials are 1-based")
            if np.any(np.diff(serials) <= 0):
                raise ValueError("hour serials must be strictly increasing")
            if np.any(~np.isfinite(minutes)) or minutes.min() < 0 or minutes.max() > 60:
                raise ValueError("minutes must lie in [0, 60]")
        object.__setattr__(self, "serials", serials)
        object.__setattr__(self, "minutes", minutes)
        if self.support is not None:
            object.__setattr__(self, "support", _frozen(self.support, np.int64))
        if self.imputed is not None:
            object.__setattr__(self, "imputed", _frozen(self.imputed, bool))
        object.__setattr__(self, "start_hour", int(self.start_hour) % 24)

    def __len__(self):
        return int(self.serials.size)

    @property
    def hour_of_day(self) -> np.ndarray:
        return (self.serials - 1 + self.start_hour) % HOURS_PER_DAY

    @property
    def points(self) -> list[tuple[int, int, float]]:
        return list(zip(self.serials.tolist(), self.hour_of_day.tolist(), self.minutes.tolist()))

    @property
    def is_gap_free(self) -> bool:
        return self.serials.size == 0 or bool(np.all(np.diff(self.serials) == 1))

    def replace(self, **changes) -> "HourlySeries":
        kw = dict(
            cohort=self.cohort, state=self.state, serials=self.serials, minutes=self.minutes,
            origin=self.origin, start_hour=self.start_hour, support=self.support,
            imputed=self.imputed,
        )
        kw.update(changes)
        return HourlySeries(**kw)
