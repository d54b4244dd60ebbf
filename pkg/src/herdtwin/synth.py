"""Synthetic herds with known ground truth.

Each animal-hour starts from a per-state template (minutes that sum to 60),
optionally perturbed by Gaussian noise, and is turned into whole minutes by
largest-remainder allocation.  The minutes of each state are then shuffled
within the hour.  With zero noise and integer templates, the hourly budgets
of the output reproduce the templates exactly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import (
    HOURS_PER_DAY,
    N_STATES,
    POSITIVE_CONTROL,
    STATES,
    Breed,
    CohortKey,
    CombinedTreatment,
    Procedure,
    Relief,
    Sex,
    StateLabel,
    parse_treatment,
    to_minute,
)
from .errors import InvalidSpec
from .fit import REFERENCE_REST_CURVE, CurveFamily, evaluate
from .ingest import CANONICAL_COLUMNS, AnimalRecords, RawDataset

MINUTES_PER_HOUR = 60
_HOURS = np.arange(HOURS_PER_DAY, dtype=np.float64)


def _bump(center: float, width: float) -> np.ndarray:
    """Circular Gaussian bump over the 24 clock hours."""
    d = (_HOURS - center + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (d / width) ** 2)


# Relative shares of the non-resting minutes; each curve is positive at
# every hour so every state keeps a little time.
_SHARE_WEIGHTS = {
    StateLabel.Rumination: 3.0 + 4.0 * _bump(1.0, 3.0) + 2.0 * _bump(14.0, 2.0),
    StateLabel.HighActivity: 0.3 + 1.0 * _bump(7.0, 1.5) + 1.0 * _bump(17.0, 1.5),
    StateLabel.MediumActivity: 1.0 + 1.5 * _bump(8.0, 2.0) + 1.5 * _bump(16.0, 2.0),
    StateLabel.Panting: 0.1 + 2.5 * _bump(13.0, 2.5),
    StateLabel.Grazing: 0.5 + 3.0 * _bump(7.5, 1.5) + 3.0 * _bump(17.0, 1.5),
    StateLabel.Walking: 0.8 + 1.5 * _bump(9.0, 2.0) + 1.5 * _bump(16.0, 2.0),
    StateLabel.Eating: 0.2 + 4.0 * _bump(10.0, 2.0) + 2.0 * _bump(14.5, 1.5),
}


def reference_rest_template() -> np.ndarray:
    """The eight-term reference rest curve at each clock hour, clamped to [0, 60]."""
    raw = evaluate(CurveFamily("gaussian", 8), _HOURS, REFERENCE_REST_CURVE)
    return np.clip(raw, 0.0, float(MINUTES_PER_HOUR))


def complete_partition(fixed: Mapping[StateLabel, np.ndarray]) -> dict[StateLabel, np.ndarray]:
    """Fill the states missing from ``fixed`` so every hour sums to 60.

    The free minutes are shared among the missing states in proportion to
    fixed daily weight curves.  Resting, when missing, gets no share and is
    set to zero.
    """
    fixed = {StateLabel.parse(k) if isinstance(k, str) else k: np.asarray(v, float) for k, v in fixed.items()}
    for s, v in fixed.items():
        if v.shape != (HOURS_PER_DAY,) or np.any(~np.isfinite(v)) or np.any(v < 0):
            raise InvalidSpec(f"template for {s.name} must be 24 nonnegative numbers")
    used = sum(fixed.values(), np.zeros(HOURS_PER_DAY))
    free = MINUTES_PER_HOUR - used
    if np.any(free < -1e-9):
        raise InvalidSpec("templates exceed 60 minutes in some hour")
    free = np.maximum(free, 0.0)
    missing = [s for s in STATES if s not in fixed and s in _SHARE_WEIGHTS]
    out = dict(fixed)
    if StateLabel.Resting not in out:
        out[StateLabel.Resting] = np.zeros(HOURS_PER_DAY)
    if missing:
        weights = np.array([_SHARE_WEIGHTS[s] for s in missing])
        shares = weights / weights.sum(axis=0)
        for s, share in zip(missing, shares):
            out[s] = free * share
    elif np.any(np.abs(free) > 1e-9):
        raise InvalidSpec("a full set of templates must sum to 60 minutes in every hour")
    return {s: out[s] for s in STATES}


def paperlike_profile(state: StateLabel) -> np.ndarray:
    """24-value template for ``state`` in the reference (positive-control) herd.

    Resting follows the clamped reference rest curve; the other states split
    the remaining minutes through fixed daily weight curves (panting and
    eating concentrated in daylight hours).
    """
    return paperlike_templates()[StateLabel.parse(state) if isinstance(state, str) else state].copy()


def paperlike_templates() -> dict[StateLabel, np.ndarray]:
    return complete_partition({StateLabel.Resting: reference_rest_template()})


# Daily-total offsets (minutes per day) by pain relief; negative values are
# deficits relative to the positive control.  Minutes removed from a state
# move to resting so each hour still sums to 60.
DEFAULT_RELIEF_EFFECTS = {
    Relief.NegativeControl: {StateLabel.Walking: -40.0, StateLabel.Eating: -45.0, StateLabel.Panting: 4.0},
    Relief.Meloxicam: {StateLabel.Walking: -30.0, StateLabel.Eating: -32.0, StateLabel.Panting: 12.0},
    Relief.TopicalAnaesthetic: {StateLabel.Walking: -20.0, StateLabel.Eating: -22.0, StateLabel.Panting: 8.0},
    Relief.TopicalPlusMeloxicam: {StateLabel.Walking: -8.0, StateLabel.Eating: -10.0, StateLabel.Panting: 12.0},
    Relief.PositiveControl: {},
}
PROCEDURE_SEVERITY = {
    Procedure.Castrating: 0.75,
    Procedure.Dehorning: 1.0,
    Procedure.DehorningAndCastrating: 1.25,
    Procedure.None_: 0.0,
}


def default_effects(treatment: CombinedTreatment) -> dict[StateLabel, float]:
    k = PROCEDURE_SEVERITY[treatment.procedure]
    return {s: k * v for s, v in DEFAULT_RELIEF_EFFECTS[treatment.relief].items()}


def apply_effects(templates: Mapping[StateLabel, np.ndarray], effects: Mapping[StateLabel, float]):
    """Shift each state's daily total by its offset, following the state's own shape."""
    out = {s: np.array(v, dtype=float) for s, v in templates.items()}
    for s, offset in effects.items():
        if s is StateLabel.Resting or offset == 0:
            continue
        base = out[s]
        shape = base / base.sum() if base.sum() > 0 else np.full(HOURS_PER_DAY, 1.0 / HOURS_PER_DAY)
        delta = np.maximum(offset * shape, -base)
        delta = np.minimum(delta, out[StateLabel.Resting])
        out[s] = base + delta
        out[StateLabel.Resting] = out[StateLabel.Resting] - delta
    return out


# ---------------------------------------------------------------- spec

@dataclass(frozen=True)
class RosterEntry:
    breed: Breed
    sex: Sex
    treatment: CombinedTreatment
    count: int

    @property
    def key(self) -> CohortKey:
        return CohortKey(self.breed, self.sex, self.treatment)


# Animal counts per (treatment, breed, sex) as listed for the monitored herd.
_ROSTER_TABLE = {
    "C,M": (0, 1, 0, 1, 0, 1, 0, 0, 0, 1),
    "C,N": (0, 1, 0, 1, 0, 0, 0, 0, 0, 1),
    "C,T": (0, 1, 0, 3, 0, 2, 0, 0, 0, 6),
    "C,T+M": (0, 1, 0, 1, 0, 0, 0, 0, 0, 1),
    "D,M": (0, 0, 70, 0, 1, 0, 2, 2, 13, 0),
    "D,N": (0, 0, 39, 0, 1, 0, 2, 2, 9, 0),
    "D,T": (0, 0, 101, 3, 3, 0, 4, 7, 20, 1),
    "D,T+M": (0, 0, 66, 2, 4, 0, 3, 0, 12, 0),
    "D+C,M": (0, 0, 0, 50, 0, 2, 0, 0, 0, 10),
    "D+C,N": (0, 0, 0, 30, 0, 2, 0, 0, 0, 7),
    "D+C,T": (0, 1, 0, 81, 0, 3, 0, 0, 0, 22),
    "D+C,T+M": (0, 0, 0, 50, 0, 1, 0, 0, 0, 13),
    "P": (13, 14, 14, 5, 10, 0, 3, 1, 38, 0),
}
_ROSTER_COLUMNS = [(b, s) for b in Breed for s in Sex]


def herd_roster() -> list[RosterEntry]:
    """The full monitored-herd roster (759 animals), in cohort-key order."""
    entries = []
    for code, counts in _ROSTER_TABLE.items():
        t = parse_treatment(code)
        for (breed, sex), n in zip(_ROSTER_COLUMNS, counts):
            if n:
                entries.append(RosterEntry(breed, sex, t, n))
    return sorted(entries, key=lambda e: e.key)


def desk_roster(treated_per_group: int = 2) -> list[RosterEntry]:
    """Brahman females: 14 positive controls plus a few of each dehorning treatment."""
    entries = [RosterEntry(Breed.Brahman, Sex.Female, POSITIVE_CONTROL, 14)]
    if treated_per_group:
        for code in ("D,T", "D,M", "D,T+M", "D,N"):
            entries.append(RosterEntry(Breed.Brahman, Sex.Female, parse_treatment(code), treated_per_group))
    return sorted(entries, key=lambda e: e.key)


@dataclass
class HerdSpec:
    roster: list[RosterEntry]
    days: int = 52
    seed: int = 0
    noise_sigma: float = 0.0
    corruption_rate: float = 0.0
    start: datetime = datetime(2019, 8, 10)
    templates: dict[StateLabel, np.ndarray] = field(default_factory=dict)
    cohort_templates: dict[CohortKey, dict[StateLabel, np.ndarray]] = field(default_factory=dict)
    effects: Optional[dict[CombinedTreatment, dict[StateLabel, float]]] = None

    def __post_init__(self):
        if not self.roster:
            raise InvalidSpec("roster is empty")
        keys = [e.key for e in self.roster]
        if len(set(keys)) != len(keys):
            raise InvalidSpec("roster lists a cohort twice")
        if any(e.count < 1 for e in self.roster):
            raise InvalidSpec("roster counts must be positive")
        if not isinstance(self.days, int) or self.days < 1:
            raise InvalidSpec(f"days must be a positive integer, got {self.days!r}")
        if not (0.0 <= self.corruption_rate < 1.0):
            raise InvalidSpec(f"corruption rate must lie in [0, 1), got {self.corruption_rate!r}")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise InvalidSpec(f"noise sigma must be nonnegative, got {self.noise_sigma!r}")
        # validates the partition early
        for key in keys:
            self.cohort_template(key)

    @property
    def n_animals(self) -> int:
        return sum(e.count for e in self.roster)

    def effects_for(self, treatment: CombinedTreatment) -> dict[StateLabel, float]:
        if self.effects is None:
            return default_effects(treatment)
        return dict(self.effects.get(treatment, {}))

    def cohort_template(self, key: CohortKey) -> np.ndarray:
        """(24, 8) minutes per hour and state for one cohort, after treatment effects."""
        fixed = dict(self.templates) if self.templates else {StateLabel.Resting: reference_rest_template()}
        fixed.update(self.cohort_templates.get(key, {}))
        full = complete_partition(fixed)
        full = apply_effects(full, self.effects_for(key.treatment))
        table = np.column_stack([full[s] for s in STATES])
        if np.any(table < -1e-9) or np.any(np.abs(table.sum(axis=1) - MINUTES_PER_HOUR) > 1e-6):
            raise InvalidSpec(f"{key}: templates do not partition each hour")
        return np.maximum(table, 0.0)

    # JSON -------------------------------------------------------------
    def to_json(self) -> dict:
        doc = {
            "roster": [{"breed": e.breed.value, "sex": e.sex.value, "treatment": e.treatment.code,
                        "count": e.count} for e in self.roster],
            "days": self.days,
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "corruption_rate": self.corruption_rate,
            "start": self.start.isoformat(),
        }
        if self.templates:
            doc["templates"] = {s.value: list(map(float, v)) for s, v in self.templates.items()}
        if self.cohort_templates:
            doc["cohort_templates"] = {
                str(k): {s.value: list(map(float, v)) for s, v in t.items()}
                for k, t in self.cohort_templates.items()
            }
        if self.effects is not None:
            doc["effects"] = {t.code: {s.value: float(v) for s, v in e.items()} for t, e in self.effects.items()}
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "HerdSpec":
        try:
            roster_doc = doc.get("roster", "desk")
            if roster_doc == "herd":
                roster = herd_roster()
            elif roster_doc == "desk":
                roster = desk_roster()
            else:
                roster = [RosterEntry(Breed.parse(r["breed"]), Sex.parse(r["sex"]),
                                      parse_treatment(r["treatment"]), int(r["count"])) for r in roster_doc]
            templates = {StateLabel.parse(k): np.asarray(v, float) for k, v in doc.get("templates", {}).items()}
            cohort_templates = {}
            for k, t in doc.get("cohort_templates", {}).items():
                breed, sex, code = k.split("/")
                key = CohortKey(Breed.parse(breed), Sex.parse(sex), parse_treatment(code))
                cohort_templates[key] = {StateLabel.parse(s): np.asarray(v, float) for s, v in t.items()}
            effects = None
            if "effects" in doc:
                effects = {parse_treatment(code): {StateLabel.parse(s): float(v) for s, v in e.items()}
                           for code, e in doc["effects"].items()}
            return cls(
                roster=roster,
                days=int(doc.get("days", 52)),
                seed=int(doc.get("seed", 0)),
                noise_sigma=float(doc.get("noise_sigma", 0.0)),
                corruption_rate=float(doc.get("corruption_rate", 0.0)),
                start=datetime.fromisoformat(doc["start"]) if "start" in doc else datetime(2019, 8, 10),
                templates=templates,
                cohort_templates=cohort_templates,
                effects=effects,
            )
        except InvalidSpec:
            raise
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise InvalidSpec(f"malformed herd spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> "HerdSpec":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidSpec(f"cannot read herd spec {path}: {exc}") from exc
        return cls.from_json(doc)


# ---------------------------------------------------------------- generation

def largest_remainder(values: np.ndarray, total: int = MINUTES_PER_HOUR) -> np.ndarray:
    """Integer rows summing to ``total``; leftovers go to the largest fractions, ties to lower index."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    base = np.floor(values + 1e-9)
    frac = values - base
    short = total - base.sum(axis=1)
    # stable sort on -frac keeps lower state indices first among equal fractions
    order = np.argsort(-frac, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(values.shape[1])[None, :].repeat(values.shape[0], 0), axis=1)
    base += rank < short[:, None]
    return base.astype(np.int64)


def hourly_allocation(template: np.ndarray, hours: int, sigma: float, rng: np.random.Generator,
                      start_hour: int = 0) -> np.ndarray:
    """Integer minutes per (hour, state) for ``hours`` consecutive hours from clock hour ``start_hour``."""
    tiled = template[(start_hour + np.arange(hours)) % HOURS_PER_DAY]
    noise = rng.standard_normal(tiled.shape)
    if sigma > 0:
        perturbed = np.maximum(tiled + sigma * noise, 0.0)
        sums = perturbed.sum(axis=1, keepdims=True)
        perturbed = np.where(sums > 0, perturbed * (MINUTES_PER_HOUR / np.where(sums > 0, sums, 1.0)), tiled)
    else:
        perturbed = tiled
    return largest_remainder(perturbed)


@dataclass
class SyntheticAnimal:
    animal_id: str
    key: CohortKey
    counts: np.ndarray  # (hours, 8) true minutes per state
    states: np.ndarray  # per-minute state index
    corrupted: np.ndarray


def _animal_ids(spec: HerdSpec):
    k = 0
    for entry in spec.roster:
        for _ in range(entry.count):
            k += 1
            yield k, f"A{k:04d}", entry


def simulate_animal(spec: HerdSpec, index: int, animal_id: str, key: CohortKey) -> SyntheticAnimal:
    rng = np.random.default_rng([spec.seed, index])
    hours = spec.days * HOURS_PER_DAY
    counts = hourly_allocation(spec.cohort_template(key), hours, spec.noise_sigma, rng, spec.start.hour)
    per_hour = np.repeat(np.tile(np.arange(N_STATES), (hours, 1)).ravel(), counts.ravel()).reshape(hours, 60)
    order = np.argsort(rng.random((hours, 60)), axis=1)
    states = np.take_along_axis(per_hour, order, axis=1).ravel().astype(np.int8)
    corrupted = (rng.random(states.size) < spec.corruption_rate).astype(np.uint8)
    return SyntheticAnimal(animal_id, key, counts, states, corrupted)


def simulate(spec: HerdSpec) -> list[SyntheticAnimal]:
    return [simulate_animal(spec, k, aid, entry.key) for k, aid, entry in _animal_ids(spec)]


def generate(spec: HerdSpec, out_dir=None, *, csv_name: str = "herd.csv",
             truth_name: str = "ground_truth.csv") -> RawDataset:
    """Simulate the herd; when ``out_dir`` is given also write the sensor and truth CSVs."""
    animals = simulate(spec)
    start_minute = to_minute(spec.start.replace(second=0, microsecond=0))
    minutes = start_minute + np.arange(spec.days * HOURS_PER_DAY * 60, dtype=np.int64)
    data = {a.animal_id: AnimalRecords(a.animal_id, minutes, a.states, a.corrupted) for a in animals}
    registry = {a.animal_id: (a.key.breed, a.key.sex, a.key.treatment) for a in animals}
    source = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        source = write_sensor_csv(spec, animals, out / csv_name)
        write_truth_csv(spec, animals, out / truth_name)
    return RawDataset(source, data, registry, row_count=int(minutes.size) * len(animals))


def write_sensor_csv(spec: HerdSpec, animals: list[SyntheticAnimal], path) -> Path:
    path = Path(path)
    n_minutes = spec.days * HOURS_PER_DAY * 60
    start = spec.start.replace(second=0, microsecond=0)
    stamps = [start + timedelta(minutes=m) for m in range(n_minutes)]
    dates = [t.strftime("%Y-%m-%d") for t in stamps]
    times = [t.strftime("%H:%M") for t in stamps]
    codes = [s.value for s in STATES]
    flags = ("OK", "BAD")
    rid = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CANONICAL_COLUMNS) + "\n")
        for a in animals:
            prefix = f"{a.animal_id},{a.key.breed.value},{a.key.sex.value},{a.key.treatment.procedure.value}," \
                     f"{a.key.treatment.relief.value},"
            device = f"DEV-{a.animal_id}"
            lines = []
            for m, (s, c) in enumerate(zip(a.states.tolist(), a.corrupted.tolist())):
                rid += 1
                lines.append(f"{rid},{prefix}{dates[m]},{times[m]},{codes[s]},{flags[c]},{device}\n")
            fh.writelines(lines)
    return path


def write_truth_csv(spec: HerdSpec, animals: list[SyntheticAnimal], path) -> Path:
    """Per animal, hour serial and state: the allocated minutes before corruption."""
    path = Path(path)
    start_hour = spec.start.hour
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["animal_id", "hour_serial", "state", "true_minutes"])
        for a in animals:
            for h in range(a.counts.shape[0]):
                serial = h + 1 + start_hour  # epoch is midnight of the first day
                for s, n in zip(STATES, a.counts[h].tolist()):
                    w.writerow([a.animal_id, serial, s.value, n])
    return path


def read_truth_csv(path) -> dict[tuple[str, int, StateLabel], int]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[(row["animal_id"], int(row["hour_serial"]), StateLabel.from_code(row["state"]))] = int(row["true_minutes"])
    return out


def template_table(spec: HerdSpec, key: CohortKey) -> dict[StateLabel, np.ndarray]:
    table = spec.cohort_template(key)
    return {s: table[:, s.index].copy() for s in STATES}
