"""Sensor CSV ingestion and cohort segmentation.

Parsing is a single streaming pass.  Accepted rows are buffered per animal as
compact integer columns; once the buffered total exceeds ``row_budget`` every
buffer is sorted and spilled to a temporary ``.npy`` segment.  Segments are
merged per animal at the end, duplicates (same animal, same minute) are
dropped keeping the first occurrence, and a short second pass copies those
duplicate lines into the quarantine sidecar.
"""
from __future__ import annotations

import csv
import logging
import os
import tempfile
from array import array
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

from .core import (
    STATES,
    Breed,
    CohortKey,
    CombinedTreatment,
    Procedure,
    Quality,
    Relief,
    SensorRecord,
    Sex,
    StateLabel,
    from_minute,
    to_minute,
)
from .errors import EmptyDataset, IllegalTreatment, MissingFile, SchemaMismatch

log = logging.getLogger(__name__)

CANONICAL_COLUMNS = (
    "record_id",
    "animal_id",
    "breed",
    "sex",
    "procedure",
    "pain_relief",
    "date",
    "time",
    "state",
    "quality_flag",
    "device_id",
)

_STATE_CODES = {s.value: i for i, s in enumerate(STATES)}
_QUALITY = {"OK": 0, "BAD": 1}


@dataclass(frozen=True, eq=False)
class AnimalRecords:
    """One animal's minute records as sorted parallel columns.

    ``minutes`` counts whole minutes since 1970-01-01 (naive local time),
    ``states`` holds state indices with -1 for an unreadable cell and
    ``corrupted`` marks records whose quality is Corrupted.
    """

    animal_id: str
    minutes: np.ndarray
    states: np.ndarray
    corrupted: np.ndarray

    def __post_init__(self):
        for name, dtype in (("minutes", np.int64), ("states", np.int8), ("corrupted", np.uint8)):
            arr = np.array(getattr(self, name), dtype=dtype, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return int(self.minutes.size)

    def __iter__(self) -> Iterator[SensorRecord]:
        for m, s, c in zip(self.minutes.tolist(), self.states.tolist(), self.corrupted.tolist()):
            yield SensorRecord(
                self.animal_id,
                from_minute(m),
                STATES[s] if s >= 0 else None,
                Quality.Corrupted if c else Quality.Valid,
            )

    @classmethod
    def from_records(cls, animal_id: str, records: Iterable[SensorRecord]) -> "AnimalRecords":
        recs = sorted(records, key=lambda r: r.timestamp)
        return cls(
            animal_id,
            [to_minute(r.timestamp) for r in recs],
            [r.state.index if r.state is not None else -1 for r in recs],
            [1 if (r.quality is Quality.Corrupted or r.state is None) else 0 for r in recs],
        )


@dataclass
class RawDataset:
    source_path: Optional[Path]
    animals: dict[str, AnimalRecords]
    animal_registry: dict[str, tuple[Breed, Sex, CombinedTreatment]]
    row_count: int
    rejected_count: int = 0
    rejects_path: Optional[Path] = None
    physical_lines: int = 0

    @property
    def epoch(self) -> datetime:
        """Midnight of the first recorded day; hour serial 1 starts here."""
        first = min(int(a.minutes[0]) for a in self.animals.values() if len(a))
        ts = from_minute(first)
        return datetime(ts.year, ts.month, ts.day)

    @property
    def records(self) -> Iterator[SensorRecord]:
        for animal in self.animals.values():
            yield from animal


@dataclass
class Cohort:
    key: CohortKey
    animals: dict[str, AnimalRecords] = field(default_factory=dict)

    @property
    def record_count(self) -> int:
        return sum(len(a) for a in self.animals.values())


class _Buffers:
    """Per-animal append buffers with spill-to-disk."""

    def __init__(self, row_budget: int, tmpdir: Optional[str]):
        self.row_budget = max(1, int(row_budget))
        self.tmpdir = tmpdir
        self._tmp: Optional[tempfile.TemporaryDirectory] = None
        self.cols: dict[str, tuple[array, array, array, array]] = {}
        self.segments: dict[str, list[str]] = {}
        self.buffered = 0
        self.n_spills = 0

    def append(self, animal: str, minute: int, state: int, bad: int, line: int):
        cols = self.cols.get(animal)
        if cols is None:
            cols = self.cols[animal] = (array("q"), array("b"), array("B"), array("q"))
        cols[0].append(minute)
        cols[1].append(state)
        cols[2].append(bad)
        cols[3].append(line)
        self.buffered += 1
        if self.buffered > self.row_budget:
            self.spill()

    def spill(self):
        if self._tmp is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="herdtwin-ingest-", dir=self.tmpdir)
        for j, (animal, cols) in enumerate(self.cols.items()):
            seg = _sorted_segment(cols)
            path = os.path.join(self._tmp.name, f"{self.n_spills:06d}-{j:06d}.npy")
            np.save(path, seg)
            self.segments.setdefault(animal, []).append(path)
        self.n_spills += 1
        self.cols = {}
        self.buffered = 0

    def animal_ids(self) -> list[str]:
        return sorted(set(self.cols) | set(self.segments))

    def merged(self, animal: str) -> np.ndarray:
        parts = [np.load(p) for p in self.segments.get(animal, [])]
        if animal in self.cols:
            parts.append(_sorted_segment(self.cols[animal]))
        seg = np.concatenate(parts) if len(parts) > 1 else parts[0]
        order = np.lexsort((seg["line"], seg["minute"]))
        return seg[order]

    def close(self):
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None


_SEG_DTYPE = np.dtype([("minute", np.int64), ("state", np.int8), ("bad", np.uint8), ("line", np.int64)])


def _sorted_segment(cols) -> np.ndarray:
    seg = np.empty(len(cols[0]), dtype=_SEG_DTYPE)
    seg["minute"] = np.frombuffer(cols[0], dtype=np.int64)
    seg["state"] = np.frombuffer(cols[1], dtype=np.int8)
    seg["bad"] = np.frombuffer(cols[2], dtype=np.uint8)
    seg["line"] = np.frombuffer(cols[3], dtype=np.int64)
    return seg[np.lexsort((seg["line"], seg["minute"]))]


def _fit_width(row: list, width: int) -> list:
    """Pad a short row, or fold a long row's surplus into its last cell, so the reason column lines up."""
    if len(row) < width:
        return list(row) + [""] * (width - len(row))
    if len(row) > width:
        return list(row[:width - 1]) + [",".join(row[width - 1:])]
    return list(row)


def _parse_treatment_cells(procedure: str, relief: str) -> CombinedTreatment:
    return CombinedTreatment(Procedure(procedure.strip().upper()), Relief(relief.strip().upper()))


def load_csv(
    path,
    schema: Optional[Iterable[str]] = None,
    *,
    row_budget: int = 2_000_000,
    rejects_path=None,
    tmpdir: Optional[str] = None,
) -> RawDataset:
    """Parse a canonical sensor CSV into a :class:`RawDataset`.

    Malformed rows and duplicate (animal, minute) rows go to
    ``<input>.rejects.csv`` with a ``reject_reason`` column.  A row whose
    state cell cannot be read is kept but marked Corrupted.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    schema = tuple(schema) if schema is not None else CANONICAL_COLUMNS
    rejects_path = Path(rejects_path) if rejects_path else path.with_name(path.name + ".rejects.csv")

    registry: dict[str, tuple[Breed, Sex, CombinedTreatment]] = {}
    date_cache: dict[str, int] = {}
    bufs = _Buffers(row_budget, tmpdir)
    n_rejected = 0
    physical = 0

    with open(path, newline="", encoding="utf-8") as fh, open(rejects_path, "w", newline="", encoding="utf-8") as rej_fh:
        reader = csv.reader(fh)
        rej = csv.writer(rej_fh, lineterminator="\n")
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file, expected header {list(schema)}") from None
        physical = 1
        if tuple(h.strip() for h in header) != schema:
            raise SchemaMismatch(f"{path}: header {header} != {list(schema)}")
        rej.writerow(list(schema) + ["reject_reason"])

        width = len(schema)
        for row in reader:
            physical += 1
            line = physical
            reason = None
            if not row:
                reason = "empty_row"
            elif len(row) != width:
                reason = "column_count"
            else:
                (_rid, animal, breed_s, sex_s, proc_s, relief_s, date_s, time_s,
                 state_s, qual_s, _dev) = row
                animal = animal.strip()
                try:
                    if not animal:
                        raise ValueError("animal_id")
                    ident = (Breed.parse(breed_s), Sex.parse(sex_s), _parse_treatment_cells(proc_s, relief_s))
                except (ValueError, IllegalTreatment):
                    reason = "bad_identity"
                else:
                    known = registry.get(animal)
                    if known is not None and known != ident:
                        reason = "registry_conflict"
                if reason is None:
                    try:
                        day = date_cache.get(date_s)
                        if day is None:
                            d = date.fromisoformat(date_s.strip())
                            day = date_cache[date_s] = to_minute(datetime(d.year, d.month, d.day))
                        t = time_s.strip()
                        hh, mm = t.split(":")[:2]
                        hh, mm = int(hh), int(mm)
                        if not (0 <= hh < 24 and 0 <= mm < 60):
                            raise ValueError(t)
                        minute = day + hh * 60 + mm
                    except ValueError:
                        reason = "bad_timestamp"
                if reason is None:
                    bad = _QUALITY.get(qual_s.strip().upper())
                    if bad is None:
                        reason = "bad_quality_flag"
                if reason is None:
                    state = _STATE_CODES.get(state_s.strip().upper(), -1)
                    if state < 0:
                        bad = 1
                    registry.setdefault(animal, ident)
                    bufs.append(animal, minute, state, bad, line)
                    continue
            n_rejected += 1
            rej.writerow(_fit_width(row, width) + [reason])

        animals: dict[str, AnimalRecords] = {}
        dup_lines: list[int] = []
        try:
            for animal in bufs.animal_ids():
                seg = bufs.merged(animal)
                keep = np.ones(seg.size, dtype=bool)
                if seg.size > 1:
                    keep[1:] = seg["minute"][1:] != seg["minute"][:-1]
                if not keep.all():
                    dup_lines.extend(seg["line"][~keep].tolist())
                    seg = seg[keep]
                animals[animal] = AnimalRecords(animal, seg["minute"], seg["state"], seg["bad"])
        finally:
            bufs.close()

        if dup_lines:
            wanted = set(dup_lines)
            with open(path, newline="", encoding="utf-8") as fh2:
                for lineno, row in enumerate(csv.reader(fh2), start=1):
                    if lineno in wanted:
                        rej.writerow(list(row) + ["duplicate"])
            n_rejected += len(dup_lines)

    row_count = sum(len(a) for a in animals.values())
    if row_count == 0:
        raise EmptyDataset(f"{path}: no accepted rows")
    registry = {a: registry[a] for a in animals}
    log.info("loaded %s: %d rows accepted, %d rejected", path, row_count, n_rejected)
    return RawDataset(
        source_path=path,
        animals=animals,
        animal_registry=registry,
        row_count=row_count,
        rejected_count=n_rejected,
        rejects_path=rejects_path,
        physical_lines=physical,
    )


def dataset_from_records(
    records: Iterable[SensorRecord],
    registry: Mapping[str, tuple[Breed, Sex, CombinedTreatment]],
) -> RawDataset:
    """Build an in-memory dataset, keeping the first record per (animal, minute)."""
    per_animal: dict[str, dict[datetime, SensorRecord]] = {}
    for r in records:
        if r.animal_id not in registry:
            raise KeyError(f"animal {r.animal_id!r} missing from registry")
        per_animal.setdefault(r.animal_id, {}).setdefault(r.timestamp, r)
    animals = {
        a: AnimalRecords.from_records(a, per_animal[a].values()) for a in sorted(per_animal)
    }
    row_count = sum(len(a) for a in animals.values())
    if row_count == 0:
        raise EmptyDataset("no records")
    return RawDataset(None, animals, {a: registry[a] for a in animals}, row_count)


def segment(dataset: RawDataset) -> dict[CohortKey, Cohort]:
    """Group animals by (breed, sex, treatment); ordered by cohort key."""
    cohorts: dict[CohortKey, Cohort] = {}
    for animal_id in sorted(dataset.animals):
        recs = dataset.animals[animal_id]
        if len(recs) == 0:
            continue
        key = CohortKey(*dataset.animal_registry[animal_id])
        cohorts.setdefault(key, Cohort(key)).animals[animal_id] = recs
    return {k: cohorts[k] for k in sorted(cohorts)}


def cohort_census(cohorts: Mapping[CohortKey, Cohort]) -> list[tuple[CohortKey, int]]:
    return [(k, len(c.animals)) for k, c in sorted(cohorts.items()) if c.animals]


def write_census_csv(census: list[tuple[CohortKey, int]], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["breed", "sex", "treatment", "animals"])
        for key, n in census:
            w.writerow([key.breed.value, key.sex.value, key.treatment.code, n])
    return path
