"""Hourly state budgets, cohort averaging and 24-hour profiles."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .core import (
    HOURS_PER_DAY,
    CohortKey,
    CombinedTreatment,
    HourlySeries,
    Origin,
    SensorRecord,
    StateLabel,
    to_minute,
)
from .errors import EmptyInput, EmptySeries, MixedCohort, MixedState, TimestampBeforeEpoch
from .ingest import AnimalRecords, Cohort


@dataclass(frozen=True, eq=False)
class HourTable:
    """All-state minute counts for every clock hour an animal has records in.

    ``destroyed`` hours contain at least one corrupted record; ``n_records``
    is kept as a diagnostic for partial hours at the dataset edges.
    """

    animal_id: str
    serials: np.ndarray
    counts: np.ndarray
    n_records: np.ndarray
    destroyed: np.ndarray
    start_hour: int


def _as_animal_records(records) -> AnimalRecords:
    if isinstance(records, AnimalRecords):
        return records
    records = list(records)
    animal_id = records[0].animal_id if records else ""
    return AnimalRecords.from_records(animal_id, records)


def _default_epoch(recs: AnimalRecords) -> datetime:
    from .core import from_minute

    ts = from_minute(int(recs.minutes[0]))
    return datetime(ts.year, ts.month, ts.day)


def hour_table(records: Union[AnimalRecords, Sequence[SensorRecord]], epoch: Optional[datetime] = None) -> HourTable:
    recs = _as_animal_records(records)
    if len(recs) == 0:
        empty = np.empty(0, np.int64)
        return HourTable(recs.animal_id, empty, np.zeros((0, 8), np.int32), empty, empty.astype(bool), 0)
    if epoch is None:
        epoch = _default_epoch(recs)
    epoch_hour = to_minute(epoch.replace(minute=0, second=0, microsecond=0)) // 60
    hours, counts, n_records, destroyed = kernels.hourly_counts(recs.minutes, recs.states, recs.corrupted)
    serials = hours - epoch_hour + 1
    if serials[0] < 1:
        raise TimestampBeforeEpoch(f"{recs.animal_id}: records precede epoch {epoch}")
    return HourTable(recs.animal_id, serials, counts, n_records, destroyed.astype(bool), epoch.hour)


def hourly_budget(
    records: Union[AnimalRecords, Sequence[SensorRecord]],
    state: StateLabel,
    *,
    epoch: Optional[datetime] = None,
    cohort: Optional[CohortKey] = None,
) -> HourlySeries:
    """Minutes per clock hour spent in ``state``.

    An hour holding any corrupted record is dropped entirely; surviving hours
    keep their original serial numbers.  ``epoch`` defaults to midnight of the
    first record's day and must be shared by every animal that will later be
    averaged together.
    """
    table = hour_table(records, epoch)
    keep = ~table.destroyed
    return HourlySeries(
        cohort=cohort,
        state=state,
        serials=table.serials[keep],
        minutes=table.counts[keep, state.index].astype(np.float64),
        origin=Origin.single(table.animal_id),
        start_hour=table.start_hour,
    )


def _check_uniform(series: Sequence[HourlySeries]):
    states = {s.state for s in series}
    if len(states) > 1:
        raise MixedState(f"series mix states {sorted(s.name for s in states)}")
    if len({s.cohort for s in series}) > 1:
        raise MixedCohort("series belong to different cohorts")
    if len({s.start_hour for s in series}) > 1:
        raise MixedCohort("series use different epochs")


def _series_order(s: HourlySeries):
    return (s.origin.animal_id or "", s.serials.tobytes(), s.minutes.tobytes())


def cohort_average(series: Sequence[HourlySeries]) -> HourlySeries:
    """Mean minutes per hour serial over whichever inputs have that serial."""
    if not series:
        raise EmptyInput("cohort_average needs at least one series")
    _check_uniform(series)
    ordered = sorted(series, key=_series_order)
    serials = np.unique(np.concatenate([s.serials for s in ordered]))
    total = np.zeros(serials.size)
    support = np.zeros(serials.size, np.int64)
    for s in ordered:
        idx = np.searchsorted(serials, s.serials)
        total[idx] += s.minutes
        support[idx] += 1
    first = ordered[0]
    return HourlySeries(
        cohort=first.cohort,
        state=first.state,
        serials=serials,
        minutes=total / support,
        origin=Origin.cohort(len(ordered)),
        start_hour=first.start_hour,
        support=support,
    )


def cohort_series(cohort: Cohort, state: StateLabel, epoch: datetime) -> HourlySeries:
    """Budget every animal of a cohort on a shared epoch and average them."""
    per_animal = [
        hourly_budget(recs, state, epoch=epoch, cohort=cohort.key)
        for _, recs in sorted(cohort.animals.items())
    ]
    return cohort_average(per_animal)


@dataclass(frozen=True, eq=False)
class DailyProfile:
    """Mean minutes at each hour of day; ``values[h]`` is NaN where ``support[h] == 0``."""

    cohort: Optional[CohortKey]
    state: StateLabel
    values: np.ndarray
    support: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.values[self.support > 0]))


def daily_profile(series: HourlySeries) -> DailyProfile:
    if len(series) == 0:
        raise EmptySeries("cannot profile an empty series")
    hod = series.hour_of_day
    support = np.bincount(hod, minlength=HOURS_PER_DAY).astype(np.int64)
    sums = np.zeros(HOURS_PER_DAY)
    # fixed serial order keeps the sums reproducible
    np.add.at(sums, hod, series.minutes)
    values = np.full(HOURS_PER_DAY, np.nan)
    ok = support > 0
    values[ok] = sums[ok] / support[ok]
    return DailyProfile(series.cohort, series.state, values, support)


@dataclass(frozen=True, eq=False)
class TreatmentComparison:
    state: StateLabel
    treatments: tuple[CombinedTreatment, ...]
    matrix: np.ndarray  # (24, k), columns follow ``treatments``
    totals: np.ndarray

    def rows(self):
        return list(zip(self.treatments, self.totals.tolist()))


def treatment_comparison(profiles: Sequence[DailyProfile]) -> TreatmentComparison:
    """Align profiles of one state across treatments, ranked by daily total."""
    if not profiles:
        raise EmptyInput("no profiles to compare")
    states = {p.state for p in profiles}
    if len(states) > 1:
        raise MixedState(f"profiles mix states {sorted(s.name for s in states)}")
    keys = [p.cohort for p in profiles]
    if any(k is None for k in keys) or len({(k.breed, k.sex) for k in keys}) > 1:
        raise MixedCohort("profiles must share breed and sex")
    ranked = sorted(profiles, key=lambda p: (-p.total, p.cohort.treatment.order))
    return TreatmentComparison(
        state=profiles[0].state,
        treatments=tuple(p.cohort.treatment for p in ranked),
        matrix=np.column_stack([p.values for p in ranked]),
        totals=np.array([p.total for p in ranked]),
    )


def write_series_csv(series: HourlySeries, path) -> Path:
    path = Path(path)
    support = series.support if series.support is not None else np.ones(len(series), np.int64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour_serial", "hour_of_day", "minutes", "n_animals"])
        for (serial, hod, minutes), n in zip(series.points, support.tolist()):
            w.writerow([serial, hod, repr(minutes), n])
    return path


def read_series_csv(path, state: StateLabel, cohort: Optional[CohortKey] = None) -> HourlySeries:
    serials, hods, minutes, support = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            serials.append(int(row["hour_serial"]))
            hods.append(int(row["hour_of_day"]))
            minutes.append(float(row["minutes"]))
            support.append(int(row.get("n_animals") or 1))
    if not serials:
        raise EmptySeries(f"{path}: no rows")
    start_hour = (hods[0] - (serials[0] - 1)) % HOURS_PER_DAY
    return HourlySeries(cohort, state, serials, minutes, Origin.cohort(max(support)),
                        start_hour=start_hour, support=support)


def write_profile_csv(profile: DailyProfile, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour_of_day", "minutes", "support"])
        for h in range(HOURS_PER_DAY):
            v = profile.values[h]
            w.writerow([h, "" if np.isnan(v) else repr(float(v)), int(profile.support[h])])
    return path


def read_profile_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (values, support) from a 24-row profile CSV."""
    values = np.full(HOURS_PER_DAY, np.nan)
    support = np.zeros(HOURS_PER_DAY, np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            h = int(row["hour_of_day"])
            if row["minutes"]:
                values[h] = float(row["minutes"])
            support[h] = int(row.get("support") or 1)
    return values, support
