"""Predict-compare-update loop over per-(cohort, state) models, plus pain assessment."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .aggregate import DailyProfile
from .core import HOURS_PER_DAY, POSITIVE_CONTROL, CohortKey, CombinedTreatment, HourlySeries, StateLabel
from .errors import (
    EmptyInput,
    IncompleteDay,
    MissingPositiveControl,
    MixedCohort,
    NoPriorPrediction,
    SeriesHasGaps,
    UnknownKey,
)
from .fir import resample_gap_free
from .lstm import LstmConfig, LstmModel, all_windows, model_from_json, model_to_json, predict_cycle, train

REGISTRY_VERSION = 1
REPORT_VERSION = 1
FINE_TUNE_EPOCHS = 50


@dataclass(frozen=True)
class TwinKey:
    cohort: CohortKey
    state: StateLabel

    @property
    def slug(self) -> str:
        return f"{self.cohort.slug}-{self.state.value}"

    def __str__(self):
        return f"{self.cohort} {self.state.name}"

    def to_json(self) -> dict:
        return {"cohort": self.cohort.to_json(), "state": self.state.value}

    @classmethod
    def from_json(cls, d) -> "TwinKey":
        return cls(CohortKey.from_json(d["cohort"]), StateLabel.from_code(d["state"]))

    def __lt__(self, other):
        return (self.cohort, self.state.index) < (other.cohort, other.state.index)


@dataclass
class DriftReport:
    key: TwinKey
    cycle_serial: int  # hour serial of the cycle's first hour
    predicted: np.ndarray
    actual: np.ndarray  # NaN where the hour has no support
    mse: float
    cycle_start: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "key": self.key.to_json(),
            "cycle_serial": self.cycle_serial,
            "cycle_start": self.cycle_start,
            "predicted": [float(v) for v in self.predicted],
            "actual": [None if math.isnan(v) else float(v) for v in self.actual],
            "mse": self.mse,
        }

    @classmethod
    def from_json(cls, d) -> "DriftReport":
        return cls(TwinKey.from_json(d["key"]), int(d["cycle_serial"]), np.array(d["predicted"], float),
                   np.array([np.nan if v is None else v for v in d["actual"]], float), float(d["mse"]),
                   d.get("cycle_start"))


def cycle_mse(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Mean squared difference over hours where the actual value exists."""
    ok = ~np.isnan(actual)
    if not ok.any():
        return float("nan")
    d = predicted[ok] - actual[ok]
    return float(np.mean(d * d))


@dataclass
class TwinEntry:
    model: LstmModel
    series: HourlySeries
    last_trained_serial: int
    drift_history: list[DriftReport] = field(default_factory=list)
    pending_serial: Optional[int] = None
    pending: Optional[np.ndarray] = None


class TwinRegistry:
    """Live models keyed by (cohort, state), persisted as a directory.

    The directory holds ``index.json`` (accumulated actuals, drift history
    and pending predictions) plus one model checkpoint per key.
    """

    def __init__(self, root, epoch: Optional[datetime] = None):
        self.root = Path(root)
        self.epoch = epoch
        self.entries: dict[TwinKey, TwinEntry] = {}

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def keys(self) -> list[TwinKey]:
        return sorted(self.entries)

    def get(self, key: TwinKey) -> TwinEntry:
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownKey(f"no twin for {key}") from None

    def register(self, key: TwinKey, series: HourlySeries, config: LstmConfig,
                 model: Optional[LstmModel] = None) -> TwinEntry:
        """Add a key, training a fresh model on ``series`` unless one is supplied."""
        series = resample_gap_free(series)
        if model is None:
            model = LstmModel.initialize(config)
            train(model, all_windows(series, config), config)
        entry = TwinEntry(model, series, int(series.serials[-1]))
        self.entries[key] = entry
        return entry

    def cycle_start(self, serial: int) -> Optional[str]:
        if self.epoch is None:
            return None
        return (self.epoch + timedelta(hours=serial - 1)).isoformat()

    # persistence -------------------------------------------------------
    def save(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "models").mkdir(exist_ok=True)
        index = {"registry_version": REGISTRY_VERSION,
                 "epoch": self.epoch.isoformat() if self.epoch else None, "entries": []}
        for key in self.keys():
            e = self.entries[key]
            ckpt = Path("models") / f"{key.slug}.json"
            (self.root / ckpt).write_text(json.dumps(model_to_json(e.model), sort_keys=True) + "\n", encoding="utf-8")
            index["entries"].append({
                "key": key.to_json(),
                "checkpoint": ckpt.as_posix(),
                "last_trained_serial": e.last_trained_serial,
                "start_hour": e.series.start_hour,
                "serials": e.series.serials.tolist(),
                "minutes": e.series.minutes.tolist(),
                "imputed": e.series.imputed.tolist() if e.series.imputed is not None else None,
                "drift_history": [r.to_json() for r in e.drift_history],
                "pending_serial": e.pending_serial,
                "pending": e.pending.tolist() if e.pending is not None else None,
            })
        path = self.root / "index.json"
        path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, root) -> "TwinRegistry":
        root = Path(root)
        index = json.loads((root / "index.json").read_text(encoding="utf-8"))
        epoch = datetime.fromisoformat(index["epoch"]) if index.get("epoch") else None
        reg = cls(root, epoch)
        for d in index["entries"]:
            key = TwinKey.from_json(d["key"])
            model = model_from_json(json.loads((root / d["checkpoint"]).read_text(encoding="utf-8")))
            series = HourlySeries(key.cohort, key.state, d["serials"], d["minutes"],
                                  start_hour=d["start_hour"], imputed=d.get("imputed"))
            reg.entries[key] = TwinEntry(
                model, series, int(d["last_trained_serial"]),
                [DriftReport.from_json(r) for r in d["drift_history"]],
                d.get("pending_serial"),
                np.array(d["pending"], float) if d.get("pending") is not None else None,
            )
        return reg


def _day_grid(day: HourlySeries) -> tuple[int, np.ndarray]:
    """First serial of the day and the 24 actual values (NaN where missing)."""
    if len(day) == 0:
        raise IncompleteDay("no hours in the new day")
    hod = day.hour_of_day
    starts = day.serials - hod
    if np.any(starts != starts[0]):
        raise IncompleteDay("new data spans more than one calendar day")
    actual = np.full(HOURS_PER_DAY, np.nan)
    actual[hod] = day.minutes
    return int(starts[0]), actual


def update_twin(
    registry: TwinRegistry,
    key: TwinKey,
    day: HourlySeries,
    *,
    epochs: int = FINE_TUNE_EPOCHS,
    full_retrain: bool = False,
    strict: bool = False,
) -> Optional[DriftReport]:
    """Compare one new day with the stored prediction, then learn from it.

    Returns the drift report, or None on a key's first cycle (no stored
    prediction yet; with ``strict`` this raises NoPriorPrediction after the
    update).  Destroyed hours may be missing from ``day``; they are
    excluded from the cycle MSE and interpolated for training.
    """
    entry = registry.get(key)
    first, actual = _day_grid(day)
    if first <= entry.series.serials[-1]:
        raise SeriesHasGaps(f"day starting at serial {first} overlaps data already held")
    report = None
    if entry.pending is not None and entry.pending_serial == first:
        report = DriftReport(key, first, entry.pending.copy(), actual, cycle_mse(entry.pending, actual),
                             registry.cycle_start(first))
        entry.drift_history.append(report)
    ok = ~np.isnan(actual)
    grown = entry.series.replace(
        serials=np.concatenate([entry.series.serials, first + np.nonzero(ok)[0]]),
        minutes=np.concatenate([entry.series.minutes, actual[ok]]),
        support=None,
        imputed=None,
    )
    grown = resample_gap_free(grown)
    config = entry.model.config
    windows = all_windows(grown, config)
    if config.batch_size > len(windows):
        config = replace(config, batch_size=len(windows))
    if full_retrain:
        model = LstmModel.initialize(entry.model.config)
        train(model, windows, config)
    else:
        model = entry.model
        train(model, windows, config, epochs=epochs)
    entry.model = model
    entry.series = grown
    entry.last_trained_serial = int(grown.serials[-1])
    entry.pending_serial = first + HOURS_PER_DAY
    entry.pending = predict_cycle(model, start_hour=0)
    if report is None and strict:
        raise NoPriorPrediction(f"{key}: first cycle, prediction stored for serial {entry.pending_serial}")
    return report


# ---------------------------------------------------------------- pain

SCORED_STATES = (StateLabel.Walking, StateLabel.Eating, StateLabel.Grazing)
REPORTED_STATES = (StateLabel.Walking, StateLabel.Eating, StateLabel.Grazing, StateLabel.Panting, StateLabel.Resting)


@dataclass
class PainAssessment:
    breed: str
    sex: str
    treatments: list[CombinedTreatment]  # every input treatment, table order
    totals: dict[CombinedTreatment, dict[StateLabel, float]]
    scores: dict[CombinedTreatment, float]
    ranking: list[CombinedTreatment]  # treated cohorts, least pain first
    tags: dict[CombinedTreatment, dict[StateLabel, str]]
    weights: dict[StateLabel, float]
    fallback: bool = False
    profiles: dict[StateLabel, dict[CombinedTreatment, np.ndarray]] = field(default_factory=dict)

    @property
    def least_pain(self) -> CombinedTreatment:
        return self.ranking[0]

    @property
    def most_pain(self) -> CombinedTreatment:
        return self.ranking[-1]


def assess_pain(profiles: Sequence[DailyProfile], weights: Optional[Mapping] = None) -> PainAssessment:
    """Rank treatments by their weighted activity deficit against the positive control.

    ``profiles`` holds daily profiles for one breed and sex, one per
    (treatment, state).  Score = sum over scored states of
    ``weight * (control total - treatment total)``; larger means more pain.
    Without a positive-control cohort the ranking falls back to raw totals
    (more activity, less pain) and ``fallback`` is set.
    """
    if weights is None:
        weights = {s: 1.0 for s in SCORED_STATES}
    weights = {StateLabel.parse(s) if isinstance(s, str) else s: float(w) for s, w in weights.items()}
    keys = [p.cohort for p in profiles]
    if any(k is None for k in keys):
        raise MixedCohort("profiles must carry their cohort")
    if len({(k.breed, k.sex) for k in keys}) > 1:
        raise MixedCohort("profiles must share breed and sex")
    treatments = sorted({k.treatment for k in keys})
    if len(treatments) < 2:
        raise EmptyInput("pain assessment needs at least two treatments")
    by = {(p.cohort.treatment, p.state): p for p in profiles}
    totals = {t: {s: (by[(t, s)].total if (t, s) in by else float("nan")) for s in REPORTED_STATES}
              for t in treatments}
    for t in treatments:
        for s in weights:
            if s not in totals[t]:
                totals[t][s] = by[(t, s)].total if (t, s) in by else float("nan")
    fallback = POSITIVE_CONTROL not in treatments
    scores, tags = {}, {}
    for t in treatments:
        if fallback:
            scores[t] = -sum(w * totals[t][s] for s, w in weights.items())
            tags[t] = {s: "raw" for s in REPORTED_STATES}
        else:
            ref = totals[POSITIVE_CONTROL]
            scores[t] = sum(w * (ref[s] - totals[t][s]) for s, w in weights.items())
            tags[t] = {s: _direction(totals[t][s], ref[s]) for s in REPORTED_STATES}
    ranked = [t for t in treatments if fallback or t != POSITIVE_CONTROL]
    ranked.sort(key=lambda t: (_nan_last(scores[t]), t.order))
    matrices = {s: {t: by[(t, s)].values.copy() for t in treatments if (t, s) in by} for s in REPORTED_STATES}
    return PainAssessment(
        breed=keys[0].breed.value, sex=keys[0].sex.value, treatments=treatments, totals=totals,
        scores=scores, ranking=ranked, tags=tags, weights=weights, fallback=fallback, profiles=matrices,
    )


def _nan_last(v: float) -> float:
    return math.inf if math.isnan(v) else v


def _direction(value: float, ref: float, tol: float = 1e-9) -> str:
    if math.isnan(value) or math.isnan(ref):
        return "missing"
    if value < ref - tol:
        return "lower"
    if value > ref + tol:
        return "higher"
    return "equal"


def require_positive_control(assessment: PainAssessment):
    if assessment.fallback:
        raise MissingPositiveControl("no positive-control cohort; ranking used raw totals")


def _num(v: float):
    return None if (isinstance(v, float) and math.isnan(v)) else v


def report_document(assessment: PainAssessment, drift_history: Sequence[DriftReport] = ()) -> dict:
    a = assessment
    return {
        "report_version": REPORT_VERSION,
        "assessment": {
            "breed": a.breed,
            "sex": a.sex,
            "fallback_raw_totals": a.fallback,
            "weights": {s.value: w for s, w in sorted(a.weights.items(), key=lambda kv: kv[0].index)},
            "ranking_least_to_most_pain": [t.code for t in a.ranking],
            "treatments": [
                {
                    "treatment": t.code,
                    "score": _num(a.scores[t]),
                    "totals": {s.value: _num(a.totals[t][s]) for s in REPORTED_STATES},
                    "direction_vs_control": {s.value: a.tags[t][s] for s in REPORTED_STATES},
                }
                for t in a.treatments
            ],
            "profiles": {
                s.value: {t.code: [_num(float(v)) for v in m] for t, m in sorted(per.items())}
                for s, per in a.profiles.items() if per
            },
        },
        "drift_history": [r.to_json() for r in drift_history],
    }


def render_text(assessment: PainAssessment, drift_history: Sequence[DriftReport] = ()) -> str:
    a = assessment
    cols = [s.value for s in REPORTED_STATES]
    head = f"{'treatment':<10}" + "".join(f"{c:>10}" for c in cols) + f"{'score':>10}{'rank':>6}"
    lines = [f"Pain assessment: {a.breed} {a.sex}" + (" (raw totals, no positive control)" if a.fallback else ""),
             head, "-" * len(head)]
    rank = {t: i for i, t in enumerate(a.ranking, start=1)}
    for t in a.treatments:
        vals = "".join(f"{a.totals[t][s]:>10.2f}" for s in REPORTED_STATES)
        r = str(rank[t]) if t in rank else "-"
        lines.append(f"{t.code:<10}{vals}{a.scores[t]:>10.2f}{r:>6}")
    if drift_history:
        lines += ["", "Drift history", f"{'key':<36}{'cycle':>8}{'mse':>12}"]
        for d in drift_history:
            lines.append(f"{str(d.key):<36}{d.cycle_serial:>8}{d.mse:>12.4f}")
    return "\n".join(lines) + "\n"


def export_report(assessment: PainAssessment, drift_history: Sequence[DriftReport] = (), out_dir=None,
                  stem: str = "report") -> tuple[dict, str]:
    """Deterministic JSON document plus text table; written to ``out_dir`` when given."""
    doc = report_document(assessment, drift_history)
    text = render_text(assessment, drift_history)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / f"{stem}.txt").write_text(text, encoding="utf-8")
    return doc, text
