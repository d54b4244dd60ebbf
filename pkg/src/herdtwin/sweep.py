"""One-axis-at-a-time hyperparameter sweeps with box-plot summaries."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import HourlySeries
from .errors import HerdTwinError, InvalidConfig
from .lstm import LstmConfig, LstmModel, make_dataset, train

AXES = ("hidden_units", "num_layers", "batch_size", "epochs")

FULL_AXIS_VALUES = {
    "hidden_units": (4, 8, 16, 32, 64, 128, 256),
    "num_layers": (1, 2, 3, 4, 5, 6, 7),
    "batch_size": (3, 6, 12, 24, 48, 96),
    "epochs": (100, 500, 1000, 2000, 5000, 10000, 20000),
}
DESK_EPOCH_CAP = 2000

# settings held fixed while one axis varies
COMPANIONS = {
    "num_layers": {"hidden_units": 16, "batch_size": 24, "epochs": 2000},
    "hidden_units": {"num_layers": 2, "batch_size": 24, "epochs": 2000},
    "batch_size": {"num_layers": 2, "hidden_units": 128, "epochs": 2000},
    "epochs": {"num_layers": 2, "hidden_units": 128, "batch_size": 24},
}
AGGREGATIONS = ("runs", "epochs")
STAT_NAMES = ("min", "q1", "median", "q3", "max")


def axis_values(axis: str, full: bool = False) -> tuple[int, ...]:
    if axis not in AXES:
        raise InvalidConfig(f"unknown sweep axis {axis!r}; choose from {AXES}")
    values = FULL_AXIS_VALUES[axis]
    if axis == "epochs" and not full:
        values = tuple(v for v in values if v <= DESK_EPOCH_CAP)
    return values


def cell_config(axis: str, value: int, base: LstmConfig = LstmConfig(),
                overrides: Optional[Mapping[str, int]] = None) -> LstmConfig:
    """Companion settings for ``axis``, then explicit ``overrides``, then the axis value."""
    fields = {**COMPANIONS[axis], **(overrides or {}), axis: int(value)}
    return replace(base, **fields)


def summarize(samples: Sequence[float]) -> dict[str, float]:
    """Five-number summary; quartiles use linear interpolation."""
    a = np.asarray(samples, dtype=np.float64)
    if a.size == 0:
        return {k: float("nan") for k in STAT_NAMES}
    q = np.quantile(a, [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(STAT_NAMES, map(float, q)))


@dataclass
class RunResult:
    seed: int
    train_mse: float  # minutes squared
    test_mse: float
    trace: list[float]
    epoch_train_mse: list[float]
    epoch_test_mse: list[float]
    wall_time: float


@dataclass
class SweepCell:
    axis: str
    value: int
    config: LstmConfig
    runs: list[RunResult] = field(default_factory=list)
    error: Optional[str] = None
    aggregation: str = "runs"
    rank: Optional[int] = None

    def samples(self, which: str) -> list[float]:
        if self.aggregation == "runs":
            return [getattr(r, f"{which}_mse") for r in self.runs]
        return [v for r in self.runs for v in getattr(r, f"epoch_{which}_mse")]

    @property
    def train_stats(self) -> dict[str, float]:
        return summarize(self.samples("train"))

    @property
    def test_stats(self) -> dict[str, float]:
        return summarize(self.samples("test"))


@dataclass
class SweepResult:
    axis: str
    cells: list[SweepCell]

    @property
    def ranked(self) -> list[SweepCell]:
        ok = [c for c in self.cells if c.error is None]
        return sorted(ok, key=lambda c: (c.test_stats["median"], c.value))

    def cell(self, value: int) -> SweepCell:
        for c in self.cells:
            if c.value == value:
                return c
        raise KeyError(value)


def _run_one(series: HourlySeries, config: LstmConfig, split: float) -> RunResult:
    train_set, test_set = make_dataset(series, config, split)
    model = LstmModel.initialize(config)
    trace = train(model, train_set, test=test_set)
    return RunResult(
        seed=config.seed,
        train_mse=trace.final_train_mse * 3600.0,
        test_mse=trace.test_mse,
        trace=trace.train_mse,
        epoch_train_mse=trace.epoch_train_mse,
        epoch_test_mse=trace.epoch_test_mse,
        wall_time=trace.wall_time,
    )


def _job(args):
    series, config, split = args
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - declared dependency
        return _guarded(series, config, split)
    with threadpool_limits(1):
        return _guarded(series, config, split)


def _guarded(series, config, split):
    try:
        return _run_one(series, config, split)
    except HerdTwinError as exc:
        return f"{type(exc).__name__}: {exc}"


def sweep(
    series: HourlySeries,
    axis: str,
    values: Optional[Sequence[int]] = None,
    *,
    base: LstmConfig = LstmConfig(),
    repetitions: int = 5,
    aggregation: str = "runs",
    jobs: int = 1,
    full: bool = False,
    split: float = 0.9,
    overrides: Optional[Mapping[str, int]] = None,
) -> SweepResult:
    """Train every cell of one axis ``repetitions`` times (seeds ``base.seed + r``).

    Cells that fail (for instance a batch larger than the training set)
    carry their error message and the table still completes.  Identical
    configurations are trained once and shared.  ``overrides`` replace the
    axis companions (for example a shorter epoch budget).
    """
    if aggregation not in AGGREGATIONS:
        raise InvalidConfig(f"aggregation must be one of {AGGREGATIONS}")
    if repetitions < 1:
        raise InvalidConfig("repetitions must be >= 1")
    values = tuple(axis_values(axis, full) if values is None else values)
    if not values:
        raise InvalidConfig("empty sweep grid")
    cells = [SweepCell(axis, int(v), cell_config(axis, v, base, overrides), aggregation=aggregation) for v in values]
    jobs_list, slots = [], {}
    for ci, cell in enumerate(cells):
        for r in range(repetitions):
            cfg = replace(cell.config, seed=base.seed + r)
            slots.setdefault(cfg, []).append(ci)
            if len(slots[cfg]) == 1:
                jobs_list.append(cfg)
    results = _execute([(series, cfg, split) for cfg in jobs_list], jobs)
    for cfg, res in zip(jobs_list, results):
        for ci in slots[cfg]:
            cell = cells[ci]
            if isinstance(res, str):
                cell.error = cell.error or res
            else:
                cell.runs.append(res)
    result = SweepResult(axis, cells)
    for i, c in enumerate(result.ranked, start=1):
        c.rank = i
    return result


def _execute(tasks, jobs: int):
    jobs = max(1, int(jobs or 1))
    if jobs == 1 or len(tasks) <= 1:
        return [_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks), os.cpu_count() or 1)) as pool:
        return list(pool.map(_job, tasks))


def write_sweep_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["axis", "value", "rank", "hidden_units", "num_layers", "batch_size", "epochs",
                  "learning_rate", "repetitions", "aggregation", "n_samples"]
        header += [f"train_{k}" for k in STAT_NAMES] + [f"test_{k}" for k in STAT_NAMES] + ["error"]
        w.writerow(header)
        for c in result.cells:
            cfg = c.config
            row = [c.axis, c.value, c.rank if c.rank is not None else "", cfg.hidden_units, cfg.num_layers,
                   cfg.batch_size, cfg.epochs, repr(cfg.learning_rate), len(c.runs), c.aggregation,
                   len(c.samples("test"))]
            tr, te = c.train_stats, c.test_stats
            row += [repr(tr[k]) for k in STAT_NAMES] + [repr(te[k]) for k in STAT_NAMES]
            row.append(c.error or "")
            w.writerow(row)
    return path


def write_trace_csvs(result: SweepResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in result.cells:
        for r in c.runs:
            p = out / f"trace_{c.axis}_{c.value}_seed{r.seed}.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "train_mse"])
                for e, v in enumerate(r.trace):
                    w.writerow([e, repr(v)])
            paths.append(p)
    return paths
