"""Command-line entry point: ``herdtwin <subcommand> [flags]``.

Every subcommand writes into ``--out`` and prints one JSON summary line on
standard output.  Flags override values from ``--config`` (a JSON object
whose keys are the flag names with underscores); ``HERDTWIN_SEED`` supplies
the seed when neither gives one.  Exit status: 0 success, 2 usage error,
3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import aggregate, fir, fit, ingest, lstm, sweep, synth, twin
from .core import HOURS_PER_DAY, Breed, CohortKey, Sex, StateLabel, parse_treatment
from .errors import HerdTwinError, InvalidConfig, MissingFile, UsageError

log = logging.getLogger("herdtwin")

DEFAULTS: dict[str, Any] = {
    "out": "herdtwin-out",
    "jobs": 1,
    "seed": 0,
    "state": "REST",
    "cohort": "Brahman/F/P",
    "fir_length": 5,
    "fir_cutoff": 0.4,
    "fir_window": "hamming",
    "family": "all",
    "terms": None,
    "raw_points": False,
    "hidden": 128,
    "layers": 2,
    "batch": 24,
    "epochs": 2000,
    "lr": 1e-3,
    "split": 0.9,
    "cyclic": False,
    "stride": None,
    "axis": "hidden_units",
    "values": None,
    "repetitions": 5,
    "aggregation": "runs",
    "full_sweep": False,
    "days": None,
    "noise": None,
    "corruption": None,
    "bootstrap_days": None,
    "fine_tune_epochs": twin.FINE_TUNE_EPOCHS,
    "full_retrain": False,
    "start_hour": 0,
    "weights": None,
}

SUBCOMMANDS = ("synth", "ingest", "aggregate", "filter", "fit", "train", "predict", "sweep", "twin", "report",
               "pipeline")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="JSON file of flag values")
    common.add_argument("--jobs", type=int, help="worker processes for parallel stages")
    common.add_argument("--seed", type=int, help="global seed (fallback: HERDTWIN_SEED)")
    common.add_argument("--log-level", default="WARNING")

    p = _Parser(prog="herdtwin", description="Livestock behavioral-state digital twin toolkit.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=None)

    def fir_flags(sp):
        sp.add_argument("--fir-length", type=int)
        sp.add_argument("--fir-cutoff", type=float, help="fraction of Nyquist in (0, 1)")
        sp.add_argument("--fir-window", choices=[w.value for w in fir.Window])

    def lstm_flags(sp):
        sp.add_argument("--hidden", type=int)
        sp.add_argument("--layers", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--split", type=float)
        sp.add_argument("--stride", type=int)
        sp.add_argument("--cyclic", action="store_true", default=None, help="sin/cos hour encoding")

    sp = add("synth", "generate a synthetic herd")
    sp.add_argument("--spec", help="herd spec JSON")
    sp.add_argument("--days", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--corruption", type=float)

    sp = add("ingest", "load and clean a sensor CSV")
    sp.add_argument("--in", dest="input", required=True)

    sp = add("aggregate", "hourly cohort series and daily profiles")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--state")
    sp.add_argument("--cohort", help="breed/sex/treatment, e.g. Brahman/F/P; omit for all cohorts")
    sp.add_argument("--all-cohorts", action="store_true", default=None)

    sp = add("filter", "low-pass filter a series CSV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--state")
    fir_flags(sp)

    sp = add("fit", "fit 24-hour profile models")
    sp.add_argument("--in", dest="input", required=True, help="profile or series CSV")
    sp.add_argument("--family", choices=list(fit.FAMILIES) + ["all"])
    sp.add_argument("--terms", type=int, help="terms/degree; default: the table arity")
    sp.add_argument("--raw-points", action="store_true", default=None, help="fit every series point by hour of day")

    sp = add("train", "train an LSTM on a series CSV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--state")
    lstm_flags(sp)

    sp = add("predict", "predict the next 24 hours from a checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--start-hour", type=int)

    sp = add("sweep", "one-axis hyperparameter sweep")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--state")
    sp.add_argument("--axis", choices=list(sweep.AXES))
    sp.add_argument("--values", help="comma-separated axis values")
    sp.add_argument("--repetitions", type=int)
    sp.add_argument("--aggregation", choices=list(sweep.AGGREGATIONS))
    sp.add_argument("--full-sweep", action="store_true", default=None)
    lstm_flags(sp)

    sp = add("twin", "run the predict-compare-update loop over a herd CSV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--state")
    sp.add_argument("--cohort")
    sp.add_argument("--bootstrap-days", type=int)
    sp.add_argument("--fine-tune-epochs", type=int)
    sp.add_argument("--full-retrain", action="store_true", default=None)
    lstm_flags(sp)

    sp = add("report", "pain assessment across treatments")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--cohort", help="breed/sex[/treatment]; the treatment part is ignored")
    sp.add_argument("--registry", help="twin registry directory for drift history")
    sp.add_argument("--weights", help="JSON object of state code to weight")

    sp = add("pipeline", "synth, ingest, aggregate, filter, fit, train, twin, report")
    sp.add_argument("--days", type=int)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--corruption", type=float)
    sp.add_argument("--state")
    sp.add_argument("--cohort")
    sp.add_argument("--bootstrap-days", type=int)
    sp.add_argument("--fine-tune-epochs", type=int)
    sp.add_argument("--full-retrain", action="store_true", default=None)
    fir_flags(sp)
    lstm_flags(sp)
    return p


class Options:
    """Flag value, else config-file value, else default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config

    def __getattr__(self, name):
        v = getattr(self.args, name, None)
        if v is not None:
            return v
        if name in self.config:
            return self.config[name]
        if name == "seed":
            env = os.environ.get("HERDTWIN_SEED")
            if env not in (None, ""):
                try:
                    return int(env)
                except ValueError:
                    raise UsageError(f"HERDTWIN_SEED must be an integer, got {env!r}") from None
        return DEFAULTS.get(name)

    def effective(self) -> dict:
        keys = set(DEFAULTS) | set(self.config) | {k for k, v in vars(self.args).items() if v is not None}
        keys -= {"config", "log_level", "command"}
        return {k: getattr(self, k) for k in sorted(keys)}


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFile(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InvalidConfig("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def parse_cohort(text: str) -> tuple[Breed, Sex, Optional[str]]:
    parts = [p.strip() for p in str(text).split("/")]
    if len(parts) not in (2, 3):
        raise UsageError(f"cohort must look like Brahman/F/P, got {text!r}")
    try:
        breed, sex = Breed.parse(parts[0]), Sex.parse(parts[1])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return breed, sex, parts[2] if len(parts) == 3 else None


def cohort_key(text: str) -> CohortKey:
    breed, sex, code = parse_cohort(text)
    if code is None:
        raise UsageError(f"cohort {text!r} needs a treatment part")
    return CohortKey(breed, sex, parse_treatment(code))


def _state(opts) -> StateLabel:
    try:
        return StateLabel.parse(opts.state)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out(opts) -> Path:
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lstm_config(opts) -> lstm.LstmConfig:
    return lstm.LstmConfig(
        hidden_units=int(opts.hidden), num_layers=int(opts.layers), batch_size=int(opts.batch),
        epochs=int(opts.epochs), learning_rate=float(opts.lr), seed=int(opts.seed),
        stride=None if opts.stride is None else int(opts.stride), cyclic_encoding=bool(opts.cyclic),
    )


def _fir_filter(opts) -> fir.FirFilter:
    try:
        window = fir.Window.parse(opts.fir_window)
    except ValueError:
        raise InvalidConfig(f"unknown FIR window {opts.fir_window!r}") from None
    return fir.design_lowpass(int(opts.fir_length), float(opts.fir_cutoff), window)


def _rel(path: Path, out: Path) -> str:
    return Path(path).resolve().relative_to(out.resolve()).as_posix()


# ---------------------------------------------------------------- stages

def cmd_synth(opts) -> dict:
    out = _out(opts)
    spec_path = getattr(opts.args, "spec", None) or opts.config.get("spec")
    if isinstance(spec_path, dict):
        spec = synth.HerdSpec.from_json(spec_path)
    elif spec_path:
        spec = synth.HerdSpec.load(spec_path)
    else:
        spec = synth.HerdSpec(synth.desk_roster(), seed=int(opts.seed))
    doc = spec.to_json()
    for flag, key in (("days", "days"), ("noise", "noise_sigma"), ("corruption", "corruption_rate")):
        v = getattr(opts, flag)
        if v is not None:
            doc[key] = v
    spec = synth.HerdSpec.from_json(doc)
    ds = synth.generate(spec, out)
    (out / "spec.json").write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"animals": spec.n_animals, "rows": ds.row_count, "days": spec.days,
            "files": ["herd.csv", "ground_truth.csv", "spec.json"]}


def _load(opts, out: Path) -> ingest.RawDataset:
    src = Path(opts.input)
    return ingest.load_csv(src, rejects_path=out / (src.name + ".rejects.csv"))


def cmd_ingest(opts) -> dict:
    out = _out(opts)
    ds = _load(opts, out)
    census = ingest.cohort_census(ingest.segment(ds))
    ingest.write_census_csv(census, out / "census.csv")
    return {"rows": ds.row_count, "rejected": ds.rejected_count, "animals": len(ds.animals),
            "epoch": ds.epoch.isoformat(),
            "census": [{"cohort": str(k), "animals": n} for k, n in census]}


def _select_cohorts(cohorts, text: Optional[str]):
    if not text:
        return list(cohorts)
    breed, sex, code = parse_cohort(text)
    keys = [k for k in cohorts if k.breed is breed and k.sex is sex
            and (code is None or k.treatment == parse_treatment(code))]
    if not keys:
        raise UsageError(f"no cohort matches {text!r}")
    return keys


def cmd_aggregate(opts) -> dict:
    out = _out(opts)
    ds = _load(opts, out)
    cohorts = ingest.segment(ds)
    state = _state(opts)
    selection = None if getattr(opts.args, "all_cohorts", None) else getattr(opts.args, "cohort", None)
    keys = _select_cohorts(cohorts, selection)
    written, profiles = [], []
    for key in keys:
        series = aggregate.cohort_series(cohorts[key], state, ds.epoch)
        profile = aggregate.daily_profile(series)
        profiles.append(profile)
        stem = f"{key.slug}-{state.value}"
        written.append(_rel(aggregate.write_series_csv(series, out / f"series_{stem}.csv"), out))
        written.append(_rel(aggregate.write_profile_csv(profile, out / f"profile_{stem}.csv"), out))
    groups: dict[tuple, list] = {}
    for p in profiles:
        groups.setdefault((p.cohort.breed, p.cohort.sex), []).append(p)
    for (breed, sex), group in sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        if len(group) < 2:
            continue
        cmp = aggregate.treatment_comparison(group)
        path = out / f"comparison_{breed.value}-{sex.value}-{state.value}.csv"
        _write_comparison(cmp, path)
        written.append(_rel(path, out))
    return {"state": state.value, "cohorts": [str(k) for k in keys], "files": written}


def _write_comparison(cmp: aggregate.TreatmentComparison, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour_of_day"] + [t.code for t in cmp.treatments])
        for h in range(HOURS_PER_DAY):
            w.writerow([h] + ["" if np.isnan(v) else repr(float(v)) for v in cmp.matrix[h]])
        w.writerow(["total"] + [repr(float(v)) for v in cmp.totals])


def _read_series(opts) -> "aggregate.HourlySeries":
    path = Path(opts.input)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    return aggregate.read_series_csv(path, _state(opts))


def cmd_filter(opts) -> dict:
    out = _out(opts)
    series = fir.resample_gap_free(_read_series(opts))
    filt = _fir_filter(opts)
    filtered = fir.apply(filt, series)
    path = out / (Path(opts.input).stem + ".filtered.csv")
    aggregate.write_series_csv(filtered, path)
    return {"taps": [float(t) for t in filt.taps], "points": len(filtered),
            "imputed": int(np.sum(series.imputed)) if series.imputed is not None else 0, "files": [_rel(path, out)]}


def _profile_points(opts) -> tuple[np.ndarray, np.ndarray]:
    path = Path(opts.input)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    if "hour_serial" in header:
        series = aggregate.read_series_csv(path, StateLabel.Resting)
        if opts.raw_points:
            return series.hour_of_day.astype(float), series.minutes.copy()
        prof = aggregate.daily_profile(series)
        return np.arange(HOURS_PER_DAY, dtype=float), prof.values
    values, _support = aggregate.read_profile_csv(path)
    return np.arange(HOURS_PER_DAY, dtype=float), values


def cmd_fit(opts) -> dict:
    out = _out(opts)
    x, y = _profile_points(opts)
    seed = int(opts.seed)
    if opts.family == "all":
        grid = {k: [int(opts.terms)] if opts.terms else [v] for k, v in fit.TABLE_ARITIES.items()}
        table = fit.model_selection(x, y, grid, seed=seed)
        path = fit.write_selection_csv(table, out / "model_selection.csv")
        files = [_rel(path, out)]
        for c in table.ranked:
            files.append(_rel(fit.write_fit_json(c, out / f"fit_{c.family}.json"), out))
        return {"winner": table.winner.family.kind if table.winner else None,
                "ranking": [{"family": c.family.kind, "arity": c.family.arity,
                             "residual_variance": c.residual_variance} for c in table.ranked],
                "errors": [{"family": str(c.family), "error": c.error} for c in table.cells if c.error],
                "files": files}
    arity = int(opts.terms) if opts.terms else fit.TABLE_ARITIES[opts.family]
    curve = fit.fit(fit.CurveFamily(opts.family, arity), x, y, seed=seed)
    path = fit.write_fit_json(curve, out / f"fit_{curve.family}.json")
    return {"family": opts.family, "arity": arity, "residual_variance": curve.residual_variance,
            "sse": curve.sse, "converged": curve.converged, "files": [_rel(path, out)]}


def _write_trace(trace: lstm.TrainingTrace, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse"])
        for e, v in enumerate(trace.train_mse):
            w.writerow([e, repr(v)])


def _write_prediction(values: np.ndarray, start_hour: int, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour_of_day", "minutes"])
        for k, v in enumerate(values):
            w.writerow([(start_hour + k) % HOURS_PER_DAY, repr(float(v))])


def train_series(series, config: lstm.LstmConfig, split: float, out: Path, stem: str = "model"):
    train_set, test_set = lstm.make_dataset(series, config, split)
    model = lstm.LstmModel.initialize(config)
    trace = lstm.train(model, train_set, test=test_set)
    lstm.save_model(model, out / f"{stem}.json")
    _write_trace(trace, out / f"{stem}_trace.csv")
    pred = lstm.predict_cycle(model)
    _write_prediction(pred, 0, out / f"{stem}_next_cycle.csv")
    files = [f"{stem}.json", f"{stem}_trace.csv", f"{stem}_next_cycle.csv"]
    counts = {"train_windows": len(train_set), "test_windows": len(test_set)}
    return model, trace, pred, files, counts


def cmd_train(opts) -> dict:
    out = _out(opts)
    series = fir.resample_gap_free(_read_series(opts))
    config = _lstm_config(opts)
    _model, trace, pred, files, counts = train_series(series, config, float(opts.split), out)
    return {**counts, "loss_train_scaled": trace.final_train_mse,
            "loss_test_minutes2": trace.test_mse, "epochs": trace.epochs,
            "next_cycle": [float(v) for v in pred], "files": files}


def cmd_predict(opts) -> dict:
    out = _out(opts)
    path = Path(opts.args.model)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    model = lstm.load_model(path)
    start = int(opts.start_hour)
    pred = lstm.predict_cycle(model, start_hour=start)
    target = out / "prediction.csv"
    _write_prediction(pred, start, target)
    return {"prediction": [float(v) for v in pred], "files": [_rel(target, out)]}


_LSTM_FLAGS = {"hidden": "hidden_units", "layers": "num_layers", "batch": "batch_size", "epochs": "epochs"}


def _explicit_lstm(opts) -> dict:
    """Architecture flags given on the command line or in the config file."""
    found = {}
    for flag, name in _LSTM_FLAGS.items():
        v = getattr(opts.args, flag, None)
        if v is None:
            v = opts.config.get(flag)
        if v is not None:
            found[name] = int(v)
    return found


def cmd_sweep(opts) -> dict:
    out = _out(opts)
    series = fir.resample_gap_free(_read_series(opts))
    values = opts.values
    if isinstance(values, str):
        try:
            values = [int(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"--values must be comma-separated integers, got {values!r}") from None
    result = sweep.sweep(series, opts.axis, values, base=_lstm_config(opts), repetitions=int(opts.repetitions),
                         aggregation=opts.aggregation, jobs=int(opts.jobs), full=bool(opts.full_sweep),
                         split=float(opts.split), overrides=_explicit_lstm(opts))
    path = sweep.write_sweep_csv(result, out / f"sweep_{opts.axis}.csv")
    traces = sweep.write_trace_csvs(result, out / "traces")
    return {"axis": opts.axis, "aggregation": opts.aggregation,
            "ranking": [c.value for c in result.ranked],
            "cells": [{"value": c.value, "test_median": c.test_stats["median"],
                       "train_median": c.train_stats["median"], "error": c.error} for c in result.cells],
            "files": [_rel(path, out)] + [_rel(p, out) for p in traces]}


def run_twin(ds: ingest.RawDataset, key: twin.TwinKey, config: lstm.LstmConfig, bootstrap_days: Optional[int],
             out: Path, fine_tune_epochs: int, full_retrain: bool):
    """Bootstrap a twin on the first days, then feed the remaining days one by one."""
    cohorts = ingest.segment(ds)
    if key.cohort not in cohorts:
        raise UsageError(f"cohort {key.cohort} not present in the data")
    series = aggregate.cohort_series(cohorts[key.cohort], key.state, ds.epoch)
    day_of = (series.serials - 1 + series.start_hour) // HOURS_PER_DAY
    n_days = int(day_of.max()) + 1
    if bootstrap_days is None:
        bootstrap_days = max(n_days - 3, 1)
    if not (1 <= bootstrap_days < n_days):
        raise UsageError(f"bootstrap days must lie in [1, {n_days - 1}], got {bootstrap_days}")
    head = series.replace(serials=series.serials[day_of < bootstrap_days],
                          minutes=series.minutes[day_of < bootstrap_days],
                          support=None, imputed=None)
    registry = twin.TwinRegistry(out / "registry", ds.epoch)
    registry.register(key, head, config)
    reports = []
    for d in range(bootstrap_days, n_days):
        sel = day_of == d
        day = series.replace(serials=series.serials[sel], minutes=series.minutes[sel], support=None, imputed=None)
        rep = twin.update_twin(registry, key, day, epochs=fine_tune_epochs, full_retrain=full_retrain)
        if rep is not None:
            reports.append(rep)
    registry.save()
    drift = out / "drift.csv"
    with open(drift, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "cycle_serial", "cycle_start", "mse"])
        for r in reports:
            w.writerow([str(r.key), r.cycle_serial, r.cycle_start, repr(r.mse)])
    return registry, reports


def cmd_twin(opts) -> dict:
    out = _out(opts)
    ds = _load(opts, out)
    key = twin.TwinKey(cohort_key(opts.cohort), _state(opts))
    registry, reports = run_twin(ds, key, _lstm_config(opts), opts.bootstrap_days, out,
                                 int(opts.fine_tune_epochs), bool(opts.full_retrain))
    return {"key": str(key), "cycles": len(reports), "drift_mse": [r.mse for r in reports],
            "files": ["registry/index.json", "drift.csv"]}


def pain_profiles(ds: ingest.RawDataset, breed: Breed, sex: Sex):
    cohorts = ingest.segment(ds)
    keys = [k for k in cohorts if k.breed is breed and k.sex is sex]
    profiles = []
    for key in keys:
        for state in twin.REPORTED_STATES:
            profiles.append(aggregate.daily_profile(aggregate.cohort_series(cohorts[key], state, ds.epoch)))
    return profiles


def _weights(opts):
    w = opts.weights
    if w is None:
        return None
    if isinstance(w, str):
        try:
            w = json.loads(w)
        except json.JSONDecodeError:
            raise UsageError(f"--weights must be a JSON object, got {w!r}") from None
    return w


def cmd_report(opts) -> dict:
    out = _out(opts)
    ds = _load(opts, out)
    breed, sex, _ = parse_cohort(opts.cohort)
    assessment = twin.assess_pain(pain_profiles(ds, breed, sex), _weights(opts))
    history = []
    reg_dir = getattr(opts.args, "registry", None) or opts.config.get("registry")
    if reg_dir:
        reg = twin.TwinRegistry.load(reg_dir)
        for key in reg.keys():
            history.extend(reg.get(key).drift_history)
    twin.export_report(assessment, history, out)
    return {"least_pain": assessment.least_pain.code, "most_pain": assessment.most_pain.code,
            "ranking": [t.code for t in assessment.ranking], "fallback": assessment.fallback,
            "files": ["report.json", "report.txt"]}


# ---------------------------------------------------------------- pipeline

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, config: dict, stages: list[str], summary: dict, complete: bool) -> Path:
    arts = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            arts.append({"path": _rel(p, out), "sha256": _sha256(p), "bytes": p.stat().st_size})
    doc = {"manifest_version": 1, "complete": complete, "config": config, "stages": stages,
           "summary": summary, "artifacts": arts}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_pipeline(opts) -> dict:
    out = _out(opts)
    config = opts.effective()
    config.pop("out", None)
    stages: list[str] = []
    summary: dict = {}
    try:
        _pipeline(opts, out, stages, summary)
    except HerdTwinError:
        write_manifest(out, config, stages, summary, complete=False)
        raise
    path = write_manifest(out, config, stages, summary, complete=True)
    n = len(json.loads(path.read_text(encoding="utf-8"))["artifacts"])
    return {"stages": stages, "artifacts": n, "manifest": "manifest.json", **summary}


def _pipeline(opts, out: Path, stages: list, summary: dict):
    seed = int(opts.seed)
    state = _state(opts)
    key = cohort_key(opts.cohort)

    # synth
    spec_doc = opts.config.get("spec")
    spec = synth.HerdSpec.from_json(spec_doc) if isinstance(spec_doc, dict) else \
        synth.HerdSpec(synth.desk_roster(), seed=seed)
    doc = spec.to_json()
    for flag, k in (("days", "days"), ("noise", "noise_sigma"), ("corruption", "corruption_rate")):
        if getattr(opts, flag) is not None:
            doc[k] = getattr(opts, flag)
    spec = synth.HerdSpec.from_json(doc)
    d_synth = out / "synth"
    synth.generate(spec, d_synth)
    (d_synth / "spec.json").write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stages.append("synth")

    # ingest
    d_ingest = out / "ingest"
    d_ingest.mkdir(exist_ok=True)
    ds = ingest.load_csv(d_synth / "herd.csv", rejects_path=d_ingest / "herd.csv.rejects.csv")
    cohorts = ingest.segment(ds)
    ingest.write_census_csv(ingest.cohort_census(cohorts), d_ingest / "census.csv")
    stages.append("ingest")
    if key not in cohorts:
        raise UsageError(f"cohort {key} is not in the synthetic roster")

    # aggregate
    d_agg = out / "aggregate"
    d_agg.mkdir(exist_ok=True)
    series = aggregate.cohort_series(cohorts[key], state, ds.epoch)
    aggregate.write_series_csv(series, d_agg / f"series_{key.slug}-{state.value}.csv")
    profile = aggregate.daily_profile(series)
    aggregate.write_profile_csv(profile, d_agg / f"profile_{key.slug}-{state.value}.csv")
    stages.append("aggregate")

    # filter
    d_fir = out / "filter"
    d_fir.mkdir(exist_ok=True)
    filt = _fir_filter(opts)
    filtered = fir.apply(filt, fir.resample_gap_free(series))
    aggregate.write_series_csv(filtered, d_fir / f"series_{key.slug}-{state.value}.filtered.csv")
    stages.append("filter")

    # fit
    d_fit = out / "fit"
    d_fit.mkdir(exist_ok=True)
    fprof = aggregate.daily_profile(filtered)
    grid = {k: [v] for k, v in fit.TABLE_ARITIES.items()}
    table = fit.model_selection(np.arange(HOURS_PER_DAY, dtype=float), fprof.values, grid, seed=seed)
    fit.write_selection_csv(table, d_fit / "model_selection.csv")
    for c in table.ranked:
        fit.write_fit_json(c, d_fit / f"fit_{c.family}.json")
    summary["fit_winner"] = table.winner.family.kind if table.winner else None
    stages.append("fit")

    # train
    d_train = out / "train"
    d_train.mkdir(exist_ok=True)
    config = _lstm_config(opts)
    _model, trace, pred, _files, _counts = train_series(filtered, config, float(opts.split), d_train)
    template = spec.cohort_template(key)[:, state.index]
    summary["loss_train_scaled"] = trace.final_train_mse
    summary["loss_test_minutes2"] = trace.test_mse
    summary["next_cycle_rms_vs_template"] = float(np.sqrt(np.mean((pred - template) ** 2)))
    stages.append("train")

    # twin
    d_twin = out / "twin"
    d_twin.mkdir(exist_ok=True)
    tkey = twin.TwinKey(key, state)
    _registry, reports = run_twin(ds, tkey, config, opts.bootstrap_days, d_twin, int(opts.fine_tune_epochs),
                                  bool(opts.full_retrain))
    summary["drift_mse"] = [r.mse for r in reports]
    stages.append("twin")

    # report
    d_rep = out / "report"
    profiles = pain_profiles(ds, key.breed, key.sex)
    if len({p.cohort.treatment for p in profiles}) >= 2:
        assessment = twin.assess_pain(profiles, _weights(opts))
        twin.export_report(assessment, reports, d_rep)
        summary["least_pain"] = assessment.least_pain.code
        summary["most_pain"] = assessment.most_pain.code
    else:
        d_rep.mkdir(exist_ok=True)
        (d_rep / "report.txt").write_text("single treatment cohort: no pain comparison\n", encoding="utf-8")
    stages.append("report")


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "aggregate": cmd_aggregate, "filter": cmd_filter,
    "fit": cmd_fit, "train": cmd_train, "predict": cmd_predict, "sweep": cmd_sweep, "twin": cmd_twin,
    "report": cmd_report, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            raise UsageError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        opts = Options(args, _load_config(args.config))
        result = COMMANDS[args.command](opts)
    except HerdTwinError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}),
              file=sys.stderr)
        return exc.exit_code
    print(json.dumps({"command": args.command, "status": "ok", **result}, sort_keys=True, default=_jsonable))
    return 0


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
