import csv
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from herdtwin.ingest import CANONICAL_COLUMNS

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

EPOCH = datetime(2019, 8, 10)


def sensor_row(rid, animal, when, state, quality="OK", breed="Brahman", sex="F", procedure="NONE",
               relief="P"):
    return [str(rid), animal, breed, sex, procedure, relief, when.strftime("%Y-%m-%d"),
            when.strftime("%H:%M"), state, quality, f"DEV-{animal}"]


def write_sensor_csv(path, rows, header=CANONICAL_COLUMNS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def sensor_csv(tmp_path):
    """Factory writing rows (animal, minute offset, state, quality) as a canonical CSV."""

    def make(entries, name="herd.csv", **identity):
        rows = [sensor_row(i + 1, a, EPOCH + timedelta(minutes=m), s, q, **identity)
                for i, (a, m, s, q) in enumerate(entries)]
        return write_sensor_csv(tmp_path / name, rows)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_grads(model, X, Y, h):
    """Central differences of the batch MSE for every flat parameter.

    The loss difference is formed as mean((p+ - p-)(p+ + p- - 2y)) so the two
    nearly equal losses are never subtracted directly.
    """
    from herdtwin.lstm import predict

    theta = model.get_flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        model.set_flat(t)
        plus = predict(model, X)
        t[i] = theta[i] - h
        model.set_flat(t)
        minus = predict(model, X)
        out[i] = np.mean((plus - minus) * (plus + minus - 2.0 * Y)) / (2.0 * h)
    model.set_flat(theta)
    return out


def gradient_relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor); the floor keeps round-off on tiny gradients from dominating."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Log one acceptance verdict; the lines are repeated in the terminal summary."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
