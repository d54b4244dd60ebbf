"""Parametric 24-hour profile models and model selection.

Four families are supported:

* ``gaussian`` -- sum of ``n`` terms ``a*exp(-((x-b)/c)**2)``
* ``sine``     -- sum of ``n`` terms ``a*sin(b*x + c)``
* ``poly``     -- polynomial of degree ``d`` (coefficients low to high)
* ``fourier``  -- ``a0 + sum_i a_i*cos(i*w*x) + b_i*sin(i*w*x)``, params
  ``[a0, a1, b1, ..., an, bn, w]``

Polynomials and Fourier series at a fixed fundamental are solved by QR least
squares.  Gaussian and sine sums use Levenberg-Marquardt from a heuristic
start plus seeded jittered restarts; the Fourier fundamental is found by a
golden-section search wrapped around the linear solve.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import HerdTwinError, InsufficientPoints, MalformedParams, SingularSystem
from .lm import levenberg_marquardt

FAMILIES = ("gaussian", "sine", "poly", "fourier")
FAMILY_LABELS = {
    "gaussian": "Gaussian",
    "sine": "Sum of sine",
    "poly": "Polynomial",
    "fourier": "Fourier",
}

# Eight-term Gaussian rest-duration curve (minutes per hour against clock
# hour) for Brahman females under positive control, as (a, b, c) triples.
REFERENCE_REST_CURVE = np.array([
    51.29, 2.823, 2.957,
    44.42, 24.19, 3.936,
    1.378e14, -40.24, 7.546,
    19.29, 13.55, 3.22,
    16.18, 19.06, 0.9367,
    19.25, 4.588, 0.5802,
    29.29, 20.39, 1.802,
    20.45, 9.812, 2.834,
])

# arities at which the four families were compared for the rest profile
TABLE_ARITIES = {"gaussian": 8, "sine": 8, "poly": 9, "fourier": 8}

FOURIER_W_BOUNDS = (2.0 * math.pi / 48.0, 2.0 * math.pi / 12.0)


@dataclass(frozen=True)
class CurveFamily:
    kind: str
    arity: int

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise MalformedParams(f"unknown curve family {self.kind!r}")
        if self.kind == "poly":
            if self.arity < 0:
                raise MalformedParams("polynomial degree must be >= 0")
        elif self.arity < 1:
            raise MalformedParams(f"{self.kind} needs at least one term")

    @property
    def n_params(self) -> int:
        if self.kind in ("gaussian", "sine"):
            return 3 * self.arity
        if self.kind == "poly":
            return self.arity + 1
        return 2 * self.arity + 2

    def __str__(self):
        return f"{self.kind}{self.arity}"


@dataclass
class FittedCurve:
    family: CurveFamily
    params: np.ndarray
    sse: float
    residual_variance: float
    converged: bool
    iterations: int = 0
    n_points: int = 0

    def __call__(self, x):
        return evaluate(self, x)

    def to_json(self) -> dict:
        return {
            "family": self.family.kind,
            "arity": self.family.arity,
            "params": [float(v) for v in self.params],
            "sse": float(self.sse),
            "residual_variance": float(self.residual_variance),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n_points": int(self.n_points),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "FittedCurve":
        return cls(CurveFamily(d["family"], int(d["arity"])), np.array(d["params"], dtype=float),
                   d["sse"], d["residual_variance"], d["converged"], d.get("iterations", 0),
                   d.get("n_points", 0))


def _check_params(family: CurveFamily, params: np.ndarray):
    if params.ndim != 1 or params.size != family.n_params:
        raise MalformedParams(f"{family} expects {family.n_params} params, got {params.size}")
    if not np.all(np.isfinite(params)):
        raise MalformedParams("parameters must be finite")
    if family.kind == "gaussian" and np.any(params[2::3] == 0):
        raise MalformedParams("Gaussian widths must be nonzero")
    if family.kind == "fourier" and params[-1] <= 0:
        raise MalformedParams("Fourier fundamental must be positive")


def _eval(kind: str, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    if kind == "gaussian":
        return kernels.gauss_eval_jac(params, x, False)[0]
    if kind == "sine":
        p = params.reshape(-1, 3)
        return np.sin(np.outer(x, p[:, 1]) + p[:, 2]) @ p[:, 0]
    if kind == "poly":
        return np.polynomial.polynomial.polyval(x, params)
    n = (params.size - 2) // 2
    return _fourier_design(x, params[-1], n) @ params[:-1]


def evaluate(curve: Union[FittedCurve, CurveFamily], x, params=None):
    """Evaluate a fitted curve (or a family with explicit params) at ``x`` hours."""
    if isinstance(curve, FittedCurve):
        family, params = curve.family, curve.params
    else:
        family = curve
    params = np.asarray(params, dtype=np.float64)
    _check_params(family, params)
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = _eval(family.kind, params, xs)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------- linear solves

def _qr_lstsq(A: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Column-equilibrated Householder QR least squares; raises on rank deficiency."""
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise SingularSystem("design matrix has an all-zero column")
    As = A / norms
    Q, R = np.linalg.qr(As, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() <= max(A.shape) * np.finfo(float).eps * diag.max() * 1e3:
        raise SingularSystem("rank-deficient linear least-squares system")
    coef = solve_triangular(R, Q.T @ y) / norms
    resid = A @ coef - y
    return coef, float(resid @ resid)


def _fourier_design(x: np.ndarray, w: float, n: int) -> np.ndarray:
    cols = [np.ones_like(x)]
    for i in range(1, n + 1):
        cols.append(np.cos(i * w * x))
        cols.append(np.sin(i * w * x))
    return np.column_stack(cols)


def _fit_poly(x, y, degree):
    A = np.vander(x, degree + 1, increasing=True)
    coef, sse = _qr_lstsq(A, y)
    return coef, sse, True, 0


def _fourier_sse(x, y, n, w):
    try:
        coef, sse = _qr_lstsq(_fourier_design(x, w, n), y)
    except SingularSystem:
        return None, math.inf
    return coef, sse


def _fit_fourier(x, y, n, grid_points=97, tol=1e-10):
    lo, hi = FOURIER_W_BOUNDS
    grid = np.linspace(lo, hi, grid_points)
    sses = np.array([_fourier_sse(x, y, n, w)[1] for w in grid])
    if not np.any(np.isfinite(sses)):
        raise SingularSystem("every candidate fundamental gives a singular Fourier system")
    k = int(np.argmin(sses))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = _fourier_sse(x, y, n, c)[1], _fourier_sse(x, y, n, d)[1]
    it = 0
    while (b - a) > tol * (abs(a) + abs(b)) and it < 200:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _fourier_sse(x, y, n, c)[1]
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _fourier_sse(x, y, n, d)[1]
    candidates = [(sses[k], grid[k]), (fc, c), (fd, d)]
    best_sse, best_w = min(candidates, key=lambda t: t[0])
    coef, sse = _fourier_sse(x, y, n, best_w)
    converged = (b - a) <= tol * (abs(a) + abs(b))
    return np.concatenate([coef, [best_w]]), sse, converged, it


# ---------------------------------------------------------------- nonlinear fits

def _local_maxima(x, y) -> list[int]:
    """Indices of local maxima (edges count), highest first, ties to lower x."""
    m = y.size
    peaks = []
    for i in range(m):
        left = y[i - 1] if i > 0 else -np.inf
        right = y[i + 1] if i < m - 1 else -np.inf
        if y[i] > left and y[i] >= right:
            peaks.append(i)
    peaks.sort(key=lambda i: (-y[i], x[i]))
    return peaks


def gaussian_initial(x, y, n) -> np.ndarray:
    """Peak-picking start: centers at the ``n`` largest local maxima.

    Widths are ``span/(2n)`` with ``span`` one day in hours, and amplitudes
    are the sample values at the centers.  When the profile has fewer than
    ``n`` local maxima, each remaining term is placed at the largest
    residual of the terms chosen so far, with that residual as amplitude.
    """
    span = 24.0
    width = span / (2.0 * n)
    p = []
    for i in _local_maxima(x, y)[:n]:
        p.extend([y[i], x[i], width])
    while len(p) < 3 * n:
        resid = y - kernels.gauss_eval_jac(np.array(p, dtype=float), x, False)[0] if p else y
        i = int(np.argmax(resid))
        p.extend([resid[i], x[i], width])
    return np.array(p, dtype=float)


def sine_initial(x, y, n, period=24.0) -> np.ndarray:
    """Harmonic start: frequencies 0, 1, ..., n-1 cycles per ``period``.

    The zero-frequency term carries the mean (phase pi/2).  Amplitudes and
    phases come from a linear fit at those fixed frequencies.
    """
    base = 2.0 * math.pi / period
    freqs = base * np.arange(n)
    cols = []
    for b in freqs:
        cols.append(np.sin(b * x))
        cols.append(np.cos(b * x))
    coef = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)[0]
    p = []
    for k, b in enumerate(freqs):
        s, c = coef[2 * k], coef[2 * k + 1]
        amp = math.hypot(s, c)
        phase = math.atan2(c, s)
        if amp == 0:
            amp = 1e-3
        p.extend([amp, b, phase])
    return np.array(p, dtype=float)


def _jitter(kind: str, p0: np.ndarray, rng: np.random.Generator, scale: float, span: float) -> np.ndarray:
    p = p0.reshape(-1, 3).copy()
    z = rng.standard_normal(p.shape)
    p[:, 0] *= 1.0 + scale * z[:, 0]
    if kind == "gaussian":
        p[:, 1] += scale * span * z[:, 1]
        p[:, 2] *= 1.0 + scale * z[:, 2]
        p[:, 2] = np.where(np.abs(p[:, 2]) < 1e-3, 1e-3, p[:, 2])
    else:
        p[:, 1] += scale * (2.0 * math.pi / span) * z[:, 1]
        p[:, 2] += scale * 2.0 * math.pi * z[:, 2]
    return p.ravel()


def _residual_fun(kind, x, y):
    if kind == "gaussian":
        def fun(p):
            f, J = kernels.gauss_eval_jac(p, x, True)
            return f - y, J
    else:
        def fun(p):
            q = p.reshape(-1, 3)
            arg = np.outer(x, q[:, 1]) + q[:, 2]
            s, c = np.sin(arg), np.cos(arg)
            J = np.empty((x.size, p.size))
            J[:, 0::3] = s
            J[:, 1::3] = q[:, 0] * c * x[:, None]
            J[:, 2::3] = q[:, 0] * c
            return s @ q[:, 0] - y, J
    return fun


def _gauss_valid(p):
    return bool(np.all(np.abs(p[2::3]) > 1e-9))


def _fit_nonlinear(kind, x, y, n, seed, restarts, jitter, max_iter):
    span = 24.0
    p0 = gaussian_initial(x, y, n) if kind == "gaussian" else sine_initial(x, y, n, period=24.0)
    rng = np.random.default_rng(seed)
    starts = [p0] + [_jitter(kind, p0, rng, jitter, span) for _ in range(restarts)]
    fun = _residual_fun(kind, x, y)
    valid = _gauss_valid if kind == "gaussian" else None
    best = None
    for start in starts:
        res = levenberg_marquardt(fun, start, max_iter=max_iter, valid=valid)
        if best is None or res.sse < best.sse:
            best = res
    return best.params, best.sse, best.converged, best.iterations


def fit(
    family: CurveFamily,
    x,
    y,
    seed: int = 0,
    *,
    restarts: int = 8,
    jitter: float = 0.1,
    max_iter: int = 500,
) -> FittedCurve:
    """Least-squares fit of one family to (x, y) points; NaN y values are skipped."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = np.isfinite(y) & np.isfinite(x)
    x, y = x[ok], y[ok]
    if x.size < family.n_params or x.size == 0:
        raise InsufficientPoints(f"{family} needs {family.n_params} points, have {x.size}")
    if family.kind == "poly":
        params, sse, conv, its = _fit_poly(x, y, family.arity)
    elif family.kind == "fourier":
        params, sse, conv, its = _fit_fourier(x, y, family.arity)
    else:
        params, sse, conv, its = _fit_nonlinear(family.kind, x, y, family.arity, seed, restarts, jitter, max_iter)
    return FittedCurve(family, np.asarray(params), float(sse), float(sse) / x.size, bool(conv), int(its), int(x.size))


@dataclass
class SelectionCell:
    family: CurveFamily
    curve: Optional[FittedCurve] = None
    error: Optional[str] = None


@dataclass
class SelectionTable:
    cells: list[SelectionCell]
    ranked: list[FittedCurve] = field(default_factory=list)

    @property
    def winner(self) -> Optional[FittedCurve]:
        return self.ranked[0] if self.ranked else None

    def rank_of(self, kind: str) -> Optional[int]:
        for i, c in enumerate(self.ranked):
            if c.family.kind == kind:
                return i
        return None


def model_selection(
    x,
    y,
    grid: Mapping[str, Sequence[int]],
    seed: int = 0,
    **fit_kwargs,
) -> SelectionTable:
    """Fit every (family, arity) cell; keep each family's best; rank families.

    A failing cell records its error and never aborts the table.
    """
    if not grid or not any(grid.values()):
        raise MalformedParams("empty arity grid")
    cells = []
    best: dict[str, FittedCurve] = {}
    for kind in FAMILIES:
        for arity in grid.get(kind, ()):
            fam = CurveFamily(kind, int(arity))
            try:
                curve = fit(fam, x, y, seed=seed, **fit_kwargs)
            except HerdTwinError as exc:
                cells.append(SelectionCell(fam, error=f"{type(exc).__name__}: {exc}"))
                continue
            cells.append(SelectionCell(fam, curve=curve))
            cur = best.get(kind)
            if cur is None or curve.residual_variance < cur.residual_variance:
                best[kind] = curve
    ranked = sorted(best.values(), key=lambda c: (c.residual_variance, FAMILIES.index(c.family.kind)))
    return SelectionTable(cells, ranked)


def write_selection_csv(table: SelectionTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "method", "family", "best_arity", "residual_variance", "sse", "converged"])
        for i, c in enumerate(table.ranked, start=1):
            w.writerow([i, FAMILY_LABELS[c.family.kind], c.family.kind, c.family.arity,
                        repr(c.residual_variance), repr(c.sse), c.converged])
    return path


def write_fit_json(curve: FittedCurve, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(curve.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
