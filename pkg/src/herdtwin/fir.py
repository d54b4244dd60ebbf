"""Linear-phase FIR low-pass denoising of hourly series."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import HOURS_PER_DAY, HourlySeries
from .errors import IncompleteDay, InvalidCutoff, InvalidLength, SeriesHasGaps, SeriesTooShort


class Window(enum.Enum):
    Rectangular = "rectangular"
    Hamming = "hamming"

    @classmethod
    def parse(cls, text) -> "Window":
        if isinstance(text, Window):
            return text
        return cls(str(text).strip().lower())


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    normalized_cutoff: float
    window: Window

    @property
    def length(self) -> int:
        return int(self.taps.size)

    @property
    def center(self) -> int:
        return (self.length - 1) // 2


def design_lowpass(length: int = 5, normalized_cutoff: float = 0.4, window=Window.Hamming) -> FirFilter:
    """Windowed-sinc low-pass taps, symmetric and scaled to unity DC gain.

    ``normalized_cutoff`` is a fraction of the Nyquist frequency.
    """
    if not isinstance(length, (int, np.integer)) or length < 1:
        raise InvalidLength(f"filter length must be a positive integer, got {length!r}")
    if not (0.0 < normalized_cutoff < 1.0):
        raise InvalidCutoff(f"cutoff must lie in (0, 1), got {normalized_cutoff!r}")
    window = Window.parse(window)
    n = np.arange(length)
    m = n - (length - 1) / 2.0
    h = normalized_cutoff * np.sinc(normalized_cutoff * m)
    if window is Window.Hamming and length > 1:
        h = h * (0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1)))
    h = 0.5 * (h + h[::-1])
    h = h / h.sum()
    taps = np.array(h)
    taps.setflags(write=False)
    return FirFilter(taps, float(normalized_cutoff), window)


def frequency_response(fir: FirFilter, n_points: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Complex response on ``n_points`` frequencies in [0, pi] (rad/sample)."""
    w = np.linspace(0.0, np.pi, n_points)
    k = np.arange(fir.length)
    return w, np.exp(-1j * np.outer(w, k)) @ fir.taps


def resample_gap_free(series: HourlySeries) -> HourlySeries:
    """Fill dropped hours by linear interpolation; filled points are flagged in ``imputed``."""
    if len(series) == 0 or series.is_gap_free:
        imputed = series.imputed if series.imputed is not None else np.zeros(len(series), bool)
        return series.replace(imputed=imputed)
    grid = np.arange(series.serials[0], series.serials[-1] + 1)
    minutes = np.interp(grid, series.serials, series.minutes)
    imputed = ~np.isin(grid, series.serials)
    support = None
    if series.support is not None:
        support = np.zeros(grid.size, np.int64)
        support[np.searchsorted(grid, series.serials)] = series.support
    return series.replace(serials=grid, minutes=minutes, imputed=imputed, support=support)


def apply_array(fir: FirFilter, x: np.ndarray, clamp: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < fir.length:
        raise SeriesTooShort(f"series of length {x.size} shorter than filter length {fir.length}")
    y = kernels.fir_apply(x, fir.taps)
    if clamp:
        y = np.clip(y, 0.0, 60.0)
    return y


def apply(fir: FirFilter, series: HourlySeries, clamp: bool = True) -> HourlySeries:
    """Zero-phase (center-compensated) filtering with replicated edges."""
    if not series.is_gap_free:
        raise SeriesHasGaps("resample the series onto a gap-free grid before filtering")
    return series.replace(minutes=apply_array(fir, series.minutes, clamp=clamp))


def single_cycle(series: HourlySeries, day_index: int) -> np.ndarray:
    """The 24 hourly values of day ``day_index`` (1-based from the epoch day) in clock order."""
    if day_index < 1:
        raise IncompleteDay(f"day index must be >= 1, got {day_index}")
    first = (day_index - 1) * HOURS_PER_DAY + 1 - series.start_hour
    wanted = np.arange(first, first + HOURS_PER_DAY)
    pos = np.searchsorted(series.serials, wanted)
    if wanted[0] < 1 or pos[-1] >= len(series) or np.any(series.serials[np.minimum(pos, len(series) - 1)] != wanted):
        raise IncompleteDay(f"day {day_index} is not fully present")
    return series.minutes[pos].copy()
