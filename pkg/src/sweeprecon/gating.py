"""Respiratory gating: pick the exhale-phase frames of a sweep.

The probe pose's anteroposterior coordinate traces the breathing
waveform. Local minima of that signal mark exhale; frames whose signal
value sits within a small band above a minimum (inside that breath's
basin) are kept for training. Breath-hold sweeps have no credible
minima, in which case every frame is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BAND_FRAC = 0.1
DEFAULT_PROMINENCE_FRAC = 0.2
# below this prominence a dip is pose jitter, not a breath
DEFAULT_PROMINENCE_FLOOR_MM = 1.0
FALLBACK_SEPARATION_FRAMES = 5


@dataclass(frozen=True)
class GatingResult:
    ap_signal: np.ndarray
    minima_indices: np.ndarray
    selected_indices: np.ndarray
    prominence_mm: float
    separation_frames: int
    band_mm: float

    def __post_init__(self):
        for name in ("ap_signal", "minima_indices", "selected_indices"):
            arr = np.asarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def extract_ap_signal(sweep) -> np.ndarray:
    """Per-frame anteroposterior pose coordinate, acquisition order."""
    return sweep.ap_signal()


def find_local_minima(
    signal, min_prominence_mm: float, min_separation_frames: int = 1
) -> np.ndarray:
    """Indices of prominent local minima, plateau-aware.

    A run of equal values lower than both neighboring runs is a minimum,
    reported at its first index. Prominence is the rise from the minimum
    to the lower of the highest signal values on each side. When two
    minima sit closer than min_separation_frames, the deeper one wins
    (ties to the earlier index).
    """
    signal = np.asarray(signal, dtype=np.float64)
    if min_prominence_mm < 0:
        raise ValueError("min_prominence_mm must be >= 0")
    if min_separation_frames < 1:
        raise ValueError("min_separation_frames must be >= 1")
    n = signal.size
    if n < 3:
        return np.array([], dtype=int)

    change = np.r_[True, signal[1:] != signal[:-1]]
    run_starts = np.flatnonzero(change)
    run_vals = signal[run_starts]
    candidates = [
        int(run_starts[j])
        for j in range(1, len(run_vals) - 1)
        if run_vals[j] < run_vals[j - 1] and run_vals[j] < run_vals[j + 1]
    ]

    prominent = []
    for i in candidates:
        enclosing = min(signal[: i + 1].max(), signal[i:].max())
        if enclosing - signal[i] >= min_prominence_mm:
            prominent.append(i)

    chosen: list[int] = []
    for i in sorted(prominent, key=lambda k: (signal[k], k)):
        if all(abs(i - j) >= min_separation_frames for j in chosen):
            chosen.append(i)
    return np.array(sorted(chosen), dtype=int)


def select_exhale_frames(sweep, minima, band_mm: float) -> np.ndarray:
    """Frames within band_mm above a minimum, inside that breath's basin.

    A basin spans from the nearest highest point on the left of the
    minimum to the nearest highest point on its right; the outermost
    basins extend to the signal ends. With no minima at all there is no
    breathing structure to gate on, so every frame is returned.
    """
    signal = np.asarray(extract_ap_signal(sweep), dtype=np.float64)
    minima = np.asarray(minima, dtype=int)
    n = signal.size
    if minima.size == 0:
        return np.arange(n)
    selected: set[int] = set()
    for pos, m in enumerate(minima):
        m = int(m)
        prefix = signal[: m + 1]
        suffix = signal[m:]
        left = int(np.flatnonzero(prefix == prefix.max())[-1])
        right = m + int(np.flatnonzero(suffix == suffix.max())[0])
        if pos == 0:
            left = 0
        if pos == len(minima) - 1:
            right = n - 1
        inside = np.arange(left, right + 1)
        selected.update(inside[signal[inside] <= signal[m] + band_mm].tolist())
    return np.array(sorted(selected), dtype=int)


def estimate_period_frames(signal, fallback: int = FALLBACK_SEPARATION_FRAMES) -> int:
    """Dominant period by autocorrelation; fallback when aperiodic."""
    x = np.asarray(signal, dtype=np.float64)
    x = x - x.mean()
    n = x.size
    if n < 4 or not x.any():
        return fallback
    ac = np.correlate(x, x, mode="full")[n - 1 :]
    best_lag, best_val = 0, 0.0
    for lag in range(1, n - 1):
        if ac[lag] > ac[lag - 1] and ac[lag] >= ac[lag + 1] and ac[lag] > 0:
            if ac[lag] > best_val:
                best_lag, best_val = lag, ac[lag]
    return best_lag if best_lag > 0 else fallback


def gate_sweep(
    sweep,
    band_frac: float = DEFAULT_BAND_FRAC,
    prominence_frac: float = DEFAULT_PROMINENCE_FRAC,
    prominence_floor_mm: float = DEFAULT_PROMINENCE_FLOOR_MM,
    min_separation_frames: int | None = None,
    band_mm: float | None = None,
) -> GatingResult:
    """Full gating with data-derived defaults.

    Prominence and band default to fractions of the observed signal
    peak-to-peak; separation defaults to half the dominant period.
    """
    signal = np.asarray(extract_ap_signal(sweep), dtype=np.float64)
    p2p = float(signal.max() - signal.min()) if signal.size else 0.0
    prominence = max(prominence_frac * p2p, prominence_floor_mm)
    if min_separation_frames is None:
        min_separation_frames = max(1, estimate_period_frames(signal) // 2)
    if band_mm is None:
        band_mm = band_frac * p2p
    minima = find_local_minima(signal, prominence, min_separation_frames)
    selected = select_exhale_frames(sweep, minima, band_mm)
    return GatingResult(
        ap_signal=signal,
        minima_indices=minima,
        selected_indices=selected,
        prominence_mm=prominence,
        separation_frames=int(min_separation_frames),
        band_mm=float(band_mm),
    )
