"""Cross-correlation histograms and windowed post-selection."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tags import TimeTagStream


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Counts of t_b - t_a in bins [lo + k w, lo + (k+1) w)."""

    bin_width_ps: float
    range_ps: tuple[float, float]
    counts: np.ndarray
    center_offset_ps: float = 0.0

    @property
    def edges(self) -> np.ndarray:
        lo = self.range_ps[0]
        return lo + self.bin_width_ps * np.arange(self.counts.size + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return (e[:-1] + e[1:]) / 2

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def peak_center(self) -> float:
        """Center of the fullest bin (first one on ties)."""
        return float(self.centers[int(np.argmax(self.counts))])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_center_ps", "count"])
            for c, n in zip(self.centers.tolist(), self.counts.tolist()):
                w.writerow([repr(c), n])


def _times(x) -> np.ndarray:
    return x.times if isinstance(x, TimeTagStream) else np.asarray(x, dtype=np.int64)


def cross_correlate(a, b, bin_width_ps: float = 100.0, range_ps: tuple[float, float] = (-5000.0, 5000.0),
                    center_offset_ps: float = 0.0) -> CoincidenceHistogram:
    """Histogram of all pairwise delays t_b - t_a falling inside ``range_ps``.

    ``a`` and ``b`` are time-ordered streams (or sorted arrays of ps tags).
    Each a-tag's partners are located by binary search into b, so the cost is
    dominated by the number of matches.
    """
    lo, hi = float(range_ps[0]), float(range_ps[1])
    if not hi > lo:
        raise ValueError(f"inverted histogram range {range_ps}")
    if bin_width_ps <= 0:
        raise ValueError("bin width must be positive")
    ta, tb = _times(a), _times(b)
    n_bins = int(np.ceil((hi - lo) / bin_width_ps - 1e-9))
    counts = np.zeros(n_bins, dtype=np.int64)
    if ta.size and tb.size:
        start = np.searchsorted(tb, ta + lo, side="left")
        stop = np.searchsorted(tb, ta + hi, side="left")
        n_match = stop - start
        total = int(n_match.sum())
        if total:
            owner = np.repeat(np.arange(ta.size), n_match)
            # position of each match within its a-tag's run of partners
            offs = np.arange(total) - np.repeat(np.cumsum(n_match) - n_match, n_match)
            dt = tb[start[owner] + offs] - ta[owner]
            k = np.floor((dt - lo) / bin_width_ps).astype(np.int64)
            k = k[(k >= 0) & (k < n_bins)]
            counts = np.bincount(k, minlength=n_bins).astype(np.int64)
    return CoincidenceHistogram(float(bin_width_ps), (lo, hi), counts, float(center_offset_ps))


def centered_range(center_ps: float, half_span_ps: float, bin_width_ps: float) -> tuple[float, float]:
    """Range whose bins are centered on ``center_ps`` and cover at least +-half_span."""
    k = int(np.ceil(half_span_ps / bin_width_ps - 0.5))
    return center_ps - (k + 0.5) * bin_width_ps, center_ps + (k + 0.5) * bin_width_ps


def window_counts(h: CoincidenceHistogram, center_ps: float, width_ps: float) -> int:
    """Sum of bins whose center lies in [center - width/2, center + width/2]."""
    lo, hi = center_ps - width_ps / 2, center_ps + width_ps / 2
    if width_ps < 0 or lo < h.range_ps[0] or hi > h.range_ps[1]:
        raise ValueError(f"window [{lo}, {hi}] lies outside the histogram range {h.range_ps}")
    c = h.centers
    eps = 1e-9 * max(1.0, abs(center_ps))
    inside = (c >= lo - eps) & (c <= hi + eps)
    return int(h.counts[inside].sum())


def accidental_rate(rate_s: float, rate_i: float, window_ps: float) -> float:
    """Accidental coincidences per second for uncorrelated streams."""
    if rate_s < 0 or rate_i < 0 or window_ps < 0:
        raise ValueError("rates and window must be nonnegative")
    return rate_s * rate_i * window_ps * 1e-12
