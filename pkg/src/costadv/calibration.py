"""Expected calibration error and temperature scaling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import Network, forward_logits, probabilities

DEFAULT_BINS = 15
DEFAULT_SEARCH = (0.25, 4.0, 1e-3)
GRID_POINTS = 64


@dataclass(frozen=True)
class ReliabilityBins:
    counts: np.ndarray
    accuracy: np.ndarray  # 0 for empty bins
    confidence: np.ndarray  # 0 for empty bins

    @property
    def m_bins(self) -> int:
        return len(self.counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def rows(self):
        m = self.m_bins
        for i in range(m):
            acc, conf = float(self.accuracy[i]), float(self.confidence[i])
            yield {
                "bin_low": i / m,
                "bin_high": (i + 1) / m,
                "count": int(self.counts[i]),
                "accuracy": acc,
                "confidence": conf,
                "gap": acc - conf,
            }


def reliability_bins(confidences, correct, m_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    """Group predictions into bins ``((m-1)/M, m/M]`` by confidence."""
    conf = np.asarray(confidences, dtype=float).reshape(-1)
    ok = np.asarray(correct, dtype=float).reshape(-1)
    if conf.shape != ok.shape:
        raise ValidationError("confidences and correctness flags must have the same length")
    if m_bins < 1:
        raise ValidationError("need at least one bin")
    if np.any(conf <= 0.0) or np.any(conf > 1.0):
        raise ValidationError("confidences must lie in (0, 1]")
    # compare against the edges m/M directly; ceil(conf * M) misplaces values such as 0.7 * 10
    edges = np.arange(m_bins + 1) / m_bins
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, m_bins - 1)
    counts = np.bincount(idx, minlength=m_bins)
    safe = np.maximum(counts, 1)
    acc = np.bincount(idx, weights=ok, minlength=m_bins) / safe
    mean_conf = np.bincount(idx, weights=conf, minlength=m_bins) / safe
    return ReliabilityBins(counts, acc, mean_conf)


def ece(bins: ReliabilityBins) -> float:
    n = bins.n
    if n == 0:
        raise ValidationError("ECE of an empty set is undefined")
    return float(np.sum(bins.counts / n * np.abs(bins.accuracy - bins.confidence)))


def ece_from_logits(logits, labels, temperature: float = 1.0, m_bins: int = DEFAULT_BINS) -> float:
    return ece(logit_bins(logits, labels, temperature, m_bins))


def logit_bins(logits, labels, temperature: float = 1.0, m_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    p = probabilities(logits, temperature)
    return reliability_bins(p.max(axis=1), p.argmax(axis=1) == np.asarray(labels), m_bins)


@dataclass(frozen=True)
class CalibrationResult:
    t_star: float
    ece_before: float
    ece_after: float
    degenerate: bool = False  # validation labels contained a single class

    def to_json(self) -> dict:
        return {
            "t_star": self.t_star,
            "ece_before": self.ece_before,
            "ece_after": self.ece_after,
            "degenerate": self.degenerate,
        }


def _golden_section(f, lo, hi, resolution):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > resolution:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def fit_temperature_logits(logits, labels, m_bins: int = DEFAULT_BINS, search=DEFAULT_SEARCH) -> CalibrationResult:
    """Temperature minimising ECE of max-probability confidences.

    A log-spaced grid (plus T=1) locates the basin; golden-section search
    between the neighbouring grid points refines it to ``resolution``.
    """
    t_lo, t_hi, resolution = search
    if not 0 < t_lo < t_hi or resolution <= 0:
        raise ValidationError("temperature search needs 0 < t_lo < t_hi and resolution > 0")
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(logits) == 0:
        raise ValidationError("validation set is empty")

    def f(t):
        return ece_from_logits(logits, labels, t, m_bins)

    grid = np.unique(np.append(np.geomspace(t_lo, t_hi, GRID_POINTS), 1.0))
    scores = np.array([f(t) for t in grid])
    i = int(np.argmin(scores))
    best_t, best = float(grid[i]), float(scores[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    t, score = _golden_section(f, lo, hi, resolution)
    if score < best:
        best_t, best = float(t), float(score)
    return CalibrationResult(best_t, f(1.0), best, degenerate=len(np.unique(labels)) < 2)


def fit_temperature(net: Network, inputs, labels, m_bins: int = DEFAULT_BINS, search=DEFAULT_SEARCH) -> CalibrationResult:
    return fit_temperature_logits(forward_logits(net, np.atleast_2d(inputs)), labels, m_bins, search)


def write_reliability_csv(bins: ReliabilityBins, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["bin_low", "bin_high", "count", "accuracy", "confidence", "gap"], lineterminator="\n")
        w.writeheader()
        for row in bins.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
