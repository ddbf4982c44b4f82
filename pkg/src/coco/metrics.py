"""Binned calibration errors, Brier score and ROC AuC."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricsError, UndefinedAUCError

DEFAULT_BINS = 10


@dataclass(frozen=True)
class Binning:
    """Uniform bins [e_k, e_{k+1}) over [0, 1]; the last bin also holds 1.0."""

    bin_count: int = DEFAULT_BINS

    def __post_init__(self):
        if int(self.bin_count) < 1:
            raise MetricsError("bin_count must be >= 1")

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.bin_count + 1) / self.bin_count

    def assign(self, ms) -> np.ndarray:
        idx = np.searchsorted(self.edges, np.asarray(ms, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.bin_count - 1)


@dataclass(frozen=True)
class BinSummary:
    edges: np.ndarray
    count: np.ndarray
    conf: np.ndarray  # NaN for empty bins
    occ: np.ndarray   # NaN for empty bins
    total: int

    @property
    def nonempty(self) -> np.ndarray:
        return self.count > 0

    def rows(self):
        """(bin_lo, bin_hi, count, conf, occ) for every non-empty bin."""
        for k in np.flatnonzero(self.nonempty):
            yield (float(self.edges[k]), float(self.edges[k + 1]), int(self.count[k]),
                   float(self.conf[k]), float(self.occ[k]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count", "conf", "occ"])
            for lo, hi, n, conf, occ in self.rows():
                writer.writerow([repr(lo), repr(hi), n, repr(conf), repr(occ)])
        return path


def _inputs(ms, labels):
    ms = np.asarray(ms, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if ms.shape != labels.shape:
        raise MetricsError(f"length mismatch: {ms.size} confidences, {labels.size} labels")
    if ms.size == 0:
        raise MetricsError("no samples")
    return ms, labels.astype(float)


def _binning(b) -> Binning:
    if b is None:
        return Binning()
    if isinstance(b, int):
        return Binning(b)
    return b


def bin_summaries(ms, labels, b: Binning | int | None = None) -> BinSummary:
    ms, labels = _inputs(ms, labels)
    b = _binning(b)
    idx = b.assign(ms)
    count = np.bincount(idx, minlength=b.bin_count)
    conf_sum = np.bincount(idx, weights=ms, minlength=b.bin_count)
    occ_sum = np.bincount(idx, weights=labels, minlength=b.bin_count)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(count > 0, conf_sum / count, np.nan)
        occ = np.where(count > 0, occ_sum / count, np.nan)
    return BinSummary(b.edges, count, conf, occ, int(ms.size))


def ece_hat(ms, labels, b: Binning | int | None = None) -> float:
    s = bin_summaries(ms, labels, b)
    ne = s.nonempty
    return float(np.sum(s.count[ne] / s.total * np.abs(s.occ[ne] - s.conf[ne])))


def mce_hat(ms, labels, b: Binning | int | None = None) -> float:
    s = bin_summaries(ms, labels, b)
    ne = s.nonempty
    return float(np.max(np.abs(s.occ[ne] - s.conf[ne])))


def cce_hat(ms, labels, b: Binning | int | None = None) -> float:
    """Largest signed overconfidence conf - occ over non-empty bins (may be negative)."""
    s = bin_summaries(ms, labels, b)
    ne = s.nonempty
    return float(np.max(s.conf[ne] - s.occ[ne]))


def brier(ms, labels) -> float:
    ms, labels = _inputs(ms, labels)
    return float(np.mean((ms - labels) ** 2))


def roc_curve(ms, labels):
    """False/true positive rates with one threshold per distinct confidence."""
    ms, labels = _inputs(ms, labels)
    pos = labels > 0.5
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AuC needs at least one positive and one negative label")
    order = np.argsort(-ms, kind="mergesort")
    sorted_ms, sorted_pos = ms[order], pos[order]
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(~sorted_pos)
    # Keep the last index of every run of tied confidences.
    last = np.r_[np.flatnonzero(np.diff(sorted_ms) != 0), sorted_ms.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    return fpr, tpr


def auc(ms, labels) -> float:
    """Area under the ROC curve; ties contribute one half per pair."""
    fpr, tpr = roc_curve(ms, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


METRIC_NAMES = ("ECE", "MCE", "CCE", "Brier", "AuC")


def all_metrics(ms, labels, b: Binning | int | None = None) -> dict[str, float]:
    """All five table metrics; AuC is NaN when labels hold a single class."""
    try:
        area = auc(ms, labels)
    except UndefinedAUCError:
        area = float("nan")
    return {
        "ECE": ece_hat(ms, labels, b),
        "MCE": mce_hat(ms, labels, b),
        "CCE": cce_hat(ms, labels, b),
        "Brier": brier(ms, labels),
        "AuC": area,
    }
