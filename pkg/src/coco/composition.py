"""Composition functions mapping monitor confidences to one for a conjunction.

All functions take monitors on the last axis, so a single vector (n,) or a
sample matrix (N, n) both work.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CocoError, DegenerateFitError
from .optim import OptimizerSettings, fit_weighted_logistic

VARIANCE_FLOOR = 1e-6
BAYES_PRIOR = 0.5
BAYES_BINS = 10
BAYES_SMOOTHING = 1.0
BAYES_RATIO_CLIP = (1e-3, 1e3)

COMPOSITIONS = ("product", "weighted", "power", "logreg", "bayes")


def _monitors(ms) -> np.ndarray:
    ms = np.asarray(ms, dtype=float)
    if ms.ndim == 0 or ms.shape[-1] == 0:
        raise CocoError("composition needs at least one monitor value")
    return ms


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def product(ms):
    return _scalar(np.prod(_monitors(ms), axis=-1))


def power_product(ms):
    """(prod m_i) ** n for n monitors."""
    ms = _monitors(ms)
    return _scalar(np.prod(ms, axis=-1) ** ms.shape[-1])


@dataclass(frozen=True)
class WeightVector:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise CocoError(f"weights must be non-negative and sum to 1, got {self.weights}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    def __len__(self):
        return len(self.weights)

    def restrict(self, indices) -> "WeightVector":
        """Renormalised weights of a subset of monitors."""
        w = np.asarray(self.weights)[list(indices)]
        total = w.sum()
        w = w / total if total > 0 else np.full(len(w), 1.0 / len(w))
        w[-1] = 1.0 - w[:-1].sum()
        return WeightVector(tuple(w))


def inverse_variance_weights(variances, floor: float = VARIANCE_FLOOR) -> WeightVector:
    v = np.asarray(variances, dtype=float)
    if v.ndim != 1 or v.size == 0 or (v < 0).any():
        raise CocoError(f"variances must be non-negative, got {variances}")
    inv = 1.0 / np.maximum(v, floor)
    w = inv / inv.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return WeightVector(tuple(w))


def weighted_average(ms, w: WeightVector):
    ms = _monitors(ms)
    if ms.shape[-1] != len(w):
        raise CocoError(f"{ms.shape[-1]} monitor values but {len(w)} weights")
    out = ms @ np.asarray(w.weights)
    # Keep the convex combination inside [min, max] despite rounding.
    return _scalar(np.clip(out, ms.min(axis=-1), ms.max(axis=-1)))


# ------------------------------------------------------------------ logistic


@dataclass(frozen=True)
class LogRegParams:
    intercept: float
    coefficients: tuple[float, ...]
    lam: float = 0.5

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coefficients": list(self.coefficients), "lambda": self.lam}

    @classmethod
    def from_dict(cls, raw) -> "LogRegParams":
        return cls(float(raw["intercept"]), tuple(float(x) for x in raw["coefficients"]), float(raw["lambda"]))


def logreg_fit(ms, labels, lam: float = 0.5, opt: OptimizerSettings = OptimizerSettings()) -> LogRegParams:
    """Weighted cross-entropy fit of sigmoid(w0 + sum w_i m_i) to conjunction labels."""
    ms = np.asarray(ms, dtype=float)
    if ms.ndim == 1:
        ms = ms[:, None]
    X = np.column_stack([np.ones(ms.shape[0]), ms])
    res = fit_weighted_logistic(X, labels, lam, np.zeros(X.shape[1]), opt)
    return LogRegParams(float(res.x[0]), tuple(float(x) for x in res.x[1:]), float(lam))


def logreg_apply(params: LogRegParams, ms):
    ms = _monitors(ms)
    z = params.intercept + ms @ np.asarray(params.coefficients)
    return _scalar(np.exp(-np.logaddexp(0.0, -z)))


# --------------------------------------------------------------------- Bayes


@dataclass(frozen=True)
class JointHistogram:
    """Smoothed joint histograms of monitor outputs, overall and given the conjunction."""

    bins: int
    conditional: np.ndarray   # raw counts on samples where the conjunction holds
    unconditional: np.ndarray  # raw counts on all samples
    smoothing: float = BAYES_SMOOTHING

    def __post_init__(self):
        if (self.conditional < 0).any() or (self.conditional > self.unconditional).any():
            raise CocoError("conditional counts must be within [0, unconditional]")

    @property
    def n_monitors(self) -> int:
        return self.unconditional.ndim

    def cells(self, ms) -> tuple:
        ms = np.asarray(ms, dtype=float)
        idx = np.clip(np.floor(ms * self.bins).astype(int), 0, self.bins - 1)
        return tuple(idx[..., i] for i in range(self.n_monitors))

    def ratio(self, ms):
        """Smoothed density ratio P(m | conjunction) / P(m)."""
        cells = self.cells(ms)
        k = self.smoothing
        n_cells = self.unconditional.size
        cond = (self.conditional[cells] + k) / (self.conditional.sum() + k * n_cells)
        uncond = (self.unconditional[cells] + k) / (self.unconditional.sum() + k * n_cells)
        return cond / uncond

    def to_dict(self) -> dict:
        return {"bins": self.bins, "smoothing": self.smoothing,
                "conditional": self.conditional.tolist(), "unconditional": self.unconditional.tolist()}

    @classmethod
    def from_dict(cls, raw) -> "JointHistogram":
        return cls(int(raw["bins"]), np.asarray(raw["conditional"], dtype=float),
                   np.asarray(raw["unconditional"], dtype=float), float(raw["smoothing"]))


def bayes_fit(ms, labels, bins: int = BAYES_BINS, smoothing: float = BAYES_SMOOTHING) -> JointHistogram:
    ms = np.asarray(ms, dtype=float)
    if ms.ndim == 1:
        ms = ms[:, None]
    if bins < 2:
        raise CocoError("need at least 2 bins per dimension")
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if labels.size != ms.shape[0]:
        raise CocoError("length mismatch between monitor samples and labels")
    if labels.size and (labels.all() or not labels.any()):
        raise DegenerateFitError("labels contain a single class")
    _check_unit(ms)
    n = ms.shape[1]
    idx = np.clip(np.floor(ms * bins).astype(int), 0, bins - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (bins,) * n)
    total = np.bincount(flat, minlength=bins**n).reshape((bins,) * n).astype(float)
    cond = np.bincount(flat[labels], minlength=bins**n).reshape((bins,) * n).astype(float)
    return JointHistogram(bins, cond, total, float(smoothing))


def _check_unit(ms):
    if ms.size and (np.isnan(ms).any() or ms.min() < 0.0 or ms.max() > 1.0):
        raise CocoError("monitor values must lie in [0, 1]")


def bayes_step(hist: JointHistogram, prior, ms, ratio_clip=BAYES_RATIO_CLIP):
    """One sequential update f_{t+1} = clamp(f_t * ratio(m_t), 0, 1)."""
    ms = np.asarray(ms, dtype=float)
    _check_unit(ms)
    r = np.clip(hist.ratio(ms), *ratio_clip)
    return _scalar(np.clip(np.asarray(prior, dtype=float) * r, 0.0, 1.0))


def bayes_filter(hist: JointHistogram, ms, trace_ids, prior: float = BAYES_PRIOR, ratio_clip=BAYES_RATIO_CLIP):
    """Run bayes_step along each trace in row order, resetting the prior at every new trace.

    Each output is the posterior after absorbing that row's observation.
    """
    ms = np.asarray(ms, dtype=float)
    _check_unit(ms)
    trace_ids = np.asarray(trace_ids)
    r = np.clip(hist.ratio(ms), *ratio_clip)
    out = np.empty(r.shape[0])
    f = prior
    prev = None
    for i in range(r.shape[0]):
        if trace_ids[i] != prev:
            f = prior
            prev = trace_ids[i]
        f = min(max(f * r[i], 0.0), 1.0)
        out[i] = f
    return out


def dumps_params(obj) -> str:
    if isinstance(obj, WeightVector):
        return json.dumps({"weights": list(obj.weights)})
    return json.dumps(obj.to_dict())
