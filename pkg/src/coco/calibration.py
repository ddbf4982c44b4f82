"""Platt scaling with the conservatism-weighted cross-entropy objective.

The calibrated confidence is ``1 / (1 + exp(c * LO(m) + d))`` with
``LO(m) = log(m / (1 - m))``. Parameters are fitted by minimising::

    -sum_j (1 - lam) a_j log m'_j + lam (1 - a_j) log(1 - m'_j)

so lam = 0.5 is standard Platt scaling and larger lam punishes confident
positives on negative samples harder, i.e. overconfidence.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .optim import OptimizerSettings, fit_weighted_logistic, weighted_logistic_loss

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class CalibrationParams:
    c: float = -1.0
    d: float = 0.0
    lam: float = 0.5

    def to_json(self) -> str:
        return json.dumps({"c": self.c, "d": self.d, "lambda": self.lam})

    @classmethod
    def from_json(cls, text: str) -> "CalibrationParams":
        raw = json.loads(text)
        return cls(float(raw["c"]), float(raw["d"]), float(raw["lambda"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationParams":
        return cls.from_json(Path(path).read_text())


IDENTITY = CalibrationParams(-1.0, 0.0, 0.5)


def log_odds(m, eps: float = DEFAULT_EPS):
    """log(m / (1 - m)) after clipping m into [eps, 1 - eps]."""
    if not (0.0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 0.5)")
    m = np.clip(np.asarray(m, dtype=float), eps, 1.0 - eps)
    out = np.log(m) - np.log1p(-m)
    return float(out) if out.ndim == 0 else out


def platt_apply(p: CalibrationParams, m, eps: float = DEFAULT_EPS):
    z = p.c * np.asarray(log_odds(m, eps)) + p.d
    out = np.exp(-np.logaddexp(0.0, z))
    return float(out) if out.ndim == 0 else out


def _design(ms, eps):
    x = np.atleast_1d(np.asarray(log_odds(ms, eps), dtype=float))
    # sigmoid(s) with s = -(c x + d)  ->  theta = (c, d), features (-x, -1)
    return np.column_stack([-x, -np.ones_like(x)])


def platt_loss(params: CalibrationParams, ms, labels, eps: float = DEFAULT_EPS):
    """Objective (sum over samples) and its gradient with respect to (c, d)."""
    X = _design(ms, eps)
    labels = np.asarray(labels, dtype=float)
    loss, grad = weighted_logistic_loss(np.array([params.c, params.d]), X, labels, params.lam)
    n = X.shape[0]
    return loss * n, grad * n


def platt_fit(ms, labels, lam: float = 0.5, opt: OptimizerSettings = OptimizerSettings(),
              eps: float = DEFAULT_EPS) -> CalibrationParams:
    """Fit (c, d) starting from the identity transform.

    Raises DegenerateFitError for single-class labels and ConvergenceError if
    the gradient tolerance is not reached within ``opt.max_iter`` iterations.
    """
    result = fit_weighted_logistic(_design(ms, eps), labels, lam, np.array([IDENTITY.c, IDENTITY.d]), opt)
    c, d = result.x
    return CalibrationParams(float(c), float(d), float(lam))


def params_to_dict(p: CalibrationParams) -> dict:
    out = asdict(p)
    out["lambda"] = out.pop("lam")
    return out
