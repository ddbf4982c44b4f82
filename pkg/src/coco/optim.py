"""Full-batch gradient descent with backtracking, and the weighted logistic loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateFitError


@dataclass(frozen=True)
class OptimizerSettings:
    tol: float = 1e-8          # gradient infinity norm
    max_iter: int = 10_000
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    precondition: str = "hessian"   # "hessian", "gram" or "none"

    def __post_init__(self):
        if self.precondition not in ("hessian", "gram", "none"):
            raise ValueError(f"unknown preconditioner {self.precondition!r}")


@dataclass(frozen=True)
class OptimizeResult:
    x: np.ndarray
    loss: float
    grad_norm: float
    iterations: int


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def weighted_logistic_loss(theta, X, labels, lam):
    """Mean of -(1-lam) a log p - lam (1-a) log(1-p), p = sigmoid(X @ theta); returns (loss, grad)."""
    s = X @ theta
    pos = labels
    loss = np.mean((1.0 - lam) * pos * _softplus(-s) + lam * (1.0 - pos) * _softplus(s))
    p = _sigmoid(s)
    dl_ds = -(1.0 - lam) * pos * (1.0 - p) + lam * (1.0 - pos) * p
    grad = X.T @ dl_ds / s.shape[0]
    return float(loss), grad


def weighted_logistic_hessian(theta, X, labels, lam):
    p = _sigmoid(X @ theta)
    w = ((1.0 - lam) * labels + lam * (1.0 - labels)) * p * (1.0 - p)
    return (X * w[:, None]).T @ X / X.shape[0]


def _inverse_cholesky_t(mat):
    """T with T @ T.T = inverse of ``mat`` (after a small ridge)."""
    n = mat.shape[0]
    ridge = 1e-12 * max(1.0, float(np.trace(mat)) / n)
    L = np.linalg.cholesky(mat + ridge * np.eye(n))
    return np.linalg.inv(L).T


def gradient_descent(fun, x0, settings: OptimizerSettings = OptimizerSettings(), transform=None):
    """Minimise a smooth convex function given ``fun(x) -> (loss, grad)``.

    With ``transform`` T the iteration runs on y where x = T @ y, i.e. plain
    gradient descent in rescaled coordinates; convergence is always judged on
    the gradient in the original coordinates. A callable ``transform(x)`` is
    re-evaluated every iteration (a variable metric) and each line search then
    restarts from ``settings.initial_step``.
    """
    variable = callable(transform)
    T = np.eye(len(x0)) if transform is None or variable else np.asarray(transform, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    loss, grad = fun(x)
    step = settings.initial_step
    for it in range(settings.max_iter + 1):
        if variable:
            T = transform(x)
            step = settings.initial_step
        gnorm = float(np.max(np.abs(grad)))
        if not np.isfinite(gnorm):
            raise ConvergenceError("non-finite gradient", gnorm)
        if gnorm < settings.tol:
            return OptimizeResult(x, loss, gnorm, it)
        if it == settings.max_iter:
            break
        direction = T @ (T.T @ grad)
        slope = float(grad @ direction)
        while True:
            cand = x - step * direction
            new_loss, new_grad = fun(cand)
            if np.isfinite(new_loss) and new_loss <= loss - settings.armijo * step * slope:
                if new_loss < loss or np.max(np.abs(new_grad)) < gnorm:
                    break
            elif np.isfinite(new_loss) and abs(new_loss - loss) <= 64 * np.finfo(float).eps * max(1.0, abs(loss)):
                # Loss differences are at rounding level here; fall back to
                # requiring progress on the gradient itself.
                if np.max(np.abs(new_grad)) < gnorm:
                    break
            step *= settings.shrink
            if step < 1e-20:
                raise ConvergenceError("line search failed", gnorm)
        x, loss, grad = cand, new_loss, new_grad
        step = min(step * 2.0, 1e6)
    raise ConvergenceError(f"no convergence within {settings.max_iter} iterations", gnorm)


def fit_weighted_logistic(X, labels, lam, theta0, settings: OptimizerSettings = OptimizerSettings()):
    """Minimise the weighted cross-entropy of sigmoid(X @ theta) against binary labels."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if labels.size < 2:
        raise DegenerateFitError("need at least 2 samples")
    if labels.min() == labels.max():
        raise DegenerateFitError("labels contain a single class")
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lambda must lie in [0, 1]")
    transform = None
    if settings.precondition == "gram":
        # Inverse Cholesky factor of the feature second-moment matrix whitens
        # the problem so gradient steps are well scaled in every direction.
        transform = _inverse_cholesky_t(X.T @ X / X.shape[0])
    elif settings.precondition == "hessian":
        # Saturated monitors make the loss curvature far from X'X, so rescale
        # by the local Hessian instead (damped Newton steps).
        transform = lambda th: _inverse_cholesky_t(weighted_logistic_hessian(th, X, labels, lam))  # noqa: E731
    return gradient_descent(lambda th: weighted_logistic_loss(th, X, labels, lam), theta0, settings, transform)
