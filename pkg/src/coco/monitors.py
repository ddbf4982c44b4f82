"""Run-time assumption monitors.

- ``mc_monitor_*``: Monte-Carlo samples of initial condition and measurement
  parameters, reweighted by how well their noise-free trajectories explain
  the observations. Confidence is the weight on samples inside the
  assumption region.
- ``pf_monitor_*``: a bootstrap particle filter over the current state with
  systematic resampling; confidence is the weight on particles inside a
  current-state predicate.
- ``invalidation_monitor``: grid search for model parameters that explain a
  short window of observations within a tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import mountain_car as mc
from .errors import MonitorConfigError

# ------------------------------------------------------------------ predicates


@dataclass(frozen=True)
class BoxPredicate:
    """Union of closed axis-aligned boxes inside a declared range box."""

    lows: np.ndarray    # (K, D)
    highs: np.ndarray   # (K, D)
    ranges: tuple[tuple[float, float], ...]

    def __post_init__(self):
        lows = np.asarray(self.lows, dtype=float).reshape(-1, len(self.ranges))
        highs = np.asarray(self.highs, dtype=float).reshape(-1, len(self.ranges))
        r = np.asarray(self.ranges, dtype=float)
        tol = 1e-12
        if (lows > highs).any() or (lows < r[:, 0] - tol).any() or (highs > r[:, 1] + tol).any():
            raise MonitorConfigError("boxes must be valid and lie inside the declared ranges")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @property
    def dim(self) -> int:
        return len(self.ranges)

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, self.dim)
        inside = np.zeros(flat.shape[0], dtype=bool)
        for lo, hi in zip(self.lows, self.highs):
            inside |= np.all((flat >= lo) & (flat <= hi), axis=1)
        return inside.reshape(pts.shape[:-1])

    __call__ = contains


@dataclass(frozen=True)
class GridRegion:
    """Union of cells of a regular grid over a range box.

    Cells are half-open [lo, hi) except the last along each axis, which is
    closed, so every point of the range box belongs to exactly one cell.
    """

    ranges: tuple[tuple[float, float], ...]
    cells: np.ndarray  # boolean, one axis per dimension

    @property
    def resolution(self) -> tuple[int, ...]:
        return tuple(self.cells.shape)

    @property
    def dim(self) -> int:
        return len(self.ranges)

    def edges(self, axis: int) -> np.ndarray:
        lo, hi = self.ranges[axis]
        return np.linspace(lo, hi, self.cells.shape[axis] + 1)

    def cell_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Per-point cell indices (..., D) and a mask of points inside the range box."""
        pts = np.asarray(points, dtype=float)
        idx = np.empty(pts.shape, dtype=np.int64)
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for a in range(self.dim):
            e = self.edges(a)
            x = pts[..., a]
            inside &= (x >= e[0]) & (x <= e[-1])
            idx[..., a] = np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(e) - 2)
        return idx, inside

    def contains(self, points) -> np.ndarray:
        idx, inside = self.cell_index(points)
        return inside & self.cells[tuple(idx[..., a] for a in range(self.dim))]

    __call__ = contains

    def to_boxes(self) -> BoxPredicate:
        on = np.argwhere(self.cells)
        lows = np.empty((len(on), self.dim))
        highs = np.empty((len(on), self.dim))
        for a in range(self.dim):
            e = self.edges(a)
            lows[:, a] = e[on[:, a]]
            highs[:, a] = e[on[:, a] + 1]
        return BoxPredicate(lows, highs, self.ranges)

    @property
    def fraction(self) -> float:
        return float(self.cells.mean())

    def to_dict(self) -> dict:
        return {"ranges": [list(r) for r in self.ranges], "cells": self.cells.astype(int).tolist()}

    @classmethod
    def from_dict(cls, raw) -> "GridRegion":
        return cls(tuple(tuple(float(x) for x in r) for r in raw["ranges"]), np.asarray(raw["cells"], dtype=bool))


# --------------------------------------------------------- Monte-Carlo monitor

MC_PRIOR_RANGES = (mc.P0_RANGE, mc.C_RANGE, mc.D_RANGE)
DEFAULT_KERNEL_STD = (2 * mc.PROCESS_NOISE_STD[0], 2 * mc.PROCESS_NOISE_STD[1])


@dataclass
class MCMonitorState:
    """Samples of (p0, c, d) with normalised weights and their simulated states."""

    samples: np.ndarray          # (M, 3)
    weights: np.ndarray          # (M,), sums to 1
    p: np.ndarray                # (M,) simulated positions at the current step
    v: np.ndarray
    steps: int = 0               # observations absorbed so far
    degenerate: bool = False
    log_weights: np.ndarray = field(default=None, repr=False)
    _membership: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.log_weights is None:
            with np.errstate(divide="ignore"):
                self.log_weights = np.log(self.weights)


def mc_monitor_init(ranges=MC_PRIOR_RANGES, n_samples: int = 1000, seed=None) -> MCMonitorState:
    """Uniform samples over ``ranges`` (p0, c, d) with equal weights; v0 = 0."""
    if n_samples < 1:
        raise MonitorConfigError("need at least one sample")
    r = np.asarray(ranges, dtype=float)
    if r.ndim != 2 or r.shape[1] != 2 or (r[:, 0] > r[:, 1]).any():
        raise MonitorConfigError(f"invalid ranges {ranges}")
    rng = seed.generator() if hasattr(seed, "generator") else np.random.default_rng(seed)
    samples = r[:, 0] + (r[:, 1] - r[:, 0]) * rng.random((n_samples, r.shape[0]))
    w = np.full(n_samples, 1.0 / n_samples)
    return MCMonitorState(samples, w, samples[:, 0].copy(), np.zeros(n_samples))


def _normalise_log(logw):
    top = np.max(logw)
    if not np.isfinite(top):
        return None
    w = np.exp(logw - top)
    return w / w.sum()


def mc_monitor_update(state: MCMonitorState, observation, action=None, *, z: float = mc.Z_NOMINAL,
                      kernel_std=DEFAULT_KERNEL_STD, dynamics=mc.dynamics, measure=mc.measure) -> MCMonitorState:
    """Absorb one observation.

    ``action`` is the control applied since the previous observation; when
    given, every sample's state first advances noise-free under its own
    parameters. Weights are multiplied by a Gaussian kernel of the
    observation residual and renormalised (in log space). If every weight
    vanishes the weights reset to uniform and ``degenerate`` is set.
    """
    obs = np.asarray(observation, dtype=float)
    if obs.shape != (2,):
        raise MonitorConfigError(f"observation must have 2 components, got shape {obs.shape}")
    c, d = state.samples[:, 1], state.samples[:, 2]
    if action is not None:
        state.p, state.v = dynamics(state.p, state.v, float(action), z)
    pred_p, pred_v = measure(state.p, state.v, c, d)
    with np.errstate(over="ignore"):
        loglik = -0.5 * (((pred_p - obs[0]) / kernel_std[0]) ** 2 + ((pred_v - obs[1]) / kernel_std[1]) ** 2)
    logw = state.log_weights + loglik
    w = _normalise_log(logw)
    if w is None:
        w = np.full(state.weights.size, 1.0 / state.weights.size)
        logw = np.log(w)
        state.degenerate = True
    else:
        logw = logw - np.max(logw)
    state.weights, state.log_weights = w, logw
    state.steps += 1
    return state


def mc_monitor_confidence(state: MCMonitorState, pred) -> float:
    """Total weight of samples whose (p0, c, d) satisfy the predicate."""
    key = id(pred)
    hit = state._membership.get(key)
    if hit is None or hit[0] is not pred:
        hit = (pred, np.asarray(pred(state.samples), dtype=bool))
        state._membership[key] = hit
    return float(min(1.0, max(0.0, state.weights[hit[1]].sum())))


# ----------------------------------------------------------- particle filter


@dataclass
class PFState:
    particles: np.ndarray   # (M, D) current states
    weights: np.ndarray     # (M,)
    rng: np.random.Generator
    degenerate: bool = False
    resampled: bool = False

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


def pf_monitor_init(particles, seed=None) -> PFState:
    particles = np.asarray(particles, dtype=float)
    if particles.ndim == 1:
        particles = particles[:, None]
    if particles.shape[0] < 1:
        raise MonitorConfigError("need at least one particle")
    rng = seed.generator() if hasattr(seed, "generator") else np.random.default_rng(seed)
    m = particles.shape[0]
    return PFState(particles.copy(), np.full(m, 1.0 / m), rng)


def mc_transition(particles, rng, process_noise_std=mc.PROCESS_NOISE_STD, action=0.0, z=mc.Z_NOMINAL):
    """Mountain-car transition of (p, v) particles with Gaussian process noise."""
    n = particles.shape[0]
    eta_p = rng.normal(0.0, process_noise_std[0], n) if process_noise_std[0] > 0 else 0.0
    eta_v = rng.normal(0.0, process_noise_std[1], n) if process_noise_std[1] > 0 else 0.0
    p, v = mc.dynamics(particles[:, 0], particles[:, 1], action, z, eta_p, eta_v)
    return np.column_stack([p, v])


def systematic_resample(weights, rng) -> np.ndarray:
    m = weights.size
    positions = (rng.random() + np.arange(m)) / m
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, m - 1)


def pf_monitor_step(state: PFState, observation, process_noise_std=mc.PROCESS_NOISE_STD,
                    resampling_threshold: float = 0.5, *, transition: Callable | None = None,
                    observe: Callable | None = None, obs_std=DEFAULT_KERNEL_STD, propagate: bool = True,
                    **transition_kw) -> PFState:
    """Propagate, reweight by the observation likelihood, resample if ESS < threshold * M.

    ``observe(particles) -> predicted observations`` defaults to the identity;
    ``transition(particles, rng, process_noise_std, **kw)`` defaults to the
    mountain-car dynamics.
    """
    obs = np.asarray(observation, dtype=float).reshape(-1)
    if propagate:
        transition = transition or mc_transition
        state.particles = transition(state.particles, state.rng, process_noise_std, **transition_kw)
    pred = state.particles if observe is None else np.asarray(observe(state.particles), dtype=float)
    pred = pred.reshape(state.particles.shape[0], -1)
    if pred.shape[1] != obs.size:
        raise MonitorConfigError(f"observation has {obs.size} components, model predicts {pred.shape[1]}")
    std = np.broadcast_to(np.asarray(obs_std, dtype=float), (obs.size,))
    loglik = -0.5 * np.sum(((pred - obs) / std) ** 2, axis=1)
    w = _normalise_log(np.log(state.weights) + loglik)
    state.degenerate = w is None
    if w is None:
        w = np.full(state.weights.size, 1.0 / state.weights.size)
    state.weights = w
    m = w.size
    state.resampled = state.ess < resampling_threshold * m
    if state.resampled:
        idx = systematic_resample(w, state.rng)
        state.particles = state.particles[idx]
        state.weights = np.full(m, 1.0 / m)
    return state


def pf_monitor_confidence(state: PFState, pred) -> float:
    hit = np.asarray(pred(state.particles), dtype=bool)
    return float(min(1.0, max(0.0, state.weights[hit].sum())))


# ------------------------------------------------------- model invalidation


@dataclass(frozen=True)
class InvalidationConfig:
    """Window length, tolerance and parameter grid of the invalidation monitor.

    A parameter point is consistent when every residual, divided by its
    channel scale, is at most ``tolerance`` in absolute value.
    """

    window: int = 6
    tolerance: float = 0.01
    channel_scale: tuple[float, float] = (1.0, 0.1)
    grid: tuple[int, int] = (21, 13)
    budget: int | None = None
    c_range: tuple[float, float] = mc.C_RANGE
    d_range: tuple[float, float] = mc.D_RANGE
    z: float = mc.Z_NOMINAL

    def __post_init__(self):
        if self.window < 2:
            raise MonitorConfigError("window length must be at least 2")
        if not self.tolerance > 0:
            raise MonitorConfigError("tolerance must be positive")
        if any(g < 1 for g in self.grid):
            raise MonitorConfigError("grid resolution must be positive")
        if self.budget is not None and self.budget < 1:
            raise MonitorConfigError("exploration budget must be positive")

    @property
    def grid_size(self) -> int:
        return int(np.prod(self.grid))


def bit_reversal_order(n: int) -> np.ndarray:
    """Permutation of range(n) by bit-reversed index, spreading early picks over the range."""
    if n <= 1:
        return np.arange(n)
    bits = int(np.ceil(np.log2(n)))
    idx = np.arange(2**bits)
    rev = np.zeros_like(idx)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev[rev < n]


def _grid_points(cfg: InvalidationConfig) -> np.ndarray:
    cs = np.linspace(*cfg.c_range, cfg.grid[0]) if cfg.grid[0] > 1 else np.array([np.mean(cfg.c_range)])
    ds = np.linspace(*cfg.d_range, cfg.grid[1]) if cfg.grid[1] > 1 else np.array([np.mean(cfg.d_range)])
    cc, dd = np.meshgrid(cs, ds, indexing="ij")
    pts = np.column_stack([cc.ravel(), dd.ravel()])
    return pts[bit_reversal_order(len(pts))]


_GRID_CACHE: dict = {}


def mountain_car_family(points, observations, actions, z):
    """Predicted observations for each (c, d) point, starting from the state that explains obs[0]."""
    c, d = points[:, 0], points[:, 1]
    p, v = mc.invert_measurement(observations[0, 0], observations[0, 1], c, d)
    preds = np.empty((len(points), observations.shape[0], 2))
    preds[:, 0] = np.column_stack(mc.measure(p, v, c, d))
    for k in range(1, observations.shape[0]):
        p, v = mc.dynamics(p, v, actions[k - 1], z)
        preds[:, k] = np.column_stack(mc.measure(p, v, c, d))
    return preds


def invalidation_monitor(observations, actions, cfg: InvalidationConfig = InvalidationConfig(),
                         family: Callable = mountain_car_family) -> float:
    """Confidence that the window is explained by the nominal model family.

    ``observations`` is (L, 2) and ``actions`` the L - 1 controls applied
    between them. Grid points are explored in bit-reversal order up to the
    budget. Returns 1.0 if a consistent point is found, otherwise
    1 - (explored fraction of the grid), so a fully explored, fully
    inconsistent grid gives 0.0.
    """
    obs = np.asarray(observations, dtype=float)
    acts = np.asarray(actions, dtype=float).reshape(-1)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[0] > cfg.window:
        raise MonitorConfigError(f"window must hold 2..{cfg.window} observations, got {obs.shape}")
    if acts.size != obs.shape[0] - 1:
        raise MonitorConfigError("need one action between consecutive observations")
    key = (cfg.grid, cfg.c_range, cfg.d_range)
    points = _GRID_CACHE.get(key)
    if points is None:
        points = _GRID_CACHE.setdefault(key, _grid_points(cfg))
    total = len(points)
    budget = total if cfg.budget is None else min(cfg.budget, total)
    explored = points[:budget]
    preds = family(explored, obs, acts, cfg.z)
    resid = np.abs(preds - obs[None]) / np.asarray(cfg.channel_scale)
    consistent = np.max(resid.reshape(len(explored), -1), axis=1) <= cfg.tolerance
    if consistent.any():
        return 1.0
    return 1.0 - budget / total
