"""Mountain-car dynamics with noisy measurements, safety property and controllers.

States evolve as::

    p' = p + v + eta_p
    v' = v + 0.0015 u - z cos(3 p) + eta_v

and are observed through ``p_hat = p + c v``, ``v_hat = v + d p``. All array
helpers broadcast, so whole batches of states or parameters can be simulated
at once.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ControllerError, MalformedTraceError

log = logging.getLogger(__name__)

FORCE = 0.0015
Z_NOMINAL = 0.0025
Z_STEEP = 0.0035
Z_VALUES = (Z_NOMINAL, Z_STEEP)
P0_RANGE = (-0.6, -0.4)
C_RANGE = (-1.0, 1.0)
D_RANGE = (-0.01, 0.02)
PROCESS_NOISE_STD = (0.001, 0.0001)
GOAL = 0.45
HORIZON = 110


@dataclass(frozen=True)
class MCState:
    p: float
    v: float
    t: int = 0


@dataclass(frozen=True)
class MCParams:
    z: float = Z_NOMINAL
    c: float = 0.0
    d: float = 0.0
    sigma_p: float = PROCESS_NOISE_STD[0]
    sigma_v: float = PROCESS_NOISE_STD[1]

    def __post_init__(self):
        if not (C_RANGE[0] <= self.c <= C_RANGE[1]):
            raise ValueError(f"c={self.c} outside {C_RANGE}")
        if not (D_RANGE[0] <= self.d <= D_RANGE[1]):
            raise ValueError(f"d={self.d} outside {D_RANGE}")
        if self.z <= 0 or self.sigma_p < 0 or self.sigma_v < 0:
            raise ValueError("z must be positive and noise deviations non-negative")


def dynamics(p, v, u, z, eta_p=0.0, eta_v=0.0):
    """One step of the dynamics on arrays; position uses the old velocity."""
    return p + v + eta_p, v + FORCE * u - z * np.cos(3 * p) + eta_v


def measure(p, v, c, d):
    return p + c * v, v + d * p


def invert_measurement(p_hat, v_hat, c, d):
    """State that produces an observation under (c, d); 1 - c d > 0 on the parameter box."""
    det = 1.0 - c * d
    return (p_hat - c * v_hat) / det, (v_hat - d * p_hat) / det


def clip_action(u, counter: Counter | None = None):
    clipped = np.clip(u, -1.0, 1.0)
    n = int(np.count_nonzero(clipped != u))
    if n:
        if counter is not None:
            counter["clipped_actions"] += n
        log.debug("clipped %d out-of-range actions", n)
    return clipped


def mc_step(s: MCState, u: float, params: MCParams, noise=(0.0, 0.0), counter: Counter | None = None) -> MCState:
    """Advance one step; ``noise`` is the drawn (eta_p, eta_v)."""
    u = float(clip_action(np.float64(u), counter))
    p, v = dynamics(s.p, s.v, u, params.z, noise[0], noise[1])
    return MCState(float(p), float(v), s.t + 1)


def mc_measure(s: MCState, params: MCParams) -> tuple[float, float]:
    p_hat, v_hat = measure(s.p, s.v, params.c, params.d)
    return float(p_hat), float(v_hat)


def mc_safety(states, goal: float = GOAL, horizon: int = HORIZON) -> bool:
    """True iff the position reaches ``goal`` at some step t <= horizon.

    ``states`` is a sequence of MCState or of positions indexed by step.
    """
    ps = np.array([s.p if isinstance(s, MCState) else s for s in states], dtype=float)
    reached = np.flatnonzero(ps[: horizon + 1] >= goal)
    if reached.size:
        return True
    if ps.size < horizon + 1:
        raise MalformedTraceError(f"trace has {ps.size} states and never reaches {goal}; need {horizon + 1}")
    return False


# ------------------------------------------------------------------ controllers


def default_controller(obs):
    """Energy pumping on the estimated velocity, full throttle once past p_hat = 0.2.

    Accepts one observation (p_hat, v_hat) or an array of them (..., 2).
    """
    obs = np.asarray(obs, dtype=float)
    p_hat, v_hat = obs[..., 0], obs[..., 1]
    u = np.where((v_hat >= 0) | (p_hat > 0.2), 1.0, -1.0)
    return float(u) if u.ndim == 0 else u


class MLPController:
    """Feed-forward network: tanh hidden layers, linear output clipped to [-1, 1]."""

    def __init__(self, layers, output_activation: str = "clip"):
        self.layers = []
        width = 2
        for i, layer in enumerate(layers):
            w = np.asarray(layer["weights"], dtype=float)
            b = np.asarray(layer["bias"], dtype=float).reshape(-1)
            if w.ndim != 2 or w.shape[1] != width or b.shape[0] != w.shape[0]:
                raise ControllerError(f"layer {i}: weights {w.shape} / bias {b.shape} do not fit input width {width}")
            self.layers.append((w, b))
            width = w.shape[0]
        if not self.layers or width != 1:
            raise ControllerError("network must end in a single output unit")
        if output_activation not in ("clip", "tanh"):
            raise ControllerError(f"unknown output activation {output_activation!r}")
        self.output_activation = output_activation

    def __call__(self, obs):
        x = np.asarray(obs, dtype=float)
        for i, (w, b) in enumerate(self.layers):
            x = x @ w.T + b
            if i < len(self.layers) - 1:
                x = np.tanh(x)
        if self.output_activation == "tanh":
            x = np.tanh(x)
        u = np.clip(x[..., 0], -1.0, 1.0)
        return float(u) if u.ndim == 0 else u


def load_mlp_controller(path) -> MLPController:
    """Load ``{"layers": [{"weights": [[...]], "bias": [...]}, ...]}``."""
    try:
        raw = json.loads(Path(path).read_text())
        layers = raw["layers"] if isinstance(raw, dict) else raw
        act = raw.get("output_activation", "clip") if isinstance(raw, dict) else "clip"
        return MLPController(layers, act)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ControllerError(f"cannot load controller from {path}: {exc}") from exc


def rollout(p0, c, d, z, controller=default_controller, horizon: int = HORIZON, goal: float = GOAL,
            noise=None):
    """Batch noise-free (or given-noise) rollouts; returns a boolean safety array.

    Broadcasts over p0, c, d and z. ``noise`` may be an array (horizon, ..., 2).
    """
    p0, c, d, z = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (p0, c, d, z)))
    p, v = p0.copy(), np.zeros_like(p0)
    safe = p >= goal
    for t in range(horizon):
        obs = np.stack(measure(p, v, c, d), axis=-1)
        u = np.clip(controller(obs), -1.0, 1.0)
        eta = (0.0, 0.0) if noise is None else (noise[t, ..., 0], noise[t, ..., 1])
        p, v = dynamics(p, v, u, z, *eta)
        safe |= p >= goal
    return safe
