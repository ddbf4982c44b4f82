"""Mountain-car episodes with attached assumption monitors.

The verified assumption region A1 over (p0, c, d) is replaced by a grid
surrogate: a cell belongs to the region when noise-free rollouts from all of
its corners reach the goal. Episodes sample (p0, c, d, z) uniformly, run the
noisy dynamics until the goal or the horizon, and log per-step outputs of the
Monte-Carlo monitor m1 (for A1) and the invalidation monitor m2 (for A2).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import mountain_car as mc
from .core import Dataset, RngSeed
from .errors import ConfigError, MalformedTraceError, MonitorConfigError
from .monitors import (
    DEFAULT_KERNEL_STD,
    GridRegion,
    InvalidationConfig,
    invalidation_monitor,
    mc_monitor_confidence,
    mc_monitor_init,
    mc_monitor_update,
)

log = logging.getLogger(__name__)

REGION_RANGES = (mc.P0_RANGE, mc.C_RANGE, mc.D_RANGE)
REGION_RESOLUTION = (20, 10, 10)


# ------------------------------------------------------------------ region


def corner_safety(ranges, resolution, controller=mc.default_controller, z_values=mc.Z_VALUES,
                  horizon: int = mc.HORIZON, goal: float = mc.GOAL) -> np.ndarray:
    """Noise-free safety at every grid vertex, shape (*[r + 1 for r in resolution], len(z_values))."""
    axes = [np.linspace(lo, hi, r + 1) for (lo, hi), r in zip(ranges, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    out = np.empty(mesh[0].shape + (len(z_values),), dtype=bool)
    for k, z in enumerate(z_values):
        out[..., k] = mc.rollout(mesh[0], mesh[1], mesh[2], z, controller, horizon, goal)
    return out


def region_from_corners(safe_vertices: np.ndarray) -> np.ndarray:
    """A cell is in the region iff every corner is safe under every z."""
    all_z = safe_vertices.all(axis=-1)
    cells = np.ones(tuple(s - 1 for s in all_z.shape), dtype=bool)
    for offset in itertools.product((0, 1), repeat=all_z.ndim):
        sl = tuple(slice(o, o + n) for o, n in zip(offset, cells.shape))
        cells &= all_z[sl]
    return cells


def _cache_key(ranges, resolution, z_values, horizon, goal, controller_id) -> str:
    blob = json.dumps([ranges, resolution, z_values, horizon, goal, controller_id], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_assumption_region(resolution=REGION_RESOLUTION, ranges=REGION_RANGES,
                            controller: Callable = mc.default_controller, *, z_values=mc.Z_VALUES,
                            horizon: int = mc.HORIZON, goal: float = mc.GOAL,
                            cache_dir=None, controller_id: str | None = None) -> GridRegion:
    """Grid surrogate for the verified region over (p0, c, d).

    Cached under ``cache_dir`` when given; the cache key covers every input,
    with ``controller_id`` standing in for the controller (caching is skipped
    for anonymous non-default controllers).
    """
    resolution = tuple(int(r) for r in resolution)
    ranges = tuple(tuple(float(x) for x in r) for r in ranges)
    if len(resolution) != 3 or len(ranges) != 3:
        raise ConfigError("region is defined over (p0, c, d)")
    if any(r < 2 for r in resolution):
        raise ConfigError(f"grid resolution must be at least 2 per dimension, got {resolution}")
    if any(lo > hi for lo, hi in ranges):
        raise ConfigError(f"invalid ranges {ranges}")
    z_values = tuple(float(z) for z in z_values)
    if controller_id is None and controller is mc.default_controller:
        controller_id = "default"
    path = None
    if cache_dir is not None and controller_id is not None:
        key = _cache_key(ranges, resolution, z_values, horizon, goal, controller_id)
        path = Path(cache_dir) / f"region-{key}.json"
        if path.exists():
            return GridRegion.from_dict(json.loads(path.read_text()))
    cells = region_from_corners(corner_safety(ranges, resolution, controller, z_values, horizon, goal))
    region = GridRegion(ranges, cells)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(region.to_dict()))
    return region


# ----------------------------------------------------------------- episodes


@dataclass(frozen=True)
class SimulationConfig:
    n_episodes: int = 500
    seed: int = 0
    horizon: int = mc.HORIZON
    goal: float = mc.GOAL
    process_noise_std: tuple[float, float] = mc.PROCESS_NOISE_STD
    z_values: tuple[float, ...] = mc.Z_VALUES
    region_resolution: tuple[int, int, int] = REGION_RESOLUTION
    region_z_values: tuple[float, ...] = mc.Z_VALUES
    mc_samples: int = 1000
    kernel_std: tuple[float, float] = DEFAULT_KERNEL_STD
    invalidation: InvalidationConfig = field(default_factory=InvalidationConfig)
    controller_path: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ConfigError("n_episodes must be at least 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be at least 1")
        if any(s < 0 for s in self.process_noise_std) or any(s <= 0 for s in self.kernel_std):
            raise ConfigError("noise deviations must be non-negative and kernel deviations positive")
        if not self.z_values or any(z <= 0 for z in self.z_values):
            raise ConfigError("z_values must be non-empty and positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, raw: dict) -> "SimulationConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        try:
            if "invalidation" in raw:
                inv = dict(raw["invalidation"])
                for k in ("channel_scale", "grid", "c_range", "d_range"):
                    if k in inv:
                        inv[k] = tuple(inv[k])
                raw["invalidation"] = InvalidationConfig(**inv)
            for k in ("process_noise_std", "z_values", "region_resolution", "region_z_values", "kernel_std"):
                if k in raw:
                    raw[k] = tuple(raw[k])
            return cls(**raw)
        except (TypeError, ValueError, MonitorConfigError) as exc:
            raise ConfigError(f"invalid simulation config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceRecord:
    """One episode. Step arrays have one entry per recorded step t = 0..T-1."""

    trace_id: int
    seed: list[int]
    params: mc.MCParams
    p0: float
    states: np.ndarray        # (T + 1, 2), including the terminal state
    observations: np.ndarray  # (T, 2)
    actions: np.ndarray       # (T,)
    monitors: np.ndarray      # (T, 2)
    flags: tuple[bool, bool]
    safe: bool

    def __post_init__(self):
        t = self.observations.shape[0]
        if not (self.actions.shape[0] == self.monitors.shape[0] == t and self.states.shape[0] == t + 1):
            raise MalformedTraceError("step arrays have inconsistent lengths")

    @property
    def length(self) -> int:
        return int(self.observations.shape[0])

    def header(self) -> dict:
        return {"trace_id": self.trace_id, "seed": self.seed, "params": asdict(self.params), "p0": self.p0,
                "flags": list(self.flags), "safe": self.safe, "steps": self.length,
                "terminal_state": self.states[-1].tolist()}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"header": self.header()})]
        for t in range(self.length):
            lines.append(json.dumps({"t": t, "state": self.states[t].tolist(),
                                     "observation": self.observations[t].tolist(),
                                     "action": float(self.actions[t]), "monitors": self.monitors[t].tolist(),
                                     "flags": list(self.flags)}))
        return "\n".join(lines) + "\n"


def save_traces(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            fh.write(r.to_jsonl())
    return path


def load_traces(path) -> list[TraceRecord]:
    records, current, steps = [], None, []

    def flush():
        if current is None:
            return
        h = current
        if len(steps) != h["steps"]:
            raise MalformedTraceError(f"trace {h['trace_id']}: header says {h['steps']} steps, found {len(steps)}")
        states = np.array([s["state"] for s in steps] + [h["terminal_state"]], dtype=float)
        records.append(TraceRecord(
            trace_id=h["trace_id"], seed=h["seed"], params=mc.MCParams(**h["params"]), p0=h["p0"],
            states=states, observations=np.array([s["observation"] for s in steps], dtype=float).reshape(-1, 2),
            actions=np.array([s["action"] for s in steps], dtype=float),
            monitors=np.array([s["monitors"] for s in steps], dtype=float).reshape(-1, 2),
            flags=tuple(h["flags"]), safe=h["safe"]))

    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTraceError(f"line {lineno}: {exc}") from exc
        if "header" in obj:
            flush()
            current, steps = obj["header"], []
        elif current is None:
            raise MalformedTraceError(f"line {lineno}: step before any trace header")
        else:
            steps.append(obj)
    flush()
    return records


def _load_controller(cfg: SimulationConfig):
    if cfg.controller_path is None:
        return mc.default_controller, "default"
    ctrl = mc.load_mlp_controller(cfg.controller_path)
    digest = hashlib.sha256(Path(cfg.controller_path).read_bytes()).hexdigest()[:16]
    return ctrl, f"mlp-{digest}"


def run_episode(trace_id: int, p0: float, params: mc.MCParams, region: GridRegion, cfg: SimulationConfig,
                rng: np.random.Generator, controller=mc.default_controller, seed=(0, 0),
                counter: Counter | None = None) -> TraceRecord:
    """Simulate one episode with both monitors attached."""
    monitor = mc_monitor_init(REGION_RANGES, cfg.mc_samples, rng)
    inv = cfg.invalidation
    p, v = p0, 0.0
    states, observations, actions, monitors = [(p, v)], [], [], []
    for t in range(cfg.horizon):
        if p >= cfg.goal:
            break
        y = mc.measure(p, v, params.c, params.d)
        mc_monitor_update(monitor, y, actions[-1] if actions else None, kernel_std=cfg.kernel_std)
        m1 = mc_monitor_confidence(monitor, region)
        observations.append(y)
        lo = max(0, t + 1 - inv.window)
        if t - lo + 1 >= 2:
            m2 = invalidation_monitor(np.asarray(observations[lo:]), np.asarray(actions[lo:t]), inv)
        else:
            m2 = 1.0
        u = float(mc.clip_action(np.float64(controller(np.asarray(y))), counter))
        actions.append(u)
        monitors.append((m1, m2))
        eta_p = rng.normal(0.0, params.sigma_p) if params.sigma_p > 0 else 0.0
        eta_v = rng.normal(0.0, params.sigma_v) if params.sigma_v > 0 else 0.0
        p, v = (float(x) for x in mc.dynamics(p, v, u, params.z, eta_p, eta_v))
        states.append((p, v))
    states_arr = np.asarray(states, dtype=float)
    safe = mc.mc_safety(states_arr[:, 0], cfg.goal, cfg.horizon)
    a1 = bool(region.contains(np.array([p0, params.c, params.d])))
    a2 = params.z == mc.Z_NOMINAL
    return TraceRecord(trace_id, list(seed), params, float(p0), states_arr,
                       np.asarray(observations, dtype=float).reshape(-1, 2), np.asarray(actions, dtype=float),
                       np.asarray(monitors, dtype=float).reshape(-1, 2), (a1, a2), bool(safe))


def sample_episode_params(rng: np.random.Generator, cfg: SimulationConfig) -> tuple[float, mc.MCParams]:
    p0 = rng.uniform(*mc.P0_RANGE)
    c = rng.uniform(*mc.C_RANGE)
    d = rng.uniform(*mc.D_RANGE)
    z = cfg.z_values[int(rng.integers(len(cfg.z_values)))]
    return float(p0), mc.MCParams(float(z), float(c), float(d), *cfg.process_noise_std)


def records_to_dataset(records, metadata=None) -> Dataset:
    n = sum(r.length for r in records)
    trace_ids = np.empty(n, dtype=np.int64)
    steps = np.empty(n, dtype=np.int64)
    monitors = np.empty((n, 2))
    flags = np.empty((n, 2), dtype=bool)
    safety = np.empty(n, dtype=bool)
    i = 0
    for r in records:
        j = i + r.length
        trace_ids[i:j] = r.trace_id
        steps[i:j] = np.arange(r.length)
        monitors[i:j] = np.clip(r.monitors, 0.0, 1.0)
        flags[i:j] = r.flags
        safety[i:j] = r.safe
        i = j
    return Dataset(trace_ids, steps, monitors, flags, safety, metadata or {})


def collect_dataset(n: int | None = None, config: SimulationConfig | None = None, seed: int | None = None,
                    region: GridRegion | None = None) -> tuple[Dataset, list[TraceRecord]]:
    """Simulate episodes and return the monitor dataset plus the full traces.

    Episode k draws everything from the stream ``RngSeed(seed).child(k)``, so
    results do not depend on how many episodes are collected before it.
    """
    cfg = config or SimulationConfig()
    if n is not None or seed is not None:
        kw = {}
        if n is not None:
            kw["n_episodes"] = int(n)
        if seed is not None:
            kw["seed"] = int(seed)
        cfg = SimulationConfig(**{**cfg.__dict__, **kw})
    controller, controller_id = _load_controller(cfg)
    if region is None:
        region = build_assumption_region(cfg.region_resolution, REGION_RANGES, controller,
                                         z_values=cfg.region_z_values, horizon=cfg.horizon, goal=cfg.goal,
                                         cache_dir=cfg.cache_dir, controller_id=controller_id)
    root = RngSeed(cfg.seed)
    counter: Counter = Counter()
    records = []
    for k in range(cfg.n_episodes):
        stream = root.child(k)
        rng = stream.generator()
        p0, params = sample_episode_params(rng, cfg)
        records.append(run_episode(k, p0, params, region, cfg, rng, controller,
                                   (stream.seed, stream.stream_id), counter))
    if counter["clipped_actions"]:
        log.warning("controller produced %d out-of-range actions (clipped)", counter["clipped_actions"])
    meta = {"source": "mountain-car simulator", "seed": str(cfg.seed), "episodes": str(cfg.n_episodes),
            "assumption_region": "simulation surrogate (corner rollouts), not a verified region",
            "region_fraction": repr(region.fraction), "clipped_actions": str(counter["clipped_actions"])}
    return records_to_dataset(records, meta), records


def safety_relevance(records) -> dict:
    """Per-sample and per-trace P(phi | not (a1 and a2)) and P(phi | a1 and a2)."""
    lengths = np.array([r.length for r in records], dtype=float)
    both = np.array([r.flags[0] and r.flags[1] for r in records])
    safe = np.array([r.safe for r in records])

    def cond(mask, weights):
        w = weights[mask]
        return float(np.sum(w * safe[mask]) / np.sum(w)) if w.sum() > 0 else float("nan")

    ones = np.ones_like(lengths)
    return {"p_safe_given_violation": cond(~both, lengths), "p_safe_given_assumptions": cond(both, lengths),
            "p_safe_given_violation_traces": cond(~both, ones), "p_safe_given_assumptions_traces": cond(both, ones)}
