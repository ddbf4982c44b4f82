"""Closed-form calibration bounds for composed monitors and their Monte-Carlo checks.

Every bound here is stated for two monitors M1, M2 with maximum calibration
errors e1, e2 against their assumptions A1, A2. ``verify_bound_empirically``
samples a synthetic joint distribution of (A1, A2, M1, M2), composes the
monitors and compares the measured error with the closed form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import composition as comp
from .core import RngSeed
from .errors import BoundInputError, PreconditionError
from .metrics import Binning, bin_summaries, cce_hat, ece_hat


def _unit(name, value):
    value = float(value)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise BoundInputError(f"{name} must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class MonitorErrorSpec:
    e: float
    variance: float = 0.0

    def __post_init__(self):
        _unit("e", self.e)
        if not (0.0 <= self.variance <= 0.25):
            raise BoundInputError(f"variance of a [0,1] variable must lie in [0, 0.25], got {self.variance}")


@dataclass(frozen=True)
class BoundResult:
    theorem: str
    value: float
    inputs: dict

    @property
    def vacuous(self) -> bool:
        """True when the bound exceeds 1 and so says nothing about a probability."""
        return self.value > 1.0

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "value": self.value, "vacuous": self.vacuous, "inputs": self.inputs}


# ------------------------------------------------------------------ closed forms


def safety_bound(e1: float, e2: float) -> float:
    """Safety chance on traces that violate a sufficient assumption."""
    return min(1.0, _unit("e1", e1) + _unit("e2", e2))


def lemma_interval(exp_mi_given_mc: float, e: float) -> tuple[float, float]:
    x, e = _unit("E[M_i | M_C]", exp_mi_given_mc), _unit("e", e)
    return max(0.0, x - e), min(1.0, x + e)


def ece_product_bound(s1: MonitorErrorSpec, s2: MonitorErrorSpec) -> float:
    e1, e2 = s1.e, s2.e
    return max(4 * e1 * e2, math.sqrt(s1.variance * s2.variance) + e1 + e2 + e1 * e2)


def ece_weighted_bound(e1: float, e2: float, w1: float, w2: float) -> float:
    e1, e2 = _unit("e1", e1), _unit("e2", e2)
    if w1 < 0 or w2 < 0 or abs(w1 + w2 - 1.0) > 1e-9:
        raise BoundInputError(f"weights must be non-negative and sum to 1, got ({w1}, {w2})")
    return max(e1 + e2 + e1 * e2, max(w1, w2) + e1 + e2 - e1 * e2)


def cce_product_pointwise(x, e1: float, e2: float):
    """Lower bound on P(A1, A2 | M1 M2 = x)."""
    e1, e2 = _unit("e1", e1), _unit("e2", e2)
    x = np.asarray(x, dtype=float)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise BoundInputError("x must lie in [0, 1]")
    out = np.maximum(0.0, x - e1) * np.maximum(0.0, x - e2)
    return float(out) if out.ndim == 0 else out


def cce_product_bound(e1: float, e2: float) -> float:
    e1, e2 = _unit("e1", e1), _unit("e2", e2)
    x0 = (1 + e1 + e2) / 2
    if 0.0 <= x0 <= 1.0:
        return (e1**2 - 2 * e1 * (-1 + e2) + (1 + e2) ** 2) / 4
    return e1 + e2 - e1 * e2


def ece_end_to_end(e1: float, e2: float, e3: float) -> float:
    return min(1.0, _unit("e1", e1) + _unit("e2", e2) + _unit("e3", e3))


def cce_end_to_end(e: float) -> float:
    return _unit("e", e)


THEOREMS = ("safety", "lemma", "ece_product", "ece_weighted", "cce_pointwise", "cce_product",
            "ece_end_to_end", "cce_end_to_end")


def evaluate_bound(theorem: str, *, e1=0.0, e2=0.0, e3=0.0, var1=0.0, var2=0.0, w1=None, w2=None,
                   x=None) -> BoundResult:
    """Dispatch by theorem name; the CLI front end."""
    inputs = {"e1": e1, "e2": e2}
    if theorem == "safety":
        value = safety_bound(e1, e2)
    elif theorem == "ece_product":
        inputs.update(var1=var1, var2=var2)
        value = ece_product_bound(MonitorErrorSpec(e1, var1), MonitorErrorSpec(e2, var2))
    elif theorem == "ece_weighted":
        if w1 is None and w2 is None:
            w1 = w2 = 0.5
        w1 = 1.0 - w2 if w1 is None else w1
        w2 = 1.0 - w1 if w2 is None else w2
        inputs.update(w1=w1, w2=w2)
        value = ece_weighted_bound(e1, e2, w1, w2)
    elif theorem == "cce_pointwise":
        if x is None:
            raise BoundInputError("cce_pointwise needs x")
        inputs["x"] = x
        value = cce_product_pointwise(x, e1, e2)
    elif theorem == "cce_product":
        value = cce_product_bound(e1, e2)
    elif theorem == "ece_end_to_end":
        inputs["e3"] = e3
        value = ece_end_to_end(e1, e2, e3)
    elif theorem == "cce_end_to_end":
        inputs = {"e": e1}
        value = cce_end_to_end(e1)
    elif theorem == "lemma":
        if x is None:
            raise BoundInputError("lemma needs x = E[M_i | M_C]")
        lo, hi = lemma_interval(x, e1)
        return BoundResult(theorem, hi, {"x": x, "e": e1, "lo": lo, "hi": hi})
    else:
        raise BoundInputError(f"unknown theorem {theorem!r}; choose from {', '.join(THEOREMS)}")
    return BoundResult(theorem, float(value), inputs)


# ------------------------------------------------------------- synthetic spaces


def beta_variance(a: float, b: float) -> float:
    return a * b / ((a + b) ** 2 * (a + b + 1))


@dataclass(frozen=True)
class SyntheticSpace:
    """Two independent Beta monitors with biased Bernoulli assumptions.

    A_i ~ Bernoulli(clip(M_i + bias_i, 0, 1)), so P(A_i | M_i = m) deviates
    from m by at most |bias_i| and MCE(M_i, A_i) <= |bias_i|. A_i depends on
    nothing but M_i, which makes A_i independent of any composition given M_i.
    """

    alpha: tuple[float, float] = (2.0, 2.0)
    beta: tuple[float, float] = (2.0, 2.0)
    bias: tuple[float, float] = (0.0, 0.0)
    n_samples: int = 100_000
    seed: int = 0

    @property
    def specs(self) -> tuple[MonitorErrorSpec, MonitorErrorSpec]:
        return tuple(MonitorErrorSpec(abs(self.bias[i]), beta_variance(self.alpha[i], self.beta[i]))
                     for i in range(2))

    def sample(self):
        """Returns (A, M): boolean (n, 2) assumption flags and (n, 2) monitor values."""
        rng = RngSeed(self.seed, 17).generator()
        m = np.column_stack([rng.beta(self.alpha[i], self.beta[i], self.n_samples) for i in range(2)])
        p = np.clip(m + np.asarray(self.bias), 0.0, 1.0)
        a = rng.random(m.shape) < p
        return a, m

    def to_dict(self) -> dict:
        return asdict(self)


def random_space(rng: np.random.Generator, n_samples: int = 100_000, seed: int = 0,
                 max_bias: float = 0.15, calibrated: bool = False) -> SyntheticSpace:
    alpha = tuple(float(x) for x in rng.uniform(0.5, 6.0, 2))
    beta = tuple(float(x) for x in rng.uniform(0.5, 6.0, 2))
    bias = (0.0, 0.0) if calibrated else tuple(float(x) for x in rng.uniform(-max_bias, max_bias, 2))
    return SyntheticSpace(alpha, beta, bias, n_samples, seed)


@dataclass
class PreconditionReport:
    mce_ok: bool
    variance_ok: bool
    max_conditional_dependence: float
    dependence_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.mce_ok and self.variance_ok and self.dependence_ok


def _composed(name: str, m: np.ndarray, w=None) -> np.ndarray:
    if name == "product":
        return comp.product(m)
    if name == "weighted":
        return comp.weighted_average(m, w)
    if name == "power":
        return comp.power_product(m)
    raise BoundInputError(f"no closed-form bound for composition {name!r}")


def _bins_with(mc, min_count, bins):
    b = Binning(bins)
    idx = b.assign(mc)
    counts = np.bincount(idx, minlength=bins)
    return idx, [k for k in range(bins) if counts[k] >= min_count]


def check_preconditions(space: SyntheticSpace, a, m, mc, *, bins: int = 10, min_count: int = 500,
                        dependence_tol: float = 0.05) -> PreconditionReport:
    """Empirical checks of the theorem preconditions on a sampled space.

    - declared MCE bounds: exact check of |clip(m + b) - m| <= |b| on a grid, plus
      the binned estimate within 3 binomial standard errors;
    - Var(M_i | M_C in bin) <= Var(M_i) for every well-populated bin;
    - |P(A1 A2 | bin) - P(A1 | bin) P(A2 | bin)| <= dependence_tol per bin.
    """
    grid = np.linspace(0, 1, 2001)
    specs = space.specs
    mce_ok = True
    for i in range(2):
        gap = np.abs(np.clip(grid + space.bias[i], 0, 1) - grid)
        if gap.max() > specs[i].e + 1e-12:
            mce_ok = False
        s = bin_summaries(m[:, i], a[:, i], bins)
        ne = s.count >= min_count
        se = np.sqrt(np.clip(s.occ[ne] * (1 - s.occ[ne]), 1e-4, None) / s.count[ne])
        if (np.abs(s.occ[ne] - s.conf[ne]) > specs[i].e + 3 * se + 1e-12).any():
            mce_ok = False
    idx, good = _bins_with(mc, min_count, bins)
    variance_ok = True
    worst_dep = 0.0
    var_ratio = 0.0
    var_all = m.var(axis=0)
    for k in good:
        sel = idx == k
        v = m[sel].var(axis=0)
        var_ratio = max(var_ratio, float(np.max(v / np.maximum(var_all, 1e-300))))
        if (v > var_all).any():
            variance_ok = False
        p1, p2 = a[sel, 0].mean(), a[sel, 1].mean()
        p12 = (a[sel, 0] & a[sel, 1]).mean()
        worst_dep = max(worst_dep, abs(p12 - p1 * p2))
    return PreconditionReport(mce_ok, variance_ok, worst_dep, worst_dep <= dependence_tol,
                              {"max_conditional_variance_ratio": var_ratio, "bins_checked": len(good)})


@dataclass
class BoundReport:
    composition: str
    bound_name: str
    measured: float
    bound: float
    slack: float
    passed: bool
    space: dict
    preconditions: dict
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    """Replace numpy scalars by Python ones so the report serialises as JSON."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj.item() if isinstance(obj, np.generic) else obj


def bootstrap_std(fn, mc, target, n_boot: int, seed: int) -> float:
    rng = RngSeed(seed, 99).generator()
    n = mc.size
    vals = np.empty(n_boot)
    for r in range(n_boot):
        idx = rng.integers(0, n, n)
        vals[r] = fn(mc[idx], target[idx])
    return float(vals.std(ddof=1))


def verify_bound_empirically(space: SyntheticSpace, composition: str = "product", bound: str = "ece_product",
                             *, bins: int = 10, n_boot: int = 200, weights=None,
                             check: bool = True) -> BoundReport:
    """Measure a composed monitor's error on a sampled space and compare with its bound.

    ``bound`` is one of ``ece_product``, ``ece_weighted`` or ``cce_product``.
    For ``cce_product`` the per-bin pointwise lower bound is checked and the
    measured overconfidence is compared with the worst-case CCE bound.
    Raises PreconditionError if ``check`` is set and the sampled space breaks
    a precondition.
    """
    a, m = space.sample()
    conj = a[:, 0] & a[:, 1]
    s1, s2 = space.specs
    w = None
    if composition == "weighted":
        w = weights if weights is not None else comp.inverse_variance_weights([s1.variance, s2.variance])
        if not isinstance(w, comp.WeightVector):
            w = comp.WeightVector(tuple(w))
    mc = _composed(composition, m, w)
    pre = check_preconditions(space, a, m, mc, bins=bins)
    if check and not pre.ok:
        raise PreconditionError(f"space violates preconditions: {pre}")
    details: dict = {}
    if bound == "ece_product":
        value = ece_product_bound(s1, s2)
        measured = ece_hat(mc, conj, bins)
        slack = 3 * bootstrap_std(lambda x, y: ece_hat(x, y, bins), mc, conj, n_boot, space.seed)
        passed = measured <= value + slack
    elif bound == "ece_weighted":
        value = ece_weighted_bound(s1.e, s2.e, *w.weights)
        measured = ece_hat(mc, conj, bins)
        slack = 3 * bootstrap_std(lambda x, y: ece_hat(x, y, bins), mc, conj, n_boot, space.seed)
        passed = measured <= value + slack
        details["weights"] = list(w.weights)
    elif bound == "cce_product":
        value = cce_product_bound(s1.e, s2.e)
        measured = cce_hat(mc, conj, bins)
        slack = 3 * bootstrap_std(lambda x, y: cce_hat(x, y, bins), mc, conj, n_boot, space.seed)
        pointwise = pointwise_check(mc, conj, s1.e, s2.e, bins)
        details["pointwise"] = pointwise
        passed = measured <= value + slack and pointwise["passed"]
    else:
        raise BoundInputError(f"unknown bound {bound!r}")
    return BoundReport(composition, bound, float(measured), float(value), float(slack), bool(passed),
                       space.to_dict(), asdict(pre), details)


def pointwise_check(mc, conj, e1: float, e2: float, bins: int = 10, min_count: int = 30) -> dict:
    """Per-bin check of P(A1 A2 | M_C in bin) against the mean pointwise lower bound.

    Averaging the bound over the bin's own samples matches the conditional
    probability of the bin exactly; the slack is three binomial standard errors.
    """
    b = Binning(bins)
    idx = b.assign(mc)
    rows = []
    ok = True
    lb_all = cce_product_pointwise(mc, e1, e2)
    for k in range(bins):
        sel = idx == k
        n = int(sel.sum())
        if n < min_count:
            continue
        occ = float(conj[sel].mean())
        lb = float(lb_all[sel].mean())
        p = min(max(max(occ, lb), 1.0 / n), 1 - 1.0 / n)
        slack = 3 * math.sqrt(p * (1 - p) / n)
        passed = occ >= lb - slack
        ok &= passed
        rows.append({"bin": k, "count": n, "occ": occ, "lower_bound": lb, "slack": slack, "passed": passed})
    return {"passed": bool(ok), "bins": rows}


def verify_many(n_configs: int, bound: str, composition: str, *, seed: int = 0, n_samples: int = 100_000,
                calibrated: bool = False, max_tries: int | None = None, **kw) -> list[BoundReport]:
    """Verify a bound on ``n_configs`` random spaces that pass the precondition checks."""
    rng = RngSeed(seed, 5).generator()
    reports: list[BoundReport] = []
    tries = 0
    max_tries = max_tries or 20 * n_configs
    while len(reports) < n_configs:
        if tries >= max_tries:
            raise PreconditionError(f"only {len(reports)} of {n_configs} spaces passed the precondition checks")
        space = random_space(rng, n_samples=n_samples, seed=seed * 10_007 + tries, calibrated=calibrated)
        tries += 1
        try:
            reports.append(verify_bound_empirically(space, composition, bound, **kw))
        except PreconditionError:
            continue
    return reports
