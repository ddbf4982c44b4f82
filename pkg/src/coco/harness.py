"""Repeated 50-50 cross-validation of calibrated monitors and their compositions.

Every repetition splits the data by trace, fits all parameters (Platt per
monitor, inverse-variance weights, logistic regression, Bayes histograms) on
the calibration half and scores every row on the test half, against the
assumption target and against the safety flag.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import composition as comp
from .calibration import platt_apply, platt_fit
from .core import Dataset, RngSeed, load_dataset, monitor_stats, split_by_trace
from .errors import ConfigError, ConvergenceError, DegenerateFitError
from .formula import compile_formula, evaluate, expr_variables, parse_formula, truth_array, variables
from .metrics import METRIC_NAMES, BinSummary, Binning, all_metrics, bin_summaries
from .simulator import SimulationConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SAFETY = "safety"
ASSUMPTION = "assumption"

# AuC versus safety on the mountain car at lambda = 0.5, for orientation only.
PUBLISHED_REFERENCE = {
    ("product", SAFETY): (0.784, 0.007),
    ("m1", SAFETY): (0.699, 0.01),
    ("m2", SAFETY): (0.674, 0.007),
}


@dataclass(frozen=True)
class ExperimentConfig:
    formula: str = "A1 & A2"
    compositions: tuple[str, ...] = comp.COMPOSITIONS
    lambdas: tuple[float, ...] = (0.5, 0.8)
    repetitions: int = 20
    bins: int = 10
    seed: int = 0
    split_fraction: float = 0.5
    data: str | None = None
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.bins < 1:
            raise ConfigError("bin count must be at least 1")
        unknown = [c for c in self.compositions if c not in comp.COMPOSITIONS]
        if unknown:
            raise ConfigError(f"unsupported compositions {unknown}; choose from {list(comp.COMPOSITIONS)}")
        if not self.lambdas or any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ConfigError("lambdas must be a non-empty list of values in [0, 1]")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")
        try:
            parse_formula(self.formula)
        except Exception as exc:
            raise ConfigError(f"invalid formula {self.formula!r}: {exc}") from exc

    @property
    def parsed_formula(self):
        return parse_formula(self.formula)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "ExperimentConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "simulation" in raw:
            raw["simulation"] = SimulationConfig.from_dict(raw["simulation"])
        for k in ("compositions", "lambdas"):
            if k in raw:
                if not isinstance(raw[k], (list, tuple)):
                    raise ConfigError(f"{k} must be a list")
                raw[k] = tuple(raw[k])
        if raw.get("data") and base_dir is not None and not Path(raw["data"]).is_absolute():
            raw["data"] = str(Path(base_dir) / raw["data"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)


# ------------------------------------------------------------------ results


@dataclass
class ResultTable:
    """Rows keyed by (lambda, name, target) with per-repetition metric values."""

    rows: dict = field(default_factory=dict)          # key -> list of metric dicts
    reliability: dict = field(default_factory=dict)   # key -> BinSummary of the first scored repetition
    metadata: dict = field(default_factory=dict)

    def add(self, key, metrics: dict, summary: BinSummary | None = None):
        self.rows.setdefault(key, []).append(metrics)
        if summary is not None:
            self.reliability.setdefault(key, summary)

    def keys(self):
        return list(self.rows)

    def mean_std(self, key) -> dict[str, tuple[float, float]]:
        values = self.rows[key]
        out = {}
        for m in METRIC_NAMES:
            arr = np.array([v[m] for v in values], dtype=float)
            if arr.size == 0 or np.isnan(arr).all():
                out[m] = (float("nan"), float("nan"))
                continue
            arr = arr[~np.isnan(arr)]
            out[m] = (float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0)
        return out

    def records(self) -> list[dict]:
        recs = []
        for key in self.rows:
            lam, name, target = key
            rec = {"lambda": lam, "row": name, "target": target, "repetitions": len(self.rows[key])}
            for m, (mean, std) in self.mean_std(key).items():
                rec[m] = mean
                rec[f"{m}_std"] = std
            recs.append(rec)
        return recs

    def lookup(self, lam, name, target) -> dict[str, tuple[float, float]]:
        return self.mean_std((lam, name, target))


def _header() -> list[str]:
    cols = ["lambda", "row", "target", "repetitions"]
    for m in METRIC_NAMES:
        cols += [m, f"{m}_std"]
    return cols


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def table_to_csv(t: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header())
    for rec in t.records():
        w.writerow([_fmt(rec[c]) for c in _header()])
    return buf.getvalue()


def table_to_json(t: ResultTable) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    recs = [{k: clean(v) for k, v in rec.items()} for rec in t.records()]
    return json.dumps({"columns": list(METRIC_NAMES), "rows": recs, "metadata": t.metadata}, indent=2, sort_keys=True) + "\n"


def table_to_markdown(t: ResultTable) -> str:
    lines = ["| lambda | row | target | " + " | ".join(METRIC_NAMES) + " |",
             "|---|---|---|" + "---|" * len(METRIC_NAMES)]
    for rec in t.records():
        cells = [f"{rec[m]!r} ± {rec[m + '_std']!r}" for m in METRIC_NAMES]
        lines.append(f"| {rec['lambda']!r} | {rec['row']} | {rec['target']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_markdown_table(text: str) -> list[dict]:
    """Inverse of table_to_markdown for the numeric columns."""
    out = []
    for line in text.strip().splitlines()[2:]:
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        rec = {"lambda": float(cells[0]), "row": cells[1], "target": cells[2]}
        for m, cell in zip(METRIC_NAMES, cells[3:]):
            mean, std = (float(x) for x in cell.split("±"))
            rec[m], rec[m + "_std"] = mean, std
        out.append(rec)
    return out


_FORMATS = {"csv": table_to_csv, "json": table_to_json, "markdown": table_to_markdown, "md": table_to_markdown}


def emit_table(t: ResultTable, path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".") or "csv").lower()
    if fmt not in _FORMATS:
        raise ValueError(f"unknown table format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_FORMATS[fmt](t))
    return path


def emit_reliability(summary: BinSummary, path) -> Path:
    """One CSV row per non-empty bin: bin_lo, bin_hi, count, conf, occ."""
    return summary.to_csv(path)


# --------------------------------------------------------------- experiment


def _composer(name, cal_ms, cal_flags, test_trace_ids, lam, weights):
    """Conjunction composer for ``name``; data-driven ones fit lazily per monitor subset on the calibration half."""
    fitted = {}

    def fit(indices):
        key = tuple(indices)
        if key not in fitted:
            target = cal_flags[:, list(indices)].all(axis=1)
            if name == "logreg":
                fitted[key] = comp.logreg_fit(cal_ms[:, list(indices)], target, lam)
            else:
                fitted[key] = comp.bayes_fit(cal_ms[:, list(indices)], target)
        return fitted[key]

    def conj(indices, ms):
        sub = ms[..., list(indices)]
        if name == "product":
            return comp.product(sub)
        if name == "power":
            return comp.power_product(sub)
        if name == "weighted":
            return comp.weighted_average(sub, weights.restrict(indices))
        if name == "logreg":
            return comp.logreg_apply(fit(indices), sub)
        return comp.bayes_filter(fit(indices), sub, test_trace_ids)

    return conj, fitted


def _single_class(x) -> bool:
    x = np.asarray(x, dtype=bool)
    return x.size == 0 or x.all() or not x.any()


def run_repetition(cal: Dataset, test: Dataset, cfg: ExperimentConfig, lam: float, expr, formula, table: ResultTable):
    """Fit on ``cal`` and score on ``test`` for one lambda; returns the fitted parameters."""
    k = cal.monitor_count
    binning = Binning(cfg.bins)
    params = [platt_fit(cal.monitors[:, i], cal.flags[:, i], lam) for i in range(k)]
    cal_ms = np.column_stack([platt_apply(params[i], cal.monitors[:, i]) for i in range(k)])
    test_ms = np.column_stack([platt_apply(params[i], test.monitors[:, i]) for i in range(k)])
    cal_calibrated = cal.with_monitors(cal_ms)
    weights = comp.inverse_variance_weights([monitor_stats(cal_calibrated, i)[1] for i in range(k)])
    target = truth_array(formula, test.flags)
    used = sorted(expr_variables(expr))

    def score(name, conf):
        conf = np.clip(conf, 0.0, 1.0)
        for tgt_name, tgt in targets(name):
            table.add((lam, name, tgt_name), all_metrics(conf, tgt, binning), bin_summaries(conf, tgt, binning))

    def targets(name):
        if name.startswith("m"):
            yield ASSUMPTION, test.flags[:, int(name[1:]) - 1]
        else:
            yield ASSUMPTION, target
        yield SAFETY, test.safety

    for i in used:
        score(f"m{i + 1}", test_ms[:, i])
    fitted_params = {"platt": [p.__dict__ for p in params], "weights": list(weights.weights)}
    for name in cfg.compositions:
        if name == "bayes" and lam != cfg.lambdas[0] and len(cfg.lambdas) > 1:
            continue
        conj, fitted = _composer(name, cal_ms, cal.flags, test.trace_ids, lam, weights)
        score(name, evaluate(expr, test_ms, conj))
        if fitted:
            fitted_params[name] = {",".join(map(str, key)): v.to_dict() for key, v in fitted.items()}
    return fitted_params


def load_experiment_data(cfg: ExperimentConfig, data=None) -> Dataset:
    if data is not None:
        return data if isinstance(data, Dataset) else load_dataset(data)
    if cfg.data:
        return load_dataset(cfg.data)
    from .simulator import collect_dataset

    return collect_dataset(config=cfg.simulation)[0]


def run_experiment(cfg: ExperimentConfig, data=None) -> ResultTable:
    """Cross-validate every row over ``cfg.repetitions`` trace-level splits.

    Bayes rows appear only for the first lambda, since its fit does not use
    lambda. Repetitions whose halves lack both classes for some target, or
    whose fits fail, are skipped and counted in the table metadata.
    """
    ds = load_experiment_data(cfg, data)
    formula = cfg.parsed_formula
    n_vars = max(variables(formula), default=0) + 1
    if n_vars > ds.monitor_count:
        raise ConfigError(f"formula uses A{n_vars} but the dataset has {ds.monitor_count} monitors")
    if len(ds.unique_traces()) < 2:
        raise DegenerateFitError("dataset needs at least 2 traces")
    if _single_class(ds.safety):
        raise DegenerateFitError("dataset needs both safety outcomes")
    expr = compile_formula(formula)
    table = ResultTable()
    skipped = []
    root = RngSeed(cfg.seed)
    for rep in range(cfg.repetitions):
        cal, test = split_by_trace(ds, cfg.split_fraction, root.child(rep))
        used = sorted(expr_variables(expr))
        checks = [test.safety, truth_array(formula, test.flags), truth_array(formula, cal.flags)]
        checks += [test.flags[:, i] for i in used] + [cal.flags[:, i] for i in used]
        if any(_single_class(c) for c in checks):
            log.warning("repetition %d skipped: single-class split", rep)
            skipped.append(rep)
            continue
        staged = ResultTable()
        try:
            for lam in cfg.lambdas:
                run_repetition(cal, test, cfg, lam, expr, formula, staged)
        except (DegenerateFitError, ConvergenceError) as exc:
            log.warning("repetition %d skipped: %s", rep, exc)
            skipped.append(rep)
            continue
        for key, values in staged.rows.items():
            for v in values:
                table.add(key, v, staged.reliability.get(key))
    table.metadata = {"repetitions": cfg.repetitions, "skipped": skipped, "formula": cfg.formula,
                      "bins": cfg.bins, "seed": cfg.seed, "samples": len(ds), "traces": int(len(ds.unique_traces()))}
    for k, v in ds.metadata.items():
        table.metadata[f"data.{k}"] = v
    return table


def reference_lines(table: ResultTable, lam: float = 0.5) -> list[str]:
    """Measured AuC next to the published mountain-car values; for orientation, never asserted."""
    out = []
    for (name, target), (mean, std) in PUBLISHED_REFERENCE.items():
        key = (lam, name, target)
        if key in table.rows:
            got = table.mean_std(key)["AuC"]
            out.append(f"{name} vs {target}: AuC {got[0]:.3f} ± {got[1]:.3f} (published reference {mean:.3f} ± {std:.3f})")
    return out
