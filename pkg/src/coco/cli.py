"""Command line: ``coco simulate``, ``coco run`` and ``coco bounds``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .bounds import THEOREMS, evaluate_bound, verify_many
from .core import save_dataset
from .errors import (
    BoundInputError,
    ConfigError,
    ControllerError,
    DegenerateFitError,
    MalformedTraceError,
    PreconditionError,
    SchemaError,
)
from .harness import ExperimentConfig, emit_reliability, emit_table, reference_lines, run_experiment
from .simulator import collect_dataset, save_traces

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_CONFIG = 2
EXIT_DATA = 3

DATA_ERRORS = (SchemaError, MalformedTraceError, DegenerateFitError)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.load(path)
    except (ConfigError, ControllerError) as exc:
        _fail(str(exc), EXIT_CONFIG)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Calibrated confidence monitors, their compositions and error bounds."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Experiment TOML.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
def simulate(config_path, out_dir):
    """Collect mountain-car episodes; writes dataset.csv and traces.jsonl."""
    cfg = _load_config(config_path)
    out = Path(out_dir)
    try:
        ds, records = collect_dataset(config=cfg.simulation)
    except (ConfigError, ControllerError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.csv")
    save_traces(records, out / "traces.jsonl")
    click.echo(f"{len(records)} episodes, {len(ds)} samples -> {out / 'dataset.csv'}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Experiment TOML.")
@click.option("--data", "data_path", type=click.Path(dir_okay=False), help="Dataset CSV or JSON (else simulate).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--reliability/--no-reliability", default=True, help="Write per-row reliability CSVs.")
def run(config_path, data_path, out_dir, reliability):
    """Cross-validate monitors and compositions; writes results.{csv,json,md}."""
    cfg = _load_config(config_path)
    data = data_path or cfg.data
    if data is not None and not Path(data).exists():
        _fail(f"dataset {data} not found", EXIT_DATA)
    try:
        table = run_experiment(cfg, data)
    except DATA_ERRORS as exc:
        _fail(str(exc), EXIT_DATA)
    except (ConfigError, ControllerError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    out = Path(out_dir)
    emit_table(table, out / "results.csv", "csv")
    emit_table(table, out / "results.json", "json")
    emit_table(table, out / "results.md", "markdown")
    if reliability:
        for (lam, name, target), summary in table.reliability.items():
            emit_reliability(summary, out / "reliability" / f"lambda{lam}_{name}_{target}.csv")
    click.echo(f"{len(table.rows)} rows, {len(table.metadata['skipped'])} skipped repetitions -> {out}")
    for line in reference_lines(table):
        click.echo(line)


@main.group(invoke_without_command=True)
@click.option("--theorem", type=click.Choice(THEOREMS))
@click.option("--e1", type=float, default=0.0)
@click.option("--e2", type=float, default=0.0)
@click.option("--e3", type=float, default=0.0, help="Safety relevance of the assumption (end-to-end ECE).")
@click.option("--var1", type=float, default=0.0)
@click.option("--var2", type=float, default=0.0)
@click.option("--w1", type=float)
@click.option("--w2", type=float)
@click.option("--x", type=float, help="Composed confidence (cce_pointwise) or E[M_i | M_C] (lemma).")
@click.pass_context
def bounds(ctx, theorem, e1, e2, e3, var1, var2, w1, w2, x):
    """Evaluate a closed-form bound, or verify bounds empirically (``bounds verify``)."""
    if ctx.invoked_subcommand is not None:
        return
    if theorem is None:
        _fail("--theorem is required", EXIT_CONFIG)
    try:
        res = evaluate_bound(theorem, e1=e1, e2=e2, e3=e3, var1=var1, var2=var2, w1=w1, w2=w2, x=x)
    except (BoundInputError, ValueError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    click.echo(json.dumps(res.to_dict(), sort_keys=True))


@bounds.command("verify")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="TOML with a [bounds] table: bound, composition, n_configs, n_samples, seed, calibrated.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the JSON report here.")
def bounds_verify(config_path, out_path):
    """Check a bound on random synthetic spaces that meet its preconditions."""
    try:
        raw = tomllib.loads(Path(config_path).read_text()).get("bounds", {})
    except (OSError, tomllib.TOMLDecodeError) as exc:
        _fail(f"cannot read {config_path}: {exc}", EXIT_CONFIG)
    allowed = {"bound", "composition", "n_configs", "n_samples", "seed", "calibrated", "n_boot", "bins"}
    unknown = set(raw) - allowed
    if unknown:
        _fail(f"unknown [bounds] keys: {sorted(unknown)}", EXIT_CONFIG)
    bound = raw.get("bound", "ece_product")
    default_comp = "weighted" if bound == "ece_weighted" else "product"
    try:
        reports = verify_many(int(raw.get("n_configs", 20)), bound, raw.get("composition", default_comp),
                              seed=int(raw.get("seed", 0)), n_samples=int(raw.get("n_samples", 100_000)),
                              calibrated=bool(raw.get("calibrated", False)), n_boot=int(raw.get("n_boot", 200)),
                              bins=int(raw.get("bins", 10)))
    except (BoundInputError, PreconditionError, ValueError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    passed = sum(r.passed for r in reports)
    for r in reports:
        click.echo(f"{'PASS' if r.passed else 'FAIL'} {r.bound_name}: measured {r.measured:.4f} "
                   f"<= bound {r.bound:.4f} + slack {r.slack:.4f}")
    click.echo(f"{passed}/{len(reports)} configurations passed")
    if out_path:
        Path(out_path).write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    sys.exit(0 if passed == len(reports) else 1)


if __name__ == "__main__":
    main()
