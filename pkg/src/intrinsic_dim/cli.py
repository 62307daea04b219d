"""Command line entry point."""
from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from . import harness
from .datasets import add_gaussian_noise, add_outliers
from .errors import IDError
from .geometry import load_csv, save_csv
from .registry import EstimatorConfig, list_estimators, parse_assignments, run_estimator
from .report import report_to_json


def _fail(exc):
    raise click.ClickException(str(exc)) from exc


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def read_sweep_file(path, seed=None) -> harness.SweepConfig:
    """Line-oriented sweep description.

        datasets = M7_Roll Sphere:d=2,D=3
        sizes = 625 2500
        runs = 20
        seed = 0
        estimator = mle k=10,20 agg=mean,hmean
        estimator = lpca k=80 threshold=fo

    Lists are space separated; hyperparameter values are comma separated.
    """
    fields = {"datasets": [], "sizes": ["2500"], "runs": "20", "seed": "0"}
    grids = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not value:
            raise click.ClickException(f"{path}:{lineno}: expected 'key = value'")
        if key == "estimator":
            name, *assign = value.split()
            grid = {k: v.split(",") for k, v in parse_assignments(assign).items()}
            grids.append(harness.GridSpec(name, grid))
        elif key in ("datasets", "sizes"):
            fields[key] = value.split()
        elif key in ("runs", "seed"):
            fields[key] = value
        else:
            raise click.ClickException(f"{path}:{lineno}: unknown key {key!r}")
    return harness.SweepConfig(tuple(fields["datasets"]), tuple(int(s) for s in fields["sizes"]), tuple(grids),
                               int(fields["runs"]), int(fields["seed"] if seed is None else seed))


def _write_rows(path, rows):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(v, sort_keys=True) if isinstance(v, dict) else v for k, v in r.items()})


def _finish(table, out_dir, stem, allow_failures):
    table.write_csv(out_dir / f"{stem}.csv")
    (out_dir / f"{stem}.json").write_text(table.to_json())
    failed = table.n_failed
    click.echo(f"{len(table)} rows, {failed} failed runs -> {out_dir / stem}.csv")
    if failed and not allow_failures:
        sys.exit(1)


@click.group()
def main():
    """Intrinsic dimension estimators and experiment harness."""


@main.command()
@click.option("--dataset", required=True, help="e.g. M7_Roll or Sphere:d=2,D=3")
@click.option("--n", "n", type=int, required=True, help="number of points")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def generate(dataset, n, seed, out):
    """Sample a benchmark dataset and write it as CSV."""
    try:
        cloud = harness.make_cloud(dataset, n, seed)
    except IDError as exc:
        _fail(exc)
    save_csv(cloud, out)
    click.echo(f"{cloud.n} x {cloud.ambient_dim} -> {out}")


@main.command()
@click.argument("infile", type=click.Path(exists=True, dir_okay=False))
@click.option("--gaussian", "sigma2", type=float, help="noise variance")
@click.option("--outliers", "n_out", type=int, help="number of points to push outwards")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def corrupt(infile, sigma2, n_out, seed, out):
    """Add Gaussian noise or outliers to a CSV point cloud."""
    if (sigma2 is None) == (n_out is None):
        raise click.UsageError("give exactly one of --gaussian or --outliers")
    cloud = load_csv(infile)
    try:
        cloud = add_gaussian_noise(cloud, sigma2, seed) if sigma2 is not None else add_outliers(cloud, n_out, seed)
    except IDError as exc:
        _fail(exc)
    save_csv(cloud, out)


@main.command(context_settings={"ignore_unknown_options": True, "allow_extra_args": True})
@click.option("--estimator", required=True)
@click.option("--input", "infile", type=click.Path(exists=True, dir_okay=False), help="CSV point cloud")
@click.option("--dataset", help="sample a dataset instead of reading a CSV")
@click.option("--n", "n", type=int, default=2500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--param", "params", multiple=True, help="hyperparameter key=value")
@click.option("--locals", "with_locals", is_flag=True, help="include per-point estimates")
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--curve-out", type=click.Path(dir_okay=False), help="magnitude only: write the (t, value) curve")
@click.pass_context
def estimate(ctx, estimator, infile, dataset, n, seed, params, with_locals, out, curve_out):
    """Run one estimator. Extra '--key value' pairs are read as hyperparameters."""
    extra = list(ctx.args)
    hyper = parse_assignments(params)
    while extra:
        key = extra.pop(0)
        if not key.startswith("--") or not extra:
            raise click.UsageError(f"cannot read hyperparameter from {key!r}")
        hyper[key[2:].replace("-", "_")] = extra.pop(0)
    if (infile is None) == (dataset is None):
        raise click.UsageError("give exactly one of --input or --dataset")
    try:
        cloud = load_csv(infile) if infile else harness.make_cloud(dataset, n, seed)
        config = EstimatorConfig(estimator, hyper)
        report = run_estimator(cloud, config)
    except IDError as exc:
        _fail(exc)
    text = report_to_json(report, estimator, config.resolved(), with_locals)
    if curve_out:
        if "magnitude" not in report.diagnostics:
            raise click.UsageError("--curve-out needs the magnitude estimator")
        _write_rows(curve_out, ({"t": float(t), "value": float(v)} for t, v in
                                zip(report.diagnostics["t"], report.diagnostics["magnitude"])))
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


@main.command(name="list")
def list_cmd():
    """Registered estimators with their hyperparameter defaults."""
    click.echo(json.dumps(list_estimators(), indent=1))


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, help="override the master seed")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", default="results", show_default=True)
@click.option("--allow-failures", is_flag=True)
def bench(config, seed, jobs, out_dir, allow_failures):
    """Benchmark sweep described by a CONFIG file."""
    try:
        table = harness.bench_run(read_sweep_file(config, seed), jobs)
    except IDError as exc:
        _fail(exc)
    _finish(table, _out_dir(out_dir), "bench", allow_failures)


@main.command()
@click.argument("results", type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", multiple=True, help="dataset=d, overriding the built-in dimension")
@click.option("--out-dir", default="results", show_default=True)
def select(results, truth, out_dir):
    """best / med_abs / med_rel choices from a bench JSON file."""
    table = harness.ResultTable.from_json(Path(results).read_text())
    known = {r.dataset for r in table.rows}
    truths = {}
    for ds in known:
        try:
            truths[ds] = harness.dataset_truth(ds)
        except IDError:
            pass
    truths.update({k: float(v) for k, v in parse_assignments(truth).items()})
    missing = known - set(truths)
    if missing:
        raise click.UsageError(f"no intrinsic dimension for {sorted(missing)}; pass --truth")
    try:
        rows = harness.hyperparam_select(table, truths)
    except IDError as exc:
        _fail(exc)
    path = _out_dir(out_dir) / "selection.csv"
    _write_rows(path, rows)
    click.echo(f"{len(rows)} rows -> {path}")


@main.command()
@click.option("--kind", type=click.Choice(["gaussian", "outliers"]), default="gaussian", show_default=True)
@click.option("--level", "levels", type=float, multiple=True, help="noise variance or outlier count")
@click.option("--estimator", "estimators", multiple=True,
              help="'name key=value ...'; defaults to the fixed noise settings")
@click.option("--n", "n", type=int, default=2500, show_default=True)
@click.option("--runs", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", default="results", show_default=True)
@click.option("--allow-failures", is_flag=True)
def noise(kind, levels, estimators, n, runs, seed, jobs, out_dir, allow_failures):
    """Estimates on S^6, S^10 and SO(4) under Gaussian noise or outliers."""
    configs = harness.NOISE_CONFIGS
    if estimators:
        configs = []
        for spec in estimators:
            name, *assign = spec.split()
            configs.append(EstimatorConfig(name, parse_assignments(assign)))
    if kind == "outliers":
        levels = tuple(int(v) for v in levels)
    try:
        table = harness.noise_experiment(kind, levels or None, configs, n=n, runs=runs, master_seed=seed,
                                         jobs=jobs)
    except IDError as exc:
        _fail(exc)
    _finish(table, _out_dir(out_dir), f"noise_{kind}", allow_failures)


@main.command()
@click.option("--kind", type=click.Choice(["paraboloid", "torus"]), required=True)
@click.option("--estimator", default=None, help="default: lpca for paraboloids, mle for the torus")
@click.option("--param", "params", multiple=True, help="fixed hyperparameter key=value")
@click.option("--b", "b_grid", type=float, multiple=True, help="paraboloid b values")
@click.option("--sign", type=click.Choice(["1", "-1"]), default="1", show_default=True)
@click.option("--k", "k", type=int, default=10, show_default=True, help="torus neighbourhood size")
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", default="results", show_default=True)
def curvature(kind, estimator, params, b_grid, sign, k, repeats, seed, out_dir):
    """Pointwise estimates at a paraboloid's origin, or torus overestimates against tube angle."""
    out = _out_dir(out_dir)
    hyper = parse_assignments(params)
    try:
        if kind == "paraboloid":
            res = harness.curvature_paraboloid(estimator or "lpca", tuple(b_grid) or (1.0, 2.0, 4.0), int(sign),
                                               repeats=repeats, params=hyper, master_seed=seed)
            _write_rows(out / "paraboloid.csv", res["rows"])
            _write_rows(out / "paraboloid_summary.csv", res["summary"])
            click.echo(f"{len(res['rows'])} rows -> {out / 'paraboloid.csv'}")
        else:
            res = harness.curvature_torus(estimator or "mle", k, params=hyper, master_seed=seed)
            _write_rows(out / "torus_cdf.csv", res["rows"])
            click.echo(f"{res['n_over']} overestimated points, KS p = {res['ks_pvalue']:.3g}")
    except IDError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
