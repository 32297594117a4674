"""Command-line front end.

Four commands: ``fit`` runs the full pipeline on CSV inputs (scaling-function
estimate, instrument rescaling, basis projection, MCMC, summaries);
``simulate`` runs the replicated MSIE study; ``delta`` estimates the
instrument scaling function alone; ``summarize`` recomputes summaries from a
stored draw directory. Configuration comes from a TOML file with flat
sections; command-line flags win over file values. Every failure exits
nonzero with a single-line JSON diagnostic on stderr.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import sys
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import click
import numpy as np

from . import __version__
from .delta import default_bandwidth, estimate_delta, scale_instrument
from .errors import SofriError
from .fda import build_bspline_basis, build_grid, project
from .io import (
    align_to_ids,
    apply_log2,
    atomic_write,
    load_draw_store,
    read_functional_csv,
    read_scalars_csv,
    save_draw_store,
)
from .model import McmcConfig, ModelInputs, run_chains
from .posterior import cluster_contrast, extract_clusters, summarize_beta, summarize_scalars
from .simulate import Scenario, report_to_dict, run_study


def _fail(exc: Exception) -> None:
    line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
    click.echo(line, err=True)
    sys.exit(1)


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _mcmc_from_config(section: dict, seed: int | None) -> McmcConfig:
    known = {f.name for f in dataclasses.fields(McmcConfig)}
    extra = set(section) - known
    if extra:
        raise SofriError(f"unknown mcmc config keys: {sorted(extra)}")
    cfg = McmcConfig(**section)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


@click.group()
@click.version_option(version=__version__, prog_name="sofri")
def main():
    """Scalar-on-function regression with instrument-based error correction."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="override the configured seed")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="override output dir")
def fit(config_path, seed, out_dir):
    """Run the full pipeline on CSV inputs and write draws plus summaries."""
    try:
        cfg = _load_toml(config_path)
        paths = cfg.get("paths", {})
        out = out_dir or paths.get("out", "out")
        w_data = read_functional_csv(paths["w"])
        m_data = read_functional_csv(paths["m"])
        ids, y, z = read_scalars_csv(paths["scalars"])
        w_data = align_to_ids(w_data, ids)
        m_data = align_to_ids(m_data, ids)

        transform = cfg.get("transform", "none")
        if transform == "log2":
            w_data = apply_log2(w_data)
            m_data = apply_log2(m_data)
        elif transform != "none":
            raise SofriError(f"unknown transform {transform!r}")

        bw = cfg.get("delta", {}).get("bandwidth", 0.0) or default_bandwidth(w_data.grid)
        d_est = estimate_delta(w_data, m_data, bandwidth=bw)
        m_star = scale_instrument(m_data, d_est)

        basis_cfg = cfg.get("basis", {})
        basis = build_bspline_basis(
            w_data.grid, K=basis_cfg.get("K", 15), degree=basis_cfg.get("degree", 3)
        )
        wt = project(w_data, basis, source="W")
        mt = project(m_star, basis, source="M*")
        inputs = ModelInputs(y=y, z=z, wt=wt, mt=mt, basis=basis)

        mcmc = _mcmc_from_config(cfg.get("mcmc", {}), seed)
        t0 = time.time()
        draws = run_chains(inputs, mcmc)
        elapsed = time.time() - t0

        os.makedirs(out, exist_ok=True)
        save_draw_store(
            out,
            draws,
            mcmc,
            manifest_extra={
                "version": __version__,
                "elapsed_seconds": elapsed,
                "grid": [float(v) for v in w_data.grid.points],
                "basis": {"K": basis.K, "degree": basis.degree},
                "delta_bandwidth": bw,
                "transform": transform,
                "curve_ids": list(ids),
                "level": cfg.get("level", 0.9),
            },
        )
        _write_summaries(out, draws, basis, cfg.get("level", 0.9), ids)
    except Exception as exc:
        _fail(exc)


def _write_summaries(out, draws, basis, level, ids):
    beta = summarize_beta(draws, basis, level=level)

    def go_beta(fh):
        w = csv.writer(fh)
        w.writerow(["s", "mean", "lower", "upper"])
        for j, s in enumerate(beta.grid.points):
            w.writerow([repr(float(s)), repr(float(beta.mean[j])),
                        repr(float(beta.lower[j])), repr(float(beta.upper[j]))])

    atomic_write(os.path.join(out, "beta_summary.csv"), go_beta)

    rows = summarize_scalars(draws, level=level)

    def go_scalars(fh):
        w = csv.writer(fh)
        w.writerow(["name", "mean", "lower", "upper"])
        for r in rows:
            w.writerow([r["name"], repr(r["mean"]), repr(r["lower"]), repr(r["upper"])])

    atomic_write(os.path.join(out, "scalars.csv"), go_scalars)

    if draws.x_allocations is None or not np.asarray(draws.x_allocations).size:
        return
    clusters = extract_clusters(draws, basis)

    def go_labels(fh):
        w = csv.writer(fh)
        w.writerow(["id", "label"])
        for cid, lab in zip(ids, clusters.labels):
            w.writerow([cid, int(lab)])

    atomic_write(os.path.join(out, "clusters.csv"), go_labels)

    def go_means(fh):
        w = csv.writer(fh)
        w.writerow(["s"] + [f"cluster_{c + 1}" for c in range(clusters.n_clusters)])
        for j, s in enumerate(basis.grid.points):
            w.writerow([repr(float(s))] +
                       [repr(float(clusters.cluster_mean_curves[c, j]))
                        for c in range(clusters.n_clusters)])

    atomic_write(os.path.join(out, "cluster_means.csv"), go_means)

    nonempty = [c + 1 for c in range(clusters.n_clusters) if clusters.sizes[c] > 0]
    if len(nonempty) >= 2:
        order = sorted(nonempty, key=lambda c: -clusters.sizes[c - 1])
        a, b = order[0], order[1]
        mean, lower, upper = cluster_contrast(draws, clusters, a, b, basis, level=level)
        payload = {"cluster_a": a, "cluster_b": b,
                   "mean": mean, "lower": lower, "upper": upper, "level": level}

        def go_contrast(fh):
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

        atomic_write(os.path.join(out, "contrast.json"), go_contrast)


@main.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), default=None)
@click.option("--reps", type=int, default=None, help="override replicate count")
@click.option("--seed", type=int, default=None, help="override the configured seed")
@click.option("--out", "out_path", type=click.Path(), default="report.json")
@click.option("--jobs", type=int, default=1)
def simulate(scenario_path, reps, seed, out_path, jobs):
    """Run the replicated MSIE study and write a JSON report."""
    try:
        cfg = _load_toml(scenario_path)
        sc_keys = cfg.get("scenario", cfg)
        sc_keys = {k: v for k, v in sc_keys.items() if k not in ("mcmc", "study")}
        known = {f.name for f in dataclasses.fields(Scenario)}
        extra = set(sc_keys) - known
        if extra:
            raise SofriError(f"unknown scenario keys: {sorted(extra)}")
        if reps is not None:
            sc_keys["n_reps"] = reps
        if seed is not None:
            sc_keys["seed"] = seed
        scenario = Scenario(**sc_keys)

        study = cfg.get("study", {})
        mcmc = None
        if "mcmc" in cfg:
            mcmc = _mcmc_from_config(cfg["mcmc"], scenario.seed)
        report = run_study(
            scenario,
            estimator_ids=tuple(study.get("estimators", ("bayes_iv", "naive_w"))),
            mcmc=mcmc,
            basis_k=study.get("basis_k", 15),
            bandwidth=study.get("bandwidth"),
            oracle_delta=study.get("oracle_delta", True),
            n_jobs=jobs,
        )
        payload = report_to_dict(report)
        payload["version"] = __version__

        def go(fh):
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

        atomic_write(out_path, go)
    except Exception as exc:
        _fail(exc)


@main.command()
@click.option("--w", "w_path", required=True, type=click.Path(exists=True))
@click.option("--m", "m_path", required=True, type=click.Path(exists=True))
@click.option("--bandwidth", type=float, default=0.0, help="0 picks twice the grid spacing")
@click.option("--out", "out_path", type=click.Path(), default="delta.csv")
def delta(w_path, m_path, bandwidth, out_path):
    """Estimate the instrument scaling function from W and M files."""
    try:
        w_data = read_functional_csv(w_path)
        m_data = read_functional_csv(m_path)
        est = estimate_delta(w_data, m_data, bandwidth=bandwidth)

        def go(fh):
            w = csv.writer(fh)
            w.writerow(["s", "raw", "smoothed"])
            for j, s in enumerate(est.grid.points):
                w.writerow([repr(float(s)), repr(float(est.raw[j])),
                            repr(float(est.smoothed[j]))])

        atomic_write(out_path, go)
    except Exception as exc:
        _fail(exc)


@main.command()
@click.option("--draws", "draws_dir", required=True, type=click.Path(exists=True))
@click.option("--level", type=float, default=0.9)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def summarize(draws_dir, level, out_dir):
    """Recompute summaries from a stored draw directory."""
    try:
        with open(os.path.join(draws_dir, "run_manifest.json")) as fh:
            manifest = json.load(fh)
        grid = build_grid(np.array(manifest["grid"]))
        basis = build_bspline_basis(
            grid, K=manifest["basis"]["K"], degree=manifest["basis"]["degree"]
        )
        draws = load_draw_store(draws_dir)
        out = out_dir or draws_dir
        os.makedirs(out, exist_ok=True)
        _write_summaries(out, draws, basis, level, tuple(manifest["curve_ids"]))
    except Exception as exc:
        _fail(exc)
