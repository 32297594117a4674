"""File formats: wide functional CSV, scalar covariate CSV, draw stores,
and the JSON run manifest.

Functional data travel as wide CSV with header ``id,s_1,...,s_T`` where the
s_j are the numeric grid points; one row per curve. Draw stores are a
directory holding ``draws.csv`` (one row per retained draw), allocation
snapshots, latent-score snapshots, and a manifest. All writers go through a
``.partial`` rename so interrupted runs never leave a well-named file behind.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict

import numpy as np

from .errors import DomainError, IdMismatch, MalformedCsv, NonNumericCell
from .fda import FunctionalDataset, build_grid
from .model import McmcConfig, PosteriorDraws


def _fmt(v: float) -> str:
    return repr(float(v))


def _parse_cell(text: str, row: int, col: int, path: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise NonNumericCell(
            f"{path}: non-numeric cell at row {row}, column {col}: {text!r}"
        ) from None


def atomic_write(path: str, writer) -> None:
    """Write through a .partial temp file and rename into place."""
    tmp = path + ".partial"
    with open(tmp, "w", newline="") as fh:
        writer(fh)
    os.replace(tmp, path)


def read_functional_csv(path: str) -> FunctionalDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header = rows[0]
    if len(header) < 3 or header[0] != "id":
        raise MalformedCsv(f"{path}: expected header id,s_1,...,s_T")
    points = np.array([_parse_cell(c, 0, j + 1, path) for j, c in enumerate(header[1:])])
    grid = build_grid(points)
    ids = []
    values = np.empty((len(rows) - 1, grid.T))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        ids.append(row[0])
        values[i - 1] = [_parse_cell(c, i, j + 1, path) for j, c in enumerate(row[1:])]
    return FunctionalDataset(grid=grid, values=values, curve_ids=tuple(ids))


def write_functional_csv(path: str, data: FunctionalDataset) -> None:
    def go(fh):
        w = csv.writer(fh)
        w.writerow(["id"] + [_fmt(s) for s in data.grid.points])
        for cid, row in zip(data.curve_ids, data.values):
            w.writerow([cid] + [_fmt(v) for v in row])

    atomic_write(path, go)


def read_scalars_csv(path: str):
    """Read ``id,y,z_1,...,z_p`` and return (ids, y, z)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2 or header[0] != "id" or header[1] != "y":
        raise MalformedCsv(f"{path}: expected header id,y,z_1,...,z_p")
    p = len(header) - 2
    ids, y, z = [], [], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        ids.append(row[0])
        y.append(_parse_cell(row[1], i, 1, path))
        z.append([_parse_cell(c, i, j + 2, path) for j, c in enumerate(row[2:])])
    return tuple(ids), np.array(y), np.array(z).reshape(len(ids), p)


def align_to_ids(data: FunctionalDataset, ids: tuple) -> FunctionalDataset:
    """Reorder curves to match the given id order; every id must be present."""
    index = {cid: k for k, cid in enumerate(data.curve_ids)}
    missing = [cid for cid in ids if cid not in index]
    if missing:
        raise IdMismatch(f"ids missing from functional file: {missing[:5]}")
    if len(set(ids)) != len(ids):
        raise IdMismatch("duplicate ids in scalar file")
    rows = [index[cid] for cid in ids]
    return FunctionalDataset(grid=data.grid, values=data.values[rows], curve_ids=tuple(ids))


def apply_log2(data: FunctionalDataset) -> FunctionalDataset:
    bad = np.argwhere(data.values <= 0)
    if bad.size:
        i, j = bad[0]
        raise DomainError(
            f"log2 of non-positive value {data.values[i, j]!r} "
            f"(curve {data.curve_ids[i]!r}, grid index {j})"
        )
    return FunctionalDataset(
        grid=data.grid, values=np.log2(data.values), curve_ids=data.curve_ids
    )


def draws_columns(p: int, K: int) -> list:
    return (
        ["iteration", "alpha0"]
        + [f"beta_z_{j + 1}" for j in range(p)]
        + [f"gamma_{k + 1}" for k in range(K)]
        + ["tau"]
    )


def write_draws_csv(path: str, draws: PosteriorDraws) -> None:
    p = draws.beta_z.shape[1]
    K = draws.gamma.shape[1]

    def go(fh):
        w = csv.writer(fh)
        w.writerow(draws_columns(p, K))
        for d in range(draws.draw_count):
            row = (
                [str(int(draws.iterations[d])), _fmt(draws.alpha0[d])]
                + [_fmt(v) for v in draws.beta_z[d]]
                + [_fmt(v) for v in draws.gamma[d]]
                + [_fmt(draws.tau[d])]
            )
            w.writerow(row)

    atomic_write(path, go)


def read_draws_csv(path: str) -> PosteriorDraws:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header = rows[0]
    if header[:2] != ["iteration", "alpha0"] or header[-1] != "tau":
        raise MalformedCsv(f"{path}: unexpected draws header")
    p = sum(1 for c in header if c.startswith("beta_z_"))
    K = sum(1 for c in header if c.startswith("gamma_"))
    if len(header) != 3 + p + K:
        raise MalformedCsv(f"{path}: inconsistent draws header")
    body = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        body[i - 1] = [_parse_cell(c, i, j, path) for j, c in enumerate(row)]
    return PosteriorDraws(
        iterations=body[:, 0].astype(int),
        alpha0=body[:, 1],
        beta_z=body[:, 2 : 2 + p],
        gamma=body[:, 2 + p : 2 + p + K],
        tau=body[:, -1],
        x_allocations=None,
        xtilde_iterations=None,
        xtilde=None,
    )


def save_draw_store(out_dir: str, draws: PosteriorDraws, config: McmcConfig, manifest_extra: dict | None = None) -> None:
    """Persist draws.csv, allocation and latent-score snapshots, and the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    write_draws_csv(os.path.join(out_dir, "draws.csv"), draws)

    if draws.x_allocations is not None and draws.x_allocations.size:
        def go(fh):
            w = csv.writer(fh)
            n = draws.x_allocations.shape[1]
            w.writerow(["iteration"] + [f"obs_{i + 1}" for i in range(n)])
            for d in range(draws.x_allocations.shape[0]):
                w.writerow(
                    [str(int(draws.iterations[d]))]
                    + [str(int(v)) for v in draws.x_allocations[d]]
                )

        atomic_write(os.path.join(out_dir, "allocations.csv"), go)

    if draws.xtilde is not None and len(draws.xtilde):
        tmp = os.path.join(out_dir, "xtilde.npz.partial")
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                xtilde=np.asarray(draws.xtilde),
                iterations=np.asarray(draws.xtilde_iterations),
            )
        os.replace(tmp, os.path.join(out_dir, "xtilde.npz"))

    manifest = {"config": asdict(config)}
    if manifest_extra:
        manifest.update(manifest_extra)

    def gom(fh):
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")

    atomic_write(os.path.join(out_dir, "run_manifest.json"), gom)


def load_draw_store(out_dir: str) -> PosteriorDraws:
    draws = read_draws_csv(os.path.join(out_dir, "draws.csv"))
    alloc_path = os.path.join(out_dir, "allocations.csv")
    x_allocations = None
    if os.path.exists(alloc_path):
        with open(alloc_path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = np.array(
            [[_parse_cell(c, i, j, alloc_path) for j, c in enumerate(row)]
             for i, row in enumerate(rows[1:], start=1)]
        )
        if body.size:
            x_allocations = body[:, 1:].astype(int)
    xt_path = os.path.join(out_dir, "xtilde.npz")
    xtilde = xtilde_iterations = None
    if os.path.exists(xt_path):
        with np.load(xt_path) as z:
            xtilde = z["xtilde"]
            xtilde_iterations = z["iterations"]
    return PosteriorDraws(
        iterations=draws.iterations,
        alpha0=draws.alpha0,
        beta_z=draws.beta_z,
        gamma=draws.gamma,
        tau=draws.tau,
        x_allocations=x_allocations,
        xtilde_iterations=xtilde_iterations,
        xtilde=xtilde,
    )
