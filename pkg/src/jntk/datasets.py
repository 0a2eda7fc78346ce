"""Dataset generation and CSV ingestion with the experiment preprocessing.

Synthetic data comes from a deterministic low-discrepancy spiral on the
unit hypersphere (a Fibonacci-lattice generalisation: the first polar
angle is stratified through the exact inverse CDF of its sphere marginal,
the remaining angles advance by quasirandom irrational rotations derived
from generalised golden ratios).  CSV data is scaled per feature to
[-1, 1], row-normalised to the unit sphere, and near-parallel rows are
greedily filtered keeping the earlier row.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


@dataclass
class Dataset:
    inputs: np.ndarray          # (N, d0), unit rows
    targets: np.ndarray         # (N,), in [-1, 1]
    provenance: str             # "synthetic_sphere" | "csv"
    name: str

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d0(self) -> int:
        return self.inputs.shape[1]

    def validate(self) -> None:
        norms = np.linalg.norm(self.inputs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise DomainError("dataset inputs must have unit norm")
        if np.any(np.abs(self.targets) > 1.0):
            raise DomainError("dataset targets must lie in [-1, 1]")


def _generalised_golden(count: int) -> np.ndarray:
    """Irrational rotation constants: powers of the root of x^(d+1) = x + 1.

    For count = 1 this reduces to 1/phi with phi the golden ratio.
    """
    d = count
    root = 1.5
    for _ in range(60):
        root = (1.0 + root) ** (1.0 / (d + 1))
    return np.array([root ** -(j + 1) for j in range(count)])


def _inverse_sin_power_cdf(u: np.ndarray, k: int) -> np.ndarray:
    """Inverse CDF on [0, pi] of the density proportional to sin^k."""
    if k == 0:
        return np.pi * u
    if k == 1:
        return np.arccos(1.0 - 2.0 * u)
    if k == 2:
        # cdf(psi) = (psi - sin psi cos psi) / pi; monotone, solved by bisection
        lo = np.zeros_like(u)
        hi = np.full_like(u, np.pi)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = (mid - np.sin(mid) * np.cos(mid)) / np.pi < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)
    # generic k: dense-grid inverse (accuracy ~1e-7 is ample for a lattice)
    grid = np.linspace(0.0, np.pi, 8193)
    pdf = np.sin(grid) ** k
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(grid))])
    cdf /= cdf[-1]
    return np.interp(u, cdf, grid)


def fibonacci_sphere(n: int, dim: int) -> Dataset:
    """Deterministic low-discrepancy point set on the unit (dim-1)-sphere.

    Targets are hemisphere labels: +1 where the first coordinate is
    non-negative, else -1.
    """
    if n < 2:
        raise DomainError(f"need at least 2 points, got {n}")
    if dim < 2:
        raise DomainError(f"dimension must be >= 2, got {dim}")
    idx = np.arange(n)
    if dim == 2:
        angle = 2.0 * np.pi * np.mod(idx / GOLDEN, 1.0)
        points = np.stack([np.cos(angle), np.sin(angle)], axis=1)
    else:
        stratified = (idx + 0.5) / n
        alphas = _generalised_golden(dim - 2)
        angles = [_inverse_sin_power_cdf(stratified, dim - 2)]
        for j, k in enumerate(range(dim - 3, 0, -1)):
            u = np.mod(idx * alphas[j] + 0.5, 1.0)
            angles.append(_inverse_sin_power_cdf(u, k))
        azimuth = 2.0 * np.pi * np.mod(idx * alphas[-1], 1.0)
        points = np.empty((n, dim))
        sin_prod = np.ones(n)
        for c, ang in enumerate(angles):
            points[:, c] = sin_prod * np.cos(ang)
            sin_prod = sin_prod * np.sin(ang)
        points[:, dim - 2] = sin_prod * np.cos(azimuth)
        points[:, dim - 1] = sin_prod * np.sin(azimuth)
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    targets = np.where(points[:, 0] >= 0.0, 1.0, -1.0)
    return Dataset(points, targets, "synthetic_sphere", f"sphere_n{n}_d{dim}")


def covering_radius(points: np.ndarray, probes: int = 100_000, seed: int = 0) -> float:
    """Geodesic covering radius estimated with random unit probes."""
    rng = np.random.Generator(np.random.Philox(seed))
    p = rng.standard_normal((probes, points.shape[1]))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    nearest = np.clip((p @ points.T).max(axis=1), -1.0, 1.0)
    return float(np.arccos(nearest).max())


def load_csv(
    path: str, target_column: str, parallel_threshold: float = 0.99
) -> tuple[Dataset, list[int]]:
    """Ingest a numeric CSV: scale, normalise, then filter near-parallel rows.

    Features are scaled per column to [-1, 1] using the file's min/max,
    rows are normalised to the unit sphere, and a row is dropped when its
    absolute cosine with any earlier kept row exceeds the threshold
    (first seen wins).  Returns the dataset and the dropped row indices
    (0-based, in file order).
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if target_column not in header:
            raise ConfigError(f"{path}: no column named {target_column!r}")
        t_idx = header.index(target_column)
        raw = []
        for r, row in enumerate(reader):
            if not row:
                continue
            vals = []
            for c, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ConfigError(
                        f"{path}: non-numeric cell at row {r + 2}, column {header[c]!r}: {cell!r}"
                    ) from None
            raw.append(vals)
    if not raw:
        raise ConfigError(f"{path}: no data rows")
    data = np.asarray(raw, dtype=float)
    target_raw = data[:, t_idx]
    features = np.delete(data, t_idx, axis=1)

    classes = np.unique(target_raw)
    if set(classes.tolist()) <= {-1.0, 1.0}:
        targets = target_raw.copy()
    elif classes.shape[0] == 2:
        targets = np.where(target_raw == classes[0], -1.0, 1.0)
    else:
        raise ConfigError(
            f"{path}: target column {target_column!r} must be binary, "
            f"found {classes.shape[0]} distinct values"
        )

    lo = features.min(axis=0)
    hi = features.max(axis=0)
    flat = np.flatnonzero(hi - lo == 0.0)
    if flat.size:
        names = [h for c, h in enumerate(header) if c != t_idx]
        raise ConfigError(f"{path}: constant feature column {names[int(flat[0])]!r}")
    scaled = 2.0 * (features - lo) / (hi - lo) - 1.0

    norms = np.linalg.norm(scaled, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ConfigError(f"{path}: row {int(zero[0]) + 2} is all zero after scaling")
    unit = scaled / norms[:, None]

    kept_rows: list[np.ndarray] = []
    kept_idx: list[int] = []
    removed: list[int] = []
    for i in range(unit.shape[0]):
        row = unit[i]
        if kept_rows and np.max(np.abs(np.stack(kept_rows) @ row)) > parallel_threshold:
            removed.append(i)
        else:
            kept_rows.append(row)
            kept_idx.append(i)
    inputs = unit[kept_idx]
    inputs /= np.linalg.norm(inputs, axis=1, keepdims=True)
    ds = Dataset(inputs, targets[kept_idx], "csv", os.path.splitext(os.path.basename(path))[0])
    ds.validate()
    return ds, removed


def save_dataset(ds: Dataset, path: str, config_hash: str | None = None) -> None:
    """Cache format: columns x0..x{d0-1},y (optional leading hash comment)."""
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_sha256={config_hash}\n")
        fh.write(",".join([f"x{c}" for c in range(ds.d0)] + ["y"]) + "\n")
        for i in range(ds.n):
            cells = [repr(float(v)) for v in ds.inputs[i]] + [repr(float(ds.targets[i]))]
            fh.write(",".join(cells) + "\n")


def load_cached(path: str) -> Dataset:
    """Read the x0..x{d0-1},y cache format back."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        while header and header[0].startswith("#"):
            header = next(reader)
        rows = [[float(c) for c in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    ds = Dataset(data[:, :-1], data[:, -1], "csv", os.path.splitext(os.path.basename(path))[0])
    ds.validate()
    return ds
