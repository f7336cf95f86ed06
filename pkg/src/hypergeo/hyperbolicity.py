"""Gromov products and delta-hyperbolicity of finite metric spaces."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import ball
from .errors import EmptyInputError, InsufficientPointsError, InvalidInputError, ShapeError

CSV_FIELDS = ("delta", "diam", "delta_rel", "sample_size", "trials", "seed")

# bytes budget for one slab of the (rows, m, m) max-min intermediate
_SLAB_BYTES = 64 * 2**20


@dataclass
class HyperbolicityReport:
    delta: float
    diam: float
    delta_rel: float
    num_samples: int
    num_trials: int = 1
    seed: int | None = None
    delta_rel_std: float = 0.0

    def csv_row(self) -> list:
        return [repr(self.delta), repr(self.diam), repr(self.delta_rel),
                self.num_samples, self.num_trials, "" if self.seed is None else self.seed]

    def to_dict(self) -> dict:
        return asdict(self)


def _check_distance_matrix(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeError(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("distance matrix has non-finite entries")
    return d


def gromov_products(d, base: int = 0) -> np.ndarray:
    """``A[i, j] = (d[base, i] + d[base, j] - d[i, j]) / 2``."""
    d = _check_distance_matrix(d)
    m = d.shape[0]
    if not 0 <= base < m:
        raise IndexError(f"base index {base} out of range for {m} points")
    row = d[base]
    return 0.5 * (row[:, None] + row[None, :] - d)


def max_min_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(A (x) B)[i, j] = max_k min(A[i, k], B[k, j])``, evaluated in row slabs."""
    m, inner = a.shape
    out = np.empty((m, b.shape[1]))
    rows = max(1, _SLAB_BYTES // (8 * inner * b.shape[1]))
    for start in range(0, m, rows):
        stop = min(m, start + rows)
        out[start:stop] = np.max(np.minimum(a[start:stop, :, None], b[None, :, :]), axis=1)
    return out


def delta_hyperbolicity(d, base: int = 0) -> HyperbolicityReport:
    """delta = max_ij [max_k min(A_ik, A_kj) - A_ij] with Gromov products at ``base``."""
    d = _check_distance_matrix(d)
    m = d.shape[0]
    if m < 3:
        raise InsufficientPointsError(f"delta-hyperbolicity needs at least 3 points, got {m}")
    a = gromov_products(d, base)
    delta = float(np.max(max_min_product(a, a) - a))
    diam = float(np.max(d))
    delta_rel = 2.0 * delta / diam if diam > 0.0 else 0.0
    return HyperbolicityReport(delta, diam, delta_rel, m)


def distance_matrix(points, metric: str = "euclidean", kappa: float | None = None) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if metric == "euclidean":
        return cdist(points, points)
    if metric == "poincare":
        if kappa is None:
            raise InvalidInputError("poincare metric needs kappa")
        return ball.pairwise_distances(points, kappa)
    raise InvalidInputError(f"unknown metric {metric!r}")


def delta_rel_sampled(points, metric: str = "euclidean", kappa: float | None = None,
                      sample_size: int = 200, trials: int = 100, seed: int = 0,
                      threads: int = 1) -> HyperbolicityReport:
    """Mean relative delta over random subsamples.

    Each trial draws ``sample_size`` distinct points with its own child seed,
    so the result does not depend on ``threads``. ``delta`` and ``diam`` are
    trial means; ``delta_rel`` is the mean of the per-trial ratios.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise EmptyInputError("no points to measure")
    if sample_size < 3:
        raise InsufficientPointsError(f"sample_size must be >= 3, got {sample_size}")
    if sample_size > len(points):
        raise InvalidInputError(f"sample_size {sample_size} exceeds the {len(points)} points")
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    children = np.random.SeedSequence(seed).spawn(trials)

    def one(child):
        idx = np.random.default_rng(child).choice(len(points), sample_size, replace=False)
        return delta_hyperbolicity(distance_matrix(points[idx], metric, kappa))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            reports = list(pool.map(one, children))
    else:
        reports = [one(c) for c in children]
    rel = np.array([r.delta_rel for r in reports])
    return HyperbolicityReport(
        delta=float(np.mean([r.delta for r in reports])),
        diam=float(np.mean([r.diam for r in reports])),
        delta_rel=float(rel.mean()),
        num_samples=sample_size,
        num_trials=trials,
        seed=seed,
        delta_rel_std=float(rel.std()),
    )
