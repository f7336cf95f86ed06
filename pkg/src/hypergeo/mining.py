"""Einstein-midpoint prototypes and ratio-test hard-pair mining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ball
from .errors import EmptyInputError, InsufficientPointsError, InvalidInputError, ShapeError


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # (p, n), rows ordered by class_ids
    class_ids: np.ndarray  # (p,), sorted ascending
    kappa: float

    def __len__(self) -> int:
        return len(self.class_ids)

    def index_of(self, labels) -> np.ndarray:
        """Column index of each label in the prototype ordering."""
        labels = np.asarray(labels)
        idx = np.searchsorted(self.class_ids, labels)
        idx = np.clip(idx, 0, len(self.class_ids) - 1)
        if not np.all(self.class_ids[idx] == labels):
            raise InvalidInputError("label without a prototype")
        return idx


def build_prototypes(support, labels, kappa: float) -> PrototypeSet:
    """One Einstein midpoint per class, classes sorted by label."""
    support = np.asarray(support, dtype=np.float64)
    labels = np.asarray(labels)
    if support.ndim != 2 or len(support) != len(labels):
        raise ShapeError("support must be (N, n) with one label per row")
    if len(labels) == 0:
        raise EmptyInputError("empty support set")
    class_ids = np.unique(labels)
    protos = np.stack([ball.einstein_midpoint(support[labels == c], kappa) for c in class_ids])
    return PrototypeSet(protos, class_ids, ball.check_kappa(kappa))


@dataclass
class HardSet:
    """Queries whose nearest/second-nearest prototype distance ratio exceeds ``threshold``.

    ``members`` and ``ratios`` describe the hard set; the per-query arrays
    (``d1``, ``d2``, ``all_ratios``, ``nearest``) cover every query and are
    kept for reporting.
    """

    members: np.ndarray
    ratios: np.ndarray
    threshold: float
    d1: np.ndarray
    d2: np.ndarray
    all_ratios: np.ndarray
    nearest: np.ndarray  # column index into the prototype set
    distances: np.ndarray  # (q, p) fixed geodesic distances

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(len(self.d1), dtype=bool)
        m[self.members] = True
        return m

    @property
    def fraction(self) -> float:
        return len(self.members) / max(len(self.d1), 1)


def nearest_two(distances: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest index and the two smallest distances per row; ties go to the lower column."""
    order = np.argsort(distances, axis=1, kind="stable")
    rows = np.arange(len(distances))
    d1 = distances[rows, order[:, 0]]
    d2 = distances[rows, order[:, 1]]
    return order[:, 0], d1, d2


def mine_hard(queries, protos: PrototypeSet, threshold: float) -> HardSet:
    """Select queries with ``d1 / d2 > threshold`` under the fixed geodesic distance."""
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"threshold must lie in [0, 1], got {threshold}")
    if len(protos) < 2:
        raise InsufficientPointsError("hard-pair mining needs at least two prototypes")
    queries = np.asarray(queries, dtype=np.float64)
    dist = ball.geodesic_distance(queries[:, None, :], protos.prototypes[None, :, :], protos.kappa)
    nearest, d1, d2 = nearest_two(dist)
    ratios = np.where(d1 == 0.0, 0.0, d1 / np.where(d2 > 0.0, d2, 1.0))
    members = np.flatnonzero(ratios > threshold)
    return HardSet(members, ratios[members], float(threshold), d1, d2, ratios, nearest, dist)
