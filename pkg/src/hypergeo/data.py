"""Synthetic hierarchical datasets embedded in the Poincare ball."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ball
from .errors import InvalidInputError


@dataclass
class DatasetConfig:
    """Generation settings.

    The tree is balanced with ``branching ** depth`` leaves; ``classes`` of
    them (all when ``None``) become labelled classes with ``per_class``
    points each. Offsets from parent to child anchor shrink by ``decay`` per
    level. Noise is isotropic with per-coordinate std ``noise_scale`` plus a
    component of std ``nuisance_scale`` along ``nuisance_dims`` fixed random
    directions shared by every class.
    """

    depth: int = 3
    branching: int = 4
    classes: int | None = None
    dim: int = 64
    noise_scale: float = 0.02
    per_class: int = 30
    kappa: float = 0.5
    root_scale: float = 1.0
    decay: float = 0.6
    nuisance_dims: int = 0
    nuisance_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.depth < 2 or self.branching < 2:
            raise InvalidInputError("depth and branching must both be >= 2")
        leaves = self.branching**self.depth
        if self.classes is None:
            self.classes = leaves
        if not 2 <= self.classes <= leaves:
            raise InvalidInputError(f"classes must lie in [2, {leaves}], got {self.classes}")
        if self.dim < 2 or self.per_class < 1:
            raise InvalidInputError("dim must be >= 2 and per_class >= 1")
        if self.noise_scale < 0 or self.nuisance_scale < 0:
            raise InvalidInputError("noise scales must be non-negative")
        if not 0 <= self.nuisance_dims <= self.dim:
            raise InvalidInputError("nuisance_dims must lie in [0, dim]")
        ball.check_kappa(self.kappa)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticDataset:
    points: np.ndarray  # (m, n) base-ball coordinates
    labels: np.ndarray  # (m,)
    tree: np.ndarray  # parent index per tree node, root has -1
    class_nodes: np.ndarray  # tree node of each class label
    config: DatasetConfig
    kappa: float = field(init=False)

    def __post_init__(self):
        self.kappa = float(self.config.kappa)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def class_ids(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))


def benchmark_config(seed: int = 0, **overrides) -> DatasetConfig:
    """Settings of the standard few-shot training benchmark.

    Classes sit closer together than in the default hierarchy and share
    eight nuisance directions, so a fraction of queries are ambiguous under
    the fixed distance and there is structure a learned metric can carry
    over to held-out classes.
    """
    params = dict(root_scale=0.25, noise_scale=0.04, nuisance_dims=8, nuisance_scale=0.12)
    params.update(overrides)
    return DatasetConfig(seed=seed, **params)


def _balanced_tree(depth: int, branching: int) -> tuple[np.ndarray, np.ndarray]:
    parents = [-1]
    levels = [0]
    frontier = [0]
    for level in range(1, depth + 1):
        nxt = []
        for node in frontier:
            for _ in range(branching):
                parents.append(node)
                levels.append(level)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return np.array(parents), np.array(levels)


def generate_tree_dataset(config: DatasetConfig) -> SyntheticDataset:
    """Sample labelled points around the leaves of a random balanced tree.

    Anchors live in the tangent space at the origin: the root sits at 0 and
    each child is its parent plus an outward-pointing random offset of
    length ``root_scale * decay**(level - 1)``. Points are ``exp_0`` of a
    leaf anchor plus noise.
    """
    rng = np.random.default_rng(config.seed)
    n = config.dim
    parents, levels = _balanced_tree(config.depth, config.branching)
    anchors = np.zeros((len(parents), n))
    for node in range(1, len(parents)):
        base = anchors[parents[node]]
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        if np.dot(u, base) < 0.0:
            u = -u
        anchors[node] = base + config.root_scale * config.decay ** (levels[node] - 1) * u

    leaves = np.flatnonzero(levels == config.depth)
    class_nodes = np.sort(rng.choice(leaves, size=config.classes, replace=False))

    nuisance = np.zeros((0, n))
    if config.nuisance_dims:
        q, _ = np.linalg.qr(rng.standard_normal((n, config.nuisance_dims)))
        nuisance = q.T

    per = config.per_class
    tangent = np.repeat(anchors[class_nodes], per, axis=0)
    tangent += config.noise_scale * rng.standard_normal(tangent.shape)
    if len(nuisance):
        coeff = config.nuisance_scale * rng.standard_normal((len(tangent), len(nuisance)))
        tangent += coeff @ nuisance
    points = ball.exp_map0(tangent, config.kappa)
    labels = np.repeat(np.arange(config.classes), per)
    return SyntheticDataset(points, labels, parents, class_nodes, config)


def gaussian_cloud_like(dataset: SyntheticDataset, seed: int = 0) -> np.ndarray:
    """Structureless control with the same size, dimension and tangent spread.

    i.i.d. Gaussian tangent vectors matching the per-coordinate std of the
    dataset's tangent coordinates, mapped into the same ball.
    """
    rng = np.random.default_rng(seed)
    tangent = ball.log_map0(dataset.points, dataset.kappa)
    std = tangent.std(axis=0, keepdims=True)
    return ball.exp_map0(std * rng.standard_normal(tangent.shape), dataset.kappa)


def split_classes(class_ids, holdout_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, held-out) class id arrays, both sorted."""
    class_ids = np.asarray(class_ids)
    if not 0.0 < holdout_fraction < 1.0:
        raise InvalidInputError("holdout_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(class_ids)
    cut = int(round(len(perm) * (1.0 - holdout_fraction)))
    return np.sort(perm[:cut]), np.sort(perm[cut:])
