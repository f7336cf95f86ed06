"""Geometry-aware hyperbolic distance.

For a pair ``(x_i, x_j)`` two small networks produce a projection
``M = I + M_a M_b^T`` (rank-``k`` residual) and a curvature ``c``; the
distance is the geodesic distance at curvature ``c`` between ``M (x)_c x_i``
and ``M (x)_c x_j``.

The generators read tangent coordinates at the origin of the base ball
(``log_map0`` at ``base_kappa``). Pairs are processed in batches of shape
``(P, n)``; everything below the feature step runs on :mod:`diffcore`
tensors so the same code serves training and inference.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from . import ball
from . import diffcore as dc
from .ball import BOUNDARY_EPS, DENOM_EPS
from .diffcore import Tensor
from .errors import InvalidInputError, ShapeError


@dataclass
class GHDMConfig:
    dim: int = 64
    rank: int = 16
    hidden: int | None = None
    c_min: float = 1e-4
    c_max: float = 3.0
    base_kappa: float = 0.5
    residual: bool = True
    symmetric: bool = False
    use_projection: bool = True
    use_curvature: bool = True
    init_scale: float = 0.1

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = 4 * self.dim
        if self.dim < 1 or self.hidden < 1:
            raise InvalidInputError("dim and hidden width must be positive")
        if not 1 <= self.rank <= self.dim:
            raise InvalidInputError(f"rank must lie in [1, dim={self.dim}], got {self.rank}")
        if not 0.0 <= self.c_min < self.c_max:
            raise InvalidInputError("curvature range must satisfy 0 <= c_min < c_max")
        ball.check_kappa(self.base_kappa)

    def to_dict(self) -> dict:
        return asdict(self)


def _param_shapes(cfg: GHDMConfig) -> dict[str, tuple]:
    n, k, h = cfg.dim, cfg.rank, cfg.hidden
    shapes = {}
    for f in ("f_a", "f_b"):
        shapes[f"{f}.w1"] = (2 * n, h)
        shapes[f"{f}.b1"] = (h,)
        shapes[f"{f}.w2"] = (h, n * k)
        shapes[f"{f}.b2"] = (n * k,)
    for f in ("f_1", "f_2"):
        shapes[f"{f}.w"] = (n, n)
        shapes[f"{f}.b"] = (n,)
    return shapes


def _logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


class GeneratorParams:
    """Trainable weights of the projection and curvature generators.

    ``f_a`` / ``f_b`` map the concatenated pair features ``(2n,)`` through a
    tanh hidden layer to ``n*k`` outputs reshaped into ``M_a`` / ``M_b``.
    ``f_1`` / ``f_2`` are single affine maps ``n -> n`` feeding the bilinear
    curvature head.
    """

    def __init__(self, config: GHDMConfig, tensors: dict[str, Tensor]):
        shapes = _param_shapes(config)
        if set(tensors) != set(shapes):
            raise ShapeError(f"parameter names {sorted(tensors)} do not match {sorted(shapes)}")
        for name, t in tensors.items():
            if t.shape != shapes[name]:
                raise ShapeError(f"{name}: expected shape {shapes[name]}, got {t.shape}")
            if not np.all(np.isfinite(t.value)):
                raise InvalidInputError(f"{name}: non-finite parameter values")
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: GHDMConfig, seed: int = 0) -> "GeneratorParams":
        """Random initialisation.

        Hidden layers use ``N(0, 1/fan_in)``; output layers are scaled by
        ``init_scale`` so ``M`` starts close to the identity. The curvature
        head starts with zero weights and biases chosen so that every pair
        initially gets curvature ``base_kappa``; the non-zero biases keep
        both weight matrices on the gradient path.
        """
        rng = np.random.default_rng(seed)
        n, h = config.dim, config.hidden
        s = config.init_scale
        arrays = {}
        for f in ("f_a", "f_b"):
            arrays[f"{f}.w1"] = rng.normal(0.0, 1.0 / np.sqrt(2 * n), (2 * n, config.hidden))
            arrays[f"{f}.b1"] = np.zeros(h)
            arrays[f"{f}.w2"] = rng.normal(0.0, s / np.sqrt(h), (h, n * config.rank))
            arrays[f"{f}.b2"] = rng.normal(0.0, s / np.sqrt(n), n * config.rank)
        frac = (config.base_kappa - config.c_min) / (config.c_max - config.c_min)
        start = _logit(float(np.clip(frac, 1e-6, 1 - 1e-6)))
        arrays["f_1.w"] = np.zeros((n, n))
        arrays["f_1.b"] = np.ones(n)
        arrays["f_2.w"] = np.zeros((n, n))
        arrays["f_2.b"] = np.full(n, start / n)
        return cls.from_arrays(config, arrays)

    @classmethod
    def zeros(cls, config: GHDMConfig) -> "GeneratorParams":
        return cls.from_arrays(config, {k: np.zeros(s) for k, s in _param_shapes(config).items()})

    @classmethod
    def from_arrays(cls, config: GHDMConfig, arrays: dict) -> "GeneratorParams":
        return cls(config, {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.tensors.items()}

    def copy(self) -> "GeneratorParams":
        return GeneratorParams.from_arrays(self.config, self.arrays())

    def zero_residual(self) -> "GeneratorParams":
        """Zero the output layers of ``f_a`` and ``f_b`` in place (``M = I``)."""
        for f in ("f_a", "f_b"):
            for part in ("w2", "b2"):
                t = self.tensors[f"{f}.{part}"]
                t.value = np.zeros_like(t.value)
        return self

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if k.startswith(prefix + ".")}


# ---------------------------------------------------------------- generators


def tangent_features(points, kappa: float) -> np.ndarray:
    """Generator inputs: tangent coordinates at the origin of the base ball."""
    return ball.log_map0(points, kappa)


def _check_pair(params: GeneratorParams, a: np.ndarray, b: np.ndarray) -> tuple:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n = params.config.dim
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != n:
        raise ShapeError(f"pair inputs must both be (P, {n}), got {a.shape} and {b.shape}")
    return a, b


def _mlp(params: GeneratorParams, prefix: str, z: Tensor) -> Tensor:
    hidden = dc.tanh(z @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return hidden @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def projection_factors(params: GeneratorParams, feat_i, feat_j) -> tuple[Tensor, Tensor]:
    """Batched ``M_a``, ``M_b`` of shape ``(P, n, k)``."""
    cfg = params.config
    z = dc.concat([Tensor(feat_i), Tensor(feat_j)], axis=-1)
    shape = (z.shape[0], cfg.dim, cfg.rank)
    m_a = dc.reshape(_mlp(params, "f_a", z), shape)
    m_b = m_a if cfg.symmetric else dc.reshape(_mlp(params, "f_b", z), shape)
    return m_a, m_b


def curvature(params: GeneratorParams, feat_i, feat_j) -> Tensor:
    """Batched pair curvature, shape ``(P, 1)``, strictly inside ``(c_min, c_max)``."""
    cfg = params.config
    if not cfg.use_curvature:
        return Tensor(np.full((np.shape(feat_i)[0], 1), cfg.base_kappa))
    left = Tensor(feat_i) @ params["f_1.w"] + params["f_1.b"]
    right = Tensor(feat_j) @ params["f_2.w"] + params["f_2.b"]
    pooled = dc.sum_pool(dc.hadamard(left, right), axis=-1, keepdims=True)
    return cfg.c_min + (cfg.c_max - cfg.c_min) * dc.sigmoid(pooled)


@dataclass
class LowRankProjection:
    """``M = I + m_a m_b^T`` (or ``m_a m_b^T`` without the residual identity)."""

    m_a: np.ndarray
    m_b: np.ndarray
    residual: bool = True

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = (x @ self.m_b) @ self.m_a.T
        return x + y if self.residual else y

    def dense(self) -> np.ndarray:
        m = self.m_a @ self.m_b.T
        return np.eye(m.shape[0]) + m if self.residual else m


def generate_projection(params: GeneratorParams, feat_i, feat_j) -> LowRankProjection:
    feat_i, feat_j = _check_pair(params, feat_i, feat_j)
    if feat_i.shape[0] != 1:
        raise ShapeError("generate_projection takes a single pair")
    m_a, m_b = projection_factors(params, feat_i, feat_j)
    return LowRankProjection(m_a.value[0].copy(), m_b.value[0].copy(), params.config.residual)


def generate_curvature(params: GeneratorParams, feat_i, feat_j) -> float:
    feat_i, feat_j = _check_pair(params, feat_i, feat_j)
    if feat_i.shape[0] != 1:
        raise ShapeError("generate_curvature takes a single pair")
    return float(curvature(params, feat_i, feat_j).value[0, 0])


# ---------------------------------------------------------------- distance on tensors


def _sum_last(x: Tensor) -> Tensor:
    return dc.sum_pool(x, axis=-1, keepdims=True)


def lowrank_apply(m_a: Tensor, m_b: Tensor, x: Tensor, residual: bool = True) -> Tensor:
    """``x + m_a (m_b^T x)`` for a batch, ``2nk`` multiply-adds per vector."""
    p, n = x.shape
    col = dc.reshape(x, (p, n, 1))
    y = dc.reshape(m_a @ (dc.transpose(m_b) @ col), (p, n))
    return x + y if residual else y


def _project(x: np.ndarray, sqrt_c: Tensor) -> Tensor:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = dc.clamp((1.0 - BOUNDARY_EPS) / (sqrt_c * np.where(norm > 0.0, norm, 1.0)), hi=1.0)
    return Tensor(x) * scale


def _matvec_from(mx: Tensor, x: Tensor, sqrt_c: Tensor) -> Tensor:
    x_norm = dc.l2_norm(x)
    mx_norm = dc.l2_norm(mx)
    arg = dc.clamp(sqrt_c * x_norm, hi=1.0 - BOUNDARY_EPS)
    ratio = mx_norm / (x_norm + DENOM_EPS)
    radius = dc.clamp(dc.tanh(ratio * dc.arctanh(arg)), hi=1.0 - BOUNDARY_EPS) / sqrt_c
    return radius * mx / (mx_norm + DENOM_EPS)


def poincare_distance(a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Geodesic distance at per-row curvature ``c`` (shape ``(P, 1)``); returns ``(P,)``."""
    sqrt_c = dc.sqrt(c)
    xy = -_sum_last(a * b)
    x2 = _sum_last(a * a)
    y2 = _sum_last(b * b)
    num = (1.0 + 2.0 * c * xy + c * y2) * (-a) + (1.0 - c * x2) * b
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    arg = dc.clamp(sqrt_c * dc.l2_norm(num / den), hi=1.0 - BOUNDARY_EPS)
    d = 2.0 / sqrt_c * dc.arctanh(arg)
    return dc.reshape(d, (d.shape[0],))


def pair_distances(params: GeneratorParams, x_i, x_j) -> Tensor:
    """Adapted distances for a batch of ball-point pairs, shape ``(P,)``.

    ``x_i`` and ``x_j`` are ``(P, n)`` points of the base ball. Each point is
    guarded into the ball of its pair curvature before the projection.
    """
    cfg = params.config
    x_i, x_j = _check_pair(params, x_i, x_j)
    feat_i = tangent_features(x_i, cfg.base_kappa)
    feat_j = tangent_features(x_j, cfg.base_kappa)
    c = curvature(params, feat_i, feat_j)
    sqrt_c = dc.sqrt(c)
    a = _project(x_i, sqrt_c)
    b = _project(x_j, sqrt_c)
    if cfg.use_projection:
        m_a, m_b = projection_factors(params, feat_i, feat_j)
        a = _matvec_from(lowrank_apply(m_a, m_b, a, cfg.residual), a, sqrt_c)
        b = _matvec_from(lowrank_apply(m_a, m_b, b, cfg.residual), b, sqrt_c)
    return poincare_distance(a, b, c)


def adapted_distance(params: GeneratorParams, x_i, x_j) -> float:
    """Adapted distance of a single pair of base-ball points."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.ndim != 1:
        raise ShapeError("adapted_distance takes a single pair; use pair_distances for batches")
    return float(pair_distances(params, x_i[None], x_j[None]).value[0])


# ---------------------------------------------------------------- low-rank truncation


def truncated_factors(a: np.ndarray, k: int, iters: int = 30, seed: int = 0) -> tuple:
    """Rank-``k`` factors ``(U, V)`` with ``U V^T`` close to the best rank-``k`` approximation.

    Orthogonal (subspace) power iteration on ``A A^T``; ``U = Q`` spans the
    dominant left singular subspace and ``V = A^T Q``, so ``U V^T = Q Q^T A``.
    ``k = n`` returns the exact factorisation ``(A, I)``.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if not 1 <= k <= n:
        raise InvalidInputError(f"rank must lie in [1, {n}], got {k}")
    if k == n:
        return a.copy(), np.eye(n)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(a @ rng.standard_normal((a.shape[1], k)))
    for _ in range(iters):
        z, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ z)
    return q, a.T @ q


def _random_ball_points(rng, count: int, n: int, kappa: float, max_radius: float = 0.9) -> np.ndarray:
    direction = rng.standard_normal((count, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.uniform(0.05, max_radius, (count, 1)) / np.sqrt(kappa)
    return direction * radius


def lowrank_error_experiment(dims: Sequence[int], k_values: Sequence[int], trials: int = 100,
                             seed: int = 0, kappa: float = 1.0, points: int = 8,
                             residual_scale: float = 0.5, iters: int = 30) -> list[dict]:
    """Matvec error of the best rank-``k`` residual against the full residual.

    Each trial draws ``M_res ~ residual_scale * N(0, 1/n)`` and ``points``
    random ball points, and records ``|(I + M_res_k) (x) x - (I + M_res) (x) x|``.
    Returns one row per ``(n, k)`` with error quantiles over all trials and points.
    """
    kappa = ball.check_kappa(kappa)
    ss = np.random.default_rng(seed)
    rows = []
    for n in dims:
        bad = [k for k in k_values if not 1 <= k <= n]
        if bad:
            raise InvalidInputError(f"ranks {bad} are outside [1, {n}]")
        errors = {k: [] for k in k_values}
        for t in range(trials):
            m_res = residual_scale * ss.standard_normal((n, n)) / np.sqrt(n)
            x = _random_ball_points(ss, points, n, kappa)
            full = ball.mobius_matvec(np.eye(n) + m_res, x, kappa)
            for k in k_values:
                u, v = truncated_factors(m_res, k, iters=iters, seed=seed + t)
                approx = ball.mobius_matvec(np.eye(n) + u @ v.T, x, kappa)
                errors[k].append(np.linalg.norm(approx - full, axis=-1))
        for k in k_values:
            e = np.concatenate(errors[k])
            rows.append({
                "n": n, "k": k, "trials": trials,
                "median": float(np.median(e)),
                "q25": float(np.quantile(e, 0.25)),
                "q75": float(np.quantile(e, 0.75)),
                "q90": float(np.quantile(e, 0.90)),
                "max": float(np.max(e)),
            })
    return rows


def fit_loglog_slopes(rows: list[dict]) -> list[dict]:
    """Least-squares slope of log(median error) against log(n) at each fixed k/n."""
    by_ratio: dict[float, list] = {}
    for r in rows:
        if r["k"] < r["n"] and r["median"] > 0.0:
            by_ratio.setdefault(r["k"] / r["n"], []).append((r["n"], r["median"]))
    fits = []
    for ratio, pts in sorted(by_ratio.items()):
        if len(pts) < 2:
            continue
        ln = np.log([p[0] for p in pts])
        le = np.log([p[1] for p in pts])
        slope, intercept = np.polyfit(ln, le, 1)
        fits.append({"k_over_n": ratio, "points": len(pts), "slope": float(slope),
                     "beta": float(-slope), "intercept": float(intercept)})
    return fits


def time_pair_distance(dim: int, rank: int, hidden: int | None = None, pairs: int = 75,
                       repeats: int = 5, seed: int = 0) -> float:
    """Median wall time (seconds) per pair of the adapted distance forward pass."""
    cfg = GHDMConfig(dim=dim, rank=rank, hidden=hidden)
    params = GeneratorParams.init(cfg, seed)
    rng = np.random.default_rng(seed)
    x_i = _random_ball_points(rng, pairs, dim, cfg.base_kappa)
    x_j = _random_ball_points(rng, pairs, dim, cfg.base_kappa)
    pair_distances(params, x_i, x_j)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        pair_distances(params, x_i, x_j)
        samples.append((time.perf_counter() - t0) / pairs)
    return float(np.median(samples))


def check_gradients(dim: int, rank: int, seed: int = 0, pairs: int = 4, hidden: int | None = None,
                    coords_per_param: int | None = 8, h: float = 1e-5) -> dc.GradCheckReport:
    """Finite-difference check of the summed adapted distance of random pairs.

    Every parameter group, the curvature head included, is drawn at random
    so that no gradient is trivially zero.
    """
    cfg = GHDMConfig(dim=dim, rank=rank, hidden=hidden, init_scale=0.5)
    params = GeneratorParams.init(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    for f in ("f_1", "f_2"):
        params[f"{f}.w"].value = rng.normal(0.0, 0.3 / np.sqrt(dim), (dim, dim))
        params[f"{f}.b"].value = rng.normal(0.0, 0.3, dim)
    # inside the c_max ball no point is pushed onto the guard radius, where the
    # distance is too ill-conditioned for central differences at h = 1e-5
    x_i = _random_ball_points(rng, pairs, dim, cfg.c_max, max_radius=0.7)
    x_j = _random_ball_points(rng, pairs, dim, cfg.c_max, max_radius=0.7)
    return dc.gradcheck(lambda: dc.sum_pool(pair_distances(params, x_i, x_j)), params.tensors,
                        h=h, coords_per_param=coords_per_param, seed=seed)
