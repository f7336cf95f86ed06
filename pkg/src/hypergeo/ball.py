r"""Gyrovector operations on the Poincare ball.

Every function takes the curvature as a positive magnitude ``kappa`` (the
ball has sectional curvature ``-kappa`` and radius ``1/sqrt(kappa)``).
Arrays are float64 and operations act on the last axis, so a stack of
points of shape ``(..., n)`` is processed in one call.

Results that are ball points are passed through :func:`project_to_ball`,
keeping every norm at most ``(1 - BOUNDARY_EPS) / sqrt(kappa)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CurvatureMismatchError,
    DegenerateInputError,
    EmptyInputError,
    InvalidInputError,
)

BOUNDARY_EPS = 1e-5
DENOM_EPS = 1e-15


def check_kappa(kappa) -> float:
    kappa = float(kappa)
    if not np.isfinite(kappa) or kappa <= 0.0:
        raise InvalidInputError(f"curvature magnitude must be finite and > 0, got {kappa}")
    return kappa


def _as_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("coordinates must be finite")
    return x


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_sqnorm(x))


def max_norm(kappa: float) -> float:
    """Largest Euclidean norm a guarded point may have."""
    return (1.0 - BOUNDARY_EPS) / np.sqrt(kappa)


def project_to_ball(coords, kappa: float) -> np.ndarray:
    """Rescale points lying on or beyond the guard radius back inside it.

    Points with ``kappa * |x|^2 < (1 - BOUNDARY_EPS)^2`` are returned
    unchanged; others are scaled radially to norm ``max_norm(kappa)``.
    """
    kappa = check_kappa(kappa)
    x = _as_array(coords)
    limit = max_norm(kappa)
    norm = _norm(x)
    outside = kappa * norm**2 >= (1.0 - BOUNDARY_EPS) ** 2
    if not np.any(outside):
        return x.copy()
    scale = np.where(outside, limit / np.maximum(norm, DENOM_EPS), 1.0)
    return x * scale


def conformal_factor(x, kappa: float) -> np.ndarray:
    """``lambda_x = 2 / (1 - kappa |x|^2)``, shape ``(..., 1)``."""
    kappa = check_kappa(kappa)
    x = _as_array(x)
    return 2.0 / (1.0 - kappa * _sqnorm(x))


def mobius_add(x, y, kappa: float) -> np.ndarray:
    """Mobius addition ``x (+) y``.

    Written for curvature ``-kappa``:

        ((1 + 2k<x,y> + k|y|^2) x + (1 - k|x|^2) y) / (1 + 2k<x,y> + k^2 |x|^2 |y|^2)
    """
    kappa = check_kappa(kappa)
    return project_to_ball(_mobius_add(_as_array(x), _as_array(y), kappa), kappa)


def _mobius_add(x: np.ndarray, y: np.ndarray, kappa: float) -> np.ndarray:
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * kappa * xy + kappa * y2) * x + (1.0 - kappa * x2) * y
    den = 1.0 + 2.0 * kappa * xy + kappa**2 * x2 * y2
    if np.any(np.abs(den) < DENOM_EPS):
        raise DegenerateInputError("Mobius addition denominator vanished")
    return num / den


def geodesic_distance(x, y, kappa: float, return_saturated: bool = False):
    """Geodesic distance ``2/sqrt(k) * artanh(sqrt(k) |-x (+) y|)``.

    The artanh argument is clipped to ``1 - BOUNDARY_EPS``. With
    ``return_saturated=True`` a boolean array flagging where the clip
    fired is returned as a second value.
    """
    kappa = check_kappa(kappa)
    sk = np.sqrt(kappa)
    w = _mobius_add(-_as_array(x), _as_array(y), kappa)
    arg = sk * _norm(w)[..., 0]
    saturated = arg >= 1.0 - BOUNDARY_EPS
    d = 2.0 / sk * np.arctanh(np.minimum(arg, 1.0 - BOUNDARY_EPS))
    if return_saturated:
        return d, saturated
    return d


def pairwise_distances(points, kappa: float) -> np.ndarray:
    """Full ``(m, m)`` geodesic distance matrix with exact zero diagonal."""
    p = _as_array(points)
    d = geodesic_distance(p[:, None, :], p[None, :, :], kappa)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def mobius_matvec(m, x, kappa: float, return_convention: bool = False):
    """Mobius matrix-vector product ``M (x) x``.

    The result has norm ``tanh(|Mx|/|x| * artanh(sqrt(k)|x|)) / sqrt(k)`` and
    direction ``Mx/|Mx|``. ``x = 0`` or ``Mx = 0`` map to the origin; with
    ``return_convention=True`` a mask of where that branch was taken is
    returned as a second value. ``m`` is ``(n, n)`` or a stack
    ``(..., n, n)`` matching ``x``.
    """
    kappa = check_kappa(kappa)
    sk = np.sqrt(kappa)
    m = _as_array(m)
    x = _as_array(x)
    mx = np.matmul(m, x[..., None])[..., 0]
    xn = _norm(x)
    mxn = _norm(mx)
    origin = (xn < DENOM_EPS) | (mxn < DENOM_EPS)
    xn_safe = np.where(origin, 1.0, xn)
    mxn_safe = np.where(origin, 1.0, mxn)
    arg = np.minimum(sk * xn_safe, 1.0 - BOUNDARY_EPS)
    radius = np.tanh(mxn_safe / xn_safe * np.arctanh(arg)) / sk
    out = project_to_ball(np.where(origin, 0.0, radius * mx / mxn_safe), kappa)
    if return_convention:
        return out, origin[..., 0]
    return out


def exp_map(x, v, kappa: float) -> np.ndarray:
    """Exponential map at ``x``; ``exp_x(0) = x`` exactly."""
    kappa = check_kappa(kappa)
    sk = np.sqrt(kappa)
    x = _as_array(x)
    v = _as_array(v)
    vn = _norm(v)
    zero = vn < DENOM_EPS
    vn_safe = np.where(zero, 1.0, vn)
    lam = conformal_factor(x, kappa)
    step = np.where(zero, 0.0, np.tanh(sk * lam * vn_safe / 2.0) * v / (sk * vn_safe))
    out = mobius_add(x, step, kappa)
    if np.any(zero):
        out = np.where(zero, np.broadcast_to(x, out.shape), out)
    return out


def log_map(x, y, kappa: float) -> np.ndarray:
    """Logarithmic map at ``x``; ``log_x(x) = 0``."""
    kappa = check_kappa(kappa)
    sk = np.sqrt(kappa)
    x = _as_array(x)
    w = mobius_add(-x, y, kappa)
    wn = _norm(w)
    zero = wn < DENOM_EPS
    wn_safe = np.where(zero, 1.0, wn)
    lam = conformal_factor(x, kappa)
    arg = np.minimum(sk * wn_safe, 1.0 - BOUNDARY_EPS)
    return np.where(zero, 0.0, 2.0 / (sk * lam) * np.arctanh(arg) * w / wn_safe)


def exp_map0(v, kappa: float) -> np.ndarray:
    """Exponential map at the origin: ``tanh(sqrt(k)|v|) v / (sqrt(k)|v|)``."""
    kappa = check_kappa(kappa)
    sk = np.sqrt(kappa)
    v = _as_array(v)
    vn = _norm(v)
    vn_safe = np.maximum(vn, DENOM_EPS)
    return project_to_ball(np.tanh(sk * vn_safe) * v / (sk * vn_safe), kappa)


def log_map0(y, kappa: float) -> np.ndarray:
    """Logarithmic map at the origin: ``artanh(sqrt(k)|y|) y / (sqrt(k)|y|)``."""
    kappa = check_kappa(kappa)
    sk = np.sqrt(kappa)
    y = _as_array(y)
    yn = np.maximum(_norm(y), DENOM_EPS)
    arg = np.minimum(sk * yn, 1.0 - BOUNDARY_EPS)
    return np.arctanh(arg) * y / (sk * yn)


def einstein_midpoint(points, kappa: float) -> np.ndarray:
    """Einstein midpoint of a set of ball points.

    Points are mapped to the Klein model (``u = 2x / (1 + k|x|^2)``),
    averaged with Lorentz factors ``1/sqrt(1 - k|u|^2)`` of the Klein
    coordinates, and mapped back with ``u / (1 + sqrt(1 - k|u|^2))``.
    ``points`` has shape ``(N, n)``.
    """
    kappa = check_kappa(kappa)
    pts = _as_array(points)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyInputError("einstein_midpoint needs a non-empty (N, n) array")
    u = 2.0 * pts / (1.0 + kappa * _sqnorm(pts))
    gamma = 1.0 / np.sqrt(np.maximum(1.0 - kappa * _sqnorm(u), DENOM_EPS))
    u_bar = np.sum(gamma * u, axis=0) / np.sum(gamma)
    x_bar = u_bar / (1.0 + np.sqrt(np.maximum(1.0 - kappa * np.dot(u_bar, u_bar), 0.0)))
    return project_to_ball(x_bar, kappa)


@dataclass(frozen=True)
class BallPoint:
    """A point together with the curvature of the ball it lives in."""

    coords: np.ndarray
    kappa: float

    def __post_init__(self):
        kappa = check_kappa(self.kappa)
        coords = _as_array(self.coords)
        if kappa * float(np.dot(coords.ravel(), coords.ravel())) >= 1.0:
            raise InvalidInputError("point lies outside the Poincare ball")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def projected(cls, coords, kappa: float) -> "BallPoint":
        return cls(project_to_ball(coords, kappa), kappa)

    def _check(self, other: "BallPoint") -> float:
        if other.kappa != self.kappa:
            raise CurvatureMismatchError(
                f"points live in balls of curvature {self.kappa} and {other.kappa}"
            )
        return self.kappa

    def __neg__(self) -> "BallPoint":
        return BallPoint(-self.coords, self.kappa)

    def mobius_add(self, other: "BallPoint") -> "BallPoint":
        return BallPoint(mobius_add(self.coords, other.coords, self._check(other)), self.kappa)

    def distance(self, other: "BallPoint") -> float:
        return float(geodesic_distance(self.coords, other.coords, self._check(other)))

    def log(self, other: "BallPoint") -> np.ndarray:
        return log_map(self.coords, other.coords, self._check(other))

    def exp(self, v) -> "BallPoint":
        return BallPoint(exp_map(self.coords, v, self.kappa), self.kappa)
