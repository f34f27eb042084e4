"""Mirror geometries for the model domain and the probability simplex.

Points are plain numpy arrays. A primal point is a vector ``w`` inside a
Euclidean ball; a simplex point is a nonnegative vector ``q`` summing to one.
The primal step accepts stacked points of shape ``(k, d)`` so a bank of
independent SMD instances can be advanced in one call.
"""

import math
from dataclasses import dataclass

import numpy as np

BALL_TOL = 1e-9
SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class PrimalGeometry:
    """Euclidean ball ``{w : ||w||_2 <= radius}`` with ``nu_w(w) = ||w||^2 / 2``."""

    dimension: int
    radius: float = 5.0

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def d_bound(self):
        # max_w B_w(w, 0) = radius^2 / 2 = D^2
        return self.radius / math.sqrt(2.0)

    def origin(self):
        return np.zeros(self.dimension)

    def project(self, w):
        w = np.asarray(w, dtype=float)
        norms = np.linalg.norm(w, axis=-1, keepdims=True)
        scale = self.radius / np.maximum(norms, self.radius)
        return w * scale

    def contains(self, w):
        return bool(np.all(np.linalg.norm(w, axis=-1) <= self.radius + BALL_TOL))


@dataclass(frozen=True)
class SimplexGeometry:
    """Probability simplex with the negative-entropy distance-generating function."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")

    @property
    def q_bound(self):
        return math.log(self.m)

    def uniform(self):
        return np.full(self.m, 1.0 / self.m)

    def contains(self, q):
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= 0) and abs(q.sum() - 1.0) <= SIMPLEX_TOL * max(1, self.m))


@dataclass(frozen=True)
class ProductGeometry:
    """Product of the ball and the simplex under the merged, rescaled geometry.

    The merged distance-generating function is
    ``nu_w / (2 D^2) + nu_q / (2 ln m)``, so a single step of size ``eta``
    on the product equals a primal step of ``2 eta D^2`` and a simplex step
    of ``2 eta ln m``.
    """

    primal: PrimalGeometry
    simplex: SimplexGeometry

    def component_steps(self, eta):
        d = self.primal.d_bound
        return 2.0 * eta * d * d, 2.0 * eta * self.simplex.q_bound

    def bregman(self, x, x_prime):
        (w, q), (w2, q2) = x, x_prime
        val = bregman_primal(self.primal, w, w2) / (2.0 * self.primal.d_bound ** 2)
        if self.simplex.m > 1:
            val += bregman_simplex(self.simplex, q, q2) / (2.0 * self.simplex.q_bound)
        return val


def _check_dims(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def _check_finite(g):
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient entries")


def bregman_primal(geom, u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dims(u, v)
    if u.shape[-1] != geom.dimension:
        raise ValueError(f"expected dimension {geom.dimension}, got {u.shape[-1]}")
    diff = u - v
    return 0.5 * float(diff @ diff)


def bregman_simplex(geom, u, v):
    """KL divergence ``sum_i u_i ln(u_i / v_i)`` with ``0 ln 0 = 0``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dims(u, v)
    if u.shape[-1] != geom.m:
        raise ValueError(f"expected {geom.m} weights, got {u.shape[-1]}")
    support = u > 0
    if np.any(v[support] <= 0):
        raise ValueError("KL divergence undefined: v has zero mass where u is positive")
    return float(np.sum(u[support] * np.log(u[support] / v[support])))


def mirror_step_primal(geom, w, g, eta):
    """Prox step on the ball: ``project(w - eta * g)``; ``w`` may be stacked ``(k, d)``."""
    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    _check_dims(w, g)
    _check_finite(g)
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    return geom.project(w - eta * g)


def mirror_step_simplex(geom, q, g, eta, direction="ascent"):
    """Entropic prox step ``q_i' ~ q_i exp(+/- eta g_i)`` computed in the log domain."""
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    if q.shape != (geom.m,) or g.shape != (geom.m,):
        raise ValueError(f"expected vectors of length {geom.m}")
    _check_finite(g)
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    if direction == "ascent":
        sign = 1.0
    elif direction == "descent":
        sign = -1.0
    else:
        raise ValueError(f"direction must be 'ascent' or 'descent', not {direction!r}")
    support = q > 0
    logits = np.full(geom.m, -np.inf)
    logits[support] = np.log(q[support]) + sign * eta * g[support]
    logits -= logits[support].max()
    out = np.exp(logits)
    return out / out.sum()


def joint_mirror_step(geom, x, g, eta):
    """One prox step on the product domain for the merged field ``g = (g_w, g_v)``.

    Both blocks are *descended*; to ascend ``q`` along ``g_q`` pass
    ``g_v = -g_q``. Computed through the merged mirror map (dual-space
    gradient step, then the inverse map restricted to the domain) rather
    than by calling the component steps.
    """
    w, q = (np.asarray(a, dtype=float) for a in x)
    g_w, g_v = (np.asarray(a, dtype=float) for a in g)
    _check_dims(w, g_w)
    _check_finite(g_w)
    _check_finite(g_v)
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    two_d2 = 2.0 * geom.primal.d_bound ** 2
    # grad nu restricted to w: w / (2 D^2)
    theta_w = w / two_d2 - eta * g_w
    w_next = geom.primal.project(two_d2 * theta_w)

    m = geom.simplex.m
    if m == 1:
        return w_next, np.ones(1)
    two_lnm = 2.0 * math.log(m)
    support = q > 0
    # grad nu restricted to q: (ln q + 1) / (2 ln m); the constant is absorbed by normalization
    theta_q = np.full(m, -np.inf)
    theta_q[support] = (np.log(q[support]) + 1.0) / two_lnm - eta * g_v[support]
    z = two_lnm * theta_q
    z -= z[support].max()
    q_next = np.exp(z)
    return w_next, q_next / q_next.sum()
