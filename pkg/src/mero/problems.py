"""Loss, sample oracles and problem-level constants.

Every oracle owns one random stream, identified by ``(seed, distribution,
purpose)`` through :class:`numpy.random.SeedSequence` spawn keys, so that
separate phases of an algorithm (and the evaluation) never share draws.
Samples are generated in fixed-size blocks; the sequence an oracle yields
therefore depends only on its stream, not on how callers chunk requests.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import expit

from .errors import BudgetExhausted, ConfigError
from .geometry import PrimalGeometry

PURPOSES = (
    "main",
    "stage1",
    "stage2",
    "stage3",
    "smpa-first-half",
    "smpa-second-half",
    "pretrain",
    "evaluation",
    "pilot",
    "rstar-train",
)


class Sample(NamedTuple):
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class LogisticLoss:
    """``scale * ln(1 + exp(-y <w, x>))``."""

    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("loss scale must be positive")

    def from_margin(self, margin):
        return self.scale * np.logaddexp(0.0, -margin)

    def slope(self, margin):
        """Derivative of the loss w.r.t. the margin ``y <w, x>``."""
        return -self.scale * expit(-margin)

    def value(self, w, x, y):
        return self.from_margin(y * (x @ w))

    def grad(self, w, x, y):
        """Per-sample gradients; ``x`` of shape ``(n, d)`` gives ``(n, d)``."""
        margin = y * (x @ w)
        return (self.slope(margin) * y)[..., None] * x

    def mean_value_and_grad(self, w, x, y):
        margin = y * (x @ w)
        coef = self.slope(margin) * y
        return float(self.from_margin(margin).mean()), coef @ x / len(y)


def logistic_loss(loss, w, z):
    w = np.asarray(w, dtype=float)
    if z.x.shape != w.shape:
        raise ValueError("feature length does not match model dimension")
    return float(loss.from_margin(z.y * float(z.x @ w)))


def logistic_grad(loss, w, z):
    w = np.asarray(w, dtype=float)
    if z.x.shape != w.shape:
        raise ValueError("feature length does not match model dimension")
    margin = z.y * float(z.x @ w)
    return float(loss.slope(margin)) * z.y * z.x


# -- oracles -----------------------------------------------------------------


def stream_rng(seed, index, purpose):
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(1, int(index), PURPOSES.index(purpose)))
    return np.random.default_rng(ss)


class DistributionOracle:
    """Single-consumer sample source for one distribution.

    Not thread-safe; each thread should own its oracles.
    """

    kind = "abstract"

    def __init__(self, rng, index=0, budget=None, block_size=1024):
        self.rng = rng
        self.index = index
        self.budget = budget
        self.drawn_count = 0
        self._block = block_size
        self._buf_x = None
        self._buf_y = None
        self._pos = 0

    def _generate(self, n):
        raise NotImplementedError

    @property
    def remaining(self):
        return None if self.budget is None else self.budget - self.drawn_count

    def _check_budget(self, n):
        if self.budget is not None and self.drawn_count + n > self.budget:
            raise BudgetExhausted(self.index, n, self.budget - self.drawn_count)

    def draw(self, n=1):
        """Return ``(X, y)`` with ``X`` of shape ``(n, d)``."""
        self._check_budget(n)
        parts_x, parts_y = [], []
        need = n
        while need > 0:
            if self._buf_x is None or self._pos >= len(self._buf_y):
                self._buf_x, self._buf_y = self._generate(self._block)
                self._pos = 0
            take = min(need, len(self._buf_y) - self._pos)
            parts_x.append(self._buf_x[self._pos:self._pos + take])
            parts_y.append(self._buf_y[self._pos:self._pos + take])
            self._pos += take
            need -= take
        self.drawn_count += n
        if len(parts_x) == 1:
            return parts_x[0], parts_y[0]
        return np.concatenate(parts_x), np.concatenate(parts_y)

    def draw_one(self):
        x, y = self.draw(1)
        return Sample(x[0], float(y[0]))


class SyntheticOracle(DistributionOracle):
    kind = "synthetic"

    def __init__(self, dist, rng, **kw):
        d = dist.w_star.shape[0]
        kw.setdefault("block_size", max(1, min(1024, (1 << 18) // d)))
        super().__init__(rng, **kw)
        self.dist = dist

    def _generate(self, n):
        x = self.rng.standard_normal((n, self.dist.w_star.shape[0]))
        flip = self.rng.random(n) >= self.dist.clean_prob
        y = np.where(x @ self.dist.w_star >= 0, 1.0, -1.0)
        y[flip] = -y[flip]
        return x, y


class FiniteSupportOracle(DistributionOracle):
    kind = "finite_support"

    def __init__(self, dist, rng, **kw):
        super().__init__(rng, **kw)
        self.dist = dist
        self._cdf = np.cumsum(dist.probs)
        self._cdf[-1] = 1.0

    def _generate(self, n):
        idx = np.searchsorted(self._cdf, self.rng.random(n), side="right")
        return self.dist.atoms[idx], self.dist.labels[idx]


class EmpiricalOracle(DistributionOracle):
    """Uniform draws over the rows of a finite group.

    ``with_replacement`` draws i.i.d. row indices; ``once_each`` walks a
    seeded permutation and is exhausted after every row was seen once.
    """

    def __init__(self, dist, rng, mode="with_replacement", **kw):
        if len(dist.labels) == 0:
            raise ValueError("cannot sample from an empty group")
        if mode not in ("with_replacement", "once_each"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        if mode == "once_each":
            budget = kw.get("budget")
            kw["budget"] = len(dist.labels) if budget is None else min(budget, len(dist.labels))
        super().__init__(rng, **kw)
        self.dist = dist
        self.mode = mode
        self.kind = "empirical_" + mode
        if mode == "once_each":
            self._perm = rng.permutation(len(dist.labels))

    def _generate(self, n):
        idx = self.rng.integers(0, len(self.dist.labels), n)
        return self.dist.features[idx], self.dist.labels[idx]

    def draw(self, n=1):
        if self.mode == "with_replacement":
            return super().draw(n)
        self._check_budget(n)
        idx = self._perm[self.drawn_count:self.drawn_count + n]
        self.drawn_count += n
        return self.dist.features[idx], self.dist.labels[idx]


# -- distributions -----------------------------------------------------------


_QUAD_R, _QUAD_RW = None, None
_QUAD_XI, _QUAD_XW = None, None


def _quadrature_nodes():
    global _QUAD_R, _QUAD_RW, _QUAD_XI, _QUAD_XW
    if _QUAD_R is None:
        # half-normal on [0, 12]: Gauss-Legendre against the density
        t, wt = np.polynomial.legendre.leggauss(240)
        r = 6.0 * (t + 1.0)
        _QUAD_R = r
        _QUAD_RW = 6.0 * wt * math.sqrt(2.0 / math.pi) * np.exp(-0.5 * r * r)
        t, wt = np.polynomial.legendre.leggauss(400)
        xi = 12.0 * t
        _QUAD_XI = xi
        _QUAD_XW = 12.0 * wt * np.exp(-0.5 * xi * xi) / math.sqrt(2.0 * math.pi)
    return _QUAD_R, _QUAD_RW, _QUAD_XI, _QUAD_XW


@dataclass
class SyntheticDistribution:
    """``x ~ N(0, I)``, ``y = sgn(<x, w_star>)`` kept with probability ``clean_prob``."""

    w_star: np.ndarray
    clean_prob: float
    kind: str = "synthetic"

    def oracle(self, rng, **kw):
        return SyntheticOracle(self, rng, **kw)

    def _risk_ab(self, loss, alpha, beta):
        # The margin y<w,x> equals alpha*|v| + beta*xi in law (v, xi iid N(0,1)),
        # with the sign flipped on noisy draws.
        r, rw, xi, xw = _quadrature_nodes()
        p = self.clean_prob
        if beta == 0.0:
            s = alpha * r
            inner = p * np.logaddexp(0.0, -s) + (1 - p) * np.logaddexp(0.0, s)
            return loss.scale * float(rw @ inner)
        s = alpha * r[:, None] + beta * xi[None, :]
        inner = p * np.logaddexp(0.0, -s) + (1 - p) * np.logaddexp(0.0, s)
        return loss.scale * float(rw @ inner @ xw)

    def exact_risk(self, loss, w):
        w = np.asarray(w, dtype=float)
        alpha = float(w @ self.w_star)
        beta = math.sqrt(max(float(w @ w) - alpha * alpha, 0.0))
        if beta < 1e-12:
            beta = 0.0
        return self._risk_ab(loss, alpha, beta)

    def minimal_risk(self, loss, geom):
        # convex and even in the orthogonal component => optimum on the w_star axis
        res = optimize.minimize_scalar(
            lambda a: self._risk_ab(loss, a, 0.0),
            bounds=(-geom.radius, geom.radius),
            method="bounded",
            options={"xatol": 1e-10},
        )
        w = res.x * self.w_star
        return self._risk_ab(loss, res.x, 0.0), w

    def gradient_bound(self, loss):
        return loss.scale * (math.sqrt(len(self.w_star)) + 3.0)

    def smoothness(self, loss):
        return loss.scale * 0.25


@dataclass
class FiniteSupportDistribution:
    """Discrete distribution over labelled atoms; risks are computed exactly."""

    atoms: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    kind: str = "finite_support"

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float)
        self.probs = np.asarray(self.probs, dtype=float)
        if not (len(self.atoms) == len(self.labels) == len(self.probs)):
            raise ValueError("atoms, labels and probs must have equal length")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be a probability vector")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")

    def oracle(self, rng, **kw):
        return FiniteSupportOracle(self, rng, **kw)

    def exact_risk(self, loss, w):
        return float(self.probs @ loss.value(np.asarray(w, dtype=float), self.atoms, self.labels))

    def exact_risk_grad(self, loss, w):
        return self.probs @ loss.grad(np.asarray(w, dtype=float), self.atoms, self.labels)

    def exact_risks_on_grid(self, loss, grid):
        """Exact risks for each row of ``grid`` (shape ``(n, d)``)."""
        margins = (grid @ self.atoms.T) * self.labels
        return loss.from_margin(margins) @ self.probs

    def _hessian(self, loss, w):
        margin = self.labels * (self.atoms @ w)
        s = expit(-margin)
        coef = loss.scale * self.probs * s * (1 - s)
        return (self.atoms * coef[:, None]).T @ self.atoms

    def minimal_risk(self, loss, geom):
        """Minimum of the exact risk over the ball, and a minimizer."""
        r2 = geom.radius ** 2
        res = optimize.minimize(
            lambda w: self.exact_risk(loss, w),
            np.zeros(self.atoms.shape[1]),
            jac=lambda w: self.exact_risk_grad(loss, w),
            method="SLSQP",
            constraints=[{"type": "ineq", "fun": lambda w: r2 - w @ w, "jac": lambda w: -2 * w}],
            options={"ftol": 1e-15, "maxiter": 1000},
        )
        w = geom.project(res.x)
        best = self.exact_risk(loss, w)
        # Newton polish: exact when the optimum is interior, harmless otherwise
        for _ in range(30):
            g = self.exact_risk_grad(loss, w)
            h = self._hessian(loss, w) + 1e-14 * np.eye(len(w))
            cand = geom.project(w - np.linalg.solve(h, g))
            val = self.exact_risk(loss, cand)
            if not val < best:
                break
            w, best = cand, val
        return best, w

    def gradient_bound(self, loss):
        return loss.scale * float(np.linalg.norm(self.atoms, axis=1).max())

    def smoothness(self, loss):
        second = (self.atoms * self.probs[:, None]).T @ self.atoms
        return loss.scale * 0.25 * float(np.linalg.eigvalsh(second)[-1])


@dataclass
class EmpiricalDistribution:
    """Uniform distribution over the rows of a finite sample (e.g. one Adult group)."""

    features: np.ndarray
    labels: np.ndarray
    mode: str = "with_replacement"

    @property
    def kind(self):
        return "empirical_" + self.mode

    def oracle(self, rng, **kw):
        return EmpiricalOracle(self, rng, mode=self.mode, **kw)

    def gradient_bound(self, loss):
        if len(self.labels) == 0:
            return 0.0
        return loss.scale * float(np.linalg.norm(self.features, axis=1).max())

    def smoothness(self, loss):
        if len(self.labels) == 0:
            return 0.0
        second = self.features.T @ self.features / len(self.labels)
        return loss.scale * 0.25 * float(np.linalg.eigvalsh(second)[-1])


def exact_risk(oracle, loss, w):
    """Exact risk of ``w`` under a finite-support oracle's distribution."""
    dist = getattr(oracle, "dist", oracle)
    if getattr(dist, "kind", None) != "finite_support":
        raise ValueError("exact_risk requires a finite_support oracle")
    return dist.exact_risk(loss, w)


# -- tasks -------------------------------------------------------------------


@dataclass
class Task:
    """A set of distributions plus the loss, seeded for one run.

    ``oracle(i, purpose)`` returns a fresh oracle on stream ``(seed, i,
    purpose)``. Groups sampled ``once_each`` share a single permutation
    across all training purposes so no row is reused.
    """

    distributions: list
    loss: LogisticLoss
    seed: int = 0
    name: str = "task"
    budgets: list = None
    eval_sets: list = None
    true_classifiers: np.ndarray = None
    _shared: dict = field(default_factory=dict, repr=False)

    @property
    def m(self):
        return len(self.distributions)

    @property
    def dimension(self):
        d = self.distributions[0]
        for attr in ("w_star", "atoms", "features"):
            if hasattr(d, attr):
                arr = getattr(d, attr)
                return arr.shape[0] if attr == "w_star" else arr.shape[1]
        raise AttributeError("cannot infer dimension")

    def oracle(self, i, purpose="main", budget=None):
        dist = self.distributions[i]
        if getattr(dist, "mode", None) == "once_each" and purpose != "evaluation":
            if i not in self._shared:
                rng = stream_rng(self.seed, i, "main")
                cap = None if self.budgets is None else self.budgets[i]
                self._shared[i] = dist.oracle(rng, index=i, budget=cap)
            return self._shared[i]
        return dist.oracle(stream_rng(self.seed, i, purpose), index=i, budget=budget)

    def oracles(self, purpose="main"):
        return [self.oracle(i, purpose) for i in range(self.m)]

    @property
    def has_exact_risk(self):
        return all(hasattr(d, "exact_risk") for d in self.distributions)

    def exact_risks(self, w):
        return np.array([d.exact_risk(self.loss, w) for d in self.distributions])

    def exact_minimal_risks(self, geom):
        return np.array([d.minimal_risk(self.loss, geom)[0] for d in self.distributions])

    def with_seed(self, seed):
        return Task(self.distributions, self.loss, seed, self.name, self.budgets,
                    self.eval_sets, self.true_classifiers)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    m: int
    dimension: int
    sphere_radius_d: float = 0.2
    flip_base: float = 0.05
    seed: int = 0
    flip_probs: tuple = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.dimension < 2:
            raise ValueError("synthetic tasks need dimension >= 2")
        if not 0 <= self.sphere_radius_d < 2:
            raise ValueError("sphere_radius_d must lie in [0, 2)")
        if self.flip_probs is not None:
            if len(self.flip_probs) != self.m or not all(0 <= f < 0.5 for f in self.flip_probs):
                raise ValueError("flip_probs needs m entries in [0, 0.5)")
        elif not 0 < self.flip_base * self.m < 0.5:
            raise ValueError("need 0 < flip_base * m < 0.5")

    def clean_probs(self):
        if self.flip_probs is not None:
            return [1.0 - f for f in self.flip_probs]
        return [1.0 - self.flip_base * i for i in range(1, self.m + 1)]


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def build_synthetic_task(spec, loss=None, sample_seed=None):
    """Classifiers near a random unit vector, each with its own label-noise rate.

    ``spec.seed`` fixes the classifiers; ``sample_seed`` (default
    ``spec.seed``) seeds the sample streams.
    """
    rng = np.random.default_rng([int(spec.seed), 0])
    w0 = _unit(rng.standard_normal(spec.dimension))
    offsets = _unit(rng.standard_normal((spec.m, spec.dimension)))
    w_stars = _unit(w0 + spec.sphere_radius_d * offsets)
    dists = [SyntheticDistribution(w, p) for w, p in zip(w_stars, spec.clean_probs())]
    return Task(
        dists,
        loss or LogisticLoss(),
        seed=spec.seed if sample_seed is None else sample_seed,
        name="synthetic",
        true_classifiers=np.vstack([w0, w_stars]),
    )


def finite_support_task(distributions, loss=None, seed=0):
    return Task(list(distributions), loss or LogisticLoss(), seed=seed, name="finite")


def random_finite_support(rng, n_atoms, dimension, label_noise=0.2, shift=None):
    """Random non-separable finite-support distribution (used by tests and demos)."""
    atoms = rng.standard_normal((n_atoms, dimension))
    direction = _unit(rng.standard_normal(dimension)) if shift is None else shift
    labels = np.where(atoms @ direction >= 0, 1.0, -1.0)
    flip = rng.random(n_atoms) < label_noise
    labels[flip] = -labels[flip]
    probs = rng.dirichlet(np.ones(n_atoms))
    return FiniteSupportDistribution(atoms, labels, probs)


def scale_loss_to_unit(distributions, geom):
    """Loss scale that keeps every loss value in [0, 1] over the ball."""
    xmax = max(float(np.linalg.norm(d.atoms, axis=1).max()) for d in distributions)
    return LogisticLoss(scale=1.0 / float(np.logaddexp(0.0, geom.radius * xmax)))


# -- text format for finite-support instances ------------------------------


def write_finite_support(path, dist):
    """One line per atom: ``prob,label,x1,...,xd``."""
    with open(path, "w", encoding="utf-8") as fh:
        for p, y, x in zip(dist.probs, dist.labels, dist.atoms):
            fields = [repr(float(p)), str(int(y))] + [repr(float(v)) for v in x]
            fh.write(",".join(fields) + "\n")


def read_finite_support(path):
    rows = np.loadtxt(path, delimiter=",", ndmin=2, encoding="utf-8")
    return FiniteSupportDistribution(rows[:, 2:], rows[:, 1], rows[:, 0])


# -- budgets and constants -------------------------------------------------


def imbalanced_budgets(m, base):
    if m < 1 or base < 1:
        raise ValueError("m and base must be positive")
    return [base * (m + 1 - i) for i in range(1, m + 1)]


@dataclass(frozen=True)
class ProblemConstants:
    big_g: float
    big_d: float
    m: int
    smoothness_l: float
    kappa: float = 1.0
    c_const: float = 1.0
    p_max: float = 1.0
    omega_max: float = 1.0
    r_max: float = 1.0

    @property
    def log_m(self):
        return math.log(self.m)

    @property
    def m_const(self):
        return math.sqrt(2 * self.big_d ** 2 * self.big_g ** 2 + 2 * self.log_m)

    @property
    def l_tilde(self):
        d2 = self.big_d ** 2
        return 2 * math.sqrt(2) * self.p_max * (d2 * self.smoothness_l + d2 * self.big_g * math.sqrt(self.log_m))

    @property
    def sigma_sq(self):
        return 2 * self.c_const * self.omega_max * (
            self.kappa * self.big_d ** 2 * self.big_g ** 2 + self.log_m ** 2)

    def as_dict(self):
        return {
            "G": self.big_g, "D": self.big_d, "m": self.m, "M": self.m_const,
            "L": self.smoothness_l, "kappa": self.kappa, "c": self.c_const,
            "L_tilde": self.l_tilde, "sigma_sq": self.sigma_sq,
            "p_max": self.p_max, "omega_max": self.omega_max, "r_max": self.r_max,
        }


def weight_statistics(weights, budgets):
    """``(p_max, omega_max, r_max)`` for weights ``p`` and budgets ``n``."""
    p = np.asarray(weights, dtype=float)
    n = np.asarray(budgets, dtype=float)
    n_m = n.min()
    return float(p.max()), float(np.max(p ** 2 * n_m / n)), float(np.max(p / np.sqrt(n)))


def _pilot(task, n):
    norms, second = [], 0.0
    for i in range(task.m):
        x, _ = task.oracle(i, "pilot").draw(n)
        norms.append(np.percentile(np.linalg.norm(x, axis=1), 99))
        second = max(second, float(np.linalg.eigvalsh(x.T @ x / n)[-1]))
    return max(norms), second


def derive_constants(geom, loss, task, *, big_g=None, smoothness=None, kappa=1.0, c=1.0,
                     budgets=None, weights=None, pilot_n=1000):
    """Assemble the constants that drive every step-size rule.

    ``G`` comes from the explicit value, else from the task's documented
    bound (exact for finite samples, ``sqrt(d) + 3`` for the Gaussian
    generator), else from a pilot (99th percentile of ``scale * ||x||``).
    ``L`` defaults to ``scale * lambda_max(E[x x^T]) / 4``.
    """
    dists = task.distributions
    pilot = None
    if big_g is None:
        if all(hasattr(d, "gradient_bound") for d in dists):
            big_g = max(d.gradient_bound(loss) for d in dists)
        elif pilot_n > 0:
            pilot = _pilot(task, pilot_n)
            big_g = loss.scale * pilot[0]
        else:
            raise ConfigError("no gradient bound given and no pilot budget", "constants.G")
    if smoothness is None:
        if all(hasattr(d, "smoothness") for d in dists):
            smoothness = max(d.smoothness(loss) for d in dists)
        elif pilot_n > 0:
            pilot = pilot or _pilot(task, pilot_n)
            smoothness = loss.scale * pilot[1] / 4
        else:
            raise ConfigError("no smoothness given and no pilot budget", "constants.L")
    if not big_g > 0:
        raise ConfigError("gradient bound must be positive", "constants.G")
    if budgets is not None:
        if weights is None:
            weights = np.ones(len(budgets))
        p_max, omega_max, r_max = weight_statistics(weights, budgets)
    else:
        p_max, omega_max, r_max = 1.0, 1.0, 1.0
    if smoothness <= 0:
        warnings.warn("non-positive smoothness estimate; using 1e-12")
        smoothness = 1e-12
    return ProblemConstants(
        big_g=float(big_g), big_d=geom.d_bound, m=task.m, smoothness_l=float(smoothness),
        kappa=kappa, c_const=c, p_max=p_max, omega_max=omega_max, r_max=r_max,
    )


def default_geometry(task, radius=5.0):
    return PrimalGeometry(task.dimension, radius)
