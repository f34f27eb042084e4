"""Metrics, minimal-risk estimation, brute-force saddle oracle and traces."""

import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .solvers.schedules import StepSchedule
from .solvers.smd import run_smd

log = logging.getLogger(__name__)


# -- risk estimation ---------------------------------------------------------


def estimate_risk(oracle, loss, w, n_eval):
    """Monte Carlo risk of ``w`` from ``n_eval`` fresh draws.

    Returns
    -------
    mean, std_error : float
        The sample mean of the loss and its standard error (zero when
        ``n_eval == 1``).
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    x, y = oracle.draw(n_eval)
    return _mean_se(loss.value(np.asarray(w, dtype=float), x, y))


def _mean_se(values):
    n = len(values)
    mean = float(values.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(n))


def _step_constants(dist, loss, geom, big_g):
    if big_g is None:
        big_g = dist.gradient_bound(loss) if hasattr(dist, "gradient_bound") else 1.0
    # a zero bound means every gradient vanishes, so any step works
    return SimpleNamespace(big_d=geom.d_bound, big_g=big_g if big_g > 0 else 1.0)


def train_risk_minimizer(oracle, loss, geom, train_n, big_g=None):
    """Anytime SMD on one distribution; returns the step-weighted average."""
    if train_n < 1:
        raise ValueError("train_n must be >= 1")
    dist = getattr(oracle, "dist", None)
    sched = StepSchedule("anytime", _step_constants(dist, loss, geom, big_g))
    w_bar, _ = run_smd(oracle, loss, geom, train_n, sched)
    return w_bar


def estimate_minimal_risk(oracle, loss, geom, train_n, eval_n, eval_oracle=None, big_g=None,
                          return_se=False):
    """Train with SMD for ``train_n`` draws, then estimate the risk of the result.

    Evaluation uses ``eval_oracle`` if given, else ``eval_n`` further
    (hence fresh) draws from ``oracle``.
    """
    if eval_n < 1:
        raise ValueError("eval_n must be >= 1")
    w = train_risk_minimizer(oracle, loss, geom, train_n, big_g)
    mean, se = estimate_risk(eval_oracle or oracle, loss, w, eval_n)
    return (mean, se) if return_se else mean


@dataclass
class MinimalRiskEstimate:
    """Per-distribution estimates of the minimal risk.

    ``method`` is ``exact`` (finite support, numerical optimum of the exact
    risk), ``quadrature`` (synthetic Gaussian tasks, optimum of the
    quadrature risk) or ``erm_protocol`` (SMD training plus a fresh
    evaluation sample).
    """

    values: np.ndarray
    method: str
    se: np.ndarray = None
    train_n: int = 0
    eval_n: int = 0
    seed: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.se is None:
            self.se = np.zeros_like(self.values)
        if self.method not in ("exact", "quadrature", "erm_protocol", "file"):
            raise ValueError(f"unknown minimal-risk method {self.method!r}")

    def rows(self):
        for i, (v, s) in enumerate(zip(self.values, self.se)):
            # full precision so a file round-trips exactly
            yield [i, repr(float(v)), repr(float(s)), self.method, self.train_n, self.eval_n,
                   self.seed]


RSTAR_HEADER = ["dist", "rstar_hat", "se", "method", "train_n", "eval_n", "seed"]


def minimal_risks(task, geom, method="exact", train_n=100_000, eval_n=100_000):
    """Minimal-risk estimates for every distribution of ``task``."""
    dists = task.distributions
    if method == "exact":
        if not all(getattr(d, "kind", "") == "finite_support" for d in dists):
            raise ValueError("exact minimal risks need finite-support distributions")
        return MinimalRiskEstimate([d.minimal_risk(task.loss, geom)[0] for d in dists], "exact",
                                   seed=task.seed)
    if method == "quadrature":
        if not all(hasattr(d, "minimal_risk") for d in dists):
            raise ValueError("quadrature minimal risks need exact-risk distributions")
        return MinimalRiskEstimate([d.minimal_risk(task.loss, geom)[0] for d in dists],
                                   "quadrature", seed=task.seed)
    if method != "erm_protocol":
        raise ValueError(f"unknown minimal-risk method {method!r}")
    vals, ses = [], []
    for i, d in enumerate(dists):
        train = d.oracle(_rstar_rng(task, i), index=i)
        w = train_risk_minimizer(train, task.loss, geom, train_n)
        if task.eval_sets is not None:
            x, y = task.eval_sets[i]
            mean, se = _mean_se(task.loss.value(w, x, y))
        else:
            mean, se = estimate_risk(train, task.loss, w, eval_n)
        vals.append(mean)
        ses.append(se)
    return MinimalRiskEstimate(vals, "erm_protocol", np.array(ses), train_n, eval_n, task.seed)


def _rstar_rng(task, i):
    from .problems import stream_rng

    return stream_rng(task.seed, i, "rstar-train")


def read_rstar(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or list(rows[0].keys()) != RSTAR_HEADER:
        raise ValueError(f"{path}: expected header {','.join(RSTAR_HEADER)}")
    rows.sort(key=lambda r: int(r["dist"]))
    return MinimalRiskEstimate([float(r["rstar_hat"]) for r in rows], "file",
                               np.array([float(r["se"]) for r in rows]),
                               int(rows[0]["train_n"]), int(rows[0]["eval_n"]), int(rows[0]["seed"]))


def write_rstar(path, estimate):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(RSTAR_HEADER)
        wr.writerows(estimate.rows())


# -- metrics -----------------------------------------------------------------


def mer(excess):
    """Maximal excess risk and its smallest-index argmax."""
    e = np.asarray(excess, dtype=float)
    if e.size == 0:
        raise ValueError("excess vector is empty")
    k = int(np.argmax(e))
    return float(e[k]), k


def mwer(excess, p):
    """Maximal weighted excess risk ``max_i p_i * excess_i`` and its argmax."""
    e = np.asarray(excess, dtype=float)
    p = np.asarray(p, dtype=float)
    if e.shape != p.shape:
        raise ValueError(f"length mismatch: {e.size} excess entries, {p.size} weights")
    return mer(p * e)


class Evaluator:
    """Risk of a model on every distribution of a task.

    Exact risks are used when every distribution provides them. Otherwise
    the risk is the mean loss on a fixed evaluation set per distribution
    (``task.eval_sets`` if present, else ``n_eval`` draws from the
    evaluation stream), so all checkpoints are compared on the same samples.
    """

    def __init__(self, task, rstar, p=None, n_eval=10_000):
        self.task = task
        self.rstar = np.asarray(getattr(rstar, "values", rstar), dtype=float)
        if len(self.rstar) != task.m:
            raise ValueError("one minimal risk per distribution is required")
        self.p = np.ones(task.m) if p is None else np.asarray(p, dtype=float)
        self.exact = task.has_exact_risk and task.eval_sets is None
        self.sets = None
        if not self.exact:
            if task.eval_sets is not None:
                self.sets = [(np.asarray(x), np.asarray(y)) for x, y in task.eval_sets]
            else:
                self.sets = [task.oracle(i, "evaluation").draw(n_eval) for i in range(task.m)]

    def risks(self, w):
        w = np.asarray(w, dtype=float)
        if self.exact:
            return self.task.exact_risks(w)
        return np.array([self.task.loss.value(w, x, y).mean() for x, y in self.sets])

    def record(self, run_id, algo, seed, snapshot, wall_ms=None):
        risks = self.risks(snapshot.w)
        excess = risks - self.rstar
        ms = snapshot.elapsed_ms if wall_ms is None else wall_ms
        return TraceRecord(run_id, algo, seed, snapshot.t, np.asarray(snapshot.samples),
                           risks, excess, mer(excess)[0], mwer(excess, self.p)[0],
                           np.asarray(snapshot.q), ms)


# -- traces ------------------------------------------------------------------


def _fmt(x):
    return "{:.9g}".format(float(x))


@dataclass
class TraceRecord:
    run_id: str
    algo: str
    seed: int
    t: int
    samples_per_dist: np.ndarray
    risks: np.ndarray
    excess: np.ndarray
    mer: float
    mwer: float
    q: np.ndarray
    wall_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def samples_total(self):
        return int(np.sum(self.samples_per_dist))

    def row(self):
        return ([self.run_id, self.algo, self.seed, self.t, self.samples_total,
                 ";".join(str(int(s)) for s in self.samples_per_dist)]
                + [_fmt(v) for v in self.risks] + [_fmt(v) for v in self.excess]
                + [_fmt(self.mer), _fmt(self.mwer)] + [_fmt(v) for v in self.q]
                + [_fmt(self.wall_ms)])


def trace_header(m):
    idx = range(1, m + 1)
    return (["run_id", "algo", "seed", "t", "samples_total", "samples_per_dist"]
            + [f"risk_{i}" for i in idx] + [f"excess_{i}" for i in idx]
            + ["mer", "mwer"] + [f"q_{i}" for i in idx] + ["wall_ms"])


def write_trace(path, records):
    records = list(records)
    if not records:
        raise ValueError("no trace records to write")
    m = len(records[0].risks)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(trace_header(m))
        for r in records:
            wr.writerow(r.row())


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        m = sum(1 for h in header if h.startswith("risk_"))
        if header != trace_header(m):
            raise ValueError(f"{path}: not a trace file")
        out = []
        for row in rd:
            vals = row[6:]
            out.append(TraceRecord(
                row[0], row[1], int(row[2]), int(row[3]),
                np.array([int(s) for s in row[5].split(";")]),
                np.array(vals[:m], dtype=float), np.array(vals[m:2 * m], dtype=float),
                float(vals[2 * m]), float(vals[2 * m + 1]),
                np.array(vals[2 * m + 2:3 * m + 2], dtype=float), float(vals[3 * m + 2])))
    return out


# -- slopes ------------------------------------------------------------------


def slope_fit(t, values, t_range=None):
    """Least-squares slope of ``log(values)`` against ``log(t)``.

    Points outside ``t_range`` (inclusive) are ignored; non-positive values
    are dropped with a warning. At least 10 points must remain in range.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t_range is not None:
        keep = (t >= t_range[0]) & (t <= t_range[1])
        t, v = t[keep], v[keep]
    if len(t) < 10:
        raise ValueError(f"need at least 10 checkpoints in range, got {len(t)}")
    pos = v > 0
    if not pos.all():
        if not pos.any():
            raise ValueError("all metric values are non-positive")
        warnings.warn(f"dropped {int((~pos).sum())} non-positive values before the log fit")
        t, v = t[pos], v[pos]
    slope, _ = np.polyfit(np.log(t), np.log(v), 1)
    return float(slope)


# -- brute-force saddle oracle -----------------------------------------------


def _simplex_grid(m, step):
    k = int(round(1 / step))
    pts = [c for c in itertools.product(range(k + 1), repeat=m - 1) if sum(c) <= k]
    q = np.array([[*c, k - sum(c)] for c in pts], dtype=float) / k
    return q


def _ball_grid(dimension, radius, resolution):
    axis = np.arange(-radius, radius + resolution / 2, resolution)
    if dimension == 1:
        return axis[:, None]
    g = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
    return g[np.einsum("ij,ij->i", g, g) <= radius ** 2 + 1e-12]


@dataclass
class BruteForceSaddle:
    """Exhaustive solution of the MERO saddle on a small finite-support task.

    Attributes
    ----------
    phi_star : float
        ``min`` over the grid of ``max_i excess_i(w)``.
    w_star : ndarray
        Grid point attaining ``phi_star``.
    q_star : ndarray
        Maximizer over a simplex grid of ``min_w q . excess(w)``.
    grid : ndarray
        The ``W`` grid, shape ``(n, d)``.
    excess_grid : ndarray
        Exact excess risks on the grid, shape ``(n, m)``.
    rstar : ndarray
        Minimal risks used for the excess.
    """

    phi_star: float
    w_star: np.ndarray
    q_star: np.ndarray
    grid: np.ndarray
    excess_grid: np.ndarray
    rstar: np.ndarray
    distributions: list
    loss: object

    def excess(self, w):
        w = np.asarray(w, dtype=float)
        return np.array([d.exact_risk(self.loss, w) for d in self.distributions]) - self.rstar

    def gap(self, w, q):
        """``max_q' phi(w, q') - min_w' phi(w', q)`` (vertex max, grid min)."""
        q = np.asarray(q, dtype=float)
        return float(self.excess(w).max() - (self.excess_grid @ q).min())

    def mer_gap(self, w):
        """``MER(w)`` minus the grid minimum of MER."""
        return float(self.excess(w).max() - self.phi_star)


def brute_force_saddle(distributions, loss, geom, resolution=1e-3, q_resolution=None):
    """Grid solution of ``min_w max_q sum_i q_i (R_i(w) - R_i*)``.

    The inner max over ``q`` is taken at the simplex vertices, which is
    exact because the objective is linear in ``q``. Only dimension <= 2 and
    at most 3 finite-support distributions are supported.
    """
    distributions = list(getattr(distributions, "distributions", distributions))
    m = len(distributions)
    if geom.dimension > 2 or m > 3 or m < 1:
        raise ValueError("brute force supports dimension <= 2 and 1 <= m <= 3")
    if not all(getattr(d, "kind", "") == "finite_support" for d in distributions):
        raise ValueError("brute force needs finite-support distributions")
    side = 2 * geom.radius / resolution + 1
    if side ** geom.dimension * m > 5e7:
        raise ValueError(f"grid of about {side ** geom.dimension:.3g} points is too large")
    grid = _ball_grid(geom.dimension, geom.radius, resolution)
    rstar = np.array([d.minimal_risk(loss, geom)[0] for d in distributions])
    exc = np.stack([d.exact_risks_on_grid(loss, grid) for d in distributions], 1) - rstar
    worst = exc.max(1)
    k = int(np.argmin(worst))
    if m == 1:
        q_star = np.ones(1)
    else:
        qs = _simplex_grid(m, q_resolution or (1e-3 if m == 2 else 1e-2))
        inner = np.full(len(qs), np.inf)
        for start in range(0, len(qs), 256):
            inner[start:start + 256] = (exc @ qs[start:start + 256].T).min(0)
        q_star = qs[int(np.argmax(inner))]
    return BruteForceSaddle(float(worst[k]), grid[k].copy(), q_star, grid, exc, rstar,
                            distributions, loss)


def risk_bound(big_d, big_g, t):
    """``DG (3 + ln t) / (4 (sqrt(t + 1) - 1))``: expected excess of anytime SMD."""
    t = np.asarray(t, dtype=float)
    return big_d * big_g * (3 + np.log(t)) / (4 * (np.sqrt(t + 1) - 1))


def saddle_bound(big_d, big_g, m, t):
    """Expected saddle gap of anytime MERO after ``t`` rounds."""
    t = np.asarray(t, dtype=float)
    lt = np.log(t)
    big_m = math.sqrt(2 * big_d ** 2 * big_g ** 2 + 2 * math.log(m))
    inner = 3 + lt + 16 * (1 + math.sqrt(math.log(m))) * np.sqrt(2 * (1 + lt))
    return (big_m * (5 + 3 * lt) + 2 * big_d * big_g * inner * (1 + lt)) / (2 * (np.sqrt(t + 1) - 1))
