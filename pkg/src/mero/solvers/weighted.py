"""Budget-aware solvers: two-stage weighted MERO and weighted GDRO.

Both run stochastic mirror-prox (an extragradient scheme) on the weighted
saddle function with mini-batches of ``n_i // n_m`` samples from
distribution ``i`` per half-step, so distributions with larger budgets get
lower-variance gradients and larger weights ``p_i``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import SimplexGeometry, mirror_step_primal, mirror_step_simplex
from .common import Checkpointer, RunResult
from .schedules import StepSchedule

log = logging.getLogger(__name__)


def weights_from_budgets(budgets):
    """``p_i = (1/sqrt(n_m) + 1) / (1/sqrt(n_m) + sqrt(n_m / n_i))`` with ``n_m = min n``."""
    if len(budgets) == 0:
        raise ValueError("budgets must be nonempty")
    n = np.asarray(budgets, dtype=float)
    if np.any(n < 1):
        raise ValueError("budgets must be >= 1")
    n_m = n.min()
    inv = 1.0 / math.sqrt(n_m)
    return (inv + 1.0) / (inv + np.sqrt(n_m / n))


def weighted_gradients(w, q, batches, refs, p, loss, batch_sizes=None):
    """Mini-batch gradients of the weighted saddle function at ``(w, q)``.

    ``batches[i]`` is ``(X_i, y_i)``. With ``refs=None`` the offsets are
    zero (weighted GDRO).
    """
    m = len(batches)
    if batch_sizes is not None:
        for i, (x, _) in enumerate(batches):
            if len(x) != batch_sizes[i]:
                raise ValueError(f"distribution {i}: batch of {len(x)}, expected {batch_sizes[i]}")
    g_w = np.zeros_like(w)
    g_q = np.empty(m)
    for i, (x, y) in enumerate(batches):
        margin = y * (x @ w)
        g_w += (q[i] * p[i] / len(y)) * ((loss.slope(margin) * y) @ x)
        gap = loss.from_margin(margin)
        if refs is not None:
            gap = gap - loss.from_margin(y * (x @ refs[i]))
        g_q[i] = p[i] * gap.mean()
    return g_w, g_q


@dataclass
class TwoStageState:
    refs: np.ndarray
    p: np.ndarray
    batch_sizes: list
    w_main: np.ndarray
    q_main: np.ndarray
    w_aux: np.ndarray
    q_aux: np.ndarray
    w_sum: np.ndarray
    q_sum: np.ndarray
    round: int = 0
    samples: np.ndarray = None

    @classmethod
    def start(cls, geom, refs, p, batch_sizes):
        m = len(p)
        return cls(refs, np.asarray(p, dtype=float), list(batch_sizes),
                   geom.origin(), np.full(m, 1.0 / m), geom.origin(), np.full(m, 1.0 / m),
                   geom.origin(), np.zeros(m), samples=np.zeros(m, dtype=np.int64))

    def averages(self):
        return self.w_sum / self.round, self.q_sum / self.round


def _batches(oracles, sizes, state):
    out = [o.draw(b) for o, b in zip(oracles, sizes)]
    state.samples += np.asarray(sizes, dtype=np.int64)
    return out


def smpa_round(state, first_oracles, second_oracles, loss, eta_w, eta_q, geom, simplex):
    """One mirror-prox round; both half-steps are anchored at ``(w', q')``."""
    b1 = _batches(first_oracles, state.batch_sizes, state)
    g_w, g_q = weighted_gradients(state.w_main, state.q_main, b1, state.refs, state.p, loss)
    w_aux = mirror_step_primal(geom, state.w_main, g_w, eta_w)
    q_aux = mirror_step_simplex(simplex, state.q_main, g_q, eta_q, "ascent")

    b2 = _batches(second_oracles, state.batch_sizes, state)
    g_w, g_q = weighted_gradients(w_aux, q_aux, b2, state.refs, state.p, loss)
    state.w_main = mirror_step_primal(geom, state.w_main, g_w, eta_w)
    state.q_main = mirror_step_simplex(simplex, state.q_main, g_q, eta_q, "ascent")

    state.w_aux, state.q_aux = w_aux, q_aux
    state.w_sum = state.w_sum + w_aux
    state.q_sum = state.q_sum + q_aux
    state.round += 1
    return state


def _check_budgets(budgets, m):
    if len(budgets) != m:
        raise ConfigError(f"expected {m} budgets, got {len(budgets)}", "budgets")
    if any(n < 8 for n in budgets):
        raise ConfigError("every budget must be at least 8", "budgets")
    if list(budgets) != sorted(budgets, reverse=True):
        raise ConfigError("budgets must be sorted non-increasing", "budgets")


def _stage1(task, geom, budgets, sched):
    """Constant-step SMD for ``n_i // 2`` steps; average of post-update iterates."""
    loss = task.loss
    refs = np.zeros((task.m, geom.dimension))
    used = np.zeros(task.m, dtype=np.int64)
    for i, n_i in enumerate(budgets):
        k = n_i // 2
        x_all, y_all = task.oracle(i, "stage1").draw(k)
        eta = sched.risk_step(i=i)
        w = geom.origin()
        acc = np.zeros_like(w)
        r = geom.radius
        for t in range(k):
            x = x_all[t]
            y = y_all[t]
            w = w - (eta * float(loss.slope(y * (x @ w))) * y) * x
            nrm = math.sqrt(w @ w)
            if nrm > r:
                w *= r / nrm
            acc += w
        refs[i] = acc / k
        used[i] = k
    return refs, used


def _smpa_loop(task, geom, state, rounds, eta_w, eta_q, checkpoints, base_samples):
    first = task.oracles("smpa-first-half")
    second = task.oracles("smpa-second-half")
    simplex = SimplexGeometry(task.m)
    cp = Checkpointer(checkpoints, rounds)
    for t in range(1, rounds + 1):
        smpa_round(state, first, second, task.loss, eta_w, eta_q, geom, simplex)
        if t in cp:
            w_bar, q_bar = state.averages()
            cp.take(t, w_bar, q_bar, base_samples + state.samples)
    return cp.snapshots


def _log_discards(budgets, used, label):
    lost = np.asarray(budgets) - used
    if np.any(lost > 0):
        log.info("%s: discarded budget remainders %s", label, lost.tolist())
    return lost


def run_two_stage_weighted_mero(task, geom, constants, budgets, weights=None, checkpoints=()):
    """Two-stage weighted MERO under per-distribution budgets ``n_1 >= ... >= n_m``.

    ``constants`` must have been derived with the same budgets and weights.
    Stage 1 spends ``n_i // 2`` samples per distribution; stage 2 runs
    ``n_m // 4`` mirror-prox rounds with batches of ``n_i // n_m``.
    Checkpoints count stage-2 rounds.
    """
    budgets = [int(n) for n in budgets]
    _check_budgets(budgets, task.m)
    p = weights_from_budgets(budgets) if weights is None else np.asarray(weights, dtype=float)
    sched = StepSchedule("fixed", constants, budgets=tuple(budgets))
    refs, used = _stage1(task, geom, budgets, sched)
    n_m = budgets[-1]
    sizes = [n // n_m for n in budgets]
    rounds = n_m // 4
    state = TwoStageState.start(geom, refs, p, sizes)
    eta_w, eta_q = sched.saddle_steps()
    snaps = _smpa_loop(task, geom, state, rounds, eta_w, eta_q, checkpoints, used)
    total = used + state.samples
    lost = _log_discards(budgets, total, "weighted MERO")
    w_bar, q_bar = state.averages()
    info = {"stage1": refs, "p": p, "batch_sizes": sizes, "rounds": rounds,
            "eta_w": eta_w, "eta_q": eta_q, "discarded": lost}
    return RunResult("mero-weighted", w_bar, q_bar, total, snaps, info)


def run_weighted_gdro(task, geom, constants, budgets, weights=None, checkpoints=()):
    """Mirror-prox on the weighted GDRO saddle (no offsets, no stage 1).

    Without a first stage the whole budget is available, so ``n_m // 2``
    rounds are run.
    """
    budgets = [int(n) for n in budgets]
    _check_budgets(budgets, task.m)
    p = weights_from_budgets(budgets) if weights is None else np.asarray(weights, dtype=float)
    sched = StepSchedule("fixed", constants, budgets=tuple(budgets))
    n_m = budgets[-1]
    sizes = [n // n_m for n in budgets]
    rounds = n_m // 2
    state = TwoStageState.start(geom, None, p, sizes)
    eta_w, eta_q = sched.saddle_steps()
    zero = np.zeros(task.m, dtype=np.int64)
    snaps = _smpa_loop(task, geom, state, rounds, eta_w, eta_q, checkpoints, zero)
    lost = _log_discards(budgets, state.samples, "weighted GDRO")
    w_bar, q_bar = state.averages()
    info = {"p": p, "batch_sizes": sizes, "rounds": rounds, "eta_w": eta_w, "eta_q": eta_q,
            "discarded": lost}
    return RunResult("gdro-weighted", w_bar, q_bar, state.samples.copy(), snaps, info)
