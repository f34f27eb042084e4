"""Anytime saddle-point solvers: MERO, GDRO and reference-model MERO.

All three share the same round: draw one sample per distribution, build a
stochastic gradient at ``(w_t, q_t)``, descend on ``w`` and ascend on ``q``
with entropic steps, and fold ``(w_t, q_t)`` into step-weighted averages.
They differ only in the ``q``-gradient: raw losses (GDRO), losses minus the
loss of a shared reference model, or losses minus the loss of the
per-distribution SMD averages (MERO).
"""

from dataclasses import dataclass

import numpy as np

from ..geometry import SimplexGeometry, mirror_step_primal, mirror_step_simplex
from .common import Checkpointer, RunResult, draw_round
from .schedules import StepSchedule
from .smd import RiskMinimizerState, smd_risk_step


@dataclass
class SaddleState:
    w: np.ndarray
    q: np.ndarray
    w_bar: np.ndarray
    q_bar: np.ndarray
    weight_sum: float = 0.0
    t: int = 0
    samples: np.ndarray = None

    @classmethod
    def start(cls, geom, m):
        return cls(geom.origin(), np.full(m, 1.0 / m), geom.origin(), np.full(m, 1.0 / m),
                   samples=np.zeros(m, dtype=np.int64))


@dataclass
class AnytimeMeroState(SaddleState):
    minimizers: RiskMinimizerState = None

    @classmethod
    def start(cls, geom, m):
        base = SaddleState.start(geom, m)
        bank = RiskMinimizerState.start(np.zeros((m, geom.dimension)))
        return cls(**vars(base), minimizers=bank)


def saddle_update(state, g_w, g_q, eta_w, eta_q, geom, simplex):
    """Average in ``(w_t, q_t)`` with weight ``eta_w``, then step both blocks.

    Both averages use the ``eta_w`` sequence; under every schedule in this
    package ``eta_q`` is proportional to it, so the normalized weights agree.
    """
    state.weight_sum += eta_w
    frac = eta_w / state.weight_sum
    state.w_bar = state.w_bar + frac * (state.w - state.w_bar)
    state.q_bar = state.q_bar + frac * (state.q - state.q_bar)
    state.w = mirror_step_primal(geom, state.w, g_w, eta_w)
    if simplex.m > 1:
        state.q = mirror_step_simplex(simplex, state.q, g_q, eta_q, "ascent")
    state.t += 1
    return state


def mero_gradients(w, q, x, y, refs, loss):
    """Stochastic gradients of the MERO saddle function at ``(w, q)``.

    ``x``, ``y`` hold one sample per distribution (rows); ``refs`` holds the
    per-distribution reference models (rows). Returns ``(g_w, g_q)`` with
    ``g_w = sum_i q_i grad l(w; z_i)`` and ``g_q[i] = l(w; z_i) - l(refs_i; z_i)``.
    """
    x = np.atleast_2d(x)
    y = np.atleast_1d(y)
    refs = np.atleast_2d(refs)
    if not (len(x) == len(y) == len(q) == len(refs)):
        raise ValueError("need exactly one sample and one reference model per distribution")
    margin = y * (x @ w)
    ref_margin = y * np.einsum("ij,ij->i", x, refs)
    g_w = (q * loss.slope(margin) * y) @ x
    g_q = loss.from_margin(margin) - loss.from_margin(ref_margin)
    return g_w, g_q


def anytime_mero_round(state, oracles, loss, schedule, geom, simplex=None):
    """One round of the anytime MERO loop; mutates and returns ``state``.

    The same ``m`` samples advance the risk minimizers and feed the saddle
    gradients; the minimizer averages used as references exclude this
    round's samples.
    """
    simplex = simplex or SimplexGeometry(len(oracles))
    x, y = draw_round(oracles)
    state.samples += 1
    t = state.t + 1
    bank = state.minimizers
    # per-minimizer gradient on its own sample
    bm = y * np.einsum("ij,ij->i", x, bank.w)
    grads = (loss.slope(bm) * y)[:, None] * x
    bank = smd_risk_step(bank, grads, schedule, geom)
    state.minimizers = bank
    g_w, g_q = mero_gradients(state.w, state.q, x, y, bank.w_bar, loss)
    eta_w, eta_q = schedule.saddle_steps(t)
    return saddle_update(state, g_w, g_q, eta_w, eta_q, geom, simplex)


def _gdro_round(state, oracles, loss, schedule, geom, simplex, ref=None):
    x, y = draw_round(oracles)
    state.samples += 1
    margin = y * (x @ state.w)
    g_w = (state.q * loss.slope(margin) * y) @ x
    g_q = loss.from_margin(margin)
    if ref is not None:
        g_q = g_q - loss.from_margin(y * (x @ ref))
    eta_w, eta_q = schedule.saddle_steps(state.t + 1)
    return saddle_update(state, g_w, g_q, eta_w, eta_q, geom, simplex)


def _schedule(constants, schedule, iters):
    if isinstance(schedule, StepSchedule):
        return schedule
    if schedule in (None, "anytime"):
        return StepSchedule("anytime", constants)
    if schedule == "horizon":
        return StepSchedule("horizon", constants, horizon=iters)
    raise ValueError(f"unsupported schedule {schedule!r}")


def run_anytime_mero(task, geom, constants, iters, checkpoints=(), schedule=None,
                     keep_refs=False, purpose="main"):
    """Anytime MERO for ``iters`` rounds; consumes exactly ``m * iters`` samples."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    sched = _schedule(constants, schedule, iters)
    oracles = task.oracles(purpose)
    simplex = SimplexGeometry(task.m)
    state = AnytimeMeroState.start(geom, task.m)
    cp = Checkpointer(checkpoints, iters)
    for t in range(1, iters + 1):
        anytime_mero_round(state, oracles, task.loss, sched, geom, simplex)
        if t in cp:
            extra = {"refs": state.minimizers.w_bar.copy()} if keep_refs else {}
            cp.take(t, state.w_bar, state.q_bar, state.samples, **extra)
    return RunResult("mero-anytime", state.w_bar.copy(), state.q_bar.copy(),
                     state.samples.copy(), cp.snapshots, {"schedule": sched.kind})


def run_gdro_smd(task, geom, constants, iters, checkpoints=(), schedule=None, purpose="main"):
    """SMD on the group-DRO saddle: ``g_q`` is the vector of raw losses."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    sched = _schedule(constants, schedule, iters)
    oracles = task.oracles(purpose)
    simplex = SimplexGeometry(task.m)
    state = SaddleState.start(geom, task.m)
    cp = Checkpointer(checkpoints, iters)
    for t in range(1, iters + 1):
        _gdro_round(state, oracles, task.loss, sched, geom, simplex)
        if t in cp:
            cp.take(t, state.w_bar, state.q_bar, state.samples)
    return RunResult("gdro", state.w_bar.copy(), state.q_bar.copy(), state.samples.copy(),
                     cp.snapshots, {"schedule": sched.kind})


def pretrain_average_risk(task, geom, constants, iters):
    """SMD on the average risk, one sample per distribution per step."""
    oracles = task.oracles("pretrain")
    sched = StepSchedule("anytime", constants)
    state = RiskMinimizerState.start(geom.origin())
    for _ in range(iters):
        x, y = draw_round(oracles)
        g = (task.loss.slope(y * (x @ state.w)) * y) @ x / len(y)
        state = smd_risk_step(state, g, sched, geom)
    return state.w_bar, iters * np.ones(task.m, dtype=np.int64)


def run_reference_mero(task, geom, constants, iters, reference=None, pretrain=None,
                       checkpoints=(), schedule=None, purpose="main"):
    """Anytime MERO with one shared reference model in place of the ``m`` minimizers."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if reference is None:
        if not pretrain or pretrain < 1:
            raise ValueError("need a reference model or a pretraining budget >= 1")
        reference, pre_samples = pretrain_average_risk(task, geom, constants, pretrain)
    else:
        reference = np.asarray(reference, dtype=float)
        pre_samples = np.zeros(task.m, dtype=np.int64)
    sched = _schedule(constants, schedule, iters)
    oracles = task.oracles(purpose)
    simplex = SimplexGeometry(task.m)
    state = SaddleState.start(geom, task.m)
    cp = Checkpointer(checkpoints, iters)
    for t in range(1, iters + 1):
        _gdro_round(state, oracles, task.loss, sched, geom, simplex, ref=reference)
        if t in cp:
            cp.take(t, state.w_bar, state.q_bar, state.samples + pre_samples)
    return RunResult("mero-reference", state.w_bar.copy(), state.q_bar.copy(),
                     state.samples + pre_samples, cp.snapshots,
                     {"schedule": sched.kind, "reference": reference, "auxiliary_models": 1})
