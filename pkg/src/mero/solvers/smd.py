"""Stochastic mirror descent for minimizing a single risk."""

from dataclasses import dataclass

import numpy as np

from ..geometry import mirror_step_primal


@dataclass
class RiskMinimizerState:
    """Iterate, step-weighted running average and step sum after ``t`` steps.

    ``w`` may be stacked ``(k, d)`` to hold ``k`` independent minimizers
    that share a step schedule.
    """

    w: np.ndarray
    w_bar: np.ndarray
    eta_sum: float = 0.0
    t: int = 0

    @classmethod
    def start(cls, w0):
        w0 = np.array(w0, dtype=float)
        return cls(w0, np.zeros_like(w0))


def smd_risk_step(state, grad, schedule, geom, i=0):
    """Fold the current iterate into the average, then take one mirror step.

    The average after this call covers ``w_1 .. w_t`` (the iterates at which
    gradients were taken); ``state.w`` becomes ``w_{t+1}``.
    """
    eta = schedule.risk_step(state.t + 1, i) if hasattr(schedule, "risk_step") else float(schedule)
    eta_sum = state.eta_sum + eta
    w_bar = state.w_bar + (eta / eta_sum) * (state.w - state.w_bar)
    w_next = mirror_step_primal(geom, state.w, grad, eta)
    return RiskMinimizerState(w_next, w_bar, eta_sum, state.t + 1)


def run_smd(oracle, loss, geom, iters, step, checkpoints=()):
    """Plain SMD on one distribution with a constant or anytime step.

    ``step`` is either a float (constant step, post-update iterates averaged
    uniformly) or a schedule (step-weighted averaging of the iterates at
    which gradients were taken). Returns ``(w_bar, history)`` where history
    maps checkpoint -> average.
    """
    cps = set(checkpoints)
    history = {}
    x_all, y_all = oracle.draw(iters)
    w = geom.origin()
    if isinstance(step, (int, float)):
        eta = float(step)
        acc = np.zeros_like(w)
        for t in range(iters):
            x = x_all[t]
            y = y_all[t]
            g = float(loss.slope(y * (x @ w))) * y * x
            w = w - eta * g
            nrm = np.sqrt(w @ w)
            if nrm > geom.radius:
                w *= geom.radius / nrm
            acc += w
            if t + 1 in cps:
                history[t + 1] = acc / (t + 1)
        return acc / iters, history
    state = RiskMinimizerState.start(w)
    for t in range(iters):
        x = x_all[t]
        y = y_all[t]
        g = float(loss.slope(y * (x @ state.w))) * y * x
        state = smd_risk_step(state, g, step, geom)
        if t + 1 in cps:
            history[t + 1] = state.w_bar.copy()
    return state.w_bar, history
