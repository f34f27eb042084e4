import numpy as np

from ..geometry import SimplexGeometry
from .anytime import SaddleState, saddle_update
from .common import Checkpointer, RunResult, draw_round
from .schedules import StepSchedule


def _stage1_bank(task, geom, step, iters):
    """``m`` constant-step SMD runs; returns the averages of post-update iterates."""
    oracles = task.oracles("stage1")
    loss = task.loss
    w = np.zeros((task.m, geom.dimension))
    acc = np.zeros_like(w)
    for _ in range(iters):
        x, y = draw_round(oracles)
        margin = y * np.einsum("ij,ij->i", x, w)
        w = geom.project(w - step * (loss.slope(margin) * y)[:, None] * x)
        acc += w
    return acc / iters


def run_multistage_mero(task, geom, constants, iters, include_stage2=True,
                        continue_past_T=False, stage3_iters=None, checkpoints=()):
    """Fixed-horizon MERO: minimize each risk, estimate offsets, then run SMD.

    Stage 1 runs ``iters`` SMD steps per distribution; stage 2 averages
    ``iters`` fresh losses of each stage-1 solution; stage 3 runs the saddle
    SMD with the estimated offsets as constants. Without stage 2 the
    offsets are replaced by the per-sample loss of the stage-1 solution.
    With ``continue_past_T`` stage 3 keeps going (``stage3_iters``, default
    ``3 * iters``) at the step sizes designed for ``iters``. Checkpoints
    count stage-3 iterations.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    m = task.m
    loss = task.loss
    sched = StepSchedule("horizon", constants, horizon=iters)
    refs = _stage1_bank(task, geom, sched.risk_step(), iters)
    used = np.full(m, iters, dtype=np.int64)

    offsets = None
    if include_stage2:
        offsets = np.empty(m)
        for i in range(m):
            x, y = task.oracle(i, "stage2").draw(iters)
            offsets[i] = loss.value(refs[i], x, y).mean()
        used += iters

    total = iters
    if continue_past_T:
        total = stage3_iters if stage3_iters is not None else 3 * iters
        if total < iters:
            raise ValueError("stage3_iters must be >= iters")
    oracles = task.oracles("stage3")
    simplex = SimplexGeometry(m)
    state = SaddleState.start(geom, m)
    eta_w, eta_q = sched.saddle_steps()
    cp = Checkpointer(checkpoints, total)
    for t in range(1, total + 1):
        x, y = draw_round(oracles)
        state.samples += 1
        margin = y * (x @ state.w)
        g_w = (state.q * loss.slope(margin) * y) @ x
        if offsets is None:
            g_q = loss.from_margin(margin) - loss.from_margin(y * np.einsum("ij,ij->i", x, refs))
        else:
            g_q = loss.from_margin(margin) - offsets
        saddle_update(state, g_w, g_q, eta_w, eta_q, geom, simplex)
        if t in cp:
            cp.take(t, state.w_bar, state.q_bar, used + state.samples)
    info = {"stage1": refs, "offsets": offsets, "design_T": iters}
    return RunResult("mero-multistage", state.w_bar.copy(), state.q_bar.copy(),
                     used + state.samples, cp.snapshots, info)
