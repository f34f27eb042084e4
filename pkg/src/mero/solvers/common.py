import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Snapshot:
    """Solution available at a checkpoint (averaged iterates, not last ones)."""

    t: int
    w: np.ndarray
    q: np.ndarray
    samples: np.ndarray
    elapsed_ms: float
    extra: dict = field(default_factory=dict)


@dataclass
class RunResult:
    algorithm: str
    w: np.ndarray
    q: np.ndarray
    samples: np.ndarray
    snapshots: list
    info: dict = field(default_factory=dict)


class Checkpointer:
    def __init__(self, checkpoints, last):
        cps = set(int(c) for c in (checkpoints or ()) if 1 <= c <= last)
        cps.add(last)
        self.points = cps
        self.snapshots = []
        self._t0 = time.perf_counter()

    def __contains__(self, t):
        return t in self.points

    def take(self, t, w, q, samples, **extra):
        ms = (time.perf_counter() - self._t0) * 1e3
        self.snapshots.append(Snapshot(t, np.array(w), np.array(q), np.array(samples), ms, extra))


def every(step, last):
    """Checkpoint grid ``step, 2*step, ...`` up to ``last``."""
    if not step or step <= 0:
        return [last]
    return list(range(step, last + 1, step))


def draw_round(oracles):
    """One sample per oracle, stacked to ``(m, d)`` and ``(m,)``."""
    xs, ys = zip(*(o.draw(1) for o in oracles))
    return np.concatenate(xs), np.concatenate(ys)
