import math
from dataclasses import dataclass


@dataclass(frozen=True)
class StepSchedule:
    """Step-size rules for the risk minimizers and the saddle-point updates.

    ``anytime``
        ``eta_t^(i) = D/(G sqrt t)``, ``eta_t^w = 2D^2/(M sqrt t)``,
        ``eta_t^q = 2 ln m/(M sqrt t)``.
    ``horizon``
        the anytime rule frozen at ``t = horizon`` for the saddle steps and
        ``2D/(G sqrt(2 horizon))`` for the minimizers (fixed-``T`` designs).
    ``fixed``
        budget-driven: ``eta^(i) = 2D/(G sqrt n_i)``, ``eta_w = 2 D^2 mu``,
        ``eta_q = 2 mu ln m`` with
        ``mu = min(1/(sqrt(3) L~), 2 sqrt(2/(7 sigma^2 n_m)))``.
    """

    kind: str
    constants: object
    budgets: tuple = None
    horizon: int = None

    def __post_init__(self):
        if self.kind not in ("anytime", "horizon", "fixed"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "fixed" and not self.budgets:
            raise ValueError("fixed schedule needs budgets")
        if self.kind == "horizon" and not (self.horizon and self.horizon >= 1):
            raise ValueError("horizon schedule needs horizon >= 1")

    def risk_step(self, t=1, i=0):
        c = self.constants
        if self.kind == "anytime":
            return c.big_d / (c.big_g * math.sqrt(t))
        if self.kind == "horizon":
            return 2 * c.big_d / (c.big_g * math.sqrt(2 * self.horizon))
        return 2 * c.big_d / (c.big_g * math.sqrt(self.budgets[i]))

    def _mu(self):
        c = self.constants
        n_m = min(self.budgets)
        return min(1 / (math.sqrt(3) * c.l_tilde), 2 * math.sqrt(2 / (7 * c.sigma_sq * n_m)))

    def saddle_steps(self, t=1):
        """``(eta_w, eta_q)`` for round ``t``."""
        c = self.constants
        if self.kind == "fixed":
            mu = self._mu()
            return 2 * c.big_d ** 2 * mu, 2 * mu * c.log_m
        tt = t if self.kind == "anytime" else self.horizon
        root = c.m_const * math.sqrt(tt)
        return 2 * c.big_d ** 2 / root, 2 * c.log_m / root

