import logging
import math

import numpy as np
import pytest

from mero.errors import BudgetExhausted, ConfigError
from mero.geometry import PrimalGeometry, SimplexGeometry, mirror_step_primal, mirror_step_simplex
from mero.problems import (
    FiniteSupportDistribution,
    LogisticLoss,
    ProblemConstants,
    SyntheticTaskSpec,
    build_synthetic_task,
    finite_support_task,
    random_finite_support,
)
from mero.solvers import (
    AnytimeMeroState,
    RiskMinimizerState,
    SaddleState,
    StepSchedule,
    TwoStageState,
    anytime_mero_round,
    every,
    mero_gradients,
    run_anytime_mero,
    run_gdro_smd,
    run_multistage_mero,
    run_reference_mero,
    run_smd,
    run_two_stage_weighted_mero,
    run_weighted_gdro,
    saddle_update,
    smd_risk_step,
    smpa_round,
    weighted_gradients,
    weights_from_budgets,
)

LOSS = LogisticLoss()


def _constants(geom, m, big_g=2.0):
    return ProblemConstants(big_g=big_g, big_d=geom.d_bound, m=m, smoothness_l=0.25)


class Scripted:
    """Oracle returning the same rows forever (exact-gradient toys)."""

    def __init__(self, x, y):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.drawn = 0

    def draw(self, n):
        self.drawn += n
        idx = np.arange(self.drawn - n, self.drawn) % len(self.y)
        return self.x[idx], self.y[idx]


class LinearLoss:
    """``l(w; z) = y <x, w>``; makes the saddle function bilinear."""

    def slope(self, margin):
        return np.ones_like(np.asarray(margin, dtype=float))

    def from_margin(self, margin):
        return np.asarray(margin, dtype=float)

    def value(self, w, x, y):
        return y * (np.atleast_2d(x) @ w)


class ToyTask:
    def __init__(self, rows, loss):
        self.rows = rows
        self.loss = loss
        self.m = len(rows)
        self.dimension = len(rows[0][0])

    def oracle(self, i, purpose="main", budget=None):
        return Scripted(*self.rows[i])

    def oracles(self, purpose="main"):
        return [self.oracle(i, purpose) for i in range(self.m)]


def bilinear_gap(w_bar, q_bar, radius):
    # phi(w, q) = (q_1 - q_2) w on [-r, r] x simplex; saddle at w = 0, q uniform
    return abs(w_bar[0]) + radius * abs(q_bar[0] - q_bar[1])


# -- schedules -----------------------------------------------------------------


def test_anytime_steps_positive_and_decreasing():
    geom = PrimalGeometry(3)
    s = StepSchedule("anytime", _constants(geom, 4))
    risk = [s.risk_step(t) for t in range(1, 50)]
    saddle = [s.saddle_steps(t) for t in range(1, 50)]
    assert all(a > b > 0 for a, b in zip(risk, risk[1:]))
    assert all(a[0] > b[0] > 0 and a[1] > b[1] > 0 for a, b in zip(saddle, saddle[1:]))


def test_fixed_schedule_values():
    geom = PrimalGeometry(2, 1.0)
    c = _constants(geom, 2)
    s = StepSchedule("fixed", c, budgets=(400, 100))
    assert s.risk_step(i=0) == pytest.approx(2 * c.big_d / (c.big_g * 20))
    mu = min(1 / (math.sqrt(3) * c.l_tilde), 2 * math.sqrt(2 / (7 * c.sigma_sq * 100)))
    assert s.saddle_steps() == pytest.approx((2 * c.big_d ** 2 * mu, 2 * mu * math.log(2)))


def test_schedule_validation():
    c = _constants(PrimalGeometry(2), 2)
    with pytest.raises(ValueError):
        StepSchedule("fixed", c)
    with pytest.raises(ValueError):
        StepSchedule("bogus", c)
    with pytest.raises(ValueError):
        StepSchedule("horizon", c)


# -- risk minimizer ------------------------------------------------------------


def test_first_average_is_first_iterate():
    geom = PrimalGeometry(2)
    w1 = np.array([0.3, -0.1])
    s = smd_risk_step(RiskMinimizerState.start(w1), np.ones(2), 0.7, geom)
    np.testing.assert_array_equal(s.w_bar, w1)


def test_two_equal_steps_average_is_midpoint():
    geom = PrimalGeometry(2)
    s = RiskMinimizerState.start(np.zeros(2))
    s = smd_risk_step(s, np.array([1.0, 0.0]), 0.5, geom)
    w2 = s.w.copy()
    s = smd_risk_step(s, np.array([0.0, 1.0]), 0.5, geom)
    np.testing.assert_allclose(s.w_bar, (np.zeros(2) + w2) / 2, atol=1e-15)


def test_ten_steps_match_hand_composition():
    geom = PrimalGeometry(1, 1.0)
    sched = StepSchedule("anytime", _constants(geom, 1, big_g=1.0))
    grads = np.random.default_rng(0).standard_normal((10, 1)) * 3
    s = RiskMinimizerState.start(np.zeros(1))
    for g in grads:
        s = smd_risk_step(s, g, sched, geom)
    w, ws, etas = np.zeros(1), [], []
    for t, g in enumerate(grads, start=1):
        eta = sched.risk_step(t)
        ws.append(w)
        etas.append(eta)
        w = mirror_step_primal(geom, w, g, eta)
    direct = np.dot(etas, ws) / np.sum(etas)
    np.testing.assert_allclose(s.w_bar, direct, atol=1e-12)
    np.testing.assert_allclose(s.w, w, atol=1e-12)


def test_risk_average_recurrence_after_many_steps():
    geom = PrimalGeometry(2, 2.0)
    sched = StepSchedule("anytime", _constants(geom, 1))
    rng = np.random.default_rng(1)
    n = 100_000
    grads = rng.standard_normal((n, 2))
    s = RiskMinimizerState.start(np.zeros(2))
    num, den = np.zeros(2), 0.0
    for g in grads:
        eta = sched.risk_step(s.t + 1)
        num += eta * s.w
        den += eta
        s = smd_risk_step(s, g, sched, geom)
    np.testing.assert_allclose(s.w_bar, num / den, atol=1e-10)


def test_saddle_average_recurrence_after_many_steps():
    geom = PrimalGeometry(2, 2.0)
    simplex = SimplexGeometry(3)
    sched = StepSchedule("anytime", _constants(geom, 3))
    rng = np.random.default_rng(2)
    state = SaddleState.start(geom, 3)
    n = 100_000
    gw, gq = rng.standard_normal((n, 2)), rng.standard_normal((n, 3))
    num_w, num_q, den = np.zeros(2), np.zeros(3), 0.0
    for t in range(n):
        eta_w, eta_q = sched.saddle_steps(t + 1)
        num_w += eta_w * state.w
        num_q += eta_w * state.q
        den += eta_w
        saddle_update(state, gw[t], gq[t], eta_w, eta_q, geom, simplex)
    np.testing.assert_allclose(state.w_bar, num_w / den, atol=1e-10)
    np.testing.assert_allclose(state.q_bar, num_q / den, atol=1e-10)


def test_run_smd_constant_and_anytime_steps():
    dist = random_finite_support(np.random.default_rng(3), 10, 2)
    geom = PrimalGeometry(2)
    oracle = dist.oracle(np.random.default_rng(0))
    w_const, hist = run_smd(oracle, LOSS, geom, 2000, 0.1, checkpoints=[1000, 2000])
    np.testing.assert_array_equal(hist[2000], w_const)
    r_star, _ = dist.minimal_risk(LOSS, geom)
    assert dist.exact_risk(LOSS, w_const) - r_star < 0.05
    sched = StepSchedule("anytime", _constants(geom, 1, big_g=dist.gradient_bound(LOSS)))
    w_any, _ = run_smd(dist.oracle(np.random.default_rng(0)), LOSS, geom, 2000, sched)
    assert dist.exact_risk(LOSS, w_any) - r_star < 0.05


# -- MERO gradients ------------------------------------------------------------


def test_gq_zero_when_refs_equal_iterate():
    rng = np.random.default_rng(4)
    w = rng.standard_normal(3)
    x, y = rng.standard_normal((4, 3)), rng.choice([-1.0, 1.0], 4)
    _, g_q = mero_gradients(w, np.full(4, 0.25), x, y, np.tile(w, (4, 1)), LOSS)
    # x @ w and a row-wise dot product may round differently
    np.testing.assert_allclose(g_q, 0.0, atol=1e-15)


def test_gw_single_distribution_is_loss_gradient():
    rng = np.random.default_rng(5)
    w, x = rng.standard_normal(3), rng.standard_normal((1, 3))
    g_w, _ = mero_gradients(w, np.ones(1), x, np.array([-1.0]), np.zeros((1, 3)), LOSS)
    np.testing.assert_allclose(g_w, LOSS.grad(w, x, np.array([-1.0]))[0], atol=1e-15)


def test_missing_sample_is_rejected():
    with pytest.raises(ValueError):
        mero_gradients(np.zeros(2), np.full(3, 1 / 3), np.zeros((2, 2)), np.ones(2), np.zeros((3, 2)), LOSS)


def _expected_gq(dists, w, refs, grad_fn):
    """Probability-weighted average of ``g_q[i]`` over every atom of distribution ``i``."""
    m = len(dists)
    out = np.zeros(m)
    for i, d in enumerate(dists):
        for atom, label, prob in zip(d.atoms, d.labels, d.probs):
            x = np.stack([atom] * m)
            y = np.full(m, label)
            out[i] += prob * grad_fn(w, x, y, refs)[i]
    return out


def test_gq_expectation_over_atoms_equals_risk_gap():
    rng = np.random.default_rng(6)
    dists = [random_finite_support(rng, 6, 3) for _ in range(3)]
    w, refs = rng.standard_normal(3), rng.standard_normal((3, 3))
    got = _expected_gq(dists, w, refs,
                       lambda w, x, y, r: mero_gradients(w, np.full(3, 1 / 3), x, y, r, LOSS)[1])
    expect = [d.exact_risk(LOSS, w) - d.exact_risk(LOSS, r) for d, r in zip(dists, refs)]
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_bias_vector_nonnegative_at_stage1_solutions():
    rng = np.random.default_rng(7)
    dists = [random_finite_support(rng, 6, 2) for _ in range(2)]
    task = finite_support_task(dists, LOSS, seed=3)
    geom = PrimalGeometry(2)
    res = run_anytime_mero(task, geom, _constants(geom, 2, big_g=3.0), 200, keep_refs=True)
    refs = res.snapshots[-1].extra["refs"]
    bias = [d.exact_risk(LOSS, r) - d.minimal_risk(LOSS, geom)[0] for d, r in zip(dists, refs)]
    assert min(bias) >= -1e-9


# -- anytime MERO --------------------------------------------------------------


def test_single_distribution_keeps_q_at_one():
    task = build_synthetic_task(SyntheticTaskSpec(m=1, dimension=3))
    geom = PrimalGeometry(3)
    res = run_anytime_mero(task, geom, _constants(geom, 1), 50, checkpoints=range(1, 51))
    assert all(np.array_equal(s.q, [1.0]) for s in res.snapshots)


def test_identical_samples_keep_q_uniform():
    geom = PrimalGeometry(2)
    rng = np.random.default_rng(8)
    xs, ys = rng.standard_normal((30, 2)), rng.choice([-1.0, 1.0], 30)
    oracles = [Scripted(xs, ys) for _ in range(3)]
    sched = StepSchedule("anytime", _constants(geom, 3))
    state = AnytimeMeroState.start(geom, 3)
    for _ in range(30):
        anytime_mero_round(state, oracles, LOSS, sched, geom)
        np.testing.assert_allclose(state.q, 1 / 3, atol=1e-15)
        np.testing.assert_allclose(state.q_bar, 1 / 3, atol=1e-15)


def test_one_round_matches_hand_composition():
    geom = PrimalGeometry(1, 2.0)
    simplex = SimplexGeometry(2)
    c = _constants(geom, 2)
    sched = StepSchedule("anytime", c)
    x, y = np.array([[1.5], [-0.5]]), np.array([1.0, -1.0])
    state = AnytimeMeroState.start(geom, 2)
    state.w = np.array([0.4])
    state.minimizers.w = np.array([[0.2], [-0.3]])
    state = anytime_mero_round(state, [Scripted(x[0], y[0]), Scripted(x[1], y[1])], LOSS, sched, geom)

    w, q = np.array([0.4]), np.array([0.5, 0.5])
    refs_t = np.array([[0.2], [-0.3]])
    eta_r = sched.risk_step(1)
    refs_next = [mirror_step_primal(geom, refs_t[i], LOSS.grad(refs_t[i], x[i:i + 1], y[i:i + 1])[0], eta_r)
                 for i in range(2)]
    # one-term averages equal the pre-step minimizers
    g_w = sum(q[i] * LOSS.grad(w, x[i:i + 1], y[i:i + 1])[0] for i in range(2))
    g_q = np.array([LOSS.value(w, x[i:i + 1], y[i:i + 1])[0] - LOSS.value(refs_t[i], x[i:i + 1], y[i:i + 1])[0]
                    for i in range(2)])
    eta_w, eta_q = sched.saddle_steps(1)
    np.testing.assert_allclose(state.minimizers.w, np.array(refs_next), atol=1e-12)
    np.testing.assert_allclose(state.minimizers.w_bar, refs_t, atol=1e-12)
    np.testing.assert_allclose(state.w, mirror_step_primal(geom, w, g_w, eta_w), atol=1e-12)
    np.testing.assert_allclose(state.q, mirror_step_simplex(simplex, q, g_q, eta_q, "ascent"), atol=1e-12)
    np.testing.assert_allclose(state.w_bar, w, atol=1e-12)
    np.testing.assert_allclose(state.q_bar, q, atol=1e-12)
    np.testing.assert_array_equal(state.samples, [1, 1])


def test_first_average_is_origin_and_sample_count():
    task = build_synthetic_task(SyntheticTaskSpec(m=3, dimension=4))
    geom = PrimalGeometry(4)
    c = _constants(geom, 3)
    res = run_anytime_mero(task, geom, c, 1)
    np.testing.assert_array_equal(res.w, geom.origin())
    np.testing.assert_allclose(res.q, 1 / 3)
    res = run_anytime_mero(task, geom, c, 137, checkpoints=every(10, 137))
    np.testing.assert_array_equal(res.samples, [137] * 3)
    assert [s.t for s in res.snapshots] == list(range(10, 131, 10)) + [137]
    assert all(np.array_equal(s.samples, [s.t] * 3) for s in res.snapshots)


def test_anytime_snapshot_equals_shorter_run():
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=3, seed=1))
    geom = PrimalGeometry(3)
    c = _constants(geom, 2)
    long = run_anytime_mero(task, geom, c, 300, checkpoints=[120])
    short = run_anytime_mero(task, geom, c, 120)
    np.testing.assert_array_equal(long.snapshots[0].w, short.w)
    np.testing.assert_array_equal(long.snapshots[0].q, short.q)


def test_runs_are_deterministic():
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=3, seed=2))
    geom = PrimalGeometry(3)
    c = _constants(geom, 2)
    a = run_anytime_mero(task, geom, c, 200)
    b = run_anytime_mero(task.with_seed(task.seed), geom, c, 200)
    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_array_equal(a.q, b.q)


def test_budget_exhaustion_carries_index():
    geom = PrimalGeometry(1)
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=2))
    oracles = [task.oracle(0, budget=10), task.oracle(1, budget=3)]
    state = AnytimeMeroState.start(PrimalGeometry(2), 2)
    sched = StepSchedule("anytime", _constants(geom, 2))
    with pytest.raises(BudgetExhausted) as err:
        for _ in range(5):
            anytime_mero_round(state, oracles, LOSS, sched, PrimalGeometry(2))
    assert err.value.index == 1


def test_iters_must_be_positive():
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=2))
    geom = PrimalGeometry(2)
    for fn in (run_anytime_mero, run_gdro_smd, run_multistage_mero):
        with pytest.raises(ValueError):
            fn(task, geom, _constants(geom, 2), 0)


# -- GDRO and reference MERO ---------------------------------------------------


def test_gdro_single_distribution_is_plain_smd():
    dist = random_finite_support(np.random.default_rng(9), 8, 2)
    task = finite_support_task([dist], LOSS, seed=5)
    geom = PrimalGeometry(2)
    c = _constants(geom, 1)
    res = run_gdro_smd(task, geom, c, 300)
    sched = StepSchedule("anytime", c)
    x, y = task.oracle(0).draw(300)
    w, num, den = geom.origin(), np.zeros(2), 0.0
    for t in range(300):
        eta = sched.saddle_steps(t + 1)[0]
        num += eta * w
        den += eta
        w = mirror_step_primal(geom, w, LOSS.grad(w, x[t:t + 1], y[t:t + 1])[0], eta)
    np.testing.assert_allclose(res.w, num / den, atol=1e-12)
    np.testing.assert_array_equal(res.q, [1.0])


def test_gdro_identical_samples_keep_q_uniform():
    rng = np.random.default_rng(10)
    xs, ys = rng.standard_normal((40, 2)), rng.choice([-1.0, 1.0], 40)
    task = ToyTask([(xs, ys)] * 2, LOSS)
    geom = PrimalGeometry(2)
    res = run_gdro_smd(task, geom, _constants(geom, 2), 40)
    np.testing.assert_allclose(res.q, 0.5, atol=1e-15)


def test_gdro_puts_mass_on_the_riskier_distribution():
    atoms = np.array([[1.0], [-1.0], [2.0]])
    labels = [1.0, -1.0, -1.0]
    d1 = FiniteSupportDistribution(atoms, labels, [0.45, 0.45, 0.1])
    # half the mass moved to x = 0, whose loss is ln 2 at every w
    d2 = FiniteSupportDistribution(np.vstack([atoms, [[0.0]]]), labels + [1.0], [0.225, 0.225, 0.05, 0.5])
    geom = PrimalGeometry(1, 3.0)
    grid = np.linspace(-3, 3, 6001)[:, None]
    r1, r2 = d1.exact_risks_on_grid(LOSS, grid), d2.exact_risks_on_grid(LOSS, grid)
    k = np.argmin(np.maximum(r1, r2))
    assert r2[k] > r1[k]  # the raw-loss saddle is attained with all mass on distribution 2
    task = finite_support_task([d1, d2], LOSS, seed=11)
    res = run_gdro_smd(task, geom, _constants(geom, 2, big_g=2.0), 5000)
    assert res.q[1] > res.q[0]


def test_reference_gradient_expectation_and_single_model():
    rng = np.random.default_rng(12)
    dists = [random_finite_support(rng, 5, 2) for _ in range(2)]
    w, w_r = rng.standard_normal(2), rng.standard_normal(2)
    got = _expected_gq(dists, w, np.tile(w_r, (2, 1)),
                       lambda w, x, y, r: mero_gradients(w, np.full(2, 0.5), x, y, r, LOSS)[1])
    expect = [d.exact_risk(LOSS, w) - d.exact_risk(LOSS, w_r) for d in dists]
    np.testing.assert_allclose(got, expect, atol=1e-12)

    task = finite_support_task(dists, LOSS, seed=1)
    geom = PrimalGeometry(2)
    c = _constants(geom, 2)
    res = run_reference_mero(task, geom, c, 50, pretrain=100)
    assert res.info["auxiliary_models"] == 1
    assert res.info["reference"].shape == (2,)
    np.testing.assert_array_equal(res.samples, [150, 150])
    any_state = AnytimeMeroState.start(geom, 2)
    assert any_state.minimizers.w.shape == (2, 2)
    with pytest.raises(ValueError):
        run_reference_mero(task, geom, c, 10)


def test_reference_at_shared_minimizer_matches_excess_objective():
    rng = np.random.default_rng(13)
    base = random_finite_support(rng, 6, 2)
    twin = FiniteSupportDistribution(base.atoms, base.labels, base.probs)
    geom = PrimalGeometry(2)
    _, w_star = base.minimal_risk(LOSS, geom)
    task = finite_support_task([base, twin], LOSS, seed=4)
    c = _constants(geom, 2)
    ref = run_reference_mero(task, geom, c, 100, reference=w_star)
    # aligned: R_i(w_r) = R_i*, so the reference objective is the excess-risk objective
    for d in (base, twin):
        assert d.exact_risk(LOSS, w_star) == pytest.approx(d.minimal_risk(LOSS, geom)[0], abs=1e-9)
    np.testing.assert_array_equal(ref.samples, [100, 100])


# -- multistage ----------------------------------------------------------------


def test_multistage_sample_accounting():
    task = build_synthetic_task(SyntheticTaskSpec(m=3, dimension=3))
    geom = PrimalGeometry(3)
    c = _constants(geom, 3)
    assert list(run_multistage_mero(task, geom, c, 40).samples) == [120] * 3
    assert list(run_multistage_mero(task, geom, c, 40, include_stage2=False).samples) == [80] * 3
    long = run_multistage_mero(task, geom, c, 40, continue_past_T=True, checkpoints=[40, 80])
    assert [s.t for s in long.snapshots] == [40, 80, 120]
    assert list(long.samples) == [200] * 3


def test_multistage_offsets_within_three_standard_errors():
    rng = np.random.default_rng(14)
    dists = [random_finite_support(rng, 8, 2) for _ in range(3)]
    task = finite_support_task(dists, LOSS, seed=2)
    geom = PrimalGeometry(2)
    T = 4000
    res = run_multistage_mero(task, geom, _constants(geom, 3), T)
    for d, ref, off in zip(dists, res.info["stage1"], res.info["offsets"]):
        vals = LOSS.value(ref, d.atoms, d.labels)
        mean = d.probs @ vals
        se = math.sqrt(d.probs @ (vals - mean) ** 2 / T)
        assert abs(off - mean) <= 3 * se


class ShiftedValue:
    """Adds ``c`` to batch loss values only, which shifts every stage-2 offset."""

    def __init__(self, loss, c):
        self.loss, self.c = loss, c

    def slope(self, margin):
        return self.loss.slope(margin)

    def from_margin(self, margin):
        return self.loss.from_margin(margin)

    def value(self, w, x, y):
        return self.loss.value(w, x, y) + self.c


def test_common_offset_shift_leaves_iterates_unchanged():
    task = build_synthetic_task(SyntheticTaskSpec(m=3, dimension=3, seed=6))
    geom = PrimalGeometry(3)
    c = _constants(geom, 3)
    a = run_multistage_mero(task, geom, c, 300, checkpoints=every(50, 300))
    shifted = task.with_seed(task.seed)
    shifted.loss = ShiftedValue(LOSS, 0.37)
    b = run_multistage_mero(shifted, geom, c, 300, checkpoints=every(50, 300))
    np.testing.assert_allclose(b.info["offsets"] - a.info["offsets"], 0.37, atol=1e-12)
    for sa, sb in zip(a.snapshots, b.snapshots):
        np.testing.assert_allclose(sa.w, sb.w, atol=1e-10)
        np.testing.assert_allclose(sa.q, sb.q, atol=1e-10)


# -- weighted solvers ----------------------------------------------------------


def test_weights_examples():
    np.testing.assert_allclose(weights_from_budgets([50, 50, 50]), 1.0)
    assert weights_from_budgets([400, 100])[0] == pytest.approx(1.1 / 0.6)
    assert weights_from_budgets([16, 4])[0] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        weights_from_budgets([])


def test_weighted_gradients_reduce_to_mero_gradients():
    rng = np.random.default_rng(15)
    w, q = rng.standard_normal(3), rng.dirichlet(np.ones(3))
    x, y, refs = rng.standard_normal((3, 3)), rng.choice([-1.0, 1.0], 3), rng.standard_normal((3, 3))
    batches = [(x[i:i + 1], y[i:i + 1]) for i in range(3)]
    g_w, g_q = weighted_gradients(w, q, batches, refs, np.ones(3), LOSS, [1, 1, 1])
    e_w, e_q = mero_gradients(w, q, x, y, refs, LOSS)
    np.testing.assert_allclose(g_w, e_w, atol=1e-14)
    np.testing.assert_allclose(g_q, e_q, atol=1e-14)
    _, g_q = weighted_gradients(w, q, batches, np.tile(w, (3, 1)), np.ones(3), LOSS)
    np.testing.assert_allclose(g_q, 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        weighted_gradients(w, q, batches, refs, np.ones(3), LOSS, [2, 1, 1])


def test_weighted_gq_expectation_over_atoms():
    rng = np.random.default_rng(16)
    dists = [random_finite_support(rng, 5, 2) for _ in range(2)]
    w, refs, p = rng.standard_normal(2), rng.standard_normal((2, 2)), np.array([1.5, 1.0])

    def g_q(w, x, y, r):
        return weighted_gradients(w, np.full(2, 0.5), [(x[i:i + 1], y[i:i + 1]) for i in range(2)],
                                  r, p, LOSS)[1]

    got = _expected_gq(dists, w, refs, g_q)
    expect = [p[i] * (d.exact_risk(LOSS, w) - d.exact_risk(LOSS, refs[i])) for i, d in enumerate(dists)]
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_smpa_zero_gradient_is_fixed_point():
    geom = PrimalGeometry(1, 1.0)
    state = TwoStageState.start(geom, None, np.ones(2), [1, 1])
    state.w_main, state.q_main = np.array([0.3]), np.array([0.25, 0.75])
    oracles = [Scripted([[0.0]], [1.0]) for _ in range(2)]
    for _ in range(5):
        smpa_round(state, oracles, oracles, LinearLoss(), 0.5, 0.5, geom, SimplexGeometry(2))
    np.testing.assert_array_equal(state.w_main, [0.3])
    np.testing.assert_allclose(state.q_main, [0.25, 0.75], atol=1e-15)
    w_bar, q_bar = state.averages()
    np.testing.assert_allclose(w_bar, [0.3])
    np.testing.assert_allclose(q_bar, [0.25, 0.75], atol=1e-15)


def test_smpa_anchors_both_half_steps():
    geom = PrimalGeometry(1, 1.0)
    simplex = SimplexGeometry(2)
    state = TwoStageState.start(geom, None, np.ones(2), [1, 1])
    rows = [([[1.0]], [1.0]), ([[-1.0]], [1.0])]
    first = [Scripted(*r) for r in rows]
    second = [Scripted(*r) for r in rows]
    smpa_round(state, first, second, LinearLoss(), 0.3, 0.4, geom, simplex)
    # phi = (q1 - q2) w: g_w = q1 - q2, g_q = (w, -w)
    w0, q0 = np.zeros(1), np.full(2, 0.5)
    w1 = mirror_step_primal(geom, w0, np.array([q0[0] - q0[1]]), 0.3)
    q1 = mirror_step_simplex(simplex, q0, np.array([w0[0], -w0[0]]), 0.4, "ascent")
    w2 = mirror_step_primal(geom, w0, np.array([q1[0] - q1[1]]), 0.3)
    q2 = mirror_step_simplex(simplex, q0, np.array([w1[0], -w1[0]]), 0.4, "ascent")
    np.testing.assert_allclose(state.w_aux, w1, atol=1e-15)
    np.testing.assert_allclose(state.q_aux, q1, atol=1e-15)
    np.testing.assert_allclose(state.w_main, w2, atol=1e-15)
    np.testing.assert_allclose(state.q_main, q2, atol=1e-15)


def test_smpa_round_sample_accounting():
    task = build_synthetic_task(SyntheticTaskSpec(m=3, dimension=2))
    geom = PrimalGeometry(2)
    budgets = [80, 40, 20]
    sizes = [n // 20 for n in budgets]
    state = TwoStageState.start(geom, np.zeros((3, 2)), weights_from_budgets(budgets), sizes)
    first, second = task.oracles("smpa-first-half"), task.oracles("smpa-second-half")
    smpa_round(state, first, second, LOSS, 0.1, 0.1, geom, SimplexGeometry(3))
    np.testing.assert_array_equal(state.samples, [8, 4, 2])
    assert state.samples.sum() == 2 * sum(sizes)


def _toy_constants(radius):
    # small c makes the variance term inactive, so mu = 1 / (sqrt(3) L~)
    return ProblemConstants(big_g=1.0, big_d=radius / math.sqrt(2), m=2, smoothness_l=0.0,
                            c_const=1e-6, kappa=0.0)


def test_smpa_bilinear_toy_reaches_saddle():
    geom = PrimalGeometry(1, 1.0)
    simplex = SimplexGeometry(2)
    state = TwoStageState.start(geom, None, np.ones(2), [1, 1])
    state.w_main = np.array([0.9])
    state.q_main = np.array([0.8, 0.2])
    rows = [([[1.0]], [1.0]), ([[-1.0]], [1.0])]
    first, second = [Scripted(*r) for r in rows], [Scripted(*r) for r in rows]
    for _ in range(10_000):
        smpa_round(state, first, second, LinearLoss(), 0.5, 0.5, geom, simplex)
    assert bilinear_gap(*state.averages(), geom.radius) <= 1e-3


def test_weighted_gdro_bilinear_toy_reaches_saddle():
    geom = PrimalGeometry(1, 1.0)
    task = ToyTask([([[1.0]], [1.0]), ([[-1.0]], [1.0])], LinearLoss())
    res = run_weighted_gdro(task, geom, _toy_constants(1.0), [20_000, 20_000])
    assert res.info["rounds"] == 10_000
    assert res.info["eta_w"] > 0.1
    assert bilinear_gap(res.w, res.q, geom.radius) <= 1e-3


def test_two_stage_equal_budgets():
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=3, seed=3))
    geom = PrimalGeometry(3)
    res = run_two_stage_weighted_mero(task, geom, _constants(geom, 2), [101, 101], checkpoints=[5])
    assert res.info["batch_sizes"] == [1, 1]
    assert res.info["rounds"] == 25
    np.testing.assert_allclose(res.info["p"], 1.0)
    # stage 1: 50 steps, stage 2: 25 rounds of two batches of 1
    np.testing.assert_array_equal(res.samples, [100, 100])
    assert [s.t for s in res.snapshots] == [5, 25]
    np.testing.assert_array_equal(res.snapshots[0].samples, [60, 60])


def test_two_stage_accounting_with_divisible_budgets():
    task = build_synthetic_task(SyntheticTaskSpec(m=3, dimension=3, seed=4))
    geom = PrimalGeometry(3)
    budgets = [512, 128, 32]
    res = run_two_stage_weighted_mero(task, geom, _constants(geom, 3), budgets)
    assert res.info["batch_sizes"] == [16, 4, 1]
    n = np.array(budgets)
    assert np.all(res.samples <= n) and np.all(res.samples >= n - 3)


def test_two_stage_logs_discarded_remainders(caplog):
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=2, seed=5))
    geom = PrimalGeometry(2)
    with caplog.at_level(logging.INFO, logger="mero.solvers.weighted"):
        res = run_two_stage_weighted_mero(task, geom, _constants(geom, 2), [70, 23])
    assert np.all(res.samples <= [70, 23])
    assert res.info["discarded"].sum() > 0
    assert "discarded" in caplog.text


def test_two_stage_stage1_uses_plain_average():
    task = build_synthetic_task(SyntheticTaskSpec(m=1, dimension=2, seed=6))
    geom = PrimalGeometry(2)
    c = _constants(geom, 1)
    res = run_two_stage_weighted_mero(task, geom, c, [40])
    eta = 2 * c.big_d / (c.big_g * math.sqrt(40))
    x, y = task.oracle(0, "stage1").draw(20)
    w, acc = geom.origin(), np.zeros(2)
    for t in range(20):
        w = mirror_step_primal(geom, w, LOSS.grad(w, x[t:t + 1], y[t:t + 1])[0], eta)
        acc += w
    np.testing.assert_allclose(res.info["stage1"][0], acc / 20, atol=1e-12)


def test_budget_validation():
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=2))
    geom = PrimalGeometry(2)
    c = _constants(geom, 2)
    for bad in ([100, 7], [10, 20], [100]):
        with pytest.raises(ConfigError):
            run_two_stage_weighted_mero(task, geom, c, bad)
        with pytest.raises(ConfigError):
            run_weighted_gdro(task, geom, c, bad)


def test_weighted_gdro_rounds_and_samples():
    task = build_synthetic_task(SyntheticTaskSpec(m=2, dimension=2, seed=7))
    geom = PrimalGeometry(2)
    res = run_weighted_gdro(task, geom, _constants(geom, 2), [64, 16])
    assert res.info["rounds"] == 8
    np.testing.assert_array_equal(res.samples, [64, 16])
    assert res.algorithm == "gdro-weighted"
