import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgherald import merging, protocols
from wgherald.protocols import PhysicalParams


def test_params_validation():
    for bad in (dict(n=0), dict(n_d=0), dict(purcell=0.0), dict(m=100), dict(eta=1.5),
                dict(alpha=2.0), dict(x=0.5), dict(pump_coefficient=-1.0)):
        with pytest.raises(ValueError):
            PhysicalParams(**bad)
    with pytest.warns(UserWarning):
        PhysicalParams(x=0.2)


def test_protocol1_closed_form_example():
    r = protocols.protocol1_step(PhysicalParams(n=100, purcell=100, eta=0.5, x=0.1))
    assert r.p == pytest.approx(0.5 * 0.01 * 0.99)
    assert r.p == pytest.approx(4.95e-3)
    assert r.eps_double == pytest.approx(0.005)


def test_protocol1_numeric_agrees_with_closed_form():
    par = PhysicalParams(n=20, purcell=100, eta=0.5, x=0.05)
    num, ana = protocols.protocol1_numeric(par), protocols.protocol1_step(par)
    assert num.extras["total"] == pytest.approx(1.0, abs=1e-10)
    assert num.p == pytest.approx(ana.p, rel=0.02)


def test_protocol1_perfect_detector_has_no_double_error():
    r = protocols.protocol1_step(PhysicalParams(eta=1.0, x=0.1))
    assert r.eps_double == 0.0


def test_protocol1_optimal_x():
    par = PhysicalParams(n=100, m=10, purcell=100, eta=0.5)
    x = protocols.protocol1_optimal_x(par)
    assert x == pytest.approx(math.sqrt(10 / (0.25 * 100 * 100)))
    with pytest.raises(ValueError):
        protocols.protocol1_optimal_x(PhysicalParams(m=0, eta=0.5))


def test_weak_drive_state_normalised():
    amps = protocols.weak_drive_state(50, 0.1, 2)
    assert np.linalg.norm(amps) == pytest.approx(1.0)
    assert abs(amps[1]) ** 2 == pytest.approx(0.01, rel=0.05)


def test_protocol1_accumulate_same_level_cost_is_product():
    par = PhysicalParams(n=100, purcell=100, eta=0.9, x=0.1)
    acc = protocols.protocol1_accumulate(par, 3, same_level=True)
    assert acc.repetitions == pytest.approx(math.prod(1 / s.p for s in acc.steps))
    sep = protocols.protocol1_accumulate(par, 3, same_level=False)
    assert sep.repetitions == pytest.approx(merging.one_by_one_Rm(3, sep.steps[0].p))
    assert sep.repetitions < acc.repetitions
    with pytest.raises(ValueError):
        protocols.protocol1_accumulate(par, 0)


def test_protocol2_is_error_free_and_factorises():
    par = PhysicalParams(n=100, purcell=100, m=3, n_d=100)
    r = protocols.protocol2_step(par)
    assert r.infidelity == 0.0
    assert r.p == pytest.approx(r.extras["p_a"] * r.extras["p_b"])


def test_protocol2_accumulate_large_ensemble_limit():
    par = PhysicalParams(n=1000, purcell=100, n_d=1000)
    acc = protocols.protocol2_accumulate(par, 5)
    p = acc.steps[0].extras["p_a"] ** 2
    assert acc.repetitions == pytest.approx(p ** -5)
    assert acc.infidelity == 0.0


def test_protocol2_detector_step_not_worse_for_large_detector():
    for m in range(0, 10):
        r = protocols.protocol2_step(PhysicalParams(n=100, purcell=100, m=m, n_d=100))
        assert r.extras["p_b"] >= r.extras["p_a"]


def test_protocol2_detector_step_can_be_worse_for_small_detector():
    # With few detector atoms the k-dependent bright-state loss dominates.
    bad = [m for m in range(1, 10)
           if (lambda r: r.extras["p_b"] < r.extras["p_a"])(
               protocols.protocol2_step(PhysicalParams(n=100, purcell=100, m=m, n_d=10)))]
    assert bad


def test_reachable_m_reference_budget():
    assert protocols.fig3_curve(1e4, [1e3]) == [46]
    with pytest.raises(ValueError):
        protocols.fig3_curve(0.5, [100])


@settings(max_examples=25, deadline=None)
@given(st.floats(2.0, 1e6), st.floats(10.0, 1e5))
def test_property_reachable_m_monotone_in_purcell(budget, pur):
    a, b = protocols.fig3_curve(budget, [pur, 4 * pur])
    assert b >= a


def test_step_b_examples():
    f1, f2 = protocols.protocol3_step_b_analytic(1.0 / 100, 100)
    assert f2 == pytest.approx((math.e - 1) ** 2 / (4 * math.e ** 2) * math.exp(-0.01))
    assert f2 == pytest.approx(0.09897, abs=1e-4)
    assert f1 == pytest.approx((math.e + 1) ** 2 / (4 * math.e ** 2) * math.exp(-0.01))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 5.0), st.floats(1.0, 1e4))
def test_property_step_b_closed_form_matches_propagator(t, g):
    a = protocols.protocol3_step_b_analytic(t, g)
    n = protocols.step_b_numeric(t, g)
    assert np.allclose(a, n, rtol=1e-9, atol=1e-14)
    assert sum(a) <= 1 + 1e-12


def test_retry_success_geometric():
    assert protocols.retry_success(0.5, 0.25, 1) == 0.25
    assert protocols.retry_success(0.5, 0.25, 3) == pytest.approx(0.25 * 1.75)
    assert protocols.retry_success(0.5, 0.25, math.inf) == pytest.approx(0.5)


def test_retry_limit_approaches_one_third():
    limits = [protocols.protocol3_retry_limit(p) for p in (1e1, 1e2, 1e3, 1e4, 1e5)]
    assert all(b > a for a, b in zip(limits, limits[1:]))
    assert all(x <= 1 / 3 + 0.01 for x in limits)
    assert limits[-1] == pytest.approx(1 / 3, abs=2e-3)


def test_protocol3_numeric_budgets_close():
    r = protocols.protocol3_numeric(PhysicalParams(n=21, m=1, purcell=100))
    assert r.extras["budget_a"] == pytest.approx(1.0, abs=1e-8)
    assert r.extras["budget_b"] == pytest.approx(1.0, abs=1e-8)


def test_protocol3_numeric_vs_closed_form():
    par = PhysicalParams(n=101, m=1, purcell=100)
    num, ana = protocols.protocol3_numeric(par), protocols.protocol3_step(par)
    assert num.p == pytest.approx(ana.p, rel=0.05)
    # same order of magnitude; the closed form uses an upper bound on step-a loss
    assert 0.5 < num.infidelity / ana.infidelity < 1.5


def test_protocol3_retries_help():
    par = PhysicalParams(n=101, m=1, purcell=100)
    ps = [protocols.protocol3_step(par, repeat_b=k).p for k in (1, 2, 5)]
    assert ps[0] < ps[1] < ps[2]
    with pytest.raises(ValueError):
        protocols.protocol3_step(par, repeat_b=0)


def test_protocol4_dark_state_is_annihilated():
    par = PhysicalParams(n=50, purcell=100)
    h = protocols.protocol4_hamiltonian(par, omega=0.0)
    gg, gs_ = protocols.protocol4_rates(par)
    collective = h + 0.5j * np.diag([1.0, 1.0, 1.0, 0.0])
    dark = protocols.protocol4_dark_state(par.n_m)
    assert np.linalg.norm(collective @ dark) < 1e-12
    assert gs_ / gg == pytest.approx((par.n_m + 1) / 2)


def test_protocol4_closed_form_vs_numeric():
    par = PhysicalParams(n=100, purcell=1e3)
    r = protocols.protocol4_step(par)
    assert r.extras["p_numeric"] == pytest.approx(r.p, rel=0.05)
    s = protocols.protocol4_step(par, reference="s")
    assert s.extras["p_s_reference"] == pytest.approx(r.p)
    with pytest.raises(ValueError):
        protocols.protocol4_step(par, reference="x")


def test_protocol4_jump_budget_closes():
    out = protocols.protocol4_jump_probabilities(PhysicalParams(n=10, purcell=100))
    assert sum(out.values()) == pytest.approx(1.0, abs=1e-8)
    assert out["success"] == pytest.approx(protocols.protocol4_numeric_p(PhysicalParams(n=10, purcell=100)), rel=1e-9)


def test_repetition_monte_carlo():
    a = protocols.monte_carlo_repetitions(0.5, 200_000, seed=3)
    assert a.mean() == pytest.approx(2.0, abs=0.03)
    b = protocols.monte_carlo_repetitions(0.072, 200_000, seed=3)
    assert b.mean() == pytest.approx(1 / 0.072, rel=0.02)
    assert np.array_equal(a, protocols.monte_carlo_repetitions(0.5, 200_000, seed=3))
    with pytest.raises(ValueError):
        protocols.monte_carlo_repetitions(0.0, 10, 1)


def test_loglog_slope():
    x = np.geomspace(1, 100, 5)
    assert protocols.loglog_slope(x, 3 * x ** -1.5) == pytest.approx(-1.5)
