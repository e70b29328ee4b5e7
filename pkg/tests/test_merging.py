import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgherald import merging
from wgherald.merging import BeamSplitter, FockVector, MergeStrategy


# --- beam splitter ------------------------------------------------------------

def test_hong_ou_mandel_dip():
    out = merging.apply_beamsplitter(FockVector.fock2(1, 1, 2), BeamSplitter.balanced())
    assert abs(out.amps[1, 1]) < 1e-14
    assert abs(out.amps[2, 0]) ** 2 == pytest.approx(0.5)
    assert abs(out.amps[0, 2]) ** 2 == pytest.approx(0.5)


def test_identity_splitter():
    a = np.zeros((7, 7), dtype=complex)
    a[:4, :4] = np.random.default_rng(0).normal(size=(4, 4))
    state = FockVector(a).normalized()
    out = merging.apply_beamsplitter(state, BeamSplitter.from_angle(0.0))
    assert np.allclose(out.amps, state.amps, atol=1e-13)


def test_single_photon_follows_mode_map():
    bs = BeamSplitter(0.6, 0.8j)
    out = merging.apply_beamsplitter(FockVector.fock2(1, 0, 1), bs)
    assert out.amps[1, 0] == pytest.approx(0.6)
    assert out.amps[0, 1] == pytest.approx(0.8j)


def test_splitter_validation_and_truncation():
    with pytest.raises(ValueError):
        BeamSplitter(1.0, 0.5)
    with pytest.raises(ValueError):
        merging.apply_beamsplitter(FockVector.fock2(2, 2, 4), BeamSplitter.balanced(), n_max=3)
    with pytest.raises(ValueError):
        merging.apply_beamsplitter(FockVector.fock(2), BeamSplitter.balanced())


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.integers(0, 10**6))
def test_property_splitter_is_unitary(theta, phase, seed):
    bs = BeamSplitter(math.cos(theta), math.sin(theta) * np.exp(1j * phase))
    rng = np.random.default_rng(seed)
    a = np.zeros((7, 7), dtype=complex)
    a[:4, :4] = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    state = FockVector(a).normalized()
    assert merging.apply_beamsplitter(state, bs).norm() == pytest.approx(1.0, abs=1e-10)


# --- post-selection amplitudes ------------------------------------------------

@pytest.mark.parametrize("m", range(0, 21, 4))
@pytest.mark.parametrize("n", range(0, 21, 5))
def test_closed_form_amplitudes_match_splitter(m, n):
    out = merging.apply_beamsplitter(FockVector.fock2(m, n, m + n), BeamSplitter.balanced())
    for p in range(m + n + 1):
        assert abs(out.amps[m + n - p, p]) ** 2 == pytest.approx(float(merging.fp_squared_exact(m, n, p)), abs=1e-9)
        assert abs(out.amps[m + n - p, p]) == pytest.approx(abs(merging.fp_5050(m, n, p)), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40))
def test_property_fp_normalised(m, n):
    assert sum(merging.fp_squared_exact(m, n, p) for p in range(m + n + 1)) == 1
    assert merging.fp_distribution(m, n).sum() == pytest.approx(1.0)


def test_symmetric_closed_form_and_odd_terms():
    for m in range(31):
        for j in range(m + 1):
            assert merging.symmetric_fp_squared(m, j) == merging.fp_squared_exact(m, m, 2 * j)
        for p in range(1, 2 * m, 2):
            assert merging.fp_squared_exact(m, m, p) == 0


# --- one-by-one ---------------------------------------------------------------

def test_one_by_one_q():
    assert merging.one_by_one_q(1)[0] == pytest.approx(0.5)
    assert merging.one_by_one_q(1)[1] == pytest.approx(0.5)
    qs = [merging.one_by_one_q(n)[0] for n in range(1, 40)]
    assert all(b < a for a, b in zip(qs, qs[1:]))
    assert all(q > 1 / math.e for q in qs)
    for n in (1, 5, 100):
        assert merging.one_by_one_q(n)[0] == pytest.approx(merging.one_by_one_q_closed(n), rel=1e-9)
    assert merging.one_by_one_q(100)[0] == pytest.approx(0.36971, abs=1e-5)


def test_one_by_one_repetition_examples():
    assert merging.one_by_one_Rm(1, 0.5) == pytest.approx(2.0)
    assert merging.one_by_one_Rm(2, 0.5) == pytest.approx(6.0)
    assert math.log(merging.one_by_one_Rm(30, 0.3)) == pytest.approx(merging.one_by_one_log_Rm(30, 0.3))
    with pytest.raises(ValueError):
        merging.one_by_one_Rm(0, 0.5)


def test_one_by_one_log_bounds_to_large_m():
    for p in (0.1, 0.5, 0.9):
        for m in (1, 10, 100, 500, 1024):
            lo, hi = merging.one_by_one_log_bounds(m, p)
            assert lo - 1e-9 <= merging.one_by_one_log_Rm(m, p) <= hi + 1e-9


# --- doubling -----------------------------------------------------------------

def test_doubling_d_values():
    assert merging.doubling_d(0) == 1
    assert merging.doubling_d(1) == Fraction(1, 2)
    assert merging.doubling_d(2) == Fraction(3, 8)
    assert float(merging.doubling_d(50)) == pytest.approx(1 / math.sqrt(50 * math.pi), rel=0.01)


def test_doubling_recursion_example():
    assert merging.doubling_Rm(1, 0.5) == pytest.approx(2.0)
    assert merging.doubling_Rm(2, 0.5) == pytest.approx((1 + 4) / 0.5)
    assert merging.doubling_Rm(8, 0.5) == pytest.approx(413.257, rel=1e-5)


def test_doubling_bounds_on_powers_of_two():
    for p in (0.1, 0.5, 0.9):
        for k in range(3, 11):
            m = 2 ** k
            lo, hi = merging.doubling_bounds(m, p)
            assert lo <= merging.doubling_Rm(m, p) <= hi


def test_doubling_upper_bound_fails_for_tiny_trees():
    # The asymptotic upper bound is not valid for m = 2 and m = 4.
    for m in (2, 4):
        assert merging.doubling_Rm(m, 0.5) > merging.doubling_bounds(m, 0.5)[1]


def test_doubling_beats_one_by_one_for_large_m():
    assert merging.doubling_Rm(64, 0.5) < merging.one_by_one_Rm(64, 0.5)


# --- superpositions -----------------------------------------------------------

def test_merge_of_equal_fock_states():
    for m in (1, 2, 5):
        state, prob = merging.superposition_merge(FockVector.fock(m), FockVector.fock(m))
        assert prob == pytest.approx(float(merging.doubling_d(m)))
        assert abs(state.amps[2 * m]) == pytest.approx(1.0)


def test_merge_of_vacua():
    state, prob = merging.superposition_merge(FockVector.fock(0), FockVector.fock(0))
    assert prob == pytest.approx(1.0)


def test_merge_unites_scaled_roots():
    left, right = [1.0, -0.5j], [1j]
    state, _ = merging.superposition_merge(FockVector.from_roots(left), FockVector.from_roots(right))
    expected = merging.merged_roots_state(left, right)
    assert abs(np.vdot(expected.amps, state.amps)) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=2), min_size=1, max_size=3),
       st.lists(st.complex_numbers(max_magnitude=2), min_size=1, max_size=3))
def test_property_merge_root_union(left, right):
    state, prob = merging.superposition_merge(FockVector.from_roots(left), FockVector.from_roots(right))
    expected = merging.merged_roots_state(left, right)
    assert 0 < prob <= 1 + 1e-12
    assert abs(np.vdot(expected.amps, state.amps)) == pytest.approx(1.0, abs=1e-8)


# --- trimming -----------------------------------------------------------------

def test_trim_single_step():
    n, theta = 10, math.sqrt(0.01)
    step = merging.trim_step(n, theta)
    assert step["click_any"] == pytest.approx(1 - math.cos(theta) ** 20)
    assert step["click_one"] <= step["click_any"]


def test_trim_result():
    res = merging.excitation_trim(FockVector.fock(10), 7, math.sqrt(0.01))
    assert abs(res.state.amps[7]) == 1.0
    assert res.expected_attempts == pytest.approx(res.approx_attempts, rel=0.1)
    assert 0 < res.overshoot_probability < 0.2
    with pytest.raises(ValueError):
        merging.excitation_trim(FockVector.fock(10), 7, 0.5)
    with pytest.raises(ValueError):
        merging.excitation_trim(FockVector.fock(3), 4, 0.01)
    with pytest.raises(ValueError):
        merging.excitation_trim(FockVector(np.ones(3)).normalized(), 1, 0.01)


# --- number-resolved ----------------------------------------------------------

def test_number_resolved_success_values():
    assert merging.number_resolved_success(2) == pytest.approx(0.375)
    assert 0.31 <= merging.number_resolved_success(100) <= 0.35


def test_worst_case_counts():
    assert merging.worst_case_counts(10) == [1, 2, 4, 7, 11, 17, 26, 40, 61, 92, 139]


def test_number_resolved_exponent_is_polynomial():
    assert merging.number_resolved_exponent() <= 4.6


# --- schedulers ---------------------------------------------------------------

def test_strategy_validation():
    with pytest.raises(ValueError):
        MergeStrategy("sideways", 4)
    with pytest.raises(ValueError):
        MergeStrategy("doubling", 0)
    with pytest.raises(ValueError):
        MergeStrategy("number-resolved", 4, mode="optimistic")


@pytest.mark.parametrize("kind", ["one-by-one", "doubling", "number-resolved"])
def test_single_excitation_costs_one_over_p(kind):
    st_ = merging.scheduler_simulate(MergeStrategy(kind, 1), 0.25, 50_000, seed=1)
    assert st_.mean == pytest.approx(4.0, rel=0.03)


@pytest.mark.parametrize("strategy", [MergeStrategy("one-by-one", 4), MergeStrategy("doubling", 6),
                                      MergeStrategy("number-resolved", 7)])
def test_monte_carlo_matches_recursion(strategy):
    st_ = merging.scheduler_simulate(strategy, 0.5, 40_000, seed=2)
    assert abs(st_.mean - st_.analytic) < 4 * st_.stderr


def test_scheduler_is_deterministic():
    a = merging.scheduler_simulate(MergeStrategy("doubling", 8), 0.5, 10_000, seed=9)
    b = merging.scheduler_simulate(MergeStrategy("doubling", 8), 0.5, 10_000, seed=9)
    c = merging.scheduler_simulate(MergeStrategy("doubling", 8), 0.5, 10_000, seed=10)
    assert a.as_row() == b.as_row()
    assert a.mean != c.mean


def test_realistic_number_resolved_keeps_at_least_worst_case():
    s = merging.scheduler_simulate(MergeStrategy("number-resolved", 7, mode="realistic"), 0.5, 300, seed=4)
    assert s.extras["min_final_count"] >= 7
    assert s.analytic is None


# --- detection ----------------------------------------------------------------

def test_counting_pmf():
    pmf = merging.counting_pmf(merging.CountingModel(1.0, 3.0, 1))
    assert pmf[0] == pytest.approx(math.exp(-3.0))
    assert pmf.sum() == pytest.approx(1.0, abs=1e-11)
    assert list(merging.counting_pmf(merging.CountingModel(1.0, 0.0, 5))) == [1.0]
    with pytest.raises(ValueError):
        merging.CountingModel(-1.0, 1.0, 1)


def test_discrimination_error():
    assert merging.discrimination_error(1, 1.0, 0.0) == pytest.approx(0.5)
    eps = [merging.discrimination_error(2, 1.0, t) for t in (1, 5, 20, 80)]
    assert all(b < a for a, b in zip(eps, eps[1:]))
    assert merging.discrimination_error(0, 1.0, 10.0) == pytest.approx(0.5 * math.exp(-10.0))


def test_ml_threshold_separates_hypotheses():
    m, g, t = 3, 1.0, 10.0
    k = merging.ml_threshold(m, g, t)
    from scipy import stats
    assert stats.poisson.pmf(k, (m + 1) * t) >= stats.poisson.pmf(k, m * t)
    assert stats.poisson.pmf(k - 1, (m + 1) * t) < stats.poisson.pmf(k - 1, m * t)


# --- superposition targets ----------------------------------------------------

def test_superposition_cost_reduces_to_fock_estimate():
    assert merging.superposition_merge_success(1, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    log_r = merging.superposition_log_Rm(2, 0.5, 0.0)
    assert log_r == pytest.approx(math.log((1 + 2 * 2) * math.sqrt(2 * math.pi)))
    with pytest.raises(ValueError):
        merging.superposition_log_Rm(6, 0.5, 0.0)
    with pytest.raises(ValueError):
        merging.superposition_merge_success(4, -1.0)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 2.0])
def test_superposition_cost_is_superpolynomial(alpha):
    assert merging.superposition_cost_coefficient(alpha) == pytest.approx((0.25 + alpha) * math.log(2), rel=1e-6)
