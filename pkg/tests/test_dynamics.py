import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from wgherald.dynamics import (
    AtomSystem,
    CollectiveDecay,
    Drive,
    Ensemble,
    IntegrationError,
    JumpChannel,
    LindbladModel,
    LocalDecay,
    build_basis,
    build_model,
    check_density,
    evolve_nonhermitian,
    first_jump_probabilities,
    integrate_lindblad,
    jump_series,
    jump_series_probabilities,
    lindblad_trajectory,
    nonhermitian_trajectory,
    reachable_states,
    restrict,
    trace_distance,
)


def two_level(rate=1.0):
    sm = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e| with order (g, e)
    return LindbladModel(np.zeros((2, 2)), (JumpChannel("d", rate, (sm,)),))


def random_model(seed, dim=3, n_ch=2, cascade=False):
    """Random Hermitian drive and strictly lowering jumps.

    With ``cascade`` the drive is diagonal and every jump operator is a single
    ``|i><j|`` with ``i < j``; the no-jump evolution then never moves
    population upward, so a trajectory jumps at most ``dim - 1`` times.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (a + a.conj().T) / 2
    chans = []
    if cascade:
        h = np.diag(np.diag(h).real)
        for c in range(n_ch):
            ops = []
            for j in range(1, dim):
                for i in range(j):
                    op = np.zeros((dim, dim), dtype=complex)
                    op[i, j] = rng.normal() + 1j * rng.normal()
                    ops.append(op)
            chans.append(JumpChannel(f"c{c}", float(rng.uniform(0.2, 2.0)), tuple(ops)))
        return LindbladModel(h, tuple(chans))
    for c in range(n_ch):
        op = np.triu(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)), 1)
        chans.append(JumpChannel(f"c{c}", float(rng.uniform(0.2, 2.0)), (op,)))
    return LindbladModel(h, tuple(chans))


# --- basis ----------------------------------------------------------------------

def test_basis_single_two_level_atom():
    b = build_basis([Ensemble(1, ("g", "e"))], 1)
    assert [s.occupations for s in b.states] == [((1, 0),), ((0, 1),)]


def test_basis_symmetric_ensemble_one_excitation():
    assert build_basis([Ensemble(50, ("g", "e"))], 1).dim == 2


def test_basis_three_ensembles_protocol4_sector():
    """Source atom, target ensemble and detector atom: the four states
    reachable from the source excitation are enumerated by hand."""
    from wgherald.protocols import PhysicalParams, protocol4_basis_states, protocol4_system

    par = PhysicalParams(n=20, purcell=100)
    model = build_model(protocol4_system(par))
    seed = model.basis.state(*protocol4_basis_states(par.n_m)[0])
    keep = reachable_states(model, [model.basis.index(seed)], include_jumps=False)
    got = {model.basis.states[i].occupations for i in keep}
    assert got == set(protocol4_basis_states(par.n_m))


def test_basis_invariants():
    ens = [Ensemble(4, ("g", "e", "s"), "a"), Ensemble(2, ("g", "e"), "b")]
    b = build_basis(ens, 2, sinks=("x",))
    for i, s in enumerate(b.states):
        assert b.lookup(b.index(s)) == s
        if not s.is_sink:
            assert [sum(o) for o in s.occupations] == [4, 2]
            assert s.excitations() <= 2
    with pytest.raises(KeyError):
        b.state((0, 0, 4), (2, 0))


def test_basis_rejects_bad_ensembles():
    with pytest.raises(ValueError):
        Ensemble(0, ("g", "e"))
    with pytest.raises(ValueError):
        Ensemble(2, ("g", "g"))


# --- propagation ------------------------------------------------------------------

def test_evolve_identity_and_decay():
    psi = np.array([0.6, 0.8j])
    assert np.allclose(evolve_nonhermitian(np.zeros((2, 2)), psi, 3.0), psi)
    out = evolve_nonhermitian(np.array([[-0.5j * 2.0]]), np.array([1.0]), 1.3)
    assert abs(out[0] - math.exp(-1.3)) < 1e-12


def test_evolve_step_b_populations():
    g = 1.0
    h = 0.5 * np.array([[-1j * g, -1j * g], [-1j * g, -1j * g]])
    psi = evolve_nonhermitian(h, np.array([1.0, 0.0]), 1 / g)
    pops = np.abs(psi) ** 2
    assert np.allclose(pops, [0.25 * (1 + math.exp(-1)) ** 2, 0.25 * (1 - math.exp(-1)) ** 2], atol=1e-12)


def test_evolve_rejects_bad_input():
    with pytest.raises(ValueError):
        evolve_nonhermitian(np.array([[np.nan]]), np.array([1.0]), 1.0)
    with pytest.raises(ValueError):
        evolve_nonhermitian(np.zeros((1, 1)), np.array([1.0]), -1.0)


def test_lindblad_trivial_and_decay():
    rho0 = np.diag([0.3, 0.7]).astype(complex)
    assert np.allclose(integrate_lindblad(LindbladModel(np.zeros((2, 2))), rho0, 5.0), rho0)
    rho = integrate_lindblad(two_level(2.0), np.diag([0, 1]).astype(complex), 0.7)
    assert abs(rho[1, 1].real - math.exp(-1.4)) < 1e-12


def test_lindblad_ode_matches_expm():
    m = random_model(3)
    rho0 = np.diag([0, 0, 1]).astype(complex)
    a = integrate_lindblad(m, rho0, 0.8)
    b = integrate_lindblad(m, rho0, 0.8, method="ode")
    assert trace_distance(a, b) < 1e-8


@pytest.mark.filterwarnings("ignore::UserWarning", "ignore::RuntimeWarning")
def test_lindblad_ode_failure_raises():
    h = np.array([[0.0, 1e8], [1e8, 0.0]])
    with pytest.raises(IntegrationError):
        integrate_lindblad(LindbladModel(h), np.diag([1.0, 0.0]), 1.0, tol=1e-300, method="ode")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_property_density_stays_physical(seed, t):
    m = random_model(seed)
    rng = np.random.default_rng(seed + 1)
    v = rng.normal(size=3) + 1j * rng.normal(size=3)
    rho = integrate_lindblad(m, v / np.linalg.norm(v), t)
    assert abs(np.trace(rho).real - 1) < 1e-9
    assert np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() > -1e-9
    check_density(rho)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_property_norm_nonincreasing(seed):
    m = random_model(seed)
    heff = m.effective_hamiltonian()
    assert np.linalg.eigvalsh((heff - heff.conj().T) / 2j).max() < 1e-10
    psi0 = np.ones(3) / math.sqrt(3)
    norms = [np.linalg.norm(v) for v in nonhermitian_trajectory(heff, psi0, np.linspace(0, 4, 30))]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


# --- jump series --------------------------------------------------------------------

def test_jump_series_trivial_cases():
    m = LindbladModel(np.zeros((2, 2)))
    assert jump_series_probabilities(m, np.array([1.0, 0.0]), math.inf, 2) == {(): pytest.approx(1.0)}
    probs = jump_series_probabilities(two_level(), np.array([0.0, 1.0]), math.inf, 2)
    assert probs.get((), 0.0) == pytest.approx(0.0, abs=1e-12)
    assert probs[("d",)] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_property_jump_series_complete(seed):
    m = random_model(seed, cascade=True)
    psi0 = np.array([0, 0, 1.0], dtype=complex)
    probs = jump_series_probabilities(m, psi0, math.inf, 3)
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)
    finite = jump_series_probabilities(m, psi0, 60.0, 3)
    assert sum(finite.values()) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_property_jump_series_converges_with_depth(seed):
    """Generic lowering jumps can re-excite through the no-jump coupling, so
    the captured probability grows with the jump budget toward one."""
    m = LindbladModel(np.zeros((3, 3)), random_model(seed).channels)
    psi0 = np.array([0, 0, 1.0], dtype=complex)
    sums = [sum(jump_series_probabilities(m, psi0, math.inf, k).values()) for k in (1, 2, 4, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(sums, sums[1:]))
    assert 1 - sums[-1] < 1 - sums[0] + 1e-12
    assert sums[-1] <= 1 + 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 3.0))
def test_property_jump_series_reconstructs_lindblad(seed, t):
    m = random_model(seed, cascade=True)
    psi0 = np.array([0.2, 0.3, 0.9], dtype=complex)
    psi0 /= np.linalg.norm(psi0)
    branches = jump_series(m, psi0, t, 3)
    total = sum(branches.values())
    rho = integrate_lindblad(m, psi0, t)
    assert trace_distance(total, rho) < 1e-6


def test_first_jump_probabilities_single_atom_branching():
    ens = Ensemble(1, ("g", "e", "s"), "a")
    system = AtomSystem((ens,), (), (CollectiveDecay("c", 2.0, (("a", "s", "e"),)),),
                        (LocalDecay("f", 1.0, "a", "g", "e"),), 1)
    model = build_model(system)
    b = model.basis
    probs = jump_series_probabilities(model, b.ket(b.state((0, 1, 0))), math.inf, 2)
    assert probs[("c",)] == pytest.approx(2 / 3, abs=1e-12)
    assert probs[("f",)] == pytest.approx(1 / 3, abs=1e-12)
    first = first_jump_probabilities(model, b.ket(b.state((0, 1, 0))), math.inf)
    assert first["c"] == pytest.approx(2 / 3, abs=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        LindbladModel(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        LindbladModel(np.zeros((2, 2)), (JumpChannel("x", 1.0, (np.zeros((3, 3)),)),))


def test_restrict_and_reachable():
    ens = (Ensemble(3, ("g", "e", "s"), "t"),)
    system = AtomSystem(ens, (Drive("t", "e", "g", 0.0),), (CollectiveDecay("c", 5.0, (("t", "s", "e"),)),),
                        (LocalDecay("f", 1.0, "t", "g", "e"),), 2)
    model = build_model(system)
    b = model.basis
    seed = b.state((2, 1, 0))
    keep = reachable_states(model, [b.index(seed)])
    small = restrict(model, keep)
    psi = small.basis.ket(seed)
    full_psi = b.ket(seed)
    rho_s = integrate_lindblad(small, psi, 0.4)
    rho_f = integrate_lindblad(model, full_psi, 0.4)
    idx = sorted(keep)
    assert np.allclose(rho_f[np.ix_(idx, idx)], rho_s, atol=1e-12)


def test_trajectory_matches_pointwise():
    m = random_model(9)
    rho0 = np.diag([0, 1, 0]).astype(complex)
    ts = [0.0, 0.3, 1.1]
    traj = lindblad_trajectory(m, rho0, ts)
    for t, r in zip(ts, traj):
        assert trace_distance(r, integrate_lindblad(m, rho0, t)) < 1e-10


def test_transition_amplitude_is_collective():
    b = build_basis([Ensemble(5, ("g", "e"), "a")], 2)
    from wgherald.dynamics import transition

    op = transition(b, "a", "e", "g")
    i0, i1, i2 = (b.index(b.state((5 - k, k))) for k in range(3))
    assert op[i1, i0] == pytest.approx(math.sqrt(5))
    assert op[i2, i1] == pytest.approx(math.sqrt(4 * 2))
    assert np.allclose(linalg.ishermitian(op + op.conj().T), True)
