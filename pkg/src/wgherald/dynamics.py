"""Finite-dimensional open-system engine on permutation-symmetric atomic bases.

States are labelled by level occupations of each ensemble, so an ensemble of
``N`` atoms with at most a few excitations costs only a handful of basis
states. Individual (free-space) decay channels break permutation symmetry;
they are represented exactly in their effect on the no-jump evolution and the
emitted population is routed into a per-channel sink state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

DEFAULT_TOL = 1e-10


class IntegrationError(RuntimeError):
    """Raised when an adaptive integrator cannot reach the requested horizon."""


@dataclass(frozen=True, order=True)
class BasisState:
    """Occupation-labelled symmetric state, or a named sink.

    ``occupations[i][j]`` is the number of atoms of ensemble ``i`` in level
    ``j``. Sink states carry ``sink`` and an empty occupation tuple.
    """

    occupations: tuple[tuple[int, ...], ...] = ()
    sink: str | None = None

    @property
    def is_sink(self) -> bool:
        return self.sink is not None

    def excitations(self) -> int:
        return sum(sum(occ[1:]) for occ in self.occupations)

    def __str__(self) -> str:
        if self.sink is not None:
            return f"sink:{self.sink}"
        return "|" + ";".join(",".join(map(str, o)) for o in self.occupations) + ">"


@dataclass(frozen=True)
class Ensemble:
    n_atoms: int
    levels: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError(f"ensemble {self.name!r}: atom count must be >= 1")
        if len(self.levels) == 0:
            raise ValueError(f"ensemble {self.name!r}: empty level list")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"ensemble {self.name!r}: duplicate level names")
        object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class HilbertBasis:
    ensembles: tuple[Ensemble, ...]
    states: tuple[BasisState, ...]
    _index: Mapping[BasisState, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        index = {s: i for i, s in enumerate(self.states)}
        if len(index) != len(self.states):
            raise ValueError("duplicate basis states")
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, state: BasisState) -> bool:
        return state in self._index

    def index(self, state: BasisState) -> int:
        return self._index[state]

    def lookup(self, i: int) -> BasisState:
        return self.states[i]

    def ensemble_index(self, ens: int | str) -> int:
        if isinstance(ens, int):
            return ens
        for i, e in enumerate(self.ensembles):
            if e.name == ens:
                return i
        raise KeyError(f"no ensemble named {ens!r}")

    def level_index(self, ens: int | str, level: str) -> int:
        e = self.ensembles[self.ensemble_index(ens)]
        try:
            return e.levels.index(level)
        except ValueError:
            raise KeyError(f"ensemble {e.name!r} has no level {level!r}") from None

    def state(self, *occupations: Sequence[int]) -> BasisState:
        """Convenience constructor; validates that the state is in the basis."""
        s = BasisState(tuple(tuple(int(n) for n in o) for o in occupations))
        if s not in self._index:
            raise KeyError(f"{s} not in basis")
        return s

    def sink_state(self, label: str) -> BasisState:
        s = BasisState((), label)
        if s not in self._index:
            raise KeyError(f"no sink {label!r}")
        return s

    def ket(self, state: BasisState) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(state)] = 1.0
        return v

    @property
    def sink_labels(self) -> tuple[str, ...]:
        return tuple(s.sink for s in self.states if s.is_sink)

    def subbasis(self, keep: Iterable[BasisState]) -> "HilbertBasis":
        keep = set(keep)
        return HilbertBasis(self.ensembles, tuple(s for s in self.states if s in keep))


def _compositions(n: int, parts: int, max_excited: int):
    """Occupation tuples of ``n`` atoms over ``parts`` levels, first level ground."""
    if parts == 1:
        yield (n,)
        return
    for excited in range(min(max_excited, n) + 1):
        for rest in _excited_splits(excited, parts - 1):
            yield (n - excited,) + rest


def _excited_splits(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _excited_splits(total - first, parts - 1):
            yield (first,) + rest


def build_basis(
    ensembles: Sequence[Ensemble | tuple[int, Sequence[str]]],
    max_excitations: int,
    sinks: Sequence[str] = (),
) -> HilbertBasis:
    """All occupation states with at most ``max_excitations`` atoms outside
    each ensemble's first (ground) level.

    Ordering is descending lexicographic on the occupation tuples, so the
    all-ground state comes first; sink states follow in the order given.
    A bound larger than the atom count is clamped.
    """
    if max_excitations < 0:
        raise ValueError("max_excitations must be >= 0")
    ens = tuple(e if isinstance(e, Ensemble) else Ensemble(e[0], tuple(e[1])) for e in ensembles)
    per_ensemble = [list(_compositions(e.n_atoms, len(e.levels), max_excitations)) for e in ens]
    states = []
    for combo in itertools.product(*per_ensemble):
        if sum(sum(o[1:]) for o in combo) <= max_excitations:
            states.append(BasisState(tuple(combo)))
    states.sort(reverse=True)
    states.extend(BasisState((), label) for label in dict.fromkeys(sinks))
    return HilbertBasis(ens, tuple(states))


def transition(basis: HilbertBasis, ens: int | str, to: str, frm: str, amplitude: complex = 1.0) -> np.ndarray:
    """Collective operator ``S_{to,frm} = sum_n |to><frm|_n`` on one ensemble.

    Transitions leaving the truncated basis are dropped.
    """
    ei = basis.ensemble_index(ens)
    a = basis.level_index(ei, to)
    b = basis.level_index(ei, frm)
    op = np.zeros((basis.dim, basis.dim), dtype=complex)
    for j, s in enumerate(basis.states):
        if s.is_sink:
            continue
        occ = list(s.occupations[ei])
        if a == b:
            op[j, j] = occ[a] * amplitude
            continue
        if occ[b] == 0:
            continue
        coeff = math.sqrt(occ[b] * (occ[a] + 1))
        occ[b] -= 1
        occ[a] += 1
        new = BasisState(s.occupations[:ei] + (tuple(occ),) + s.occupations[ei + 1:])
        if new in basis:
            op[basis.index(new), j] += coeff * amplitude
    return op


def number(basis: HilbertBasis, ens: int | str, level: str) -> np.ndarray:
    return transition(basis, ens, level, level).real.astype(complex)


def sink_operators(basis: HilbertBasis, sink: str, ens: int | str, level: str) -> list[np.ndarray]:
    """Jump operators ``sqrt(n_level(j)) |sink><j|``, one per populated state.

    Their sum of ``L^dag L`` is the level-number operator, which is exactly the
    anti-Hermitian contribution of independent per-atom decay from ``level``.
    """
    target = basis.index(basis.sink_state(sink))
    li = basis.level_index(ens, level)
    ei = basis.ensemble_index(ens)
    ops = []
    for j, s in enumerate(basis.states):
        if s.is_sink:
            continue
        n = s.occupations[ei][li]
        if n:
            op = np.zeros((basis.dim, basis.dim), dtype=complex)
            op[target, j] = math.sqrt(n)
            ops.append(op)
    return ops


@dataclass(frozen=True)
class JumpChannel:
    """A labelled jump channel: rate times the dissipator of each operator."""

    label: str
    rate: float
    operators: tuple[np.ndarray, ...]
    kind: str = "collective"

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"channel {self.label!r}: negative rate")
        ops = self.operators
        if isinstance(ops, np.ndarray):
            ops = (ops,)
        object.__setattr__(self, "operators", tuple(np.asarray(o, dtype=complex) for o in ops))

    def lindblad_sum(self) -> np.ndarray:
        """``rate * sum L^dag L``."""
        d = self.operators[0].shape[0] if self.operators else 0
        out = np.zeros((d, d), dtype=complex)
        for op in self.operators:
            out += op.conj().T @ op
        return self.rate * out

    def superoperator(self) -> np.ndarray:
        """Row-major vectorised ``rho -> rate * sum L rho L^dag``."""
        d = self.operators[0].shape[0]
        out = np.zeros((d * d, d * d), dtype=complex)
        for op in self.operators:
            out += np.kron(op, op.conj())
        return self.rate * out

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho, dtype=complex)
        for op in self.operators:
            out += op @ rho @ op.conj().T
        return self.rate * out


@dataclass(frozen=True)
class LindbladModel:
    """Hermitian drive plus labelled jump channels over a finite basis.

    Rates multiply ``L rho L^dag - {L^dag L, rho}/2`` (rate units, not the
    ``D[O]`` coefficient convention that carries an extra factor of two).
    """

    hamiltonian: np.ndarray
    channels: tuple[JumpChannel, ...] = ()
    basis: HilbertBasis | None = None

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("hamiltonian must be square")
        if not np.all(np.isfinite(h)):
            raise ValueError("hamiltonian has non-finite entries")
        if not np.allclose(h, h.conj().T, atol=1e-12 * max(1.0, np.abs(h).max(initial=0.0))):
            raise ValueError("hamiltonian is not Hermitian")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "channels", tuple(self.channels))
        for c in self.channels:
            for op in c.operators:
                if op.shape != h.shape:
                    raise ValueError(f"channel {c.label!r}: operator shape {op.shape} != {h.shape}")
        if self.basis is not None and self.basis.dim != h.shape[0]:
            raise ValueError("basis dimension does not match operators")

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(c.label for c in self.channels))

    def channel_groups(self) -> dict[str, list[JumpChannel]]:
        groups: dict[str, list[JumpChannel]] = {}
        for c in self.channels:
            groups.setdefault(c.label, []).append(c)
        return groups

    def effective_hamiltonian(self) -> np.ndarray:
        h = self.hamiltonian.copy()
        for c in self.channels:
            h -= 0.5j * c.lindblad_sum()
        return h

    def with_hamiltonian(self, h: np.ndarray) -> "LindbladModel":
        return LindbladModel(h, self.channels, self.basis)

    def liouvillian(self) -> np.ndarray:
        d = self.dim
        eye = np.eye(d)
        heff = self.effective_hamiltonian()
        gen = -1j * np.kron(heff, eye) + 1j * np.kron(eye, heff.conj())
        for c in self.channels:
            gen += c.superoperator()
        return gen

    def no_jump_generator(self) -> np.ndarray:
        d = self.dim
        eye = np.eye(d)
        heff = self.effective_hamiltonian()
        return -1j * np.kron(heff, eye) + 1j * np.kron(eye, heff.conj())

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        heff = self.effective_hamiltonian()
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        for c in self.channels:
            out += c.apply(rho)
        return out


def dissipation_spectrum(h_eff: np.ndarray) -> np.ndarray:
    """Eigenvalues of the anti-Hermitian part ``i(H - H^dag)/2``; all <= 0 for a physical model."""
    return np.linalg.eigvalsh(0.5j * (h_eff - h_eff.conj().T))


def _as_density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def evolve_nonhermitian(h_eff: np.ndarray, psi0: np.ndarray, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``exp(-i H_eff t) psi0``."""
    h_eff = np.asarray(h_eff, dtype=complex)
    if not np.all(np.isfinite(h_eff)):
        raise ValueError("H_eff has non-finite entries")
    if t < 0:
        raise ValueError("t must be >= 0")
    psi0 = np.asarray(psi0, dtype=complex)
    if h_eff.shape[0] != psi0.shape[0]:
        raise ValueError("dimension mismatch between H_eff and psi0")
    return linalg.expm(-1j * h_eff * t) @ psi0


def nonhermitian_trajectory(h_eff: np.ndarray, psi0: np.ndarray, times: Sequence[float]) -> np.ndarray:
    """States ``exp(-i H_eff t) psi0`` on a uniform or arbitrary time grid (rows)."""
    times = np.asarray(times, dtype=float)
    psi0 = np.asarray(psi0, dtype=complex)
    out = np.empty((len(times), psi0.shape[0]), dtype=complex)
    w, v = np.linalg.eig(np.asarray(h_eff, dtype=complex))
    # eigendecomposition is fast but unreliable near exceptional points
    if np.linalg.cond(v) < 1e8:
        coeff = np.linalg.solve(v, psi0)
        for i, t in enumerate(times):
            out[i] = v @ (np.exp(-1j * w * t) * coeff)
    else:
        for i, t in enumerate(times):
            out[i] = evolve_nonhermitian(h_eff, psi0, t)
    return out


def integrate_lindblad(
    model: LindbladModel,
    rho0: np.ndarray,
    t: float,
    tol: float = DEFAULT_TOL,
    method: str = "expm",
) -> np.ndarray:
    """Density operator after time ``t`` of Lindblad evolution.

    ``method="expm"`` exponentiates the Liouvillian (exact, stiffness-proof);
    ``method="ode"`` uses adaptive DOP853 stepping with relative and absolute
    tolerance ``tol`` and raises :class:`IntegrationError` on step underflow.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    rho0 = _as_density(rho0)
    d = model.dim
    if rho0.shape != (d, d):
        raise ValueError("rho0 dimension mismatch")
    if t == 0:
        return rho0.copy()
    if method == "expm":
        vec = linalg.expm(model.liouvillian() * t) @ rho0.reshape(-1)
        return vec.reshape(d, d)
    if method == "ode":
        gen = model.liouvillian()
        sol = solve_ivp(lambda _t, y: gen @ y, (0.0, t), rho0.reshape(-1), method="DOP853", rtol=tol, atol=tol)
        if not sol.success:
            raise IntegrationError(sol.message)
        return sol.y[:, -1].reshape(d, d)
    raise ValueError(f"unknown method {method!r}")


def lindblad_trajectory(model: LindbladModel, rho0: np.ndarray, times: Sequence[float]) -> np.ndarray:
    """Density operators at each of ``times`` (ascending, starting at >= 0)."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (len(times) and times[0] < 0):
        raise ValueError("times must be non-negative and ascending")
    rho = _as_density(rho0)
    d = model.dim
    gen = model.liouvillian()
    out = np.empty((len(times), d, d), dtype=complex)
    vec = rho.reshape(-1)
    last = 0.0
    cache: dict[float, np.ndarray] = {}
    for i, t in enumerate(times):
        dt = float(t - last)
        if dt > 0:
            key = round(dt, 14)
            if key not in cache:
                cache[key] = linalg.expm(gen * dt)
            vec = cache[key] @ vec
        out[i] = vec.reshape(d, d)
        last = t
    return out


def propagate_segments(segments: Sequence[tuple[LindbladModel, float]], rho0: np.ndarray) -> np.ndarray:
    """Piecewise-constant Lindblad evolution through ``(model, duration)`` segments."""
    rho = _as_density(rho0)
    for model, duration in segments:
        rho = integrate_lindblad(model, rho, duration)
    return rho


def check_density(rho: np.ndarray, tol: float = 1e-8) -> None:
    """Raise ``ValueError`` if ``rho`` is not Hermitian PSD with unit trace (within tol)."""
    if not np.allclose(rho, rho.conj().T, atol=tol):
        raise ValueError("density operator is not Hermitian")
    tr = np.trace(rho)
    if abs(tr.imag) > tol or abs(tr.real - 1) > tol:
        raise ValueError(f"trace {tr} differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ValueError("density operator has negative eigenvalues")


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


# --- quantum-jump series ----------------------------------------------------

def _decaying_split(h_eff: np.ndarray, tol: float = 1e-12):
    """Split indices into decaying (D) and stationary (S) sets for infinite horizons."""
    decay = -np.diag(h_eff).imag
    scale = max(1.0, float(np.abs(h_eff).max(initial=0.0)))
    dec = np.flatnonzero(decay > tol * scale)
    sta = np.flatnonzero(decay <= tol * scale)
    if dec.size and sta.size and np.abs(h_eff[np.ix_(dec, sta)]).max() + np.abs(h_eff[np.ix_(sta, dec)]).max() > tol * scale:
        raise ValueError("infinite horizon needs a drive-free model: decaying and stationary states are coupled")
    if dec.size:
        ev = np.linalg.eigvals(h_eff[np.ix_(dec, dec)])
        if ev.imag.max() > -tol * scale:
            raise ValueError("infinite horizon needs every excited state to decay; found a non-decaying mode")
    return dec, sta


def _time_integrated(h_eff: np.ndarray, rho: np.ndarray, dec: np.ndarray) -> np.ndarray:
    """``int_0^inf exp(-iHt) rho exp(iH^dag t) dt`` restricted to the decaying block."""
    x = np.zeros_like(rho, dtype=complex)
    if dec.size == 0:
        return x
    a = -1j * h_eff[np.ix_(dec, dec)]
    q = -rho[np.ix_(dec, dec)]
    x[np.ix_(dec, dec)] = linalg.solve_continuous_lyapunov(a, q)
    return x


def jump_series(
    model: LindbladModel,
    state0: np.ndarray,
    horizon: float,
    max_jumps: int,
) -> dict[tuple[str, ...], np.ndarray]:
    """Unnormalised conditional states for every jump-label sequence.

    Each value is the density operator at ``horizon`` given that exactly the
    keyed sequence of channels fired (``()`` is the no-jump branch); its trace
    is the probability of that record. ``horizon=math.inf`` evaluates the
    nested time integrals analytically for a drive-free model.
    """
    if max_jumps < 0:
        raise ValueError("max_jumps must be >= 0")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rho0 = _as_density(state0)
    groups = model.channel_groups()
    labels = list(groups)
    if math.isinf(horizon):
        return _jump_series_infinite(model, rho0, max_jumps, groups)

    d = model.dim
    k_gen = model.no_jump_generator()
    supers = {lab: sum(c.superoperator() for c in chans) for lab, chans in groups.items()}
    out: dict[tuple[str, ...], np.ndarray] = {}
    out[()] = (linalg.expm(k_gen * horizon) @ rho0.reshape(-1)).reshape(d, d)
    if max_jumps == 0 or not labels:
        return out
    vec0 = rho0.reshape(-1)
    for leaf in itertools.product(labels, repeat=max_jumps):
        n = len(leaf) + 1
        gen = np.zeros((n * d * d, n * d * d), dtype=complex)
        for i in range(n):
            gen[i * d * d:(i + 1) * d * d, i * d * d:(i + 1) * d * d] = k_gen
        for i, lab in enumerate(leaf):
            gen[(i + 1) * d * d:(i + 2) * d * d, i * d * d:(i + 1) * d * d] = supers[lab]
        init = np.zeros(n * d * d, dtype=complex)
        init[: d * d] = vec0
        final = linalg.expm(gen * horizon) @ init
        for i in range(1, n):
            key = leaf[:i]
            if key not in out:
                out[key] = final[i * d * d:(i + 1) * d * d].reshape(d, d)
    return out


def _jump_series_infinite(model, rho0, max_jumps, groups):
    heff = model.effective_hamiltonian()
    dec, sta = _decaying_split(heff)
    out: dict[tuple[str, ...], np.ndarray] = {}

    def stationary_part(rho):
        s = np.zeros_like(rho)
        s[np.ix_(sta, sta)] = rho[np.ix_(sta, sta)]
        return s

    frontier = [((), rho0)]
    for depth in range(max_jumps + 1):
        nxt = []
        for key, rho in frontier:
            out[key] = stationary_part(rho)
            if depth == max_jumps:
                continue
            x = _time_integrated(heff, rho, dec)
            for lab, chans in groups.items():
                post = sum(c.apply(x) for c in chans)
                if np.abs(post).max(initial=0.0) > 0:
                    nxt.append((key + (lab,), post))
        frontier = nxt
    return out


def jump_series_probabilities(
    model: LindbladModel,
    psi0: np.ndarray,
    horizon: float,
    max_jumps: int,
) -> dict[tuple[str, ...], float]:
    """Probability of each jump-label sequence (``()`` is no-jump survival).

    At a finite horizon, each probability is that of observing exactly that
    record within ``[0, horizon]``. Records longer than ``max_jumps`` are
    omitted, so the values sum to one only when every reachable sequence fits.
    """
    series = jump_series(model, psi0, horizon, max_jumps)
    return {k: float(np.trace(v).real) for k, v in series.items()}


def relax(model: LindbladModel, state: np.ndarray, max_jumps: int = 8) -> tuple[np.ndarray, dict[tuple[str, ...], float]]:
    """Exact infinite-time relaxation of a drive-free model.

    Returns the final density operator (all branches recombined) and the
    jump-record probabilities. Used for the ``wait t >> 1/Gamma*`` steps.
    """
    series = jump_series(model, state, math.inf, max_jumps)
    final = sum(series.values())
    return final, {k: float(np.trace(v).real) for k, v in series.items()}


def first_jump_probabilities(model: LindbladModel, state: np.ndarray, horizon: float) -> dict[str, float]:
    """Probability that the first jump within ``horizon`` belongs to each label."""
    probs = jump_series_probabilities(model, state, horizon, 1)
    return {k[0]: v for k, v in probs.items() if len(k) == 1}


# --- model construction from an atomic system description ---------------------

@dataclass(frozen=True)
class Drive:
    """``H += (rabi/2) (S_{upper,lower} + h.c.)`` on one ensemble."""

    ensemble: str
    upper: str
    lower: str
    rabi: float


@dataclass(frozen=True)
class CollectiveDecay:
    """Jump ``L = sum_legs S_{lower,upper}`` through a shared guided mode."""

    label: str
    rate: float
    legs: tuple[tuple[str, str, str], ...]  # (ensemble, lower, upper)


@dataclass(frozen=True)
class LocalDecay:
    """Independent per-atom decay ``upper -> lower`` at ``rate`` for every atom."""

    label: str
    rate: float
    ensemble: str
    lower: str
    upper: str


@dataclass(frozen=True)
class AtomSystem:
    ensembles: tuple[Ensemble, ...]
    drives: tuple[Drive, ...] = ()
    collective: tuple[CollectiveDecay, ...] = ()
    local: tuple[LocalDecay, ...] = ()
    max_excitations: int = 1

    def with_drives(self, drives: Sequence[Drive]) -> "AtomSystem":
        return AtomSystem(self.ensembles, tuple(drives), self.collective, self.local, self.max_excitations)

    def local_labels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(c.label for c in self.local))


def symmetric_basis(system: AtomSystem) -> HilbertBasis:
    return build_basis(system.ensembles, system.max_excitations, sinks=system.local_labels())


def build_model(system: AtomSystem, basis: HilbertBasis | None = None, local_as: str = "sink") -> LindbladModel:
    """Lindblad model of ``system`` on its symmetric basis.

    ``local_as="sink"`` routes each per-atom channel into its sink state.
    ``local_as="operator"`` uses the collective operator directly, which is
    exact only for single-atom ensembles and is refused otherwise.
    """
    if basis is None:
        basis = symmetric_basis(system) if local_as == "sink" else build_basis(system.ensembles, system.max_excitations)
    d = basis.dim
    h = np.zeros((d, d), dtype=complex)
    for dr in system.drives:
        s = transition(basis, dr.ensemble, dr.upper, dr.lower)
        h += 0.5 * dr.rabi * (s + s.conj().T)
    channels = []
    for cd in system.collective:
        op = np.zeros((d, d), dtype=complex)
        for ens, lower, upper in cd.legs:
            op += transition(basis, ens, lower, upper)
        channels.append(JumpChannel(cd.label, cd.rate, (op,), "collective"))
    for ld in system.local:
        if local_as == "sink":
            ops = sink_operators(basis, ld.label, ld.ensemble, ld.upper)
            if ops:
                channels.append(JumpChannel(ld.label, ld.rate, tuple(ops), "local"))
        elif local_as == "operator":
            if basis.ensembles[basis.ensemble_index(ld.ensemble)].n_atoms != 1:
                raise ValueError("local channels as operators are exact only for single-atom ensembles")
            channels.append(JumpChannel(ld.label, ld.rate, (transition(basis, ld.ensemble, ld.lower, ld.upper),), "local"))
        else:
            raise ValueError(f"unknown local_as {local_as!r}")
    return LindbladModel(h, tuple(channels), basis)


def reachable_states(model: LindbladModel, seeds: Iterable[int], include_jumps: bool = True) -> list[int]:
    """Indices reachable from ``seeds`` through H_eff couplings (and jumps)."""
    heff = model.effective_hamiltonian()
    adj = np.abs(heff) > 0
    if include_jumps:
        for c in model.channels:
            for op in c.operators:
                adj |= np.abs(op) > 0
    seen = set(seeds)
    stack = list(seen)
    while stack:
        j = stack.pop()
        for i in np.flatnonzero(adj[:, j]):
            if i not in seen:
                seen.add(int(i))
                stack.append(int(i))
    return sorted(seen)


def restrict(model: LindbladModel, keep: Sequence[int]) -> LindbladModel:
    """Model restricted to the (invariant) index set ``keep``."""
    keep = sorted(set(int(k) for k in keep))
    ix = np.ix_(keep, keep)
    channels = []
    for c in model.channels:
        ops = tuple(op[ix] for op in c.operators if np.abs(op[ix]).max(initial=0.0) > 0)
        if ops:
            channels.append(JumpChannel(c.label, c.rate, ops, c.kind))
    basis = model.basis.subbasis(model.basis.states[i] for i in keep) if model.basis is not None else None
    return LindbladModel(model.hamiltonian[ix], tuple(channels), basis)


def populations(rho: np.ndarray, basis: HilbertBasis) -> dict[BasisState, float]:
    return {s: float(rho[i, i].real) for i, s in enumerate(basis.states)}
