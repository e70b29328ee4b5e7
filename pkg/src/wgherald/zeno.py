"""Zeno-blockaded transfer of one excitation between two ensembles.

An excitation in ensemble ``a`` (level 2, with ``k`` atoms already in level 1)
decays collectively into level 1 while a weak drive on ensemble ``b`` moves the
shared excitation into the long-lived level 0 of ``b``. The three relevant
single-excitation states are

* ``psi1``: excitation in ``a``,
* ``psi2``: excitation in level 2 of ``b``,
* ``psi3``: excitation stored in level 0 of ``b`` (the goal).

Rates are in units of the free-space rate ``gamma_star``; ``gamma_1d`` is the
guided-mode rate, so ``gamma_1d / gamma_star`` is the Purcell factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import integrate, linalg, optimize

from .dynamics import (
    AtomSystem,
    CollectiveDecay,
    Drive,
    Ensemble,
    LindbladModel,
    LocalDecay,
    build_model,
    jump_series_probabilities,
    lindblad_trajectory,
)


@dataclass(frozen=True)
class ZenoParams:
    k: int
    n_b: int
    gamma_1d: float
    gamma_star: float = 1.0
    omega: float | None = None
    duration: float | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.n_b < 1:
            raise ValueError("n_b must be >= 1")
        if self.gamma_1d <= 0 or self.gamma_star <= 0:
            raise ValueError("rates must be > 0")
        if self.omega is not None and self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.duration is not None and self.duration < 0:
            raise ValueError("duration must be >= 0")

    @classmethod
    def from_purcell(cls, k: int, n_b: int, purcell: float, **kw) -> "ZenoParams":
        return cls(k, n_b, gamma_1d=float(purcell), gamma_star=1.0, **kw)

    @property
    def purcell(self) -> float:
        return self.gamma_1d / self.gamma_star

    @property
    def total(self) -> int:
        """``N_b + k + 1``: collective enhancement of the superradiant state."""
        return self.n_b + self.k + 1

    @property
    def rabi(self) -> float:
        if self.omega is not None:
            return self.omega
        return math.sqrt(self.total * self.gamma_1d * self.gamma_star)

    @property
    def pulse_time(self) -> float:
        if self.duration is not None:
            return self.duration
        return math.pi / (math.sqrt((self.k + 1) / self.total) * self.rabi)


def zeno_hamiltonian(params: ZenoParams, omega: float | None = None) -> np.ndarray:
    """Non-Hermitian 3x3 generator in the ``(psi1, psi2, psi3)`` basis."""
    g, gs = params.gamma_1d, params.gamma_star
    k, nb = params.k, params.n_b
    om = params.rabi if omega is None else omega
    c = -1j * math.sqrt((k + 1) * nb) * g
    return 0.5 * np.array(
        [
            [-1j * ((k + 1) * g + gs), c, 0.0],
            [c, -1j * (nb * g + gs), om],
            [0.0, om, 0.0],
        ],
        dtype=complex,
    )


def bright_dark_rotation(params: ZenoParams) -> np.ndarray:
    """Orthogonal matrix whose columns are ``psi_s, psi_d, psi3`` in the ``psi`` basis."""
    m = params.total
    a, b = math.sqrt((params.k + 1) / m), math.sqrt(params.n_b / m)
    return np.array([[a, b, 0.0], [b, -a, 0.0], [0.0, 0.0, 1.0]])


def zeno_hamiltonian_bright_dark(params: ZenoParams, omega: float | None = None) -> np.ndarray:
    u = bright_dark_rotation(params)
    return u.T @ zeno_hamiltonian(params, omega) @ u


@dataclass(frozen=True)
class ZenoPopulations:
    times: np.ndarray
    dark: np.ndarray
    goal: np.ndarray
    bright: np.ndarray


def zeno_analytic_populations(params: ZenoParams, times: Sequence[float]) -> ZenoPopulations:
    """Adiabatic-elimination envelopes for the dark, goal and superradiant states.

    Valid for ``Omega << N_b gamma_1d`` near the loss-balanced drive.
    """
    t = np.asarray(times, dtype=float)
    m = params.total
    gs = params.gamma_star
    phase = 0.5 * params.rabi * math.sqrt((params.k + 1) / m) * t
    env = np.exp(-gs * t)
    dark = params.n_b / m * env * np.cos(phase) ** 2
    goal = params.n_b / m * env * np.sin(phase) ** 2
    bright = (params.k + 1) / m * np.exp(-(gs + m * params.gamma_1d) * t)
    return ZenoPopulations(t, dark, goal, bright)


def zeno_success_probability(k: int, n_b: int, purcell: float) -> float:
    """Closed-form goal population at the optimal drive and pulse time."""
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    if purcell <= 0:
        raise ValueError("purcell must be > 0")
    return n_b / (n_b + k + 1) * math.exp(-math.pi / math.sqrt((k + 1) * purcell))


def zeno_numeric_success(params: ZenoParams, omega: float | None = None, duration: float | None = None) -> float:
    """``|<psi3|exp(-i H T)|psi1>|^2`` from the exact 3x3 generator."""
    t = params.pulse_time if duration is None else duration
    psi = linalg.expm(-1j * zeno_hamiltonian(params, omega) * t)[:, 0]
    return float(abs(psi[2]) ** 2)


# --- full master-equation model on the symmetric basis ----------------------

def zeno_system(params: ZenoParams, drive: bool = True) -> AtomSystem:
    """Two-ensemble atomic system whose symmetric model contains the Zeno step.

    Ensemble ``a`` holds ``k + 1`` atoms (levels 1, 0, 2 with level 1 first),
    ensemble ``b`` holds ``N_b`` atoms in level 1. Free-space decay of level 2
    in each ensemble is routed to the sinks ``free_a`` and ``free_b``.
    """
    levels = ("1", "0", "2")
    a = Ensemble(params.k + 1, levels, "a")
    b = Ensemble(params.n_b, levels, "b")
    drives = (Drive("b", "2", "0", params.rabi),) if drive else ()
    coll = CollectiveDecay("coll", params.gamma_1d, (("a", "1", "2"), ("b", "1", "2")))
    local = (
        LocalDecay("free_a", params.gamma_star, "a", "1", "2"),
        LocalDecay("free_b", params.gamma_star, "b", "1", "2"),
    )
    return AtomSystem((a, b), drives, (coll,), local, max_excitations=1)


def zeno_lindblad_model(params: ZenoParams, drive: bool = True) -> LindbladModel:
    return build_model(zeno_system(params, drive))


def zeno_states(model: LindbladModel, params: ZenoParams) -> dict[str, np.ndarray]:
    """Kets ``psi1, psi2, psi3, psi_s, psi_d`` in the symmetric basis of ``model``."""
    b = model.basis
    k, nb = params.k, params.n_b
    psi1 = b.ket(b.state((k, 0, 1), (nb, 0, 0)))
    psi2 = b.ket(b.state((k + 1, 0, 0), (nb - 1, 0, 1)))
    psi3 = b.ket(b.state((k + 1, 0, 0), (nb - 1, 1, 0)))
    u = bright_dark_rotation(params)
    psi_s = u[0, 0] * psi1 + u[1, 0] * psi2
    psi_d = u[0, 1] * psi1 + u[1, 1] * psi2
    return {"psi1": psi1, "psi2": psi2, "psi3": psi3, "psi_s": psi_s, "psi_d": psi_d}


def zeno_numeric_populations(params: ZenoParams, times: Sequence[float]) -> ZenoPopulations:
    """Dark, goal and superradiant populations from the full master equation."""
    model = zeno_lindblad_model(params)
    st = zeno_states(model, params)
    rhos = lindblad_trajectory(model, st["psi1"], times)

    def pop(v):
        return np.einsum("i,tij,j->t", v.conj(), rhos, v).real

    return ZenoPopulations(np.asarray(times, float), pop(st["psi_d"]), pop(st["psi3"]), pop(st["psi_s"]))


# --- jump bookkeeping ---------------------------------------------------------

@dataclass(frozen=True)
class ZenoJumps:
    """Outcome probabilities of one Zeno step followed by full relaxation.

    ``*_pulse`` values accrue while the drive is on, ``*_tail`` values during
    the drive-free wait. ``success`` plus all jump probabilities equals one.
    """

    success: float
    free_a_pulse: float
    free_a_tail: float
    free_b_pulse: float
    free_b_tail: float
    coll: float

    @property
    def free_a(self) -> float:
        return self.free_a_pulse + self.free_a_tail

    @property
    def free_b(self) -> float:
        return self.free_b_pulse + self.free_b_tail

    def total(self) -> float:
        return self.success + self.free_a + self.free_b + self.coll

    def as_dict(self) -> dict[str, float]:
        """Free-space losses keyed as ``p_a1, p_a2, p_b1, p_b2`` (1 = pulse, 2 = tail)."""
        return {"p_a1": self.free_a_pulse, "p_a2": self.free_a_tail, "p_b1": self.free_b_pulse,
                "p_b2": self.free_b_tail, "coll": self.coll, "success": self.success}


def zeno_jump_probabilities(params: ZenoParams) -> ZenoJumps:
    """Exact first-jump probabilities during the pulse and during relaxation.

    Only single-excitation dynamics is involved, so every trajectory has at
    most one jump; the pulse window uses a finite-horizon jump series and the
    tail an exact infinite-horizon relaxation of the surviving state.
    """
    model = zeno_lindblad_model(params)
    st = zeno_states(model, params)
    t = params.pulse_time
    during = jump_series_probabilities(model, st["psi1"], t, 1)
    psi_t = linalg.expm(-1j * model.effective_hamiltonian() * t) @ st["psi1"]
    success = float(abs(np.vdot(st["psi3"], psi_t)) ** 2)
    rest = psi_t - np.vdot(st["psi3"], psi_t) * st["psi3"]
    tail = jump_series_probabilities(zeno_lindblad_model(params, drive=False), rest, math.inf, 1)
    return ZenoJumps(
        success=success,
        free_a_pulse=during.get(("free_a",), 0.0),
        free_a_tail=tail.get(("free_a",), 0.0),
        free_b_pulse=during.get(("free_b",), 0.0),
        free_b_tail=tail.get(("free_b",), 0.0),
        coll=during.get(("coll",), 0.0) + tail.get(("coll",), 0.0),
    )


def dark_node_time(params: ZenoParams, omega: float | None = None) -> float:
    """Pulse length near the default at which the dark-state amplitude vanishes.

    Stopping exactly on this node leaves almost nothing in the source ensemble
    to decay after the drive is switched off.
    """
    h = zeno_hamiltonian(params, omega)
    u = bright_dark_rotation(params)
    psi1, dark = np.array([1.0, 0.0, 0.0]), u[:, 1]

    def dark_pop(t):
        return abs(np.vdot(dark, linalg.expm(-1j * h * t) @ psi1)) ** 2

    t0 = params.pulse_time
    res = optimize.minimize_scalar(dark_pop, bounds=(0.8 * t0, 1.2 * t0), method="bounded", options={"xatol": 1e-12})
    return float(res.x)


def zeno_jump_envelopes(params: ZenoParams) -> tuple[float, float]:
    """Pulse-window free-space probabilities ``(ensemble a, ensemble b)`` by
    adaptive quadrature over the adiabatic-elimination amplitudes."""
    m = params.total
    gs, g = params.gamma_star, params.gamma_1d
    a, b = math.sqrt((params.k + 1) / m), math.sqrt(params.n_b / m)
    w = 0.5 * params.rabi * a

    def amps(t):
        cd = b * math.exp(-0.5 * gs * t) * math.cos(w * t)
        cs = a * math.exp(-0.5 * (gs + m * g) * t)
        return b * cd + a * cs, b * cs - a * cd

    t_end = params.pulse_time
    pa = gs * integrate.quad(lambda t: amps(t)[0] ** 2, 0.0, t_end, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    pb = gs * integrate.quad(lambda t: amps(t)[1] ** 2, 0.0, t_end, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    return pa, pb


def free_a_bound(params: ZenoParams) -> float:
    return math.pi / (2.0 * math.sqrt(params.purcell))


def free_b_bound(params: ZenoParams) -> float:
    return math.pi * math.sqrt(params.k + 1) / (2.0 * params.n_b * math.sqrt(params.purcell))


# --- pulse shaping -----------------------------------------------------------

@dataclass(frozen=True)
class PulseShape:
    amplitudes: tuple[float, ...]
    durations: tuple[float, ...]

    def __post_init__(self):
        if len(self.amplitudes) != len(self.durations) or not self.amplitudes:
            raise ValueError("need matching, non-empty amplitude and duration lists")
        if any(d <= 0 for d in self.durations):
            raise ValueError("segment durations must be > 0")
        if any(a < 0 for a in self.amplitudes):
            raise ValueError("segment amplitudes must be >= 0")

    @property
    def total_time(self) -> float:
        return float(sum(self.durations))

    def refine(self, factor: int = 2) -> "PulseShape":
        """Same waveform on a grid with each segment split into ``factor`` parts."""
        amps = tuple(a for a in self.amplitudes for _ in range(factor))
        durs = tuple(d / factor for d in self.durations for _ in range(factor))
        return PulseShape(amps, durs)


def shaped_success(params: ZenoParams, shape: PulseShape) -> float:
    psi = np.array([1.0, 0.0, 0.0], dtype=complex)
    for om, dt in zip(shape.amplitudes, shape.durations):
        psi = linalg.expm(-1j * zeno_hamiltonian(params, om) * dt) @ psi
    return float(abs(psi[2]) ** 2)


@dataclass(frozen=True)
class PulseResult:
    shape: PulseShape
    success: float
    ratio: float
    converged: bool
    reference: float


def optimize_pulse_shape(
    params: ZenoParams,
    n_segments: int,
    total_time: float | None = None,
    warm_start: PulseShape | None = None,
    max_evals: int | None = None,
) -> PulseResult:
    """Piecewise-constant drive maximising the goal population at ``total_time``.

    Segments are uniform over ``total_time`` (default: the constant-pulse
    optimal time). Nelder-Mead runs from a constant start, a rising ramp and a
    falling ramp, plus ``warm_start`` when given; the best candidate wins.
    The returned ratio is relative to the constant pulse at the default drive.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    t_total = params.pulse_time if total_time is None else float(total_time)
    dt = t_total / n_segments
    durations = (dt,) * n_segments
    om0 = params.rabi
    reference = zeno_numeric_success(params, om0, t_total)
    scale = om0

    def loss(x):
        amps = np.abs(x) * scale
        return -shaped_success(params, PulseShape(tuple(amps), durations))

    ramp = np.linspace(0.5, 1.5, n_segments) if n_segments > 1 else np.ones(1)
    starts = [np.ones(n_segments), ramp, ramp[::-1].copy()]
    if warm_start is not None:
        if len(warm_start.amplitudes) != n_segments:
            raise ValueError("warm_start has the wrong number of segments")
        starts.insert(0, np.asarray(warm_start.amplitudes) / scale)
    evals = max_evals or 2000 * n_segments
    best_x, best_val, converged = None, math.inf, False
    for x0 in starts:
        val0 = loss(x0)
        if val0 < best_val:
            best_x, best_val = x0, val0
        res = optimize.minimize(
            loss, x0, method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-12, "maxfev": evals, "maxiter": evals, "adaptive": n_segments > 4},
        )
        if res.fun < best_val:
            best_x, best_val, converged = res.x, res.fun, bool(res.success)
    amps = tuple(float(a) for a in np.abs(best_x) * scale)
    shape = PulseShape(amps, durations)
    success = -best_val
    return PulseResult(shape, success, success / reference, converged, reference)


def refinement_sequence(params: ZenoParams, segment_counts: Sequence[int] = (1, 2, 4, 8)) -> list[PulseResult]:
    """Optimise on successively doubled grids, each warm-started from the last.

    Because each grid contains the previous one, the ratios never decrease.
    """
    results: list[PulseResult] = []
    prev: PulseResult | None = None
    for n in segment_counts:
        warm = None
        if prev is not None:
            factor, rem = divmod(n, len(prev.shape.amplitudes))
            if rem:
                raise ValueError("segment counts must successively divide")
            warm = prev.shape.refine(factor)
        res = optimize_pulse_shape(params, n, warm_start=warm)
        if prev is not None and res.success < prev.success:
            res = PulseResult(warm, prev.success, prev.success / res.reference, res.converged, res.reference)
        results.append(res)
        prev = res
    return results


def with_defaults(params: ZenoParams) -> ZenoParams:
    """Copy with the optimal drive and pulse time made explicit."""
    return replace(params, omega=params.rabi, duration=params.pulse_time)
