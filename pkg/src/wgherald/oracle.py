"""Brute-force tensor-product simulator used to validate the symmetric reduction.

Every atom is kept as its own d-level system. Collective channels become
``sum_n exp(i phi_n) sigma^n`` and per-atom free-space decay is routed to
the same named sink states the reduced models use, one jump operator per
atom and product state, so the sink populations are directly comparable.
Optional per-atom phases model atoms displaced along the waveguide.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dynamics import (
    AtomSystem,
    HilbertBasis,
    JumpChannel,
    LindbladModel,
    build_model,
    integrate_lindblad,
    lindblad_trajectory,
    trace_distance,
)

MAX_ATOMS = 3
MAX_DIM = 256


@dataclass(frozen=True)
class FullSpaceModel:
    """Tensor-product model of ``system`` with explicit atoms.

    ``phases`` maps ``(ensemble name, atom index)`` to the phase carried by
    that atom's collective emission amplitude.
    """

    system: AtomSystem
    phases: Mapping[tuple[str, int], float] = field(default_factory=dict)

    def __post_init__(self):
        n = sum(e.n_atoms for e in self.system.ensembles)
        if n > MAX_ATOMS:
            raise ValueError(f"full-space oracle supports at most {MAX_ATOMS} atoms, got {n}")
        if self.product_dim > MAX_DIM:
            raise ValueError(f"product dimension {self.product_dim} exceeds {MAX_DIM}")
        for (ens, i) in self.phases:
            e = self._ensemble(ens)
            if not 0 <= i < e.n_atoms:
                raise ValueError(f"atom index {i} outside ensemble {ens!r}")

    def _ensemble(self, name: str):
        for e in self.system.ensembles:
            if e.name == name:
                return e
        raise KeyError(f"no ensemble named {name!r}")

    @property
    def atoms(self) -> list[tuple[str, int, tuple[str, ...]]]:
        return [(e.name, i, e.levels) for e in self.system.ensembles for i in range(e.n_atoms)]

    @property
    def product_dim(self) -> int:
        return math.prod(len(e.levels) ** e.n_atoms for e in self.system.ensembles)

    @property
    def sinks(self) -> tuple[str, ...]:
        return self.system.local_labels()

    @property
    def dim(self) -> int:
        return self.product_dim + len(self.sinks)

    def configurations(self) -> list[tuple[int, ...]]:
        """Product states as per-atom level indices, row-major over atoms."""
        return list(itertools.product(*[range(len(lv)) for _, _, lv in self.atoms]))


def _atom_index(model: FullSpaceModel, ens: str, i: int) -> int:
    for k, (e, j, _) in enumerate(model.atoms):
        if e == ens and j == i:
            return k
    raise KeyError((ens, i))


def _sigma(model: FullSpaceModel, atom: int, to: int, frm: int) -> np.ndarray:
    """``|to><frm|`` on one atom, identity elsewhere, padded with the sink block."""
    confs = model.configurations()
    index = {c: k for k, c in enumerate(confs)}
    op = np.zeros((model.dim, model.dim), dtype=complex)
    for k, c in enumerate(confs):
        if c[atom] == frm:
            new = c[:atom] + (to,) + c[atom + 1:]
            op[index[new], k] = 1.0
    return op


def full_lindblad(model: FullSpaceModel) -> LindbladModel:
    """The full-space master equation as a basis-free :class:`LindbladModel`."""
    sysm = model.system
    d = model.dim
    h = np.zeros((d, d), dtype=complex)
    for dr in sysm.drives:
        e = model._ensemble(dr.ensemble)
        up, lo = e.levels.index(dr.upper), e.levels.index(dr.lower)
        for i in range(e.n_atoms):
            s = _sigma(model, _atom_index(model, dr.ensemble, i), up, lo)
            h += 0.5 * dr.rabi * (s + s.conj().T)
    channels = []
    for cd in sysm.collective:
        op = np.zeros((d, d), dtype=complex)
        for ens, lower, upper in cd.legs:
            e = model._ensemble(ens)
            lo, up = e.levels.index(lower), e.levels.index(upper)
            for i in range(e.n_atoms):
                phase = np.exp(1j * model.phases.get((ens, i), 0.0))
                op += phase * _sigma(model, _atom_index(model, ens, i), lo, up)
        channels.append(JumpChannel(cd.label, cd.rate, (op,), "collective"))
    confs = model.configurations()
    for ld in sysm.local:
        e = model._ensemble(ld.ensemble)
        up = e.levels.index(ld.upper)
        target = model.product_dim + model.sinks.index(ld.label)
        ops = []
        for i in range(e.n_atoms):
            a = _atom_index(model, ld.ensemble, i)
            for k, c in enumerate(confs):
                if c[a] == up:
                    op = np.zeros((d, d), dtype=complex)
                    op[target, k] = 1.0
                    ops.append(op)
        if ops:
            channels.append(JumpChannel(ld.label, ld.rate, tuple(ops), "local"))
    return LindbladModel(h, tuple(channels), None)


def embedding(model: FullSpaceModel, basis: HilbertBasis) -> np.ndarray:
    """Isometry from the symmetric basis (with sinks) into the full space."""
    if tuple(e.name for e in basis.ensembles) != tuple(e.name for e in model.system.ensembles):
        raise ValueError("ensembles of the reduced basis and the full model differ")
    confs = model.configurations()
    atoms = model.atoms
    v = np.zeros((model.dim, basis.dim), dtype=complex)
    for col, s in enumerate(basis.states):
        if s.is_sink:
            v[model.product_dim + model.sinks.index(s.sink), col] = 1.0
            continue
        members = []
        for k, c in enumerate(confs):
            occ = []
            for ei, e in enumerate(model.system.ensembles):
                counts = [0] * len(e.levels)
                for a, (name, _, _) in enumerate(atoms):
                    if name == e.name:
                        counts[c[a]] += 1
                occ.append(tuple(counts))
            if tuple(occ) == s.occupations:
                members.append(k)
        if not members:
            raise ValueError(f"symmetric state {s} has no product-state support")
        v[members, col] = 1.0 / math.sqrt(len(members))
    return v


def embed_state(v: np.ndarray, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.shape[0] != v.shape[1]:
        raise ValueError("state dimension does not match the embedding")
    if state.ndim == 1:
        return v @ state
    return v @ state @ v.conj().T


def compare_with_symmetric(full_rho: np.ndarray, reduced_rho: np.ndarray, v: np.ndarray) -> float:
    """Trace distance between a full-space state and the embedded reduced state."""
    full_rho = np.asarray(full_rho, dtype=complex)
    if full_rho.shape != (v.shape[0], v.shape[0]):
        raise ValueError("full-space state dimension does not match the embedding")
    return trace_distance(full_rho, embed_state(v, reduced_rho))


def symmetric_leakage(rho: np.ndarray, v: np.ndarray) -> float:
    """Population outside the image of the embedding."""
    proj = v @ v.conj().T
    return float(np.trace(rho - proj @ rho @ proj).real)


@dataclass(frozen=True)
class OracleComparison:
    times: np.ndarray
    deviations: np.ndarray
    leakage: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max(initial=0.0))


def compare_dynamics(system: AtomSystem, psi0_reduced: np.ndarray, times: Sequence[float],
                     phases: Mapping[tuple[str, int], float] | None = None) -> OracleComparison:
    """Evolve the reduced and full models from the same initial state and
    report the trace distance at each requested time."""
    reduced = build_model(system)
    full = FullSpaceModel(system, dict(phases or {}))
    v = embedding(full, reduced.basis)
    fl = full_lindblad(full)
    rho_r = lindblad_trajectory(reduced, psi0_reduced, times)
    rho_f = lindblad_trajectory(fl, embed_state(v, psi0_reduced), times)
    dev = np.array([compare_with_symmetric(f, r, v) for f, r in zip(rho_f, rho_r)])
    leak = np.array([symmetric_leakage(f, v) for f in rho_f])
    return OracleComparison(np.asarray(times, float), dev, leak)


def full_state(model: FullSpaceModel, rho0: np.ndarray, t: float, tol: float = 1e-10) -> np.ndarray:
    """Dense full-space integration with the same contract as :func:`integrate_lindblad`."""
    return integrate_lindblad(full_lindblad(model), rho0, t, tol)
