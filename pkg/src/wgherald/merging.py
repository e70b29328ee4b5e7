"""Merging stored bosonic excitations with beam splitters and post-selection.

In the low-excitation limit the collective excitations of each atomic level
behave as a bosonic mode. A beam splitter between two levels followed by
counting the excitations left in the second level merges excitations into the
first. This module provides the two-mode transform, the exact post-selection
amplitudes, the expected-cost recursions of three merge schedules, Monte
Carlo checks of those recursions, and the photon-counting readout model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, stats


# --- states and the beam splitter ------------------------------------------

@dataclass(frozen=True)
class FockVector:
    """Amplitudes over occupation numbers of one mode (1-D) or two modes (2-D)."""

    amps: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amps, dtype=complex)
        if a.ndim not in (1, 2) or (a.ndim == 2 and a.shape[0] != a.shape[1]):
            raise ValueError("amplitudes must be a vector or a square matrix")
        object.__setattr__(self, "amps", a)

    @property
    def n_max(self) -> int:
        return self.amps.shape[0] - 1

    @property
    def modes(self) -> int:
        return self.amps.ndim

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalized(self) -> "FockVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalise the zero vector")
        return FockVector(self.amps / n)

    @classmethod
    def fock(cls, n: int, n_max: int | None = None) -> "FockVector":
        n_max = n if n_max is None else n_max
        a = np.zeros(n_max + 1, dtype=complex)
        a[n] = 1.0
        return cls(a)

    @classmethod
    def fock2(cls, n1: int, n2: int, n_max: int) -> "FockVector":
        a = np.zeros((n_max + 1, n_max + 1), dtype=complex)
        a[n1, n2] = 1.0
        return cls(a)

    @classmethod
    def from_roots(cls, roots: Sequence[complex], n_max: int | None = None) -> "FockVector":
        """Normalised ``prod_i (a^dag - r_i)|0>``."""
        return cls(_poly_to_fock(np.poly1d(np.asarray(roots, dtype=complex), r=True).coeffs[::-1], n_max)).normalized()

    def tensor(self, other: "FockVector") -> "FockVector":
        if self.modes != 1 or other.modes != 1:
            raise ValueError("tensor product of single-mode states only")
        n = max(self.n_max, other.n_max)
        a = np.zeros((n + 1, n + 1), dtype=complex)
        a[: self.n_max + 1, : other.n_max + 1] = np.outer(self.amps, other.amps)
        return FockVector(a)


def _poly_to_fock(coeffs_low_first: np.ndarray, n_max: int | None = None) -> np.ndarray:
    """Polynomial ``sum c_n x^n`` in ``a^dag`` acting on vacuum to Fock amplitudes."""
    deg = len(coeffs_low_first) - 1
    n_max = deg if n_max is None else n_max
    out = np.zeros(n_max + 1, dtype=complex)
    for n, c in enumerate(coeffs_low_first):
        out[n] = c * math.sqrt(math.factorial(n))
    return out


def fock_to_poly(state: FockVector) -> np.ndarray:
    """Inverse of :func:`FockVector.from_roots` up to normalisation; low order first."""
    return np.array([a / math.sqrt(math.factorial(n)) for n, a in enumerate(state.amps)])


@dataclass(frozen=True)
class BeamSplitter:
    """Mode map ``a1^dag -> T a1^dag + R a2^dag``, ``a2^dag -> -R* a1^dag + T* a2^dag``."""

    t: complex
    r: complex

    def __post_init__(self):
        if abs(abs(self.t) ** 2 + abs(self.r) ** 2 - 1.0) > 1e-12:
            raise ValueError("|T|^2 + |R|^2 must equal 1")

    @classmethod
    def balanced(cls) -> "BeamSplitter":
        """The 50/50 splitter ``a1^dag -> (a1^dag - a2^dag)/sqrt2``, ``a2^dag -> (a1^dag + a2^dag)/sqrt2``."""
        return cls(1 / math.sqrt(2), -1 / math.sqrt(2))

    @classmethod
    def from_angle(cls, theta: float) -> "BeamSplitter":
        return cls(math.cos(theta), -math.sin(theta))

    def mode_matrix(self) -> np.ndarray:
        """Column ``j`` holds the image of ``a_j^dag`` in the output modes."""
        t, r = complex(self.t), complex(self.r)
        return np.array([[t, -r.conjugate()], [r, t.conjugate()]])


def _block_generator(n: int, h: np.ndarray) -> np.ndarray:
    """``sum_ij h_ij a_i^dag a_j`` on the states ``|n-k, k>``, ``k = 0..n``."""
    g = np.zeros((n + 1, n + 1), dtype=complex)
    for k in range(n + 1):
        n1, n2 = n - k, k
        g[k, k] = h[0, 0] * n1 + h[1, 1] * n2
        if n1 > 0:  # a2^dag a1
            g[k + 1, k] += h[1, 0] * math.sqrt(n1 * (n2 + 1))
        if n2 > 0:  # a1^dag a2
            g[k - 1, k] += h[0, 1] * math.sqrt(n2 * (n1 + 1))
    return g


def apply_beamsplitter(state: FockVector, bs: BeamSplitter, n_max: int | None = None) -> FockVector:
    """Two-mode unitary induced by ``bs``; exact within each photon-number block.

    The block unitary is the exponential of the one-body generator, so this
    route does not use any closed-form amplitude. Raises if the input has
    weight above ``n_max`` in total photon number (output would be truncated).
    """
    if state.modes != 2:
        raise ValueError("beam splitter acts on two-mode states")
    a = state.amps
    dim = a.shape[0]
    n_max = dim - 1 if n_max is None else n_max
    h = 1j * linalg.logm(bs.mode_matrix())
    # map a_j^dag -> sum_i u_ij a_i^dag is exp(-i sum h_ij a_i^dag a_j) with u = exp(-i h)
    out = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    for n in range(2 * dim - 1):
        ks = [k for k in range(n + 1) if n - k < dim and k < dim]
        vec = np.zeros(n + 1, dtype=complex)
        for k in ks:
            vec[k] = a[n - k, k]
        if not np.any(vec):
            continue
        if n > n_max:
            raise ValueError(f"total photon number {n} exceeds truncation n_max={n_max}")
        new = linalg.expm(-1j * _block_generator(n, h)) @ vec
        for k in range(n + 1):
            out[n - k, k] = new[k]
    return FockVector(out)


# --- exact post-selection amplitudes -----------------------------------------

def _alternating_sum(m: int, n: int, p: int) -> int:
    return sum((-1) ** (m - k) * math.comb(m, k) * math.comb(n, m + n - k - p) for k in range(m + 1) if 0 <= m + n - k - p <= n)


def fp_squared_exact(m: int, n: int, p: int) -> Fraction:
    """``|f_p(m, n)|^2`` as an exact rational (big-integer arithmetic)."""
    if not 0 <= p <= m + n:
        raise ValueError("need 0 <= p <= m + n")
    s = _alternating_sum(m, n, p)
    return Fraction(math.factorial(p) * math.factorial(m + n - p) * s * s,
                    math.factorial(m) * math.factorial(n) * 2 ** (m + n))


def fp_5050(m: int, n: int, p: int) -> float:
    """Amplitude of ``|m+n-p, p>`` after the balanced splitter acting on ``|m, n>``."""
    if not 0 <= p <= m + n:
        raise ValueError("need 0 <= p <= m + n")
    s = _alternating_sum(m, n, p)
    if s == 0:
        return 0.0
    mag = math.sqrt(float(fp_squared_exact(m, n, p)))
    return math.copysign(mag, s)


def fp_distribution(m: int, n: int) -> np.ndarray:
    """``|f_p(m,n)|^2`` for ``p = 0..m+n``."""
    return np.array([float(fp_squared_exact(m, n, p)) for p in range(m + n + 1)])


def symmetric_fp_squared(m: int, j: int) -> Fraction:
    """Closed form of ``|f_{2j}(m, m)|^2``."""
    return Fraction(math.factorial(2 * m - 2 * j) * math.factorial(2 * j) * math.comb(m, j) ** 2,
                    2 ** (2 * m) * math.factorial(m) ** 2)


# --- one-by-one addition -----------------------------------------------------

def one_by_one_q(n: int) -> tuple[float, float]:
    """Best success ``max_t (n+1) t^n (1-t)`` over transmissivity ``t = |T|^2`` and its argmax."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 1.0, 0.0

    def neg(t):
        return -(n + 1) * t ** n * (1 - t)

    res = optimize.minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-13})
    return float(-res.fun), float(res.x)


def one_by_one_q_closed(n: int) -> float:
    return (n / (n + 1)) ** n if n > 0 else 1.0


def one_by_one_Rm(m: int, p: float) -> float:
    """Expected operations to add ``m`` excitations one at a time, restarting on failure."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    r = 0.0
    for j in range(m):
        q = p if j == 0 else one_by_one_q_closed(j)
        r = (1 + r) / q
    return r


def one_by_one_log_Rm(m: int, p: float) -> float:
    """``log R_m`` for the one-by-one schedule; finite where ``R_m`` overflows."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    log_r = -math.inf
    for j in range(m):
        log_q = math.log(p) if j == 0 else j * math.log(j / (j + 1))
        log_r = float(np.logaddexp(0.0, log_r)) - log_q
    return log_r


def one_by_one_bounds(m: int, p: float) -> tuple[float, float]:
    return 2 ** (m - 1) / p, m * math.e ** m / p


def one_by_one_log_bounds(m: int, p: float) -> tuple[float, float]:
    return (m - 1) * math.log(2) - math.log(p), math.log(m) + m - math.log(p)


# --- doubling ----------------------------------------------------------------

def doubling_d(n: int) -> Fraction:
    """Exact success of merging ``|n>|n>`` into ``|2n>``: ``(2n)!/(4^n (n!)^2)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return Fraction(math.comb(2 * n, n), 4 ** n)


def doubling_Rm(m: int, p: float, remainder: str = "one-by-one") -> float:
    """Expected operations of the doubling tree, ``R_{2k} = (1 + 2 R_k)/d_k``.

    For ``m`` not a power of two the largest power of two below ``m`` is built
    by doubling and the remaining excitations are added one at a time.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if remainder != "one-by-one":
        raise ValueError("only the one-by-one remainder rule is available")
    r, k = 1.0 / p, 1
    while 2 * k <= m:
        r = (1 + 2 * r) / float(doubling_d(k))
        k *= 2
    for j in range(k, m):
        q = one_by_one_q_closed(j)
        r = (1 + r) / q
    return r


def doubling_bounds(m: int, p: float) -> tuple[float, float]:
    lg = math.log2(m)
    return m * m / (4 * p), m ** (lg / 2 + 1) * lg / (2 * p)


# --- arbitrary superpositions --------------------------------------------------

def superposition_merge(left: FockVector, right: FockVector) -> tuple[FockVector, float]:
    """Balanced splitter on ``left (x) right`` and vacuum post-selection of mode 2."""
    if left.modes != 1 or right.modes != 1:
        raise ValueError("inputs must be single-mode states")
    n_tot = left.n_max + right.n_max
    joint = left.tensor(right)
    padded = np.zeros((n_tot + 1, n_tot + 1), dtype=complex)
    padded[: joint.amps.shape[0], : joint.amps.shape[1]] = joint.amps
    out = apply_beamsplitter(FockVector(padded), BeamSplitter.balanced())
    cond = out.amps[:, 0]
    prob = float(np.vdot(cond, cond).real)
    if prob < 1e-300:
        raise ValueError("post-selection has zero probability")
    return FockVector(cond / math.sqrt(prob)), prob


def merged_roots_state(roots_left: Sequence[complex], roots_right: Sequence[complex]) -> FockVector:
    """Independent prediction: the merge of root-product states has the union
    of roots, each scaled by ``sqrt 2``."""
    return FockVector.from_roots([math.sqrt(2) * r for r in list(roots_left) + list(roots_right)])


def superposition_merge_success(k: int, alpha: float) -> float:
    """Lower estimate of one merge of two ``k``-excitation target superpositions.

    The central Fock weight is modelled as ``|<k|Psi>|^2 = k^-alpha``; both
    inputs must hit it, and the Fock-level merge then succeeds with
    ``1/sqrt(2 pi k)``. ``alpha`` is a free model input.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return k ** (-2.0 * alpha) / math.sqrt(2 * math.pi * k)


def superposition_log_Rm(m: int, p: float, alpha: float) -> float:
    """``log R_m`` of the doubling tree built from arbitrary superpositions,
    ``R_2k = (1 + 2 R_k) / s_k`` with ``s_k`` from :func:`superposition_merge_success`."""
    if m < 1 or m & (m - 1):
        raise ValueError("m must be a power of two")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    log_r, k = -math.log(p), 1
    while k < m:
        log_r = float(np.logaddexp(0.0, math.log(2) + log_r)) - math.log(superposition_merge_success(k, alpha))
        k *= 2
    return log_r


def superposition_cost_coefficient(alpha: float, levels: Sequence[int] = range(10, 41)) -> float:
    """Fitted ``c`` in ``log R_m ~ c (log2 m)^2``; the recursion predicts
    ``c -> (1/4 + alpha) ln 2``, i.e. superpolynomial growth for every alpha."""
    lv = np.asarray(list(levels), float)
    logs = [superposition_log_Rm(2 ** int(L), 1.0, alpha) for L in lv]
    return float(np.polyfit(lv, logs, 2)[0])


# --- excitation trimming -----------------------------------------------------

@dataclass(frozen=True)
class TrimResult:
    state: FockVector
    expected_attempts: float
    overshoot_probability: float
    approx_attempts: float


def trim_step(n: int, theta: float) -> dict[str, float]:
    """Single weak-splitter attempt on ``|n>|0>`` with counting of mode 2."""
    c2, s2 = math.cos(theta) ** 2, math.sin(theta) ** 2
    return {
        "survive_amplitude": math.cos(theta) ** n,
        "click_one": n * c2 ** (n - 1) * s2 if n else 0.0,
        "click_any": 1.0 - c2 ** n,
    }


def excitation_trim(state: FockVector, target_n: int, theta: float) -> TrimResult:
    """Reduce a Fock state ``|n>`` to ``|target_n>`` with repeated weak splitters.

    Each attempt leaves ``|k>`` unchanged unless mode 2 registers an
    excitation; a single registered excitation leaves exactly ``|k-1>``.
    """
    if state.modes != 1:
        raise ValueError("trimming acts on a single mode")
    support = np.flatnonzero(np.abs(state.amps) > 1e-12)
    if len(support) != 1:
        raise ValueError("trimming is defined for Fock-state inputs")
    n = int(support[0])
    if target_n > n:
        raise ValueError("target_n exceeds the current excitation number")
    if target_n < 0:
        raise ValueError("target_n must be >= 0")
    if theta ** 2 * n > 0.1 + 1e-12:
        raise ValueError("need theta^2 n <= 0.1 for a weak splitter")
    attempts, no_overshoot, approx = 0.0, 1.0, 0.0
    for k in range(n, target_n, -1):
        step = trim_step(k, theta)
        attempts += 1.0 / step["click_any"]
        no_overshoot *= step["click_one"] / step["click_any"]
        approx += 1.0 / (theta ** 2 * k)
    return TrimResult(FockVector.fock(target_n, state.n_max), attempts, 1.0 - no_overshoot, approx)


# --- number-resolved merging --------------------------------------------------

def number_resolved_success(m: int, shift: int = 0) -> float:
    """``sum_{p < m/2} |f_p(m + shift, m - shift)|^2``."""
    if m < 2:
        raise ValueError("m must be >= 2")
    if abs(shift) > m:
        raise ValueError("|shift| must not exceed m")
    a, b = m + shift, m - shift
    return float(sum(fp_squared_exact(a, b, p) for p in range((m + 1) // 2)))


@lru_cache(maxsize=None)
def _merge_success(a: int, b: int) -> Fraction:
    """Probability that fewer than ``(a+b)/4`` excitations are registered."""
    return sum((fp_squared_exact(a, b, p) for p in range(a + b + 1) if 4 * p < a + b), Fraction(0))


def worst_case_counts(levels: int) -> list[int]:
    """Guaranteed excitation numbers along the number-resolved tree."""
    c = [1]
    for _ in range(levels):
        x = c[-1]
        c.append(2 * x - (x + 1) // 2 + 1)
    return c


def number_resolved_Rm(levels: int, p: float) -> tuple[list[int], list[float]]:
    """Worst-case expected operations per tree level; trim work excluded."""
    counts = worst_case_counts(levels)
    r = [1.0 / p]
    for lvl in range(levels):
        c = counts[lvl]
        r.append((1 + 2 * r[-1]) / float(_merge_success(c, c)))
    return counts, r


def number_resolved_exponent(p: float = 1.0, m_min: int = 8, m_max: int = 128) -> float:
    """Log-log slope of the worst-case cost over reachable sizes in ``[m_min, m_max]``."""
    levels = next(i for i, c in enumerate(worst_case_counts(64)) if c > m_max)
    counts, r = number_resolved_Rm(levels, p)
    pts = [(c, x) for c, x in zip(counts, r) if m_min <= c <= m_max]
    xs, ys = zip(*pts)
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# --- Monte Carlo schedulers ----------------------------------------------------

@dataclass(frozen=True)
class MergeStrategy:
    kind: str  # "one-by-one" | "doubling" | "number-resolved"
    m: int
    mode: str = "worst-case"  # number-resolved only: "worst-case" | "realistic"

    def __post_init__(self):
        if self.kind not in ("one-by-one", "doubling", "number-resolved"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.mode not in ("worst-case", "realistic"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def levels(self) -> int:
        if self.kind == "one-by-one":
            return self.m
        if self.kind == "doubling":
            return self.m.bit_length()
        counts = worst_case_counts(64)
        return next(i for i, c in enumerate(counts) if c >= self.m) + 1


@dataclass(frozen=True)
class SchedulerStats:
    strategy: MergeStrategy
    p: float
    n_trials: int
    seed: int
    mean: float
    stderr: float
    analytic: float | None
    levels: int
    extras: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"strategy": self.strategy.kind, "mode": self.strategy.mode, "m": self.strategy.m, "p": self.p,
               "n_trials": self.n_trials, "seed": self.seed, "mean_R": self.mean, "stderr_R": self.stderr,
               "analytic_R": self.analytic, "levels": self.levels}
        row.update(self.extras)
        return row


CHUNK = 4096


def _sum_segments(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    ends = np.cumsum(counts)
    csum = np.concatenate(([0.0], np.cumsum(values)))
    return csum[ends] - csum[ends - counts]


def _retry_cost(rng, q: float, children: int, child_sampler, n: int) -> np.ndarray:
    """Cost of repeating ``children`` sub-builds plus one merge until success."""
    attempts = rng.geometric(q, size=n)
    sub = child_sampler(int(children * attempts.sum()))
    return attempts + _sum_segments(sub, children * attempts)


def _sample_one_by_one(rng, m: int, p: float, n: int) -> np.ndarray:
    def level(j, count):
        if j == 0:
            return np.zeros(count)
        q = p if j == 1 else one_by_one_q_closed(j - 1)
        return _retry_cost(rng, q, 1, lambda c: level(j - 1, c), count)
    return level(m, n)


def _sample_doubling(rng, m: int, p: float, n: int) -> np.ndarray:
    k = 1 << (m.bit_length() - 1)

    def tree(size, count):
        if size == 1:
            return rng.geometric(p, size=count).astype(float)
        return _retry_cost(rng, float(doubling_d(size // 2)), 2, lambda c: tree(size // 2, c), count)

    def chain(size, count):
        if size == k:
            return tree(k, count)
        return _retry_cost(rng, one_by_one_q_closed(size - 1), 1, lambda c: chain(size - 1, c), count)

    return chain(m, n)


def _sample_nr_worst(rng, levels: int, p: float, n: int) -> np.ndarray:
    counts = worst_case_counts(levels)

    def node(lvl, count):
        if lvl == 0:
            return rng.geometric(p, size=count).astype(float)
        c = counts[lvl - 1]
        return _retry_cost(rng, float(_merge_success(c, c)), 2, lambda x: node(lvl - 1, x), count)

    return node(levels, n)


def _sample_nr_realistic(rng, levels: int, p: float) -> tuple[float, int]:
    """One realistic tree: excitation numbers are kept as sampled."""

    def node(lvl):
        if lvl == 0:
            return float(rng.geometric(p)), 1
        cost = 0.0
        while True:
            c1, n1 = node(lvl - 1)
            c2, n2 = node(lvl - 1)
            cost += c1 + c2 + 1
            probs = fp_distribution(n1, n2)
            k = int(rng.choice(len(probs), p=probs / probs.sum()))
            if 4 * k < n1 + n2:
                return cost, n1 + n2 - k

    return node(levels)


def scheduler_simulate(strategy: MergeStrategy, p: float, n_trials: int, seed: int) -> SchedulerStats:
    """Monte Carlo estimate of the expected number of operations.

    Trials are split into fixed chunks, each drawing from its own stream
    ``SeedSequence([seed, chunk])``, so results do not depend on how the
    chunks are scheduled.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    kind, m = strategy.kind, strategy.m
    samples = []
    extras: dict = {}
    analytic = None
    if kind == "number-resolved":
        levels = strategy.levels() - 1
        counts, rs = number_resolved_Rm(levels, p)
        extras["final_count_worst"] = counts[-1]
    for chunk, start in enumerate(range(0, n_trials, CHUNK)):
        size = min(CHUNK, n_trials - start)
        rng = np.random.default_rng(np.random.SeedSequence([seed, chunk]))
        if kind == "one-by-one":
            samples.append(_sample_one_by_one(rng, m, p, size))
        elif kind == "doubling":
            samples.append(_sample_doubling(rng, m, p, size))
        elif strategy.mode == "worst-case":
            samples.append(_sample_nr_worst(rng, levels, p, size))
        else:
            out = [_sample_nr_realistic(rng, levels, p) for _ in range(size)]
            samples.append(np.array([o[0] for o in out]))
            extras.setdefault("final_counts", []).extend(o[1] for o in out)
    x = np.concatenate(samples)
    if kind == "one-by-one":
        analytic = one_by_one_Rm(m, p)
    elif kind == "doubling":
        analytic = doubling_Rm(m, p)
    elif strategy.mode == "worst-case":
        analytic = rs[-1]
        extras["trim_attempts"] = _worst_case_trim_work(levels)
    if "final_counts" in extras:
        fc = extras.pop("final_counts")
        extras["mean_final_count"] = float(np.mean(fc))
        extras["min_final_count"] = int(np.min(fc))
    stderr = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return SchedulerStats(strategy, p, n_trials, seed, float(x.mean()), stderr, analytic, strategy.levels(), extras)


def _worst_case_trim_work(levels: int, theta2_n: float = 0.1) -> float:
    """Expected weak-splitter attempts per successful top merge to cut every
    merge result back to its worst-case size (expectation over the outcome)."""
    counts = worst_case_counts(levels)
    total = 0.0
    for lvl in range(levels):
        c, target = counts[lvl], counts[lvl + 1]
        probs = [float(fp_squared_exact(c, c, k)) for k in range(2 * c + 1) if 4 * k < 2 * c]
        norm = sum(probs)
        work = 0.0
        for k, w in enumerate(probs):
            n = 2 * c - k
            if n > target:
                theta = math.sqrt(theta2_n / n)
                work += w / norm * excitation_trim(FockVector.fock(n), target, theta).expected_attempts
        total += work * 2 ** (levels - lvl - 1)
    return total


# --- photon-counting readout -------------------------------------------------

@dataclass(frozen=True)
class CountingModel:
    gamma_1d: float
    window: float
    m: int

    def __post_init__(self):
        if self.gamma_1d < 0 or self.window < 0 or self.m < 0:
            raise ValueError("counting parameters must be non-negative")

    @property
    def mean(self) -> float:
        return self.m * self.gamma_1d * self.window


def counting_pmf(model: CountingModel, tail: float = 1e-12) -> np.ndarray:
    """Poisson counting distribution on ``0..n_hi`` with upper tail below ``tail``."""
    lam = model.mean
    if lam == 0:
        return np.array([1.0])
    n_hi = int(stats.poisson.isf(tail, lam)) + 1
    return stats.poisson.pmf(np.arange(n_hi + 1), lam)


def discrimination_error(m: int, gamma_1d: float, window: float) -> float:
    """Minimum-error (maximum-likelihood) probability of confusing ``m`` and ``m+1``
    stored excitations from the photon count, equal priors."""
    if window < 0:
        raise ValueError("window must be >= 0")
    lam0, lam1 = m * gamma_1d * window, (m + 1) * gamma_1d * window
    if lam1 == 0:
        return 0.5
    n_hi = int(stats.poisson.isf(1e-16, lam1)) + 2
    n = np.arange(n_hi + 1)
    p0 = stats.poisson.pmf(n, lam0) if lam0 > 0 else (n == 0).astype(float)
    p1 = stats.poisson.pmf(n, lam1)
    return 0.5 * float(np.minimum(p0, p1).sum())


def ml_threshold(m: int, gamma_1d: float, window: float) -> int:
    """Smallest count at which ``m + 1`` becomes the more likely hypothesis."""
    lam0, lam1 = m * gamma_1d * window, (m + 1) * gamma_1d * window
    if lam0 == 0:
        return 1
    return int(math.floor((lam1 - lam0) / math.log(lam1 / lam0))) + 1
