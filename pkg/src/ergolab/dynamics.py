"""Concrete measure-preserving systems and weighted averages along them.

Ships three systems whose n-th iterate is exactly computable at any n:
the irrational circle rotation, the finite cyclic shift, and a Bernoulli
symbolic shift whose symbols come from the package's counter-based hash
(so shifting by 2^30 costs the same as shifting by 1).  On top of these it
evaluates the averages of interest: plain ergodic means, the weighted
random average (1/N) sum e(p(n)) f(T^{a_n} x), and the six-stage chain of
comparisons that connects it to a bare trigonometric sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from mpmath import mp

from . import hardy
from .rng import _mix_block, child_seed, uniform01_block
from .selectors import OutOfRangeError, Realization, sigma_values

# Fixed-point scale for rotation arithmetic: products k * alpha are reduced
# mod 1 exactly in integers, so orbits never drift, and the representation
# error k * 2^-128 stays ~1e-31 even at k ~ 1e9.
_FP_BITS = 128
_FP_MASK = (1 << _FP_BITS) - 1
_FP_INV = 2.0 ** -_FP_BITS


def _radical_inverse(k: int) -> float:
    """Base-2 van der Corput point in [0, 1)."""
    inv, denom = 0.0, 0.5
    while k:
        if k & 1:
            inv += denom
        k >>= 1
        denom *= 0.5
    return inv


NAMED_ANGLES = {
    "sqrt2m1": "sqrt(2) - 1",
    "sqrt3m1": "sqrt(3) - 1",
    "invphi": "(sqrt(5) - 1)/2",
}


def _resolve_angle(alpha) -> int:
    """Angle as a 128-bit fixed-point integer in [0, 2^128)."""
    old = mp.prec
    mp.prec = _FP_BITS + 64
    try:
        if isinstance(alpha, str):
            name = alpha.strip()
            if name == "sqrt2m1":
                val = mp.sqrt(2) - 1
            elif name == "sqrt3m1":
                val = mp.sqrt(3) - 1
            elif name == "invphi":
                val = (mp.sqrt(5) - 1) / 2
            else:
                val = mp.mpf(name)
        else:
            val = mp.mpf(alpha)
        val = val - mp.floor(val)
        return int(mp.floor(val * (1 << _FP_BITS)))
    finally:
        mp.prec = old


class DynamicalSystem:
    """A transformation with an attached bounded observable and its mean.

    Subclasses provide exact n-th iterates; the invariant mean of the
    observable (the projection onto the invariant factor, evaluated for
    ergodic systems) is supplied in closed form, never estimated.
    """

    kind: str = "abstract"
    known_mean: complex = 0j

    def orbit_observable(self, x, iterates: np.ndarray) -> np.ndarray:
        """f(T^k x) for each k in iterates, as complex128."""
        raise NotImplementedError

    def iterate(self, x, k: int = 1):
        """The state T^k x."""
        raise NotImplementedError

    def sample_points(self, count: int = 16) -> list:
        """Low-discrepancy probe states; avoids accidental null-set artifacts."""
        raise NotImplementedError

    def random_states(self, seed: int, count: int) -> list:
        """States sampled from the invariant measure (for statistical checks)."""
        raise NotImplementedError

    def observe(self, x) -> complex:
        return complex(self.orbit_observable(x, np.zeros(1, dtype=np.int64))[0])

    def _check_bounded(self) -> None:
        pts = self.sample_points(16) + self.random_states(7, 64)
        for x in pts:
            vals = self.orbit_observable(x, np.arange(0, 8, dtype=np.int64))
            if np.any(np.abs(vals) > 1.0 + 1e-12):
                raise ValueError(f"observable exceeds modulus 1 at state {x!r}")


class RotationSystem(DynamicalSystem):
    """x -> x + alpha mod 1 on [0, 1) with Lebesgue measure.

    Observables (all with closed-form means under Lebesgue):
      e          e(x), mean 0
      e_shifted  (1 + e(x))/2, mean 1/2 (nonzero mean, exercises the
                 partial-summation stages of the chain)
      const      1, mean 1
      coboundary h - h(T .) with h = e(x)/2, mean 0
    """

    kind = "rotation"

    def __init__(self, alpha="sqrt2m1", observable: str = "e"):
        self.alpha_label = str(alpha)
        self.alpha_fp = _resolve_angle(alpha)
        self.alpha = self.alpha_fp * _FP_INV
        if observable not in ("e", "e_shifted", "const", "coboundary"):
            raise ValueError(f"unknown rotation observable {observable!r}")
        self.observable = observable
        if observable == "e":
            self.known_mean = 0j
        elif observable == "e_shifted":
            self.known_mean = 0.5 + 0j
        elif observable == "const":
            self.known_mean = 1.0 + 0j
        else:
            self.known_mean = 0j
        self._check_bounded()

    def _orbit_fracs_exact(self, x: float, iterates) -> np.ndarray:
        """Reference path: arbitrary-precision integers, one k at a time."""
        x_fp = int(math.floor((x % 1.0) * (1 << _FP_BITS)))
        a = self.alpha_fp
        mask = _FP_MASK
        vals = [((x_fp + int(k) * a) & mask) for k in iterates]
        return np.array(vals, dtype=np.float64) * _FP_INV

    def _orbit_fracs(self, x: float, iterates: np.ndarray) -> np.ndarray:
        """frac(x + k alpha) for an int64 array of iterates.

        Computes (x_fp + k * alpha_fp) mod 2^128 in 32-bit limbs with
        explicit carries, entirely in vectorized uint64 arithmetic; agrees
        bit for bit (after float64 rounding) with the exact integer path.
        """
        ks = np.asarray(iterates, dtype=np.int64)
        if ks.size == 0:
            return np.empty(0, dtype=np.float64)
        if np.any(ks < 0):
            raise ValueError("iterates must be nonnegative")
        x_fp = int(math.floor((x % 1.0) * (1 << _FP_BITS)))
        a = self.alpha_fp
        m32 = np.uint64(0xFFFFFFFF)
        s32 = np.uint64(32)

        k = ks.astype(np.uint64)
        k0 = k & m32
        k1 = k >> s32
        al0 = np.uint64(a & 0xFFFFFFFF)
        al1 = np.uint64((a >> 32) & 0xFFFFFFFF)
        a_hi = np.uint64((a >> 64) & 0xFFFFFFFFFFFFFFFF)

        # 128-bit product k * (a mod 2^64), low and high uint64 halves
        p0 = k0 * al0
        p1 = k0 * al1
        p2 = k1 * al0
        p3 = k1 * al1
        mid = p1 + p2
        carry_mid = (mid < p1).astype(np.uint64)
        low = p0 + (mid << s32)
        carry_low = (low < p0).astype(np.uint64)
        high = p3 + (mid >> s32) + (carry_mid << s32) + carry_low
        # add k * a_hi * 2^64 and the starting point, both mod 2^128
        high += k * a_hi
        x_lo = np.uint64(x_fp & 0xFFFFFFFFFFFFFFFF)
        x_hi = np.uint64((x_fp >> 64) & 0xFFFFFFFFFFFFFFFF)
        new_low = low + x_lo
        high += x_hi + (new_low < low).astype(np.uint64)
        return high.astype(np.float64) * 2.0 ** -64 + new_low.astype(np.float64) * 2.0 ** -128

    def _f_of_fracs(self, fr: np.ndarray) -> np.ndarray:
        if self.observable == "const":
            return np.ones(fr.shape[0], dtype=np.complex128)
        ez = np.exp(2j * np.pi * fr)
        if self.observable == "e":
            return ez
        if self.observable == "e_shifted":
            return 0.5 * (1.0 + ez)
        # coboundary: h - h o T with h = e(.)/2, so f(x) = e(x)(1 - e(alpha))/2
        return ez * (0.5 * (1.0 - np.exp(2j * np.pi * (self.alpha_fp * _FP_INV))))

    def orbit_observable(self, x, iterates: np.ndarray) -> np.ndarray:
        return self._f_of_fracs(self._orbit_fracs(float(x), iterates))

    def iterate(self, x, k: int = 1) -> float:
        x_fp = int(math.floor((float(x) % 1.0) * (1 << _FP_BITS)))
        return ((x_fp + k * self.alpha_fp) & _FP_MASK) * _FP_INV

    def sample_points(self, count: int = 16) -> list:
        return [_radical_inverse(k) for k in range(1, count + 1)]

    def random_states(self, seed: int, count: int) -> list:
        return list(uniform01_block(child_seed(seed, 0xA11CE), 1, count))


class CyclicSystem(DynamicalSystem):
    """j -> j + 1 mod q on {0..q-1} with uniform measure.

    The observable is a table of complex values of modulus <= 1; shipped
    names: "roots" (f(j) = e(j/q), mean 0 for q >= 2) and "indicator0"
    (1_{j=0} - 1/q, mean 0).  The invariant mean is the exact table average.
    """

    kind = "cyclic"

    def __init__(self, q: int, observable="roots"):
        if q < 1:
            raise ValueError("modulus q must be >= 1")
        self.q = q
        if isinstance(observable, str):
            if observable == "roots":
                table = np.exp(2j * np.pi * np.arange(q) / q)
            elif observable == "indicator0":
                table = np.full(q, -1.0 / q, dtype=np.complex128)
                table[0] += 1.0
            else:
                raise ValueError(f"unknown cyclic observable {observable!r}")
            self.observable = observable
        else:
            table = np.asarray(observable, dtype=np.complex128)
            if table.shape != (q,):
                raise ValueError(f"observable table must have length {q}")
            self.observable = "table"
        self.table = table
        mean_re = math.fsum(table.real) / q
        mean_im = math.fsum(table.imag) / q
        if self.observable == "roots":
            self.known_mean = (1.0 + 0j) if q == 1 else 0j
        elif self.observable == "indicator0":
            self.known_mean = 0j
        else:
            self.known_mean = complex(mean_re, mean_im)
        self._check_bounded()

    def orbit_observable(self, x, iterates: np.ndarray) -> np.ndarray:
        idx = (int(x) + np.asarray(iterates, dtype=np.int64)) % self.q
        return self.table[idx]

    def iterate(self, x, k: int = 1) -> int:
        return (int(x) + k) % self.q

    def sample_points(self, count: int = 16) -> list:
        return [int(_radical_inverse(k) * self.q) % self.q for k in range(1, count + 1)]

    def random_states(self, seed: int, count: int) -> list:
        u = uniform01_block(child_seed(seed, 0xC1C), 1, count)
        return [int(v * self.q) % self.q for v in u]


class BernoulliSystem(DynamicalSystem):
    """Left shift on i.i.d. uniform symbol sequences (product measure).

    A state is (stream, offset): symbol j of the state is a hash of
    (stream, offset + j), so T is offset + 1 and arbitrary iterates are
    O(window).  The observable reads the leading window as a base-A
    fraction w and returns e(w); averaging e(w) over all A^window equally
    likely words gives exactly 0, the supplied invariant mean.
    """

    kind = "bernoulli"

    def __init__(self, alphabet: int = 2, window: int = 8):
        if alphabet < 2:
            raise ValueError("alphabet size must be >= 2")
        if window < 1:
            raise ValueError("window length must be >= 1")
        self.alphabet = alphabet
        self.window = window
        self.known_mean = 0j
        self._weights = alphabet ** -(1.0 + np.arange(window, dtype=np.float64))
        self._check_bounded()

    def _symbols(self, stream: int, positions: np.ndarray) -> np.ndarray:
        # per-index hash keeps symbol access O(1) in the offset
        seed = child_seed(stream, 0xBE52)
        flat = positions.reshape(-1).astype(np.uint64)
        u = _mix_block(seed, flat).astype(np.float64) * 2.0 ** -53
        return np.floor(u * self.alphabet).reshape(positions.shape)

    def orbit_observable(self, x, iterates: np.ndarray) -> np.ndarray:
        stream, offset = x
        ks = np.asarray(iterates, dtype=np.int64)
        pos = (offset + ks)[:, None] + np.arange(self.window, dtype=np.int64)[None, :]
        sym = self._symbols(stream, pos)
        frac = sym @ self._weights
        return np.exp(2j * np.pi * frac)

    def iterate(self, x, k: int = 1):
        stream, offset = x
        return (stream, offset + k)

    def sample_points(self, count: int = 16) -> list:
        return [(child_seed(0x5EED, i), 0) for i in range(1, count + 1)]

    def random_states(self, seed: int, count: int) -> list:
        return [(child_seed(seed, 0xB000 + i), 0) for i in range(count)]


def make_system(kind: str, **kwargs) -> DynamicalSystem:
    """Factory used by the CLI: rotation | cyclic | bernoulli."""
    if kind == "rotation":
        return RotationSystem(
            alpha=kwargs.get("alpha", "sqrt2m1"),
            observable=kwargs.get("observable", "e"),
        )
    if kind == "cyclic":
        return CyclicSystem(
            q=int(kwargs.get("q", 5)),
            observable=kwargs.get("observable", "roots"),
        )
    if kind == "bernoulli":
        return BernoulliSystem(
            alphabet=int(kwargs.get("alphabet", 2)),
            window=int(kwargs.get("window", 8)),
        )
    raise ValueError(f"unknown system kind {kind!r}")


@dataclass(frozen=True)
class AverageSeries:
    """Average values per (sample point, N) plus magnitude aggregates."""

    schedule: np.ndarray
    points: list
    values: np.ndarray  # shape (len(points), len(schedule))

    @property
    def median_abs(self) -> np.ndarray:
        return np.median(np.abs(self.values), axis=0)

    @property
    def mean_abs(self) -> np.ndarray:
        return np.mean(np.abs(self.values), axis=0)


def weighted_average_from_positions(
    sys: DynamicalSystem,
    p: hardy.HardyExpr,
    positions: np.ndarray,
    schedule: Sequence[int],
    sample_points: Optional[list] = None,
    precision_bits: Optional[int] = None,
    phases: Optional[np.ndarray] = None,
) -> AverageSeries:
    """(1/N) sum_{n<=N} e(p(n)) f(T^{positions[n-1]} x) for each N in schedule.

    positions are the counting-function values a_1, a_2, ...; passing a
    precomputed frac table for p (which does not depend on the seed) avoids
    re-evaluating p across realizations.
    """
    schedule = sorted(int(N) for N in schedule)
    if not schedule or schedule[0] < 1:
        raise ValueError("schedule must contain positive integers")
    n_top = schedule[-1]
    if positions.shape[0] < n_top:
        raise OutOfRangeError(
            f"need {n_top} counting-function values, realization provides "
            f"{positions.shape[0]}"
        )
    if sample_points is None:
        sample_points = sys.sample_points(16)
    if phases is None:
        phases = hardy.phase_fractions(p, n_top, precision_bits)
    elif phases.shape[0] < n_top:
        raise ValueError("phase table shorter than the schedule top")
    z = hardy.unit_phases(phases[:n_top])

    values = np.empty((len(sample_points), len(schedule)), dtype=np.complex128)
    for j, x in enumerate(sample_points):
        orbit = sys.orbit_observable(x, positions[:n_top])
        values[j] = hardy.prefix_means(z * orbit, schedule)
    return AverageSeries(np.asarray(schedule, dtype=np.int64), list(sample_points), values)


def weighted_random_average(
    sys: DynamicalSystem,
    p: hardy.HardyExpr,
    r: Realization,
    schedule: Sequence[int],
    sample_points: Optional[list] = None,
    precision_bits: Optional[int] = None,
    phases: Optional[np.ndarray] = None,
) -> AverageSeries:
    """Weighted random average over a materialized realization."""
    return weighted_average_from_positions(
        sys, p, r.ones, schedule, sample_points, precision_bits, phases
    )


def birkhoff_mean(
    sys: DynamicalSystem,
    N: int,
    sample_points: Optional[list] = None,
) -> np.ndarray:
    """Plain averages (1/N) sum_{n<=N} f(T^n x); validates known_mean."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if sample_points is None:
        sample_points = sys.sample_points(16)
    ks = np.arange(1, N + 1, dtype=np.int64)
    out = np.empty(len(sample_points), dtype=np.complex128)
    for j, x in enumerate(sample_points):
        out[j] = hardy.prefix_means(sys.orbit_observable(x, ks), [N])[0]
    return out


@dataclass(frozen=True)
class ChainDiagnostics:
    """Values and consecutive gaps of the six-stage comparison chain.

    Stages per sample point (all complex):
      0  (1/S_N) sum_{k<=S_N} e(p(k)) f(T^{a_k} x)      full average at S_N
      1  (1/S_N) sum_{n<=N} X_n e(p(S_n)) f(T^n x)       same terms, reindexed
      2  (1/W_N) sum_{n<=N} X_n e(p(S_n)) f(T^n x)       random count -> mean count
      3  (1/W_N) sum_{n<=N} sigma_n e(p(S_n)) f(T^n x)   selectors -> probabilities
      4  mean(f) * (1/W_N) sum_{n<=N} sigma_n e(p(S_n))  observable -> its mean
      5  mean(f) * (1/N) sum_{n<=N} e(p(n))              back to the plain sum
    diffs[:, i] = |stage_{i+1} - stage_i| for i < 5 and diffs[:, 5] = |stage 5|.
    Stage 0 and stage 1 enumerate identical term arrays, so diffs[:, 0] is
    exactly zero.
    """

    N: int
    s_N: int
    w_N: float
    points: list
    stages: np.ndarray  # (n_points, 6) complex
    diffs: np.ndarray  # (n_points, 6) float

    @property
    def median_diffs(self) -> np.ndarray:
        return np.median(self.diffs, axis=0)


def chain_diagnostics(
    sys: DynamicalSystem,
    p: hardy.HardyExpr,
    r: Realization,
    N: int,
    sample_points: Optional[list] = None,
    precision_bits: Optional[int] = None,
    phases: Optional[np.ndarray] = None,
) -> ChainDiagnostics:
    """Evaluate the comparison chain at one N of the lacunary schedule."""
    if N < 1 or N > r.n_max:
        raise ValueError(f"N must lie in [1, n_max={r.n_max}]")
    if sample_points is None:
        sample_points = sys.sample_points(16)
    s_N = r.S(N)
    w_N = r.W(N)
    selected = r.ones[: s_N]
    if phases is None:
        phases = hardy.phase_fractions(p, N, precision_bits)
    e_all = hardy.unit_phases(phases[:N])
    e_at_s = e_all[r.s_prefix[1 : N + 1] - 1]
    sigma = sigma_values(r.params.a, 1, N)
    km = complex(sys.known_mean)
    ks = np.arange(1, N + 1, dtype=np.int64)

    n_pts = len(sample_points)
    stages = np.empty((n_pts, 6), dtype=np.complex128)
    diffs = np.empty((n_pts, 6), dtype=np.float64)
    plain = np.sum(e_all) / N
    for j, x in enumerate(sample_points):
        orbit = sys.orbit_observable(x, ks)
        # stages 0 and 1 sum the same nonzero terms in the same order:
        # at a selected index n, S_n equals its selection rank k and a_k = n
        selected_terms = e_all[:s_N] * orbit[selected - 1]
        sum_sel = np.sum(selected_terms)
        weighted = sigma * e_at_s
        stages[j, 0] = sum_sel / s_N
        stages[j, 1] = sum_sel / s_N
        stages[j, 2] = sum_sel / w_N
        stages[j, 3] = np.sum(weighted * orbit) / w_N
        stages[j, 4] = km * np.sum(weighted) / w_N
        stages[j, 5] = km * plain
        diffs[j, :5] = np.abs(np.diff(stages[j]))
        diffs[j, 5] = abs(stages[j, 5])
    return ChainDiagnostics(N, s_N, w_N, list(sample_points), stages, diffs)


def partial_summation_identity(
    sigma_like: np.ndarray,
    a_seq: np.ndarray,
    N: int,
):
    """Both sides of the summation-by-parts identity

        (1/W_N) sum sigma_n a_n
            = (N sigma_N / W_N) A_N
              + sum_{M<N} (M (sigma_M - sigma_{M+1}) / W_N) A_M,

    with A_M the plain averages of a_seq.  The two sides are evaluated by
    independent routes; agreement to ~1e-12 relative is an exact-identity
    check, not a convergence statement.
    """
    sigma = np.asarray(sigma_like, dtype=np.float64)
    a = np.asarray(a_seq, dtype=np.complex128)
    if N < 1 or sigma.shape[0] < N or a.shape[0] < N:
        raise ValueError("sequences must cover 1..N")
    if np.any(sigma[:N] <= 0) or np.any(np.diff(sigma[:N]) > 0):
        raise ValueError("sigma_like must be positive and nonincreasing")
    w_N = math.fsum(sigma[:N])
    lhs = np.sum(sigma[:N] * a[:N]) / w_N

    averages = np.cumsum(a[:N]) / np.arange(1, N + 1)
    rhs = N * sigma[N - 1] * averages[N - 1] / w_N
    if N > 1:
        m = np.arange(1, N, dtype=np.float64)
        rhs = rhs + np.sum(m * (sigma[: N - 1] - sigma[1:N]) * averages[: N - 1]) / w_N
    return complex(lhs), complex(rhs)
