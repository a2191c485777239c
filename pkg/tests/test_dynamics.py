import math

import numpy as np
import pytest

from ergolab import hardy, selectors
from ergolab.dynamics import (
    BernoulliSystem,
    CyclicSystem,
    RotationSystem,
    birkhoff_mean,
    chain_diagnostics,
    make_system,
    partial_summation_identity,
    weighted_average_from_positions,
    weighted_random_average,
)
from ergolab.selectors import OutOfRangeError, SelectorParams, generate_realization, realization_from_bits


@pytest.fixture(scope="module")
def p32():
    return hardy.parse_expression("x^(3/2)", epsilon_hint=0.5)


# ---------------------------------------------------------------------------
# Systems: measure preservation and boundedness.

def test_rotation_preserves_uniform_measure():
    # push forward 1e4 uniform states; bin counts stay within 5 sigma of flat
    sys = RotationSystem("sqrt2m1", "e")
    states = np.array(sys.random_states(31, 10**4))
    images = np.array([sys.iterate(x) for x in states])
    counts, _ = np.histogram(images, bins=20, range=(0.0, 1.0))
    sigma = math.sqrt(10**4 * 0.05 * 0.95)
    assert np.all(np.abs(counts - 500) < 5 * sigma)
    assert np.all((images >= 0) & (images < 1))


def test_cyclic_shift_is_measure_preserving_bijection():
    sys = CyclicSystem(7, "roots")
    states = sys.random_states(5, 10**4)
    images = [sys.iterate(x) for x in states]
    # T permutes residues, so multiset counts are exactly preserved
    assert sorted(np.bincount(states, minlength=7)) == sorted(
        np.bincount(images, minlength=7)
    )


def test_bernoulli_shift_stationarity():
    # observable mean over fresh states vs over shifted states: both near 0
    sys = BernoulliSystem(2, 6)
    states = sys.random_states(11, 400)
    v0 = np.mean([sys.observe(x) for x in states])
    v1 = np.mean([sys.observe(sys.iterate(x)) for x in states])
    assert abs(v0) < 0.1 and abs(v1) < 0.1


def test_observable_modulus_bounded():
    for sys in (
        RotationSystem("sqrt2m1", "e"),
        RotationSystem("invphi", "e_shifted"),
        RotationSystem("sqrt3m1", "coboundary"),
        CyclicSystem(5, "indicator0"),
        BernoulliSystem(3, 4),
    ):
        for x in sys.sample_points(8):
            vals = sys.orbit_observable(x, np.arange(0, 50, dtype=np.int64))
            assert np.all(np.abs(vals) <= 1.0 + 1e-12)


def test_unbounded_observable_rejected():
    table = np.array([1.5, 0.0, 0.0], dtype=complex)
    with pytest.raises(ValueError):
        CyclicSystem(3, table)


def test_make_system_factory():
    assert make_system("rotation", alpha="invphi").kind == "rotation"
    assert make_system("cyclic", q=9).q == 9
    assert make_system("bernoulli", alphabet=4, window=3).alphabet == 4
    with pytest.raises(ValueError):
        make_system("doubling")


def test_rotation_orbit_matches_exact_integers():
    sys = RotationSystem("sqrt2m1", "e")
    ks = np.array([1, 2, 10**6, 10**9, 5], dtype=np.int64)
    fast = sys._orbit_fracs(0.73, ks)
    exact = sys._orbit_fracs_exact(0.73, ks)
    assert np.max(np.abs(fast - exact)) < 1e-15


# ---------------------------------------------------------------------------
# Birkhoff means.

def test_birkhoff_constant_observable():
    sys = RotationSystem("sqrt2m1", "const")
    for N in (1, 5, 1000):
        vals = birkhoff_mean(sys, N, sys.sample_points(4))
        assert np.allclose(vals, 1.0, atol=0)


def test_birkhoff_rotation_equidistribution():
    # geometric-series oracle: |sum e(n alpha)| <= 1 / (2 dist(alpha, Z)),
    # so the mean is below 1/(N * 2 * dist) ~ 1.2e-6 at N = 1e6; assert 1e-4
    sys = RotationSystem("sqrt2m1", "e")
    vals = birkhoff_mean(sys, 10**6, sys.sample_points(4))
    assert np.max(np.abs(vals)) < 1e-4


def test_birkhoff_cyclic_exact_orbit_average():
    # full orbits of the centered indicator cancel exactly
    sys = CyclicSystem(5, "indicator0")
    vals = birkhoff_mean(sys, 1000, sys.sample_points(5))
    assert np.max(np.abs(vals)) < 1e-15


# ---------------------------------------------------------------------------
# Weighted random averages.

def test_constant_observable_factorizes_bit_for_bit(p32):
    # with f == 1 the weights factor out: equality with exp_sum is exact
    # because both sides reduce the same term array with the same tree
    sys = RotationSystem("sqrt2m1", "const")
    r = generate_realization(SelectorParams(a=0.3, seed=7, n_max=200000))
    schedule = [64, 512, 4096]
    series = weighted_random_average(sys, p32, r, schedule, sample_points=[0.5])
    for i, N in enumerate(schedule):
        assert series.values[0, i] == hardy.exp_sum(p32, N)


def test_exact_cancellation_synthetic():
    # p = 0, all-ones counting (a_n = n), two-point shift with f = (+1, -1):
    # even prefixes cancel exactly
    zero = hardy.parse_expression("0")
    params = SelectorParams(a=0.3, seed=0, n_max=64)
    r = realization_from_bits(params, np.ones(64, dtype=bool))
    sys = CyclicSystem(2, np.array([1.0, -1.0], dtype=complex))
    series = weighted_random_average(sys, zero, r, [2, 10, 64], sample_points=[0])
    assert np.all(series.values == 0.0)


def test_weighted_average_magnitude_bound(p32):
    # triangle inequality: |average| <= (1/N) sum |weights| = 1
    sys = RotationSystem("sqrt2m1", "e")
    r = generate_realization(SelectorParams(a=0.3, seed=3, n_max=50000))
    series = weighted_random_average(sys, p32, r, [16, 256], sample_points=sys.sample_points(6))
    assert np.all(np.abs(series.values) <= 1.0 + 1e-12)


def test_insufficient_realization_signalled(p32):
    sys = RotationSystem("sqrt2m1", "e")
    r = generate_realization(SelectorParams(a=0.3, seed=3, n_max=100))
    with pytest.raises(OutOfRangeError):
        weighted_random_average(sys, p32, r, [1000])


def test_positions_entry_matches_realization_entry(p32):
    sys = RotationSystem("sqrt2m1", "e")
    r = generate_realization(SelectorParams(a=0.3, seed=21, n_max=100000))
    pts = sys.sample_points(3)
    a1 = weighted_random_average(sys, p32, r, [128, 1024], sample_points=pts)
    pos = selectors.select_first(0.3, 21, 1024)
    a2 = weighted_average_from_positions(sys, p32, pos, [128, 1024], sample_points=pts)
    assert np.array_equal(a1.values, a2.values)


# ---------------------------------------------------------------------------
# Chain diagnostics.

def test_chain_first_step_identity_exact(p32):
    # reindexing k = S_n makes stages 0 and 1 the same sum over the same
    # float terms: the gap is exactly zero, not merely small
    sys = RotationSystem("sqrt2m1", "e_shifted")
    r = generate_realization(SelectorParams(a=0.3, seed=13, n_max=4096))
    diag = chain_diagnostics(sys, p32, r, 4096, sample_points=sys.sample_points(5))
    assert np.all(diag.diffs[:, 0] == 0.0)


def test_chain_first_step_identity_against_masked_sum(p32):
    # independent route: the masked full-length sum over all n <= N
    sys = RotationSystem("sqrt2m1", "e_shifted")
    r = generate_realization(SelectorParams(a=0.3, seed=13, n_max=2048))
    N = 2048
    s_N = r.S(N)
    fr = hardy.phase_fractions(p32, N)
    e_all = hardy.unit_phases(fr)
    x = 0.375
    orbit = sys.orbit_observable(x, np.arange(1, N + 1, dtype=np.int64))
    masked = np.sum(r.bits[:N] * e_all[r.s_prefix[1:N+1] - 1] * orbit) / s_N
    diag = chain_diagnostics(sys, p32, r, N, sample_points=[x])
    assert abs(diag.stages[0, 1] - masked) < 1e-12


def test_chain_renormalization_bound(p32):
    # |stage2 - stage1| = |S_N/W_N - 1| * |stage1| exactly (same inner sum,
    # two normalizers); check the algebra within float tolerance
    sys = RotationSystem("sqrt2m1", "e_shifted")
    r = generate_realization(SelectorParams(a=0.3, seed=29, n_max=8192))
    diag = chain_diagnostics(sys, p32, r, 8192, sample_points=sys.sample_points(4))
    bound = abs(r.S(8192) / r.W(8192) - 1.0) * np.abs(diag.stages[:, 1])
    assert np.all(diag.diffs[:, 1] <= bound * (1 + 1e-9) + 1e-15)


def test_chain_shapes_and_median(p32):
    sys = RotationSystem("sqrt2m1", "e_shifted")
    r = generate_realization(SelectorParams(a=0.3, seed=1, n_max=1024))
    diag = chain_diagnostics(sys, p32, r, 1024, sample_points=sys.sample_points(6))
    assert diag.stages.shape == (6, 6)
    assert diag.diffs.shape == (6, 6)
    assert diag.median_diffs.shape == (6,)
    assert diag.s_N == r.S(1024)


def test_chain_late_steps_decay_along_schedule(p32):
    """Median gaps for the selector->probability, observable->mean, and
    trig-sum stages all shrink from N = 2^12 to N = 2^17; two disjoint
    seed families return the same verdict (shifted observable keeps the
    mean-dependent stages away from zero)."""
    sys = RotationSystem("sqrt2m1", "e_shifted")
    pts = sys.sample_points(4)
    n_lo, n_hi = 1 << 12, 1 << 17
    phases = hardy.phase_fractions(p32, n_hi)

    def family_medians(base):
        lo_all, hi_all = [], []
        for seed in range(base, base + 10):
            r = generate_realization(SelectorParams(a=0.3, seed=seed, n_max=n_hi))
            lo = chain_diagnostics(sys, p32, r, n_lo, sample_points=pts, phases=phases)
            hi = chain_diagnostics(sys, p32, r, n_hi, sample_points=pts, phases=phases)
            lo_all.append(lo.diffs)
            hi_all.append(hi.diffs)
        return np.median(lo_all, axis=0), np.median(hi_all, axis=0)

    verdicts = []
    for base in (400, 900):
        lo_med, hi_med = family_medians(base)
        # steps 3..6 (indices 2..5): medians decrease at every sample point
        verdicts.append(bool(np.all(hi_med[:, 2:] < lo_med[:, 2:])))
    assert verdicts[0] and verdicts[1]


# ---------------------------------------------------------------------------
# Partial summation identity.

def test_partial_summation_constant_sequence():
    sig = selectors.sigma_values(0.3, 1, 100)
    lhs, rhs = partial_summation_identity(sig, np.ones(100, dtype=complex), 100)
    assert abs(lhs - 1.0) < 1e-14
    assert abs(rhs - 1.0) < 1e-12


def test_partial_summation_single_term():
    sig = np.array([1.0])  # sigma_1 = 1 keeps the float algebra exact
    a = np.array([0.3 - 0.4j])
    lhs, rhs = partial_summation_identity(sig, a, 1)
    assert lhs == rhs == complex(a[0])


def test_partial_summation_random_instances():
    # exact algebraic identity: both routes agree to 1e-10 relative
    rng = np.random.default_rng(7)
    for trial in range(100):
        N = int(rng.integers(2, 2000))
        a = rng.uniform(-1, 1, N) + 1j * rng.uniform(-1, 1, N)
        sig = selectors.sigma_values(rng.uniform(0.05, 0.95), 1, N)
        lhs, rhs = partial_summation_identity(sig, a, N)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-30)


def test_partial_summation_rejects_bad_sigma():
    with pytest.raises(ValueError):
        partial_summation_identity(np.array([1.0, 2.0]), np.ones(2, dtype=complex), 2)
    with pytest.raises(ValueError):
        partial_summation_identity(np.array([1.0, -0.5]), np.ones(2, dtype=complex), 2)


# ---------------------------------------------------------------------------
# Unweighted-transfer surrogate: coboundary observables telescope.

def test_coboundary_average_bounded_by_selection_density():
    # for f = h - h(T .) and any bounded G, summation by parts bounds
    # |(1/N) sum G(S_n) f(T^n x)| by 2 sup|G| sup|h| (S_N + 1) / N
    sys = RotationSystem("sqrt2m1", "coboundary")
    sup_h = 0.5  # h = e(.)/2
    r = generate_realization(SelectorParams(a=0.3, seed=17, n_max=1 << 14))
    g_of_s = np.cos(r.s_prefix[1:].astype(np.float64))  # bounded by 1
    ks = np.arange(1, (1 << 14) + 1, dtype=np.int64)
    for x in sys.sample_points(4):
        f_orbit = sys.orbit_observable(x, ks)
        for N in (1 << 8, 1 << 11, 1 << 14):
            avg = np.sum(g_of_s[:N] * f_orbit[:N]) / N
            bound = 2.0 * 1.0 * sup_h * (r.S(N) + 1) / N
            assert abs(avg) <= bound * (1 + 1e-9)
