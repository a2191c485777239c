import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp

from ergolab import hardy
from ergolab.correlation import (
    WeightParams,
    WeightSeries,
    aggregate_i_terms,
    c_sum_check,
    correlation_sum,
    correlation_window,
    default_weight_params,
    i_terms_profile,
    profile_envelope,
    summability_statistic,
    vdc_inequality_check,
    weight_series,
)
from ergolab.selectors import (
    OutOfRangeError,
    SelectorParams,
    generate_realization,
    sigma_values,
)


@pytest.fixture(scope="module")
def p32():
    return hardy.parse_expression("x^(3/2)", epsilon_hint=0.5)


@pytest.fixture(scope="module")
def wparams():
    return WeightParams(a=0.3, delta=0.1, b=0.35, c_exponent=0.8, rho=2.0)


def small_series(seed, n_max, p, wp):
    r = generate_realization(SelectorParams(a=wp.a, seed=seed, n_max=n_max))
    return weight_series(r, p, wp)


def synthetic_series(c_values, wp):
    """WeightSeries wrapper around explicit weights, for closed-form cases."""
    n = len(c_values)
    r = generate_realization(SelectorParams(a=wp.a, seed=0, n_max=n))
    return WeightSeries(np.asarray(c_values, dtype=np.complex128), r, None, wp)


# ---------------------------------------------------------------------------
# Parameter validation.

def test_weight_params_ranges():
    with pytest.raises(ValueError):
        WeightParams(a=0.3, delta=0.1, b=0.3, c_exponent=0.8)  # b = a
    with pytest.raises(ValueError):
        WeightParams(a=0.3, delta=0.1, b=0.5, c_exponent=0.8)  # b = 1/2
    with pytest.raises(ValueError):
        WeightParams(a=0.3, delta=0.1, b=0.35, c_exponent=0.6)  # c = 2a
    with pytest.raises(ValueError):
        WeightParams(a=0.3, delta=0.6, b=0.35, c_exponent=0.8)
    with pytest.raises(ValueError):
        WeightParams(a=0.3, delta=0.1, b=0.35, c_exponent=0.8, rho=1.0)


def test_default_midpoints():
    wp = default_weight_params(0.3)
    assert wp.b == pytest.approx(0.4)
    assert wp.c_exponent == pytest.approx(0.8)


def test_weight_series_requires_matching_a(p32, wparams):
    r = generate_realization(SelectorParams(a=0.25, seed=1, n_max=100))
    with pytest.raises(ValueError):
        weight_series(r, p32, wparams)


# ---------------------------------------------------------------------------
# Weight sequence definition.

def test_first_weight_vanishes(p32, wparams):
    # sigma_1 = 1 and X_1 = 1, so Y_1 = 0 and c_1 = 0
    w = small_series(3, 500, p32, wparams)
    assert w.c[0] == 0.0


def test_unselected_weight_value(p32, wparams):
    # X_n = 0 forces c_n = -sigma_n e(p(S_n)) with S_n = S_{n-1}
    w = small_series(5, 400, p32, wparams)
    r = w.realization
    fr = hardy.phase_fractions(p32, int(r.s_prefix[-1]))
    phases = hardy.unit_phases(fr)
    for n in range(2, 401):
        if not r.bits[n - 1]:
            assert r.S(n) == r.S(n - 1)
            expected = -(n ** -0.3) * phases[r.S(n) - 1]
            assert abs(w.c[n - 1] - expected) < 1e-15


def test_weight_modulus_is_centered_selector(p32, wparams):
    # |c_n| = |Y_n| in {sigma_n, 1 - sigma_n}; |e(.)| = 1 to a rounding
    w = small_series(7, 1000, p32, wparams)
    y = np.abs(w.realization.y_values(1000))
    assert np.max(np.abs(np.abs(w.c) - y)) < 1e-15


def test_weight_series_against_independent_recomputation(p32, wparams):
    # oracle: rebuild each c_n from scratch with 200-bit mpmath phases
    w = small_series(11, 200, p32, wparams)
    r = w.realization
    mp.prec = 200
    for n in range(1, 201):
        s = r.S(n)
        v = mp.power(s, mp.mpf(3) / 2)
        fr = float(v - mp.floor(v))
        y = float(r.bits[n - 1]) - n ** -0.3
        oracle = y * complex(math.cos(2 * math.pi * fr), math.sin(2 * math.pi * fr))
        assert abs(w.c[n - 1] - oracle) <= 1e-12 * max(1.0, abs(oracle))


# ---------------------------------------------------------------------------
# c-sum growth check.

def test_c_sum_single_point(p32, wparams):
    w = small_series(1, 100, p32, wparams)
    assert c_sum_check(w, [1])[0] == 0.0  # c_1 = 0


def test_c_sum_all_zero(wparams):
    w = synthetic_series(np.zeros(64), wparams)
    assert np.all(c_sum_check(w, [1, 8, 64]) == 0.0)


def test_c_sum_ratio_band(p32, wparams):
    # E|Y_n| = 2 sigma_n (1 - sigma_n): direct summation oracle for the band
    n_max = 1 << 14
    sched = [1 << k for k in range(8, 15)]
    sig = sigma_values(0.3, 1, n_max)
    expected_sum = np.cumsum(2 * sig * (1 - sig))
    for seed in range(5):
        w = small_series(seed, n_max, p32, wparams)
        ratios = c_sum_check(w, sched)
        assert np.all(ratios > 0.5) and np.all(ratios < 3.0)
        spread = ratios.max() / ratios.min()
        assert spread < 4.0
        for i, N in enumerate(sched):
            oracle = expected_sum[N - 1] / N ** 0.7
            assert abs(ratios[i] - oracle) < 0.5


# ---------------------------------------------------------------------------
# Correlation sums.

def test_correlation_sum_empty_range(p32, wparams):
    w = small_series(2, 256, p32, wparams)
    N = 64
    n0 = correlation_window(N, wparams.delta)
    m_min_empty = N - n0 + 1
    assert correlation_sum(w, N, m_min_empty) == 0j
    assert correlation_sum(w, N, m_min_empty + 5) == 0j


def test_correlation_sum_counts_ones(wparams):
    # c == 1 telescopes to the plain length of the summation window
    w = synthetic_series(np.ones(64), wparams)
    N, m, delta = 32, 3, 0.2
    n0 = math.ceil(N ** (1 - delta))
    expected = N - m - n0 + 1
    assert correlation_sum(w, N, m, delta) == pytest.approx(expected)


def test_correlation_sum_brute_force(p32, wparams):
    w = small_series(9, 64, p32, wparams)
    N, m, delta = 32, 3, 0.2
    n0 = math.ceil(N ** (1 - delta))
    brute = sum(w.c[n + m - 1] * np.conj(w.c[n - 1]) for n in range(n0, N - m + 1))
    assert abs(correlation_sum(w, N, m, delta) - brute) < 1e-14


def test_correlation_sum_triangle_bound(p32, wparams):
    w = small_series(4, 512, p32, wparams)
    for N, m in ((256, 1), (512, 7), (512, 30)):
        n0 = correlation_window(N, wparams.delta)
        if n0 > N - m:
            continue
        bound = float(np.sum(np.abs(w.c[n0 + m - 1 : N]) * np.abs(w.c[n0 - 1 : N - m])))
        assert abs(correlation_sum(w, N, m)) <= bound * (1 + 1e-12)


# ---------------------------------------------------------------------------
# Summability statistic.

def test_summability_empty_schedule(p32, wparams):
    w = small_series(2, 64, p32, wparams)
    assert summability_statistic(w, []).shape == (0,)


def test_summability_zero_series(wparams):
    w = synthetic_series(np.zeros(128), wparams)
    parts = summability_statistic(w, [64, 128])
    assert np.all(parts == 0.0)


def test_summability_partials_nondecreasing(p32, wparams):
    w = small_series(6, 1 << 12, p32, wparams)
    parts = summability_statistic(w, [1 << k for k in range(6, 13)])
    assert np.all(np.diff(parts) >= 0.0)


# ---------------------------------------------------------------------------
# van der Corput inequality.

def test_vdc_single_vector():
    v = np.array([[1.0 + 2.0j]])
    lhs, rhs = vdc_inequality_check(v, 1)
    assert lhs == pytest.approx(5.0)
    assert rhs == pytest.approx(10.0)  # empty correlation part


def test_vdc_zero_vectors():
    lhs, rhs = vdc_inequality_check(np.zeros((5, 3), dtype=complex), 2)
    assert lhs == 0.0 and rhs == 0.0


def test_vdc_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(300):
        N = int(rng.integers(1, 65))
        d = int(rng.integers(1, 9))
        M = int(rng.integers(1, N + 1))
        V = rng.normal(size=(N, d)) + 1j * rng.normal(size=(N, d))
        lhs, rhs = vdc_inequality_check(V, M)
        assert lhs <= rhs * (1 + 1e-9)


@given(st.integers(1, 24), st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=80, deadline=None)
def test_vdc_inequality_property(N, d, seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(N, d)) + 1j * rng.normal(size=(N, d))
    for M in (1, max(1, N // 2), N):
        lhs, rhs = vdc_inequality_check(V, M)
        assert lhs <= rhs * (1 + 1e-9)


def test_vdc_rejects_bad_M():
    V = np.ones((4, 2), dtype=complex)
    with pytest.raises(ValueError):
        vdc_inequality_check(V, 0)
    with pytest.raises(ValueError):
        vdc_inequality_check(V, 5)


# ---------------------------------------------------------------------------
# Three-term profile.

def test_i_terms_empty_window(p32, wparams):
    # m large enough empties every inner range
    w = small_series(3, 4096, p32, wparams)
    N = 64
    prof = i_terms_profile(w, N, m=50)
    assert prof.i1_sq == prof.i2_sq == prof.i3_sq == 0.0


def test_i_terms_requires_length(p32, wparams):
    w = small_series(3, 128, p32, wparams)
    with pytest.raises(OutOfRangeError):
        i_terms_profile(w, 128, 1)


def test_i1_brute_force_exact(p32, wparams):
    # phases cancel in the squared moduli: I1^2 = ((N-m)/R) sum |Y_n Y_{n+m}|^2
    w = small_series(8, 2048, p32, wparams)
    N, m = 64, 2
    prof = i_terms_profile(w, N, m)
    y = w.realization.y_values(w.n_max)
    brute = (N - m) / prof.R * sum(
        (y[n - 1] * y[n + m - 1]) ** 2 for n in range(prof.n0, N - m + 1)
    )
    assert abs(prof.i1_sq - brute) < 1e-12 * max(1.0, brute)


def test_i_terms_brute_force_all_three(p32, wparams):
    w = small_series(15, 2048, p32, wparams)
    N, m = 64, 3
    prof = i_terms_profile(w, N, m)
    c = w.c
    n0, R = prof.n0, prof.R

    def lag_sum(r):
        tot = 0j
        for n in range(n0, N - m - r + 1):
            g_n = c[n - 1] * np.conj(c[n + m - 1])
            g_nr = c[n + r - 1] * np.conj(c[n + r + m - 1])
            tot += g_n * np.conj(g_nr)
        return tot

    fac = (N - m) / R
    i2 = fac * abs(lag_sum(m))
    i3 = fac * math.fsum(abs(lag_sum(r)) for r in range(1, R + 1) if r != m)
    assert abs(prof.i2_sq - i2) < 1e-12 * max(1.0, i2)
    assert abs(prof.i3_sq - i3) < 1e-12 * max(1.0, i3)


def test_i_terms_envelope_ensemble(p32, wparams):
    # seed-ensemble estimates (expectation inside the modulus, as in the
    # bound being verified) stay under the envelope N^(2-4a) at kappa = 0;
    # two disjoint 10-seed families must agree on that verdict
    N, n_seeds = 1 << 12, 10
    m_top = int(N ** wparams.b)
    n_need = N + m_top + int(N ** wparams.c_exponent) + 1
    env = profile_envelope(N, wparams.a)

    def family_ratio(base):
        per_m = []
        profiles = {
            seed: small_series(seed, n_need, p32, wparams) for seed in range(base, base + n_seeds)
        }
        for m in range(1, m_top + 1):
            profs = [i_terms_profile(profiles[s], N, m) for s in profiles]
            i1, i2, i3 = aggregate_i_terms(profs)
            per_m.append((i1 + i2 + i3) / env)
        return max(per_m)

    ra = family_ratio(100)
    rb = family_ratio(500)
    assert ra < 1.0 and rb < 1.0
    assert 0.5 < ra / rb < 2.0


def test_independence_recovery_mean_zero():
    # with the phases stripped (p == 0 analogue), the four-fold product over
    # distinct indices has exact expectation zero; the empirical mean over
    # 1000 seeds stays within 3 standard errors of it
    N, m, r_lag = 256, 3, 5
    n0 = 16
    totals = []
    for seed in range(1000):
        real = generate_realization(SelectorParams(a=0.3, seed=seed, n_max=N + m + r_lag + 1))
        y = real.y_values(real.n_max)
        n = np.arange(n0, N + 1)
        totals.append(
            float(np.sum(y[n - 1] * y[n + m - 1] * y[n + r_lag - 1] * y[n + r_lag + m - 1]))
        )
    totals = np.asarray(totals)
    se = totals.std(ddof=1) / math.sqrt(len(totals))
    assert abs(totals.mean()) <= 3 * se


def test_aggregate_requires_matching_windows(p32, wparams):
    w = small_series(3, 4096, p32, wparams)
    p1 = i_terms_profile(w, 64, 2)
    p2 = i_terms_profile(w, 64, 3)
    with pytest.raises(ValueError):
        aggregate_i_terms([p1, p2])
    with pytest.raises(ValueError):
        aggregate_i_terms([])
