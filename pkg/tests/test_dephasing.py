import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kickecho.dephasing import (
    SemiclassicalSeries,
    avg_scaled_error,
    d_factor,
    detect_revivals,
    msc_direct,
    msc_first_order_series,
    msc_second_order_series,
)
from kickecho.ensembles import ActionDistribution, Ensemble, WavePacketSpec, evolve_actions, sample_wavepacket
from kickecho.errors import ArgumentError, NumericalError
from kickecho.maps import MapParams, TWO_PI
from kickecho.qdyn import EchoSeries

HBAR = TWO_PI / 4096


@pytest.fixture(scope="module")
def packet():
    spec = WavePacketSpec.from_k(2.2, 3.0, HBAR)
    return sample_wavepacket(spec, 4000, seed=21)


def test_direct_zero_sigma():
    assert msc_direct(ActionDistribution(3, [0.1, 5.0, -2.0]), 0.0) == 1.0


def test_direct_perfect_dephasing():
    sigma = 0.7
    assert msc_direct(ActionDistribution(3, [0.0, math.pi / sigma]), sigma) == pytest.approx(0.0, abs=1e-30)


def test_direct_permutation_and_split_invariance():
    rng = np.random.default_rng(2)
    s = rng.normal(0, 30, 500)
    w = rng.uniform(0, 1, 500)
    base = msc_direct(ActionDistribution(1, s, w), 0.37)
    perm = rng.permutation(500)
    assert msc_direct(ActionDistribution(1, s[perm], w[perm]), 0.37) == pytest.approx(base, abs=1e-14)
    doubled = ActionDistribution(1, np.concatenate([s, s]), np.concatenate([w, w]) / 2)
    assert msc_direct(doubled, 0.37) == pytest.approx(base, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=1, max_size=50), st.floats(0, 10))
def test_direct_modulus_bound(s, sigma):
    assert 0.0 <= msc_direct(ActionDistribution(1, s), sigma) <= 1.0 + 1e-12


def test_first_order_single_trajectory():
    series = msc_first_order_series(Ensemble.single(2.2, 3.0), MapParams(3.0, "B"), 2.0, 50)
    assert np.allclose(series.values, 1.0, atol=1e-15)


def test_first_order_matches_direct(packet):
    params = MapParams(3.0, "B")
    series = msc_first_order_series(packet, params, 0.3, 40)
    dists = evolve_actions(packet, params, [0, 7, 40])
    for d in dists[1:]:
        assert series.values[d.time] == msc_direct(d, 0.3)


def test_first_order_large_sigma_stays_nonnegative(packet):
    series = msc_first_order_series(packet, MapParams(3.0, "B"), 50.0, 200)
    assert np.all(series.values >= 0) and np.all(series.values <= 1 + 1e-12)
    assert series.values[0] == 1.0


def test_first_order_is_deterministic(packet):
    a = msc_first_order_series(packet, MapParams(3.0, "B"), 0.2, 100)
    b = msc_first_order_series(packet, MapParams(3.0, "B"), 0.2, 100)
    assert np.array_equal(a.values, b.values)


def test_d_factor_limits():
    assert d_factor(MapParams(3.0, "B"), 2.2, 3.0, 10, math.inf).D == 1.0
    assert d_factor(MapParams(3.0, "B"), 2.2, 3.0, 10, 1e12).D == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("t,k", [(1, 1.0), (10, 1.0), (10, 0.25)])
def test_d_factor_free_rotation(t, k):
    # K = 0: S(r, r0; t) = (r - r0)^2 / (2t), so the initial momentum at fixed
    # final angle moves by -1/t per unit of r0
    got = d_factor(MapParams(0.0, "B"), 2.2, 3.0, t, k)
    assert got.dps_dr0 == pytest.approx(-1.0 / t, rel=1e-12)
    assert got.D == pytest.approx(math.sqrt(1 + 1 / (k * t) ** 2), rel=1e-12)


def test_d_factor_argument_errors():
    with pytest.raises(ArgumentError):
        d_factor(MapParams(3.0, "B"), 2.2, 3.0, 0, 1.0)
    with pytest.raises(ArgumentError):
        d_factor(MapParams(3.0, "B"), 2.2, 3.0, 5, 0.0)
    with pytest.raises(ArgumentError):
        d_factor(MapParams(3.0, "B"), 2.2, 3.0, 5, 1.0, method="bogus")


def _flow_mp(K, r, p, t):
    for _ in range(t):
        p = p + K * mp.sin(r)
        r = r + p
    return r


def _ratio_oracle(K, r0, p0, t):
    # 80-digit central differences of the unwrapped flow: immune to the
    # exponential error growth that limits double precision
    with mp.workdps(80):
        K, r0, p0 = mp.mpf(K), mp.mpf(r0), mp.mpf(p0)
        h = mp.mpf("1e-45")
        dr = (_flow_mp(K, r0 + h, p0, t) - _flow_mp(K, r0 - h, p0, t)) / (2 * h)
        dp = (_flow_mp(K, r0, p0 + h, t) - _flow_mp(K, r0, p0 - h, t)) / (2 * h)
        return float(-dr / dp)


@pytest.mark.parametrize("r0,p0", [(2.2, 3.0), (1.0, 4.0), (5.0, 0.7)])
def test_d_factor_high_precision_oracle(r0, p0):
    ratio = _ratio_oracle(3.0, r0, p0, 50)
    got = d_factor(MapParams(3.0, "B"), r0, p0, 50, 1.0)
    assert got.D == pytest.approx(math.sqrt(1 + ratio**2), rel=0.01)
    assert got.dps_dr0 == pytest.approx(ratio, rel=1e-6)


def test_d_factor_finite_difference_short_times():
    for t in (1, 3, 6):
        fd = d_factor(MapParams(3.0, "B"), 2.2, 3.0, t, 1.0, method="fd")
        tan = d_factor(MapParams(3.0, "B"), 2.2, 3.0, t, 1.0)
        assert fd.D == pytest.approx(tan.D, rel=1e-6)


def test_d_factor_finite_difference_refuses_long_chaotic_times():
    with pytest.raises(NumericalError):
        d_factor(MapParams(7.0, "B"), 2.2, 3.0, 50, 1.0, method="fd")


def test_second_order_reduces_to_first_for_wide_k(packet):
    params = MapParams(3.0, "B")
    for sigma in (0.01, 0.1, 1.0):
        a = msc_first_order_series(packet, params, sigma, 100)
        b = msc_second_order_series(packet, params, sigma, 100, k=50)
        assert np.max(np.abs(a.values - b.values)) < 1e-3


def test_second_order_trivial_cases(packet):
    params = MapParams(3.0, "B")
    assert np.all(msc_second_order_series(packet, params, 0.0, 30).values == 1.0)
    single = Ensemble(np.array([2.2]), np.array([3.0]), np.ones(1), spec=packet.spec)
    assert np.allclose(msc_second_order_series(single, params, 1.0, 30).values, 1.0, atol=1e-15)


def test_second_order_needs_packet():
    with pytest.raises(ArgumentError):
        msc_second_order_series(Ensemble.single(1.0, 1.0), MapParams(1.0, "B"), 0.1, 5)


def _pair(q, sc, sigma=0.2):
    t = np.arange(len(q))
    return EchoSeries(sigma, t, np.asarray(q, float)), SemiclassicalSeries(sigma, t, np.asarray(sc, float), "first")


def test_scaled_error_identity_and_offset():
    q = np.linspace(1.0, 0.001, 200)
    assert avg_scaled_error(*_pair(q, q)) == 0.0
    e = avg_scaled_error(*_pair(q, q + 0.003))
    assert e == pytest.approx(0.003 / 0.2, rel=1e-12)


def test_scaled_error_only_counts_above_floor():
    q = np.array([1.0, 0.5, 0.005, 0.001])
    sc = np.array([1.0, 0.6, 0.9, 0.9])
    assert avg_scaled_error(*_pair(q, sc)) == pytest.approx(0.1 / 0.2 / 2)


def test_scaled_error_errors():
    with pytest.raises(ArgumentError):
        avg_scaled_error(*_pair([0.001, 0.002], [0.0, 0.0]))
    q, sc = _pair([1.0, 0.5], [1.0, 0.5])
    with pytest.raises(ArgumentError):
        avg_scaled_error(q, SemiclassicalSeries(0.2, np.arange(3), np.ones(3), "first"))


def test_revivals_are_reported():
    s = SemiclassicalSeries(5.0, np.arange(6), np.array([1.0, 0.2, 0.01, 0.3, 0.02, 0.01]), "first")
    assert detect_revivals(s).tolist() == [3]
    flat = SemiclassicalSeries(5.0, np.arange(3), np.array([1.0, 0.5, 0.4]), "first")
    assert detect_revivals(flat).size == 0
