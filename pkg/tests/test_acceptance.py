"""End-to-end acceptance checks, one test per numbered criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers before asserting, so ``pytest -s`` is not needed to read the summary.
"""

import math
import zlib

import numpy as np
import pytest
from scipy import integrate, stats

import oracles
from kickecho.decayfit import (
    characteristic_times,
    critical_sigma_chaos,
    critical_sigma_chaos_vs_stable,
    critical_sigma_stable,
    decay_time_tau,
    exponential_rate,
    fit_decay_law,
    fit_gamma,
    fit_nu,
    local_alpha,
)
from kickecho.dephasing import msc_first_order_series
from kickecho.ensembles import WavePacketSpec, evolve_actions, initial_ps_analytic, sample_wavepacket
from kickecho.levy import (
    LevyParams,
    ModelFitExp,
    ModelFitLin,
    critical_eta_exp,
    critical_eta_lin,
    eta_star_sensitivity,
    fit_eta_dl,
    levy_pdf,
    spectrum,
)
from kickecho.maps import MapParams, TWO_PI, lyapunov_spectrum, sticking_time
from kickecho.qdyn import (
    EchoSeries,
    QuantumState,
    TorusGrid,
    coherent_state,
    echo_series,
    evolve,
    floquet_matrix,
    saturation_estimate,
)

N_DESK = 4096


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return emit


def test_criterion_01_unitarity(report):
    st = coherent_state(TorusGrid(N_DESK), 2.2, 3.0)
    norms = []
    zero, pert = echo_series(st, 3.0, [0.0, 0.5], 10_000, norm_log=norms)
    drift = max(abs(n - 1.0) for n in norms)
    lo, hi = pert.values.min(), pert.values.max()
    flat = np.max(np.abs(zero.values - 1.0))
    ok = drift < 1e-10 and lo >= 0 and hi <= 1 + 1e-12 and flat < 1e-12
    report(1, ok, f"norm drift {drift:.2e}, M in [{lo:.3e}, {hi:.15f}], |M(sigma=0) - 1| {flat:.2e}")
    assert ok


def test_criterion_02_dense_matrix(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for N in (8, 16, 32):
        g = TorusGrid(N)
        for _ in range(5):
            K = rng.uniform(0.5, 10.0)
            psi = rng.normal(size=N) + 1j * rng.normal(size=N)
            st = QuantumState(psi / np.linalg.norm(psi), g)
            ref = np.linalg.matrix_power(floquet_matrix(g, K), 10) @ st.amplitudes
            worst = max(worst, np.max(np.abs(evolve(st, K, 10).amplitudes - ref)))
    report(2, worst < 1e-11, f"max |split-operator - matrix power| {worst:.2e}")
    assert worst < 1e-11


def test_criterion_03_fgr_rate(report):
    sigmas = [0.2, 0.3, 0.4]
    series = echo_series(coherent_state(TorusGrid(N_DESK), 2.2, 3.0), 7.0, sigmas, 600)
    rates = [exponential_rate(s) for s in series]
    ratios = [r / (2.2 * s**2) for r, s in zip(rates, sigmas)]
    gamma = fit_gamma(sigmas, [decay_time_tau(s) for s in series]).gamma
    rate_ok = all(abs(q - 1) <= 0.3 for q in ratios)
    gamma_ok = abs(gamma - 2) <= 0.2
    report(3, rate_ok and gamma_ok,
           "rate / 2.2 sigma^2 = " + ", ".join(f"{q:.3f}" for q in ratios) + f"; gamma {gamma:.3f}")
    assert rate_ok
    assert gamma_ok


def test_criterion_04_short_time_nu(report):
    sigmas = [0.01, 0.02, 0.03]
    nus = []
    for p in (1.5, 3.0, 4.5):
        series = echo_series(coherent_state(TorusGrid(N_DESK), 2.2, p), 3.0, sigmas, 10)
        nus.append(fit_nu(sigmas, [s.values[10] for s in series], mode="Num1").nu)
    ok = all(abs(v - 2) <= 0.05 for v in nus)
    report(4, ok, "nu at p = 1.5, 3.0, 4.5: " + ", ".join(f"{v:.4f}" for v in nus))
    assert ok


def test_criterion_05_island_gaussian_decay(report):
    x0 = (math.pi, 0.3)
    params = MapParams(3.0, "B")
    stuck = not sticking_time(params, x0, max_steps=100_000).escaped
    lam = lyapunov_spectrum(params, x0, 2000)[0]
    s = echo_series(coherent_state(TorusGrid(N_DESK), *x0), 3.0, [0.1], 4000)[0]
    sat = saturation_estimate(s, tail=1000)
    tr = local_alpha(s, step=50)
    before = [a for a, t in zip(tr.alpha, tr.times) if s.values[t] > max(10 * sat, 1e-3)]
    mean = float(np.mean(before)) if before else math.nan
    ok = stuck and abs(lam) < 1e-2 and len(before) >= 5 and 1.7 <= mean <= 2.3
    report(5, ok, f"island {'held' if stuck else 'escaped'}, lambda1 {lam:.2e}, "
                  f"{len(before)} windows, mean alpha {mean:.3f}")
    assert ok


def _analytic_cdf(spec):
    s = math.cos(spec.r0)
    half = 12 * spec.xi * math.sqrt(1 - s * s)
    grid = np.linspace(max(-1 + 1e-9, s - half), min(1 - 1e-9, s + half), 20001)
    cdf = integrate.cumulative_trapezoid(initial_ps_analytic(spec, grid), grid, initial=0.0)
    return grid, cdf / cdf[-1]


def test_criterion_06_initial_distribution(report):
    spec = WavePacketSpec.from_k(2.2, 3.0, TWO_PI / N_DESK)
    (d,) = evolve_actions(sample_wavepacket(spec, 100_000, seed=6), MapParams(1.5, "B"), [1])
    grid, cdf = _analytic_cdf(spec)
    x = np.sort(d.samples)
    emp = np.arange(1, x.size + 1) / x.size
    model = np.interp(x, grid, cdf)
    ks = max(np.max(emp - model), np.max(model - (emp - 1 / x.size)))
    eta = fit_eta_dl(spectrum(d)).eta
    ok = ks < 0.02 and abs(eta - 2) <= 0.05
    report(6, ok, f"KS {ks:.4f}, spectrum slope {eta:.4f}")
    assert ok


def _mass(params, half=50.0, n=2001):
    u = np.linspace(-math.asinh(half), math.asinh(half), n)
    inside = integrate.simpson(levy_pdf(np.sinh(u), params) * np.cosh(u), x=u)
    # tails beyond the window from scipy's S1 cdf
    return inside + stats.levy_stable.cdf(-half, params.eta, params.beta) + \
        stats.levy_stable.sf(half, params.eta, params.beta)


def test_criterion_07_levy_reductions(report):
    gauss = cauchy = 0.0
    for dl in (0.3, 1.0, 2.5):
        x = np.linspace(-10 * math.sqrt(dl), 10 * math.sqrt(dl), 801)
        g_ref = np.exp(-x * x / (4 * dl)) / math.sqrt(4 * math.pi * dl)
        c_ref = dl / (math.pi * (x * x + dl * dl))
        gauss = max(gauss, np.max(np.abs(levy_pdf(x, LevyParams(2.0, dl=dl)) - g_ref)))
        cauchy = max(cauchy, np.max(np.abs(levy_pdf(x, LevyParams(1.0, dl=dl)) - c_ref)))
    masses = [_mass(LevyParams(e, b)) for e in (0.8, 1.5) for b in (0.0, 0.3)]
    worst = max(abs(m - 1) for m in masses)
    ok = gauss < 1e-6 and cauchy < 1e-6 and worst < 1e-3
    report(7, ok, f"Gaussian err {gauss:.1e}, Cauchy err {cauchy:.1e}, |mass - 1| <= {worst:.1e}")
    assert ok


def test_criterion_08_monotonicity_tables(report):
    mismatches = uncovered = located = 0
    for signs, side in oracles.EXP_CASES:
        rng = np.random.default_rng(zlib.crc32(repr((signs, side)).encode()))
        for _ in range(1000):
            a, b, c, sigma = oracles.draw_exp(rng, signs, side)
            fit = ModelFitExp(a, b, c)
            table = oracles.exp_table(a, b, c, sigma)
            regime, turn = oracles.scan(oracles.exp_f(a, b, c, sigma))
            ranged = critical_eta_exp(fit, sigma, eta_range=(0.0, 10.0))
            if table is None:
                uncovered += 1
            elif table != critical_eta_exp(fit, sigma).regime:
                mismatches += 1
            if ranged.regime != regime or (turn is None) != (ranged.eta_star is None):
                mismatches += 1
            elif turn is not None:
                located += 1
                mismatches += abs(turn - ranged.eta_star) > oracles.GRID_STEP
    for signs, side in oracles.LIN_CASES:
        rng = np.random.default_rng(zlib.crc32(repr((signs, side)).encode()))
        for _ in range(1000):
            a, b, sigma = oracles.draw_lin(rng, signs, side)
            fit = ModelFitLin(a, b)
            regime, turn = oracles.scan(oracles.lin_f(a, b, sigma))
            ranged = critical_eta_lin(fit, sigma, eta_range=(0.0, 10.0))
            mismatches += critical_eta_lin(fit, sigma).regime != oracles.lin_table(a, b, sigma)
            if ranged.regime != regime or (turn is None) != (ranged.eta_star is None):
                mismatches += 1
            elif turn is not None:
                located += 1
                mismatches += abs(turn - ranged.eta_star) > oracles.GRID_STEP

    rng = np.random.default_rng(808)
    worst, checked = 0.0, 0
    for signs, side in oracles.EXP_CASES:
        for _ in range(100):
            a, b, c, sigma = oracles.draw_exp(rng, signs, side)
            fit = ModelFitExp(a, b, c)
            h = 1e-6
            lo = critical_eta_exp(fit, sigma - h).eta_star
            hi = critical_eta_exp(fit, sigma + h).eta_star
            if critical_eta_exp(fit, sigma).eta_star is None or lo is None or hi is None:
                continue
            fd = (hi - lo) / (2 * h)
            worst = max(worst, abs(eta_star_sensitivity(fit, sigma) / fd - 1))
            checked += 1
    ok = mismatches == 0 and worst <= 1e-4 and checked > 100
    report(8, ok, f"{mismatches} mismatches, {located} turning points located, "
                  f"{uncovered} draws outside the table rows (scan only), "
                  f"d eta*/d sigma worst rel err {worst:.1e} over {checked}")
    assert ok


def test_criterion_09_semiclassical_agreement(report):
    spec = WavePacketSpec.from_k(2.2, 3.0, TWO_PI / N_DESK)
    ens = sample_wavepacket(spec, 10_000, seed=9)
    errs = []
    for K in (1.5, 2.0):
        q = echo_series(coherent_state(TorusGrid(N_DESK), 2.2, 3.0), K, [0.01], 2000)[0]
        sc = msc_first_order_series(ens, MapParams(K, "B"), 0.01, 2000)
        keep = q.values > 0.01
        errs.append(float(np.mean(np.abs(sc.values - q.values)[keep])))
    ok = all(e < 0.05 for e in errs)
    report(9, ok, "mean |M_sc - M| at K = 1.5, 2.0: " + ", ".join(f"{e:.4f}" for e in errs))
    assert ok


def test_criterion_10_saturation_scaling(report):
    sizes = [2**10, 2**11, 2**12, 2**13]
    sat = []
    for N in sizes:
        s = echo_series(coherent_state(TorusGrid(N), 2.2, 3.0), 7.0, [1.0], 3000)[0]
        sat.append(saturation_estimate(s))
    slope = np.polyfit(np.log(sizes), np.log(sat), 1)[0]
    ok = abs(slope + 1) <= 0.2
    report(10, ok, f"slope of ln F_inf vs ln N {slope:.3f}")
    assert ok


def test_criterion_11_critical_sigma(report):
    got = {
        "K=7": (critical_sigma_chaos(1e-2, 1.5, 2.0, 0.3).sigma_crit, 0.4152),
        "K=10": (critical_sigma_chaos(1e-2, 1.5, 2.0, 1.0).sigma_crit, 0.1585),
        "edge case": (critical_sigma_chaos(math.exp(-5), 0.5, 1.0, 0.3).sigma_crit, 0.0514),
        "chaos vs stable": (critical_sigma_chaos_vs_stable(0.3, 3.2e3).sigma_crit, 1.0417e-3),
    }
    stable = critical_sigma_stable(1e-2, 1.5, 2.0, 3.2e3)
    bad = [k for k, (v, ref) in got.items() if abs(v / ref - 1) > 1e-3]
    report(11, not bad, ", ".join(f"{k} {v:.5g} (ref {ref:g})" for k, (v, ref) in got.items())
           + f"; stable ln sigma {math.log(stable.sigma_crit):.4f}")
    assert not bad, bad


def _law_grid(c, nu, alpha):
    sig = np.geomspace(1e-3, 1.0, 12)
    t = np.geomspace(1.0, 1e4, 12)
    x = c * sig[:, None] ** nu * t[None, :] ** alpha
    return sig, t, np.where((x > 1e-3) & (x < 10), np.exp(-x), 1.0)


def test_criterion_12_decay_law_fitter(report):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(200):
        c, nu, alpha = 10 ** rng.uniform(-4, 1), rng.uniform(0.5, 3), rng.uniform(0.3, 3)
        fit = fit_decay_law(*_law_grid(c, nu, alpha))
        worst = max(worst, abs(fit.c0 / c - 1), abs(fit.nu - nu), abs(fit.alpha - alpha))
    t = np.arange(0, 10_001)
    x = np.where(t <= 100, 1e-6 * t**3.0, np.sqrt(np.minimum(t, 2000) / 100.0))
    traces = {
        0.01: local_alpha(EchoSeries(0.01, t, np.exp(-1e-12 * t**3.0)), 20, smooth_trace=True),
        0.1: local_alpha(EchoSeries(0.1, t, np.exp(-x)), 20, smooth_trace=True),
    }
    ct = characteristic_times(traces, 1e-4, 0.1, c0=1e-6)
    ok = worst < 1e-8 and abs(ct.t2 - 100) <= 20 and abs(ct.t3 - 2000) <= 20
    report(12, ok, f"worst recovery error {worst:.1e}, t2 {ct.t2} (100), t3 {ct.t3} (2000)")
    assert ok
