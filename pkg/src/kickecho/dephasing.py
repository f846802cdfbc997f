"""Semiclassical echo estimators built on action samples.

All estimators reduce to the modulus squared of a weighted phase average::

    M_sc = |sum_j w_j exp(i sigma s_j)|^2

where ``s_j`` is the accumulated potential of sample ``j`` (the action
difference divided by the perturbation).  The first-order formula uses the
samples of a wave-packet ensemble as they are.  The second-order formula
widens the Gaussian momentum window by a per-sample factor ``D >= 1`` and
scales the amplitude by ``1/D``; in Monte Carlo form this is a reweighting of
the same samples (weights renormalised so that ``sigma = 0`` gives 1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .ensembles import ActionDistribution, Ensemble, WavePacketSpec
from .errors import ArgumentError, NumericalError
from .maps import MapParams, TWO_PI, wrap
from .qdyn import EchoSeries

log = logging.getLogger(__name__)

#: Finite-difference step for the momentum-generating derivative.
FD_STEP = 1e-6 * TWO_PI


@dataclass
class SemiclassicalSeries:
    sigma: float
    times: np.ndarray
    values: np.ndarray
    order: str

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class DFactorSample:
    p0: float
    t: int
    D: float
    dps_dr0: float


def _phase_sum(s, w, sigma) -> float:
    # compensated sums keep the result independent of sample order
    ph = sigma * np.asarray(s)
    re = math.fsum(w * np.cos(ph))
    im = math.fsum(w * np.sin(ph))
    return re * re + im * im


def msc_direct(actions: ActionDistribution, sigma: float) -> float:
    """``|sum_j w_j exp(i sigma s_j)|^2`` over the raw weighted samples."""
    if actions.samples is None or actions.samples.size == 0:
        raise ArgumentError("msc_direct needs weighted samples")
    if sigma == 0:
        return 1.0
    return _phase_sum(actions.samples, actions.weights, sigma)


def _advance_with_tangent(K, kick_first, r, p, a, b):
    """One map step for arrays plus the push of the tangent rows ``(a, b)``.

    ``a`` and ``b`` hold the r- and p-components of the images of the unit
    r-perturbation (column 0) and unit p-perturbation (column 1).
    """
    if kick_first:
        kc = K * np.cos(r)
        p = wrap(p + K * np.sin(r))
        r = wrap(r + p)
        a, b = a + kc * a + b, kc * a + b
    else:
        r = wrap(r + p)
        kc = K * np.cos(r)
        p = wrap(p + K * np.sin(r))
        a, b = a + b, kc * (a + b) + b
    return r, p, a, b


def _stream(params: MapParams, r, p, T: int, tangent: bool = False):
    """Yield ``(t, s, ratio)`` for ``t = 0..T``.

    ``ratio`` is ``-M_rr / M_rp`` of the t-step tangent map, i.e. the derivative
    of the initial momentum over the initial angle at fixed final angle;
    None unless ``tangent``.
    """
    r = np.array(r, float, copy=True)
    p = np.array(p, float, copy=True)
    s = np.zeros_like(r)
    K = params.K
    kick_first = params.variant == "B"
    if tangent:
        a = np.stack([np.ones_like(r), np.zeros_like(r)])  # r-rows of both columns
        b = np.stack([np.zeros_like(r), np.ones_like(r)])  # p-rows
    for t in range(T + 1):
        if tangent:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = -a[0] / a[1] if t > 0 else np.zeros_like(r)
            yield t, s, ratio
        else:
            yield t, s, None
        if t == T:
            return
        s = s + np.cos(r)
        if tangent:
            r, p, a, b = _advance_with_tangent(K, kick_first, r, p, a, b)
            # common rescaling keeps both columns finite
            scale = np.maximum(np.abs(a).max(axis=0), np.abs(b).max(axis=0))
            a, b = a / scale, b / scale
        elif kick_first:
            p = wrap(p + K * np.sin(r))
            r = wrap(r + p)
        else:
            r = wrap(r + p)
            p = wrap(p + K * np.sin(r))


def msc_first_order_series(ensemble: Ensemble, params: MapParams, sigma: float, T: int) -> SemiclassicalSeries:
    """First-order estimator for ``t = 0..T``.

    Equivalent to :func:`msc_direct` on :func:`evolve_actions` output; build
    the ensemble with ``sample_wavepacket(..., fixed_r=True)`` for the
    momentum-only form at fixed starting angle.
    """
    # same normalisation as ActionDistribution, so both paths agree bitwise
    w = ensemble.weights / ensemble.weights.sum()
    vals = np.empty(T + 1)
    for t, s, _ in _stream(params, ensemble.r, ensemble.p, T):
        vals[t] = 1.0 if sigma == 0 or t == 0 else _phase_sum(s, w, sigma)
    return SemiclassicalSeries(float(sigma), np.arange(T + 1), vals, "first")


def _d_from_ratio(ratio, k):
    return np.sqrt(1.0 + (ratio / k) ** 2)


def _flow_r(params, r0, p0, t):
    """Unwrapped final angle after t steps (arrays allowed)."""
    r, p = np.asarray(r0, float), np.asarray(p0, float)
    K = params.K
    for _ in range(t):
        if params.variant == "B":
            p = p + K * np.sin(r)
            r = r + p
        else:
            r = r + p
            p = p + K * np.sin(r)
    return r


def _fd_ratio(params, r0, p0, t, h):
    def deriv(step):
        dr = (_flow_r(params, r0 + step, p0, t) - _flow_r(params, r0 - step, p0, t)) / (2 * step)
        dp = (_flow_r(params, r0, p0 + step, t) - _flow_r(params, r0, p0 - step, t)) / (2 * step)
        return dr, dp

    dr1, dp1 = deriv(h)
    dr2, dp2 = deriv(h / 2)
    # one Richardson pass on each central difference
    dr = (4 * dr2 - dr1) / 3
    dp = (4 * dp2 - dp1) / 3
    if dp == 0 or not np.isfinite(dp):
        raise NumericalError("finite-difference derivative underflowed")
    gap = max(abs(dr2 - dr1) / max(abs(dr), 1e-300), abs(dp2 - dp1) / max(abs(dp), 1e-300))
    if gap > 1e-3:
        raise NumericalError(
            f"finite differences left the linear regime at t={t} (relative gap {gap:.1e}); use method='tangent'"
        )
    return -dr / dp


def d_factor(params: MapParams, r0_tilde: float, p0: float, t: int, k: float, method: str = "tangent") -> DFactorSample:
    """Second-order width factor ``D = sqrt(1 + (dp_s/dr0)^2 / k^2)``.

    ``dp_s/dr0`` is the change of the initial momentum of the orbit that
    reaches the same final angle when the starting angle moves.  The default
    ``"tangent"`` method reads it off the t-step tangent map as
    ``-M_rr / M_rp``; ``"fd"`` uses Richardson-refined central differences of
    the flow with step ``1e-6 * 2pi`` and raises :class:`NumericalError` once
    those leave the linear regime (after roughly ``ln(1/h) / lambda`` steps).
    """
    if t < 1:
        raise ArgumentError("t must be >= 1")
    if not k > 0:
        raise ArgumentError("k must be > 0")
    if method == "fd":
        ratio = _fd_ratio(params, float(r0_tilde), float(p0), t, FD_STEP)
    elif method == "tangent":
        ratio = None
        for _, _, rt in _stream(params, [r0_tilde], [p0], t, tangent=True):
            ratio = rt[0]
        if not np.isfinite(ratio):
            raise NumericalError("tangent map is singular (focal point)")
    else:
        raise ArgumentError(f"unknown method {method!r}")
    if np.isinf(k):
        return DFactorSample(float(p0), t, 1.0, float(ratio))
    return DFactorSample(float(p0), t, float(_d_from_ratio(ratio, k)), float(ratio))


def msc_second_order_series(ensemble: Ensemble, params: MapParams, sigma: float, T: int, k: float = 1.0) -> SemiclassicalSeries:
    """Second-order estimator for ``t = 0..T`` with per-sample ``D``.

    Each sample drawn from the first-order window ``exp[-(p - p0)^2/(hbar/xi)^2]``
    is reweighted to ``(1/D) exp[-(p - p0)^2/(hbar D/xi)^2]``.  ``k`` sets the
    ratio used inside ``D``; the window itself comes from the ensemble's
    :class:`WavePacketSpec`.
    """
    spec = ensemble.spec
    if not isinstance(spec, WavePacketSpec):
        raise ArgumentError("second-order series needs a wave-packet ensemble")
    if not k > 0:
        raise ArgumentError("k must be > 0")
    # signed momentum offset on the torus, in units of the window width hbar/xi
    dp = np.mod(ensemble.p - spec.p0 + np.pi, TWO_PI) - np.pi
    x2 = (dp * spec.xi / spec.hbar) ** 2
    w0 = ensemble.weights
    vals = np.empty(T + 1)
    for t, s, ratio in _stream(params, ensemble.r, ensemble.p, T, tangent=True):
        if t == 0:
            vals[0] = 1.0
            continue
        D = _d_from_ratio(np.where(np.isfinite(ratio), ratio, np.inf), k)
        with np.errstate(over="ignore", invalid="ignore"):
            w = w0 * np.exp(x2 * (1.0 - 1.0 / D**2)) / D
        w = np.where(np.isfinite(w), w, 0.0)
        total = math.fsum(w)
        vals[t] = 1.0 if sigma == 0 else _phase_sum(s, w / total, sigma)
    return SemiclassicalSeries(float(sigma), np.arange(T + 1), vals, "second")


def avg_scaled_error(quantum: EchoSeries, sc: SemiclassicalSeries, floor: float = 1e-2) -> float:
    """Mean of ``(M_sc - M) / sigma`` over times where ``M > floor``."""
    if len(quantum) != len(sc) or not np.array_equal(np.asarray(quantum.times), np.asarray(sc.times)):
        raise ArgumentError("series must share one time axis")
    sigma = quantum.sigma
    if sigma == 0:
        raise ArgumentError("scaled error is undefined at sigma = 0")
    sel = np.asarray(quantum.values) > floor
    if not sel.any():
        raise ArgumentError(f"no times with M > {floor}")
    return float(np.mean((sc.values[sel] - quantum.values[sel]) / sigma))


def detect_revivals(series, rise: float = 0.05) -> np.ndarray:
    """Times where a series climbs more than ``rise`` above its running minimum.

    Large-sigma semiclassical series revive periodically; they are reported,
    never suppressed.
    """
    v = np.asarray(series.values)
    running_min = np.minimum.accumulate(v)
    hits = np.flatnonzero(v - running_min > rise)
    if hits.size:
        log.info("revival in %s series at sigma=%g from t=%d", getattr(series, "order", "echo"),
                 series.sigma, int(series.times[hits[0]]))
    return np.asarray(series.times)[hits]
