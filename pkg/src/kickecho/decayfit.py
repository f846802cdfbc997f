"""Decay-law extraction for echo series.

Everything here works on ``y = ln(-ln M)``, for which the law
``M = exp(-c0 sigma^nu t^alpha)`` is linear::

    y = ln c0 + nu ln sigma + alpha ln t

Values of ``M`` are clamped to ``[floor, 1 - 1e-15]`` before the double log;
points outside ``(floor, 1)`` are not used by any fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FitError

FLOOR = 1e-5  # usable-value rule; 1e-6 counts as saturated
M_CEIL = 1.0 - 1e-15
INV_E = math.exp(-1.0)


def loglog(M, floor: float = FLOOR):
    """``ln(-ln M)`` with ``M`` clamped to ``[floor, 1 - 1e-15]``."""
    m = np.clip(np.asarray(M, float), floor, M_CEIL)
    return np.log(-np.log(m))


def _usable(M, floor):
    M = np.asarray(M, float)
    return (M > floor) & (M < 1.0)


# ---------------------------------------------------------------- nu and law


@dataclass
class NuFit:
    nu: float
    intercept: float
    sigmas: np.ndarray
    mode: str


@dataclass
class DecayLawFit:
    c0: float
    nu: float
    alpha: float
    window: tuple  # ((sigma_lo, sigma_hi), (t_lo, t_hi))
    method: str = "Num2"
    residual: float = 0.0
    n_points: int = 0


NUM1_SIGMAS = (0.01, 0.02, 0.03)


def fit_nu(sigmas, M, mode: str = "Num2", floor: float = FLOOR) -> NuFit:
    """Slope of ``ln(-ln M)`` against ``ln sigma`` at one time.

    ``Num1`` uses sigma = 0.01, 0.02, 0.03 only.  ``Num2`` walks the sigma
    list in ascending order comparing neighbours: a point is kept while
    ``M`` stays above ``floor`` and the next point has a larger
    ``ln(-ln M)``, so the last point of the run serves only as reference.
    ``Semi1``/``Semi2`` are accepted as aliases for semiclassical input.
    """
    s = np.asarray(sigmas, float)
    m = np.asarray(M, float)
    if s.shape != m.shape:
        raise ArgumentError("sigmas and M must have the same length")
    order = np.argsort(s)
    s, m = s[order], m[order]
    base = mode.replace("Semi", "Num")
    if base == "Num1":
        idx = []
        for target in NUM1_SIGMAS:
            hit = np.flatnonzero(np.isclose(s, target, rtol=1e-9, atol=0.0))
            if hit.size == 0:
                raise ArgumentError(f"{mode} needs sigma = {target}")
            idx.append(hit[0])
        idx = np.array(idx)
        idx = idx[_usable(m[idx], floor)]
    elif base == "Num2":
        ok = _usable(m, floor)
        y = loglog(m, floor)
        keep = []
        for i in range(s.size - 1):
            if not (ok[i] and ok[i + 1] and y[i + 1] > y[i]):
                break
            keep.append(i)
        idx = np.array(keep, dtype=int)
    else:
        raise ArgumentError(f"unknown mode {mode!r}")
    if idx.size < 2:
        raise FitError(f"{mode}: fewer than 2 usable points")
    slope, icpt = np.polyfit(np.log(s[idx]), loglog(m[idx], floor), 1)
    return NuFit(float(slope), float(icpt), s[idx], mode)


def fit_decay_law(sigmas, times, M, floor: float = FLOOR, method: str = "Num2") -> DecayLawFit:
    """Joint least-squares fit of ``(c0, nu, alpha)`` over a ``sigma x t`` grid.

    ``M`` has shape ``(len(sigmas), len(times))``.
    """
    s = np.asarray(sigmas, float)
    t = np.asarray(times, float)
    m = np.asarray(M, float)
    if m.shape != (s.size, t.size):
        raise ArgumentError("M must have shape (len(sigmas), len(times))")
    S, T = np.meshgrid(s, t, indexing="ij")
    sel = _usable(m, floor) & (T > 0)
    if np.count_nonzero(sel) < 3:
        raise FitError("fewer than 3 usable points")
    A = np.column_stack([np.ones(sel.sum()), np.log(S[sel]), np.log(T[sel])])
    y = loglog(m[sel], floor)
    if np.linalg.matrix_rank(A) < 3:
        raise FitError("need at least two sigmas and two times")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    window = ((float(S[sel].min()), float(S[sel].max())), (float(T[sel].min()), float(T[sel].max())))
    return DecayLawFit(float(math.exp(coef[0])), float(coef[1]), float(coef[2]), window, method,
                       float(np.sqrt(np.mean(res**2))), int(sel.sum()))


# ------------------------------------------------------------- local alpha


def smooth(values, span: int = 5, repeats: int = 20):
    """Centred moving average with the window shrinking at both ends,
    applied ``repeats`` times."""
    if span < 1 or span % 2 == 0:
        raise ArgumentError("span must be a positive odd number")
    v = np.asarray(values, float).copy()
    n = v.size
    half = span // 2
    for _ in range(repeats):
        c = np.concatenate([[0.0], np.cumsum(v)])
        out = np.empty_like(v)
        for i in range(n):
            h = min(half, i, n - 1 - i)
            out[i] = (c[i + h + 1] - c[i - h]) / (2 * h + 1)
        v = out
    return v


@dataclass
class AlphaTrace:
    """Local decay exponents on consecutive windows ``[k step, (k+1) step]``.

    ``times`` holds the window end points; windows with ``M >= 1`` are
    absent.  ``smoothed`` is filled when smoothing was requested.
    """

    sigma: float
    step: int
    times: np.ndarray
    alpha: np.ndarray
    smoothed: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.alpha if self.smoothed is None else self.smoothed


def local_alpha(series, step: int = 50, smooth_trace: bool = False, floor: float = FLOOR,
                span: int = 5, repeats: int = 20) -> AlphaTrace:
    """Slope of ``ln(-ln M)`` against ``ln t`` on windows of ``step`` steps."""
    if step < 2:
        raise ArgumentError("step must be >= 2")
    t = np.asarray(series.times)
    m = np.asarray(series.values, float)
    if t.size < 2 * step:
        raise ArgumentError(f"series of length {t.size} is shorter than two windows of {step}")
    pos = {int(v): i for i, v in enumerate(t)}
    ends, alphas = [], []
    k = 0
    while (k + 1) * step <= t[-1]:
        lo, hi = max(k * step, 1), (k + 1) * step
        k += 1
        idx = [pos[v] for v in range(lo, hi + 1) if v in pos]
        if len(idx) < 2:
            continue
        mw = m[idx]
        if np.any(mw >= 1.0):
            continue
        slope = np.polyfit(np.log(t[idx].astype(float)), loglog(mw, floor), 1)[0]
        ends.append(hi)
        alphas.append(slope)
    trace = AlphaTrace(float(series.sigma), step, np.array(ends), np.array(alphas))
    if smooth_trace and trace.alpha.size:
        trace.smoothed = smooth(trace.alpha, span, repeats)
    return trace


@dataclass
class C0Trace:
    times: np.ndarray
    ln_c0: np.ndarray


def extract_c0(series, nu: float, alpha_trace: AlphaTrace, floor: float = FLOOR) -> C0Trace:
    """``ln c0 = ln(-ln M) - nu ln sigma - alpha ln t`` at each trace time.

    Times where ``M`` is not strictly between ``floor`` and 1 are dropped.
    """
    sigma = float(series.sigma)
    if not sigma > 0:
        raise ArgumentError("sigma must be > 0")
    pos = {int(v): i for i, v in enumerate(np.asarray(series.times))}
    out_t, out_c = [], []
    for t, a in zip(alpha_trace.times, alpha_trace.values):
        i = pos.get(int(t))
        if i is None:
            continue
        m = series.values[i]
        if not floor < m < 1.0:
            continue
        out_t.append(int(t))
        out_c.append(float(loglog(m, floor)) - nu * math.log(sigma) - a * math.log(t))
    return C0Trace(np.array(out_t), np.array(out_c))


# ------------------------------------------------------ characteristic times


@dataclass(frozen=True)
class CharTimeConfig:
    """Thresholds for :func:`characteristic_times`."""

    step: int = 20  # local-alpha window for t2/t3
    gap: float = 0.05  # alpha gap between sigma = 0.01 and 0.1 marking t0
    saturation_alpha: float = 0.2  # smoothed alpha below this: saturation or revival
    slope_tol: float = 0.0005  # per-window alpha change counted as a turn
    search_horizon: int = 2000  # look-ahead for the rise test
    horizon: int = 10000  # sentinel for times not reached
    small_sigma: float = 0.1
    min_t2: int = 100  # t2 below this is a false trigger when sigma < small_sigma
    floor: float = FLOOR
    span: int = 5
    repeats: int = 20

    @classmethod
    def chaotic_sea(cls):
        return cls(step=20, gap=0.01, floor=1e-4)


@dataclass
class CharTimes:
    t0: int
    t1: int
    t2: int
    t3: int
    sigma_h: float
    t_tr: int | None
    t_s: int | None
    alpha0: float
    procedure: int | None = None
    meta: dict = field(default_factory=dict)


def _detect_t0(small: AlphaTrace, ref: AlphaTrace, cfg: CharTimeConfig) -> int:
    common, i_s, i_r = np.intersect1d(small.times, ref.times, return_indices=True)
    gap = np.abs(small.values[i_s] - ref.values[i_r]) > cfg.gap
    for k in range(common.size - 1):
        if gap[k] and gap[k + 1]:
            return int(common[k])
    return cfg.horizon


def _decline_turn(vals, start, cfg):
    """Turn of the decline starting at ``start`` as ``(index, kind)``.

    A genuine minimum (next per-window change above ``slope_tol``) wins;
    otherwise the steepest drop of the decline is used, reported at the
    window before the drop.
    """
    d = np.diff(vals)
    if start >= d.size:
        return None
    k = start
    while k < d.size and d[k] <= cfg.slope_tol:
        k += 1
    seg = d[start:k]
    if seg.size == 0 or seg.min() >= -cfg.slope_tol:
        return None
    if k < d.size:
        return k, "minimum"
    return start + int(np.argmin(seg)), "steepest"


def _refine(raw, idx, kind, radius):
    """Move a turn found on the smoothed trace to the raw trace."""
    if radius == 0 or raw.size < 2:
        return idx
    lo, hi = max(idx - radius, 0), min(idx + radius + 1, raw.size)
    if kind == "minimum":
        return lo + int(np.argmin(raw[lo:hi]))
    d = np.diff(raw)
    hi = min(hi, d.size)
    return lo + int(np.argmin(d[lo:hi])) if hi > lo else idx


def _saturation_index(vals, cfg):
    below = np.flatnonzero(vals < cfg.saturation_alpha)
    if below.size == 0:
        return None
    k = int(below[0])
    d = np.diff(vals)
    # walk back to the start of this descent, then take its steepest drop
    j = k - 1
    while j >= 0 and d[j] < -cfg.slope_tol:
        j -= 1
    seg = d[j + 1:k]
    if seg.size == 0:
        return k
    return j + 1 + int(np.argmin(seg))


def _smoothing_radius(trace, cfg):
    if trace.smoothed is None:
        return 0
    # about two standard deviations of the repeated moving-average kernel
    return int(math.ceil(2.0 * math.sqrt(cfg.repeats * (cfg.span**2 - 1) / 12.0)))


def characteristic_times(alpha_traces: dict, F_inf: float, sigma: float, *, c0: float,
                         alpha0: float | None = None, config: CharTimeConfig = CharTimeConfig()) -> CharTimes:
    """Initial, transition and saturation times for the echo at ``sigma``.

    ``alpha_traces`` maps sigma to :class:`AlphaTrace` (smoothed where
    available) and must hold 0.01, 0.1 and ``sigma``.  ``c0`` is the decay
    prefactor used for ``sigma_h``; ``alpha0`` defaults to the mean
    sigma = 0.01 exponent before ``t0``.
    """
    def trace(s):
        for key, tr in alpha_traces.items():
            if math.isclose(float(key), s, rel_tol=1e-9):
                return tr
        raise ArgumentError(f"missing alpha trace for sigma={s}")

    cfg = config
    if not 0 < F_inf < 1:
        raise ArgumentError("F_inf must lie in (0, 1)")
    small, ref, target = trace(0.01), trace(0.1), trace(sigma)
    t0 = _detect_t0(small, ref, cfg)
    if alpha0 is None:
        before = small.values[small.times <= t0]
        alpha0 = float(np.mean(before)) if before.size else float(np.mean(small.values))
    sigma_h = math.sqrt(-math.log(F_inf) / c0) * t0 ** (-alpha0 / 2.0)
    if sigma <= sigma_h:
        t1 = t0
    else:
        t1 = t0 * (sigma_h / sigma) ** (2.0 / alpha0)
        t1 = max(cfg.step, int(round(t1 / cfg.step)) * cfg.step)

    times, vals, raw = target.times, target.values, target.alpha
    radius = _smoothing_radius(target, cfg)
    i1 = int(np.searchsorted(times, t1)) if times.size else 0
    i1 = min(i1, max(times.size - 1, 0))
    t_tr, procedure = None, None
    if times.size > 2:
        look = (times > times[i1]) & (times <= times[i1] + cfg.search_horizon)
        if np.any(vals[look] > vals[i1]):
            procedure = 1
            idx = np.flatnonzero(look)
            start = int(idx[np.argmax(vals[idx])])
        else:
            procedure = 2
            start = i1
        while True:
            turn = _decline_turn(vals, start, cfg)
            if turn is None:
                break
            k = _refine(raw, turn[0], turn[1], radius)
            cand = int(times[k])
            if sigma < cfg.small_sigma and cand < cfg.min_t2:
                start = max(turn[0], k) + 1
                continue
            t_tr = cand
            break
    t_s = None
    if times.size > 1:
        k = _saturation_index(vals, cfg)
        if k is not None:
            t_s = int(times[_refine(raw, k, "steepest", radius)])
    if t_tr is not None and (t_s is None or t_tr < t_s):
        t2, t3 = t_tr, (t_s if t_s is not None else cfg.horizon)
    elif t_s is not None:
        t2, t3 = t_s, cfg.horizon
    else:
        t2 = t3 = cfg.horizon
    meta = {"step": cfg.step, "gap": cfg.gap, "saturation_alpha": cfg.saturation_alpha,
            "slope_tol": cfg.slope_tol, "search_horizon": cfg.search_horizon, "horizon": cfg.horizon}
    return CharTimes(int(t0), int(t1), int(t2), int(t3), float(sigma_h), t_tr, t_s, float(alpha0), procedure, meta)


# ------------------------------------------------------------- time scales


def decay_time_tau(series) -> float:
    """First time with ``M <= 1/e``, linearly interpolated; ``inf`` if never."""
    t = np.asarray(series.times, float)
    m = np.asarray(series.values, float)
    hit = np.flatnonzero(m <= INV_E)
    if hit.size == 0:
        return math.inf
    i = int(hit[0])
    if i == 0:
        return float(t[0])
    frac = (m[i - 1] - INV_E) / (m[i - 1] - m[i])
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def exponential_rate(series, m_range=(0.05, 0.8)) -> float:
    """Rate ``G`` of ``M ~ A exp(-G t)`` fitted where ``M`` lies in ``m_range``."""
    t = np.asarray(series.times, float)
    m = np.asarray(series.values, float)
    lo, hi = m_range
    # stop at the first drop below the range so saturation noise stays out
    below = np.flatnonzero(m < lo)
    end = int(below[0]) if below.size else m.size
    sel = np.zeros(m.size, bool)
    sel[:end] = (m[:end] >= lo) & (m[:end] <= hi)
    if np.count_nonzero(sel) < 3:
        raise FitError(f"fewer than 3 points with M in {m_range}")
    slope = np.polyfit(t[sel], np.log(m[sel]), 1)[0]
    return float(-slope)


@dataclass
class TimeScaleFit:
    gamma: float
    c_gamma: float
    sigma_window: tuple


def fit_gamma(sigmas, taus, window=None) -> TimeScaleFit:
    """``tau = c_gamma sigma^(-gamma)`` through the two end points of the window."""
    s = np.asarray(sigmas, float)
    tau = np.asarray(taus, float)
    if window is not None:
        sel = (s >= window[0]) & (s <= window[1])
        s, tau = s[sel], tau[sel]
    if s.size < 2:
        raise FitError("need at least 2 sigmas in the window")
    if not np.all(np.isfinite(tau)):
        raise FitError("unreached decay time inside the window")
    lo, hi = int(np.argmin(s)), int(np.argmax(s))
    gamma = -(math.log(tau[hi]) - math.log(tau[lo])) / (math.log(s[hi]) - math.log(s[lo]))
    c_gamma = tau[lo] * s[lo] ** gamma
    return TimeScaleFit(float(gamma), float(c_gamma), (float(s[lo]), float(s[hi])))


# ---------------------------------------------------------- critical sigma


@dataclass
class CriticalSigma:
    sigma_crit: float
    inputs: dict
    kind: str
    out_of_range: bool = False


def _check(alpha):
    if not alpha > 0:
        raise ArgumentError("alpha must be > 0")


def critical_sigma_chaos(c0: float, nu: float, alpha: float, rate: float, sigma_max: float = 10.0) -> CriticalSigma:
    """Sigma where the mixed-space echo time meets the strong-chaos one.

    ``rate`` is the strong-chaos exponential rate per ``sigma^2``; the result
    solves ``sigma^(2 - nu/alpha) = c0^(1/alpha) / rate``.
    """
    _check(alpha)
    expo = 2.0 - nu / alpha
    if expo == 0:
        raise ArgumentError("degenerate case: 2 - nu/alpha = 0")
    sc = (c0 ** (1.0 / alpha) / rate) ** (1.0 / expo)
    inputs = {"c0": c0, "nu": nu, "alpha": alpha, "rate": rate}
    return CriticalSigma(float(sc), inputs, "mixed-vs-chaos", bool(sc > sigma_max))


def critical_sigma_stable(c0: float, nu: float, alpha: float, c_s: float, sigma_max: float = 10.0) -> CriticalSigma:
    """Sigma where the mixed-space echo time meets ``tau = c_s / sigma``.

    Solves ``(c0 sigma^nu)^(-1/alpha) = c_s / sigma``; large results are
    flagged ``out_of_range``.
    """
    _check(alpha)
    expo = 1.0 - nu / alpha
    if expo == 0:
        raise ArgumentError("degenerate case: 1 - nu/alpha = 0")
    sc = (c_s * c0 ** (1.0 / alpha)) ** (1.0 / expo)
    inputs = {"c0": c0, "nu": nu, "alpha": alpha, "c_s": c_s}
    return CriticalSigma(float(sc), inputs, "mixed-vs-stable", bool(sc > sigma_max))


def critical_sigma_chaos_vs_stable(rate: float, c_s: float, sigma_max: float = 10.0) -> CriticalSigma:
    """``1 / (rate sigma^2) = c_s / sigma``, i.e. ``sigma = 1 / (rate c_s)``."""
    if not (rate > 0 and c_s > 0):
        raise ArgumentError("rate and c_s must be > 0")
    sc = 1.0 / (rate * c_s)
    return CriticalSigma(sc, {"rate": rate, "c_s": c_s}, "chaos-vs-stable", bool(sc > sigma_max))


def stable_prefactor(sigmas, taus) -> float:
    """``c_s`` as the mean of ``tau sigma`` over a stable-dynamics table."""
    s = np.asarray(sigmas, float)
    t = np.asarray(taus, float)
    if s.size == 0 or not np.all(np.isfinite(t)):
        raise FitError("need finite decay times")
    return float(np.mean(t * s))


# --------------------------------------------------------- alpha partition


@dataclass
class AlphaPartition:
    times: np.ndarray  # window end times
    alpha_eta: np.ndarray
    alpha_d: np.ndarray
    eta_slope: float  # A in eta(t) ~ A ln t + B
    eta_intercept: float  # B

    @property
    def alpha(self):
        return self.alpha_eta + self.alpha_d


def alpha_partition(times, etas, dls, sigma: float, window: int | None = None) -> AlphaPartition:
    """Split the decay exponent into the index part and the width part.

    ``ln(-ln M) = ln 2 + eta ln sigma + ln dl``, so ``alpha_eta`` is the
    slope of ``eta ln sigma`` and ``alpha_d`` that of ``ln dl`` against
    ``ln t``.  With ``window`` the slopes are taken on consecutive blocks of
    that many points, otherwise over all points.
    """
    t = np.asarray(times, float)
    eta = np.asarray(etas, float)
    dl = np.asarray(dls, float)
    keep = (dl > 0) & (t > 0)
    t, eta, dl = t[keep], eta[keep], dl[keep]
    if t.size < 2:
        raise FitError("need at least 2 points with positive width")
    L = math.log(sigma)
    lt = np.log(t)
    A, B = np.polyfit(lt, eta, 1)
    w = t.size if window is None else int(window)
    if w < 2:
        raise ArgumentError("window must hold at least 2 points")
    ends, ae, ad = [], [], []
    for start in range(0, t.size - w + 1, w):
        sl = slice(start, start + w)
        ae.append(np.polyfit(lt[sl], eta[sl] * L, 1)[0])
        ad.append(np.polyfit(lt[sl], np.log(dl[sl]), 1)[0])
        ends.append(t[start + w - 1])
    return AlphaPartition(np.array(ends), np.array(ae), np.array(ad), float(A), float(B))
