"""Stable-law densities, spectrum fits of action distributions and the
critical-index analysis of the fitted width models.

Conventions
-----------
A stable law with index ``eta``, asymmetry ``beta``, shift ``g`` and width
``dl`` has density::

    f(x) = (1/pi) int_0^inf exp(-dl z^eta) cos(dl z^eta beta w(z) - z (x - g)) dz

with ``w = tan(pi eta / 2)`` for ``eta != 1`` and ``w = (2/pi) ln z`` at
``eta = 1``.  This equals scipy's ``levy_stable`` in the S1 parameterisation
with ``scale = dl ** (1/eta)`` (for ``eta != 1``).

The spectrum of an action distribution is the modulus of its characteristic
function at physical frequencies ``z`` (inverse units of ``s``), so that the
line ``ln(-ln|F|) = eta ln z + ln dl`` gives the width directly.

The echo model ``M = exp(-2 sigma^eta dl)`` turns a fitted ``dl(eta)`` into a
one-parameter family.  For ``dl = c + a exp(b eta)`` the derivative of
``f(eta) = sigma^eta dl(eta)`` has the sign of::

    g(eta) = c L + a (b + L) exp(b eta),    L = ln sigma

which is monotone in ``eta``, so there is at most one turning point.  The
linear model ``dl = a eta + b`` gives ``h(eta) = a + b L + a L eta``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .ensembles import ActionDistribution
from .errors import ArgumentError, FitError, NumericalError
from .lm import levenberg_marquardt

log = logging.getLogger(__name__)

#: Integration cut-off: exp(-dl Z^eta) = 1e-16.
TAIL_EXPONENT = 16.0 * math.log(10.0)
PDF_TOL = 1e-9
MAX_PANELS = 1 << 12


@dataclass(frozen=True)
class LevyParams:
    eta: float
    beta: float = 0.0
    g: float = 0.0
    dl: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 2.0:
            raise ArgumentError(f"eta must lie in (0, 2], got {self.eta}")
        if not -1.0 <= self.beta <= 1.0:
            raise ArgumentError(f"beta must lie in [-1, 1], got {self.beta}")
        if not self.dl > 0:
            raise ArgumentError("dl must be > 0")


def _panel_integral(fun, Z, panels):
    edges = np.linspace(0.0, Z, panels + 1)
    total = 0.0
    err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad_vec(fun, lo, hi, epsabs=1e-13, epsrel=1e-12)
        total = total + val
        err = err + e
    return total, err


def levy_pdf(x, params: LevyParams, tol: float = PDF_TOL):
    """Density of the stable law at ``x`` (scalar or array).

    The integral is truncated at ``Z = (36.84 / dl)^(1/eta)`` where the
    integrand envelope falls below 1e-16, and evaluated with adaptive
    Gauss-Kronrod on equal panels.  The panel count doubles until two
    successive estimates agree to ``tol``; :class:`NumericalError` is raised
    if that never happens.  Negative values within ``tol`` of zero (deep
    tails) are returned as zero.
    """
    xs = np.atleast_1d(np.asarray(x, float)) - params.g
    eta, beta, dl = params.eta, params.beta, params.dl
    Z = (TAIL_EXPONENT / dl) ** (1.0 / eta)
    if eta == 1.0:
        def fun(z):
            lz = math.log(z) if z > 0 else 0.0
            return math.exp(-dl * z) * np.cos(dl * z * beta * (2.0 / math.pi) * lz - z * xs)
    else:
        w = math.tan(math.pi * eta / 2.0)

        def fun(z):
            zeta = z**eta
            return math.exp(-dl * zeta) * np.cos(dl * zeta * beta * w - z * xs)

    panels = 4
    prev, _ = _panel_integral(fun, Z, panels)
    while True:
        panels *= 2
        cur, qerr = _panel_integral(fun, Z, panels)
        change = float(np.max(np.abs(cur - prev)))
        if change < tol:
            break
        if panels >= MAX_PANELS:
            raise NumericalError(
                f"levy_pdf did not converge: change {change:.2e} with {panels} panels, "
                f"quadrature error {float(np.max(qerr)):.2e}, eta={eta}, dl={dl}"
            )
        prev = cur
    dens = cur / math.pi
    if np.any(dens < -tol):
        raise NumericalError(f"levy_pdf returned {dens.min():.2e} < 0")
    dens = np.maximum(dens, 0.0)
    return dens if np.ndim(x) else float(dens[0])


@dataclass
class SpectrumRelation:
    """``y = ln(-ln|F(z)|)`` against ``ln z`` at positive physical frequencies.

    ``cutoff`` indexes the efficient frequencies: ``0 < |F| < 1`` and
    ``y < 1``.  ``y`` is NaN wherever it is undefined.
    """

    freqs: np.ndarray
    logz: np.ndarray
    y: np.ndarray
    absF: np.ndarray
    cutoff: np.ndarray
    spacing: float
    pad: int
    time: int | None = None

    @property
    def degenerate(self) -> bool:
        return self.cutoff.size == 0


def _uniform_masses(edges, density):
    widths = np.diff(edges)
    h = widths.min()
    if np.allclose(widths, h, rtol=1e-9, atol=0.0):
        return density * widths, h
    # resample through the cumulative mass onto the finest spacing
    cdf = np.concatenate([[0.0], np.cumsum(density * widths)])
    n = int(math.ceil((edges[-1] - edges[0]) / h))
    grid = edges[0] + h * np.arange(n + 1)
    return np.diff(np.interp(grid, edges, cdf)), h


def spectrum(dist: ActionDistribution, pad: int = 4, y_max: float = 1.0) -> SpectrumRelation:
    """Characteristic-function spectrum of an action distribution.

    The histogram masses sit on a uniform grid of spacing ``h``; the grid is
    zero-padded to at least ``pad`` times its length (next power of two) and
    transformed.  Bin ``k`` corresponds to ``z = 2 pi k / (n h)``.
    """
    if pad < 1:
        raise ArgumentError("pad must be >= 1")
    masses, h = _uniform_masses(np.asarray(dist.edges, float), np.asarray(dist.density, float))
    masses = masses / masses.sum()
    n = 1 << int(math.ceil(math.log2(max(pad * masses.size, 2))))
    F = np.fft.rfft(masses, n=n)
    k = np.arange(1, F.size)
    z = 2.0 * math.pi * k / (n * h)
    absF = np.abs(F[1:])
    y = np.full(z.size, np.nan)
    ok = (absF > 0) & (absF < 1)
    y[ok] = np.log(-np.log(absF[ok]))
    cutoff = np.flatnonzero(ok & (y < y_max))
    return SpectrumRelation(z, np.log(z), y, absF, cutoff, float(h), pad, dist.time)


@dataclass
class LevyFit:
    eta: float
    dl: float
    n_freq: int
    residual: float
    freqs: np.ndarray = field(repr=False)
    time: int | None = None
    frequency_scale: str = "physical z in 1/s"


def fit_eta_dl(rel: SpectrumRelation, n_freq: int = 4) -> LevyFit:
    """Line through the first ``n_freq`` efficient frequencies.

    The slope is ``eta`` and the intercept ``ln dl`` (frequencies are
    physical, so no rescaling enters).
    """
    if n_freq < 2:
        raise ArgumentError("n_freq must be >= 2")
    if rel.cutoff.size < n_freq:
        raise FitError(f"only {rel.cutoff.size} efficient frequencies, need {n_freq}")
    idx = rel.cutoff[:n_freq]
    x, y = rel.logz[idx], rel.y[idx]
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    return LevyFit(float(slope), float(math.exp(icpt)), n_freq, float(np.sqrt(np.mean(res**2))),
                   rel.freqs[idx], rel.time)


def msc_levy(eta, dl, sigma):
    """``exp(-2 sigma^eta dl)``."""
    if np.any(np.asarray(sigma) <= 0):
        raise ArgumentError("sigma must be > 0")
    return np.exp(-2.0 * np.power(sigma, eta) * dl)


def linearity_metric(rel_or_points, subset=None) -> float:
    """Mean squared residual to the fitted line over the mean gap between
    neighbouring points.

    ``rel_or_points`` is a :class:`SpectrumRelation` (``subset`` then indexes
    its frequencies and defaults to the efficient set) or an ``(x, y)`` pair.
    """
    if isinstance(rel_or_points, SpectrumRelation):
        idx = rel_or_points.cutoff if subset is None else np.asarray(subset)
        x, y = rel_or_points.logz[idx], rel_or_points.y[idx]
    else:
        x, y = (np.asarray(v, float) for v in rel_or_points)
    n = x.size
    if n < 3:
        raise ArgumentError("linearity metric needs at least 3 points")
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    gaps = np.hypot(np.diff(x), np.diff(y))
    mean_gap = gaps.sum() / (n - 1)
    if mean_gap == 0:
        raise ArgumentError("points coincide; the metric is undefined")
    return float((res @ res / n) / mean_gap)


# ---------------------------------------------------------------- width models


@dataclass
class ModelFitExp:
    """``dl(eta) = c + a exp(b eta)``."""

    a: float
    b: float
    c: float
    residual: float = 0.0
    converged: bool = True
    steps: int = 0
    policy: str = ""

    def __call__(self, eta):
        return self.c + self.a * np.exp(self.b * np.asarray(eta, float))

    def derivative(self, eta):
        return self.a * self.b * np.exp(self.b * np.asarray(eta, float))


@dataclass
class ModelFitLin:
    """``dl(eta) = a eta + b``."""

    a: float
    b: float
    residual: float = 0.0
    converged: bool = True
    steps: int = 0
    policy: str = ""

    def __call__(self, eta):
        return self.a * np.asarray(eta, float) + self.b

    def derivative(self, eta):
        return np.full_like(np.asarray(eta, float), self.a)


def _exp_start(eta, dl):
    # scan b and solve the linear part (a, c) for each; keep the best
    best = None
    for b in np.linspace(-20.0, 20.0, 801):
        A = np.column_stack([np.exp(b * eta), np.ones_like(eta)])
        if not np.all(np.isfinite(A)):
            continue
        coef, *_ = np.linalg.lstsq(A, dl, rcond=None)
        r = A @ coef - dl
        cost = r @ r
        if best is None or cost < best[0]:
            best = (cost, np.array([coef[0], b, coef[1]]))
    return best[1]


def lm_fit(points, model: str = "exp", policy: str = "marquardt", max_iter: int = 2000, x0=None):
    """Levenberg-Marquardt fit of ``dl(eta)`` to ``(eta_i, dl_i)`` pairs.

    The exponential model starts from a grid scan over ``b`` with the linear
    coefficients solved exactly, then refines all three.  The returned fit is
    the local minimum reached; the data may admit others.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ArgumentError("points must be an (n, 2) array of (eta, dl)")
    eta, dl = pts[:, 0], pts[:, 1]
    if model == "exp":
        if eta.size < 4:
            raise FitError("the exponential model needs at least 4 points")

        def fun(x):
            return x[2] + x[0] * np.exp(x[1] * eta) - dl

        def jac(x):
            e = np.exp(x[1] * eta)
            return np.column_stack([e, x[0] * eta * e, np.ones_like(eta)])

        start = _exp_start(eta, dl) if x0 is None else np.asarray(x0, float)
        res = levenberg_marquardt(fun, jac, start, policy=policy, max_iter=max_iter)
        a, b, c = res.x
        rms = float(np.sqrt(2.0 * res.cost / eta.size))
        return ModelFitExp(float(a), float(b), float(c), rms, res.converged, res.steps, policy)
    if model == "linear":
        if eta.size < 2:
            raise FitError("the linear model needs at least 2 points")

        def fun(x):
            return x[0] * eta + x[1] - dl

        def jac(x):
            return np.column_stack([eta, np.ones_like(eta)])

        start = np.zeros(2) if x0 is None else np.asarray(x0, float)
        res = levenberg_marquardt(fun, jac, start, policy=policy, max_iter=max_iter)
        a, b = res.x
        rms = float(np.sqrt(2.0 * res.cost / eta.size))
        return ModelFitLin(float(a), float(b), rms, res.converged, res.steps, policy)
    raise ArgumentError(f"unknown model {model!r}")


# ---------------------------------------------------------- critical analysis

REGIMES = ("increasing", "decreasing", "decreasing-then-increasing", "increasing-then-decreasing", "constant")


@dataclass
class CriticalEta:
    eta_star: float | None
    sigma_low: float | None
    sigma_high: float | None
    transitions: tuple | None
    regime: str
    pattern: str
    bounds: list = field(default_factory=list)
    root: float = math.nan  # closed-form value, whether or not it lies in range


def _sgn(v) -> int:
    return (v > 0) - (v < 0)


def _pattern(*vals) -> str:
    return "(" + ",".join("+" if v > 0 else "-" if v < 0 else "0" for v in vals) + ")"


def _regime(s0: int, s1: int) -> str:
    """Echo monotonicity from the signs of ``f'`` at both ends (``M = exp(-2f)``)."""
    if s0 == 0 and s1 == 0:
        return "constant"
    if s0 == 0:
        s0 = s1
    if s1 == 0:
        s1 = s0
    if s0 < 0 and s1 < 0:
        return "increasing"
    if s0 > 0 and s1 > 0:
        return "decreasing"
    return "decreasing-then-increasing" if s0 > 0 else "increasing-then-decreasing"


def _log_sigma(sigma):
    if not sigma > 0:
        raise ArgumentError("sigma must be > 0")
    if sigma == 1.0:
        raise ArgumentError("sigma = 1 is singular (ln sigma = 0)")
    return math.log(sigma)


def _exp_signs(a, b, c, L, lo, hi):
    """Signs of ``g`` at both ends of ``[lo, hi]`` (limit when ``hi`` is inf)."""
    lead = a * (b + L)
    g0 = c * L + lead * math.exp(b * lo)
    if not math.isinf(hi):
        g1 = c * L + lead * math.exp(b * hi)
    elif b > 0:
        g1 = lead if lead != 0 else c * L
    elif b < 0:
        g1 = c * L if c * L != 0 else lead
    else:
        g1 = c * L + lead
    return _sgn(g0), _sgn(g1)


def _exp_root(a, b, c, L):
    # g = 0  <=>  exp(b eta) = -c L / (a (b + L))
    lead = a * (b + L)
    if b == 0 or lead == 0:
        return math.nan
    arg = -c * L / lead
    if arg <= 0:
        return math.nan
    return math.log(arg) / b


def _interval_scan(exists, breakpoints, side):
    """Intervals of ln(sigma) on one side of 0 where ``exists`` holds.

    ``exists`` is constant between consecutive breakpoints, so one probe per
    piece decides it.
    """
    bps = sorted({bp for bp in breakpoints if np.isfinite(bp) and (bp < 0 if side < 0 else bp > 0)})
    knots = ([-math.inf] + bps + [0.0]) if side < 0 else ([0.0] + bps + [math.inf])
    out = []
    for lo, hi in zip(knots[:-1], knots[1:]):
        if math.isinf(lo):
            probe = hi - 1.0
        elif math.isinf(hi):
            probe = lo + 1.0
        else:
            probe = 0.5 * (lo + hi)
        if exists(probe):
            if out and out[-1][1] == lo:
                out[-1] = (out[-1][0], hi)
            else:
                out.append((lo, hi))
    with np.errstate(over="ignore"):
        return [(float(np.exp(lo)), float(np.exp(hi))) for lo, hi in out]


def _exp_exists(a, b, c, L, lo=0.0, hi=math.inf):
    s0, s1 = _exp_signs(a, b, c, L, lo, hi)
    return s0 * s1 < 0


def transition_sigmas(b: float) -> tuple[float, float]:
    """``sigma_1,2 = exp{[-(b + 2) -/+ sqrt(b^2 + 4)] / 2}``."""
    root = math.sqrt(b * b + 4.0)
    return math.exp((-(b + 2.0) - root) / 2.0), math.exp((-(b + 2.0) + root) / 2.0)


def eta_star_bounds(fit: ModelFitExp | ModelFitLin, side: int = -1) -> list:
    """Sigma intervals on one side of 1 (``side=-1`` below, ``+1`` above)
    where a turning point exists in ``eta > 0``."""
    if isinstance(fit, ModelFitExp):
        a, b, c = fit.a, fit.b, fit.c
        bps = [-b, -a * b / (a + c) if a + c != 0 else math.nan]
        return _interval_scan(lambda L: _exp_exists(a, b, c, L), bps, side)
    a, b = fit.a, fit.b
    if a == 0:
        return []
    bps = [-a / b if b != 0 else math.nan]
    return _interval_scan(lambda L: -b / a - 1.0 / L > 0, bps, side)


def _containing(bounds, sigma):
    for lo, hi in bounds:
        if lo < sigma < hi:
            return lo, hi
    return None, None


def critical_eta_exp(fit: ModelFitExp, sigma: float, eta_range=(0.0, math.inf)) -> CriticalEta:
    """Turning point of ``eta -> exp(-2 sigma^eta dl(eta))`` for the
    exponential width model, with its sigma bounds and regime.

    ``eta_range`` restricts where the turning point is looked for; the
    sigma bounds always refer to ``eta > 0``.
    """
    L = _log_sigma(sigma)
    a, b, c = fit.a, fit.b, fit.c
    lo, hi = eta_range
    s0, s1 = _exp_signs(a, b, c, L, lo, hi)
    root = _exp_root(a, b, c, L)
    eta_star = root if (s0 * s1 < 0 and lo < root < hi) else None
    pattern = _pattern(a, b, c)
    if pattern == "(-,-,+)":
        log.debug("sign pattern (-,-,+) is not expected from fitted data")
    bounds = eta_star_bounds(fit, -1 if L < 0 else 1)
    low, high = _containing(bounds, sigma)
    return CriticalEta(eta_star, low, high, transition_sigmas(b), _regime(s0, s1), pattern, bounds, root)


def critical_eta_lin(fit: ModelFitLin, sigma: float, eta_range=(0.0, math.inf)) -> CriticalEta:
    """Turning point ``-b/a - 1/ln(sigma)`` for the linear width model."""
    L = _log_sigma(sigma)
    a, b = fit.a, fit.b
    pattern = _pattern(a, b)
    if a == 0:
        s = _sgn(b * L)
        return CriticalEta(None, None, None, None, _regime(s, s), pattern, [], math.nan)
    lo, hi = eta_range
    s0 = _sgn(a + b * L + a * L * lo)
    s1 = _sgn(a * L) if math.isinf(hi) else _sgn(a + b * L + a * L * hi)
    root = -b / a - 1.0 / L
    eta_star = root if (s0 * s1 < 0 and lo < root < hi) else None
    bounds = eta_star_bounds(fit, -1 if L < 0 else 1)
    low, high = _containing(bounds, sigma)
    return CriticalEta(eta_star, low, high, None, _regime(s0, s1), pattern, bounds, root)


def eta_star_sensitivity(fit: ModelFitExp, sigma: float) -> float:
    """``d eta* / d sigma = 1 / ((b + ln sigma) ln(sigma) sigma)``."""
    if sigma == 1.0:
        raise NumericalError("d eta*/d sigma is singular at sigma = 1")
    L = _log_sigma(sigma)
    if fit.b + L == 0:
        raise NumericalError("d eta*/d sigma is singular at b + ln sigma = 0")
    if critical_eta_exp(fit, sigma).eta_star is None:
        raise ArgumentError(f"no turning point at sigma={sigma}")
    return 1.0 / ((fit.b + L) * L * sigma)


def msc_model(fit, eta, sigma):
    """Echo predicted by a width model: ``exp(-2 sigma^eta dl(eta))``."""
    return msc_levy(np.asarray(eta, float), fit(eta), sigma)


def taylor_delta_msc(fit, eta0: float, sigma: float, d_eta: float) -> float:
    """First-order change of the model echo when ``eta`` moves by ``d_eta``."""
    L = math.log(sigma)
    f = sigma**eta0 * float(fit(eta0))
    fprime = sigma**eta0 * (L * float(fit(eta0)) + float(fit.derivative(eta0)))
    m0 = math.exp(-2.0 * f)
    return -2.0 * m0 * fprime * d_eta
