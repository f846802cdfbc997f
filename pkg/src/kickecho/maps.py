"""Classical standard map on the 2pi x 2pi torus.

Two kick orderings are supported.  Variant ``"B"`` kicks first::

    p' = (p + K sin r) mod 2pi
    r' = (r + p')      mod 2pi

and is the ordering used by the quantum Floquet operator in :mod:`kickecho.qdyn`.
Variant ``"A"`` drifts first::

    r' = (r + p)        mod 2pi
    p' = (p + K sin r') mod 2pi

Variant A is the default.  The two describe the same dynamics:

* half-step relabelling: the B orbit started from ``((r0 + p0) mod 2pi, p0)``
  visits ``(r_{n+1}, p_n)`` of the A orbit started from ``(r0, p0)``
  (see :func:`variant_b_start`);
* reflection plus time reversal: the B orbit started from
  ``(2pi - r_T, p_T)`` visits ``(2pi - r_{T-k}, p_{T-k})``.

Phase-space geometry (islands, escape windows) therefore differs between the
variants by these transformations.

Functions accept scalars or numpy arrays for the coordinates; arrays are
advanced element-wise, which is how ensembles are evolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, ConfigError

TWO_PI = 2.0 * np.pi

#: Escape window half-width around ``r_center`` used by :func:`sticking_time`.
ESCAPE_HALF_WIDTH = 0.1


@dataclass(frozen=True)
class MapParams:
    """Stochasticity parameter and kick ordering."""

    K: float
    variant: str = "A"

    def __post_init__(self):
        if not np.isfinite(self.K) or self.K < 0:
            raise ArgumentError(f"K must be finite and >= 0, got {self.K!r}")
        if self.variant not in ("A", "B"):
            raise ArgumentError(f"variant must be 'A' or 'B', got {self.variant!r}")


class PhasePoint(NamedTuple):
    r: float
    p: float


class StickOutcome(NamedTuple):
    escaped: bool
    escape_time: int | None  # None when not escaped within max_steps

    def __str__(self):
        if self.escaped:
            return f"escaped at t={self.escape_time}"
        return "not escaped"


def wrap(x):
    """Reduce angles to [0, 2pi) with a single modulo."""
    y = np.mod(x, TWO_PI)
    # np.mod can round tiny negatives up to exactly 2pi
    return np.where(y >= TWO_PI, 0.0, y) if np.ndim(y) else (0.0 if y >= TWO_PI else float(y))


def _advance(K, variant, r, p):
    if variant == "B":
        p = wrap(p + K * np.sin(r))
        r = wrap(r + p)
    else:
        r = wrap(r + p)
        p = wrap(p + K * np.sin(r))
    return r, p


def step(params: MapParams, x) -> PhasePoint:
    """One iteration of the map.

    >>> step(MapParams(0.0), PhasePoint(1.0, 0.5))
    PhasePoint(r=1.5, p=0.5)
    """
    r, p = _advance(params.K, params.variant, x[0], x[1])
    return PhasePoint(r, p)


def iterate(params: MapParams, x0, steps: int):
    """Orbit ``(r_t, p_t)`` for ``t = 0..steps`` as two arrays of length steps+1."""
    if steps < 0:
        raise ArgumentError("steps must be >= 0")
    r = np.empty(steps + 1)
    p = np.empty(steps + 1)
    r[0], p[0] = wrap(x0[0]), wrap(x0[1])
    K, v = params.K, params.variant
    for t in range(steps):
        r[t + 1], p[t + 1] = _advance(K, v, r[t], p[t])
    return r, p


def jacobian(params: MapParams, x) -> np.ndarray:
    """Exact one-step tangent map in (r, p) order; its determinant is 1."""
    K = params.K
    r, p = float(x[0]), float(x[1])
    if params.variant == "B":
        kc = K * math.cos(r)
        return np.array([[1.0 + kc, 1.0], [kc, 1.0]])
    kc = K * math.cos(r + p)
    return np.array([[1.0, 1.0], [kc, 1.0 + kc]])


def lyapunov_spectrum(params: MapParams, x0, steps: int) -> tuple[float, float]:
    """Both Lyapunov exponents from tangent-space evolution.

    Two tangent vectors are pushed through the Jacobian and re-orthonormalised
    by modified Gram-Schmidt after every step.  The log stretching factors are
    accumulated with Neumaier compensation so that long runs do not lose
    digits.  Returns ``(lambda_1, lambda_2)`` in descending order.
    """
    if steps < 100:
        raise ConfigError("lyapunov_spectrum needs steps >= 100")
    K = params.K
    kick_first = params.variant == "B"
    r, p = wrap(float(x0[0])), wrap(float(x0[1]))
    a1, b1 = 1.0, 0.0
    a2, b2 = 0.0, 1.0
    s1 = c1 = s2 = c2 = 0.0
    log = math.log
    for _ in range(steps):
        if kick_first:
            kc = K * math.cos(r)
            j11, j12, j21, j22 = 1.0 + kc, 1.0, kc, 1.0
            p = (p + K * math.sin(r)) % TWO_PI
            r = (r + p) % TWO_PI
        else:
            r = (r + p) % TWO_PI
            kc = K * math.cos(r)
            j11, j12, j21, j22 = 1.0, 1.0, kc, 1.0 + kc
            p = (p + K * math.sin(r)) % TWO_PI
        u1, v1 = j11 * a1 + j12 * b1, j21 * a1 + j22 * b1
        u2, v2 = j11 * a2 + j12 * b2, j21 * a2 + j22 * b2
        n1 = math.hypot(u1, v1)
        a1, b1 = u1 / n1, v1 / n1
        proj = u2 * a1 + v2 * b1
        u2, v2 = u2 - proj * a1, v2 - proj * b1
        n2 = math.hypot(u2, v2)
        a2, b2 = u2 / n2, v2 / n2
        # Neumaier summation of the log growth factors
        x = log(n1)
        t = s1 + x
        c1 += (s1 - t) + x if abs(s1) >= abs(x) else (x - t) + s1
        s1 = t
        x = log(n2)
        t = s2 + x
        c2 += (s2 - t) + x if abs(s2) >= abs(x) else (x - t) + s2
        s2 = t
    lam = sorted(((s1 + c1) / steps, (s2 + c2) / steps), reverse=True)
    return lam[0], lam[1]


def _as_arrays(start):
    if hasattr(start, "r") and hasattr(start, "p"):
        return np.atleast_1d(np.asarray(start.r, float)), np.atleast_1d(np.asarray(start.p, float))
    return np.atleast_1d(float(start[0])), np.atleast_1d(float(start[1]))


def sticking_time(
    params: MapParams,
    start,
    r_center: float = 2.2,
    max_steps: int = 100_000,
    p_threshold: float = 2.0,
) -> StickOutcome:
    """First step at which the orbit enters the escape window.

    The window is ``|r - r_center| < 0.1`` together with ``p > p_threshold``.
    ``start`` may be a single point or an ensemble (anything with ``r`` and
    ``p`` arrays); for an ensemble the first member to enter wins.  The
    starting configuration itself (t = 0) is not tested.
    """
    if max_steps < 1:
        raise ArgumentError("max_steps must be >= 1")
    if not 0.0 <= r_center < TWO_PI:
        raise ArgumentError("r_center must lie in [0, 2pi)")
    r, p = _as_arrays(start)
    r, p = wrap(r), wrap(p)
    K, v = params.K, params.variant
    for t in range(1, max_steps + 1):
        r, p = _advance(K, v, r, p)
        if np.any((np.abs(r - r_center) < ESCAPE_HALF_WIDTH) & (p > p_threshold)):
            return StickOutcome(True, t)
    return StickOutcome(False, None)


def accumulate_action(params: MapParams, x0, times):
    """Accumulated potential ``s(t) = sum_{t'=0}^{t-1} cos r(t')``.

    The sum includes the kick at ``t' = 0`` and excludes ``t' = t``, which
    matches the kick-first Floquet ordering.  The action difference for a
    perturbation ``eps`` of the kick strength is ``eps * s(t)``.

    ``x0`` may be a point or a pair of arrays; the result has shape
    ``(len(times),)`` or ``(len(times), n)`` respectively.
    """
    times = np.asarray(times, dtype=np.int64)
    if times.ndim != 1 or times.size == 0:
        raise ArgumentError("times must be a nonempty 1-d sequence")
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ArgumentError("times must be nonnegative and ascending")
    scalar = np.ndim(x0[0]) == 0
    r = wrap(np.atleast_1d(np.asarray(x0[0], float)))
    p = wrap(np.atleast_1d(np.asarray(x0[1], float)))
    out = np.empty((times.size, r.size))
    s = np.zeros_like(r)
    K, v = params.K, params.variant
    t = 0
    for i, target in enumerate(times):
        while t < target:
            s += np.cos(r)
            r, p = _advance(K, v, r, p)
            t += 1
        out[i] = s
    return out[:, 0] if scalar else out


def variant_b_start(x0) -> PhasePoint:
    """Starting point whose variant-B orbit is the half-step shift of the
    variant-A orbit from ``x0``: B visits ``(r_{n+1}, p_n)`` of A."""
    r0, p0 = wrap(float(x0[0])), wrap(float(x0[1]))
    return PhasePoint(wrap(r0 + p0), p0)
