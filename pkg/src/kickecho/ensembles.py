"""Classical ensembles, action distributions P(s) and diffusion fits.

An ensemble is a weighted cloud of phase points.  Evolving it with
:func:`evolve_actions` gives, at each requested time, the accumulated
potentials ``s_j(t)`` of its members; that sample set is the seed from which
every semiclassical echo value is computed, for any perturbation strength.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ResourceError
from .maps import MapParams, TWO_PI, accumulate_action, wrap

#: Default cap on ``len(times) * n_points`` stored by :func:`evolve_actions`.
MAX_STORED_SAMPLES = 200_000_000

#: Clip at the integrable ``(1 - s^2)^(-1/2)`` endpoint singularity.
S_CLIP = 1e-12

MAX_BINS = 1 << 20


def make_rng(seed):
    """PCG64 generator from a 64-bit seed (or a SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


@dataclass(frozen=True)
class WavePacketSpec:
    """Gaussian packet centre, width and Planck constant.

    ``k = hbar / xi**2`` is derived, never stored, so it cannot drift from
    the other two fields.  Use :meth:`from_k` to pick the width through ``k``.
    """

    r0: float
    p0: float
    xi: float
    hbar: float

    def __post_init__(self):
        if not self.xi > 0:
            raise ArgumentError("xi must be > 0")
        if not self.hbar > 0:
            raise ArgumentError("hbar must be > 0")

    @property
    def k(self) -> float:
        return self.hbar / self.xi**2

    @classmethod
    def from_k(cls, r0, p0, hbar, k=1.0):
        if not k > 0:
            raise ArgumentError("k must be > 0")
        return cls(r0, p0, float(np.sqrt(hbar / k)), hbar)

    @property
    def r_std(self) -> float:
        # |psi|^2 marginal of exp(-(r - r0)^2 / (2 xi^2))
        return self.xi / np.sqrt(2.0)

    @property
    def p_std(self) -> float:
        return self.hbar / (self.xi * np.sqrt(2.0))


@dataclass
class Ensemble:
    r: np.ndarray
    p: np.ndarray
    weights: np.ndarray
    seed: int | None = None
    spec: object = None  # WavePacketSpec, or a dict describing a disc

    def __post_init__(self):
        self.r = np.atleast_1d(np.asarray(self.r, float))
        self.p = np.atleast_1d(np.asarray(self.p, float))
        if self.r.shape != self.p.shape or self.r.ndim != 1 or self.r.size == 0:
            raise ArgumentError("ensemble needs matching nonempty 1-d r and p")
        w = np.broadcast_to(np.asarray(self.weights, float), self.r.shape)
        if np.any(w < 0) or not np.sum(w) > 0:
            raise ArgumentError("weights must be nonnegative with positive sum")
        self.weights = w / np.sum(w)

    def __len__(self):
        return self.r.size

    @classmethod
    def single(cls, r, p):
        return cls(np.array([r]), np.array([p]), np.ones(1))


def sample_disc(center, radius: float, n: int, seed) -> Ensemble:
    """``n`` points uniform in area on a disc around ``center``."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    if not radius > 0:
        raise ArgumentError("radius must be > 0")
    rng = make_rng(seed)
    rho = radius * np.sqrt(rng.random(n))
    phi = TWO_PI * rng.random(n)
    r = wrap(center[0] + rho * np.cos(phi))
    p = wrap(center[1] + rho * np.sin(phi))
    spec = {"kind": "disc", "center": [float(center[0]), float(center[1])], "radius": radius}
    return Ensemble(r, p, np.ones(n), seed=seed, spec=spec)


def sample_wavepacket(spec: WavePacketSpec, n: int, seed, fixed_r: bool = False) -> Ensemble:
    """Classical counterpart of a Gaussian wave packet.

    Momenta have density ``exp[-(p - p0)^2 / (hbar/xi)^2]`` (standard deviation
    ``hbar / (xi sqrt 2)``); positions are Gaussian with standard deviation
    ``xi / sqrt 2`` about ``r0``, the width of ``|psi|^2``.  With
    ``fixed_r=True`` every member starts at ``r0`` exactly, which is the
    momentum-only form of the first-order semiclassical integral.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    rng = make_rng(seed)
    p = wrap(spec.p0 + spec.p_std * rng.standard_normal(n))
    if fixed_r:
        r = np.full(n, wrap(spec.r0))
    else:
        r = wrap(spec.r0 + spec.r_std * rng.standard_normal(n))
    return Ensemble(r, p, np.ones(n), seed=seed, spec=spec)


@dataclass
class ActionDistribution:
    """Weighted samples of ``s`` at one time and the histogram of ``s - <s>``.

    The histogram uses the Freedman-Diaconis rule unless ``bins`` says
    otherwise.  A distribution can also be built straight from a density on
    uniform bins with :meth:`from_density`, in which case ``samples`` is None.
    """

    time: int
    samples: np.ndarray | None
    weights: np.ndarray | None = None
    bins: object = "fd"
    edges: np.ndarray = field(default=None, repr=False)
    density: np.ndarray = field(default=None, repr=False)
    mean: float = field(default=None)

    def __post_init__(self):
        if self.samples is None:
            if self.edges is None or self.density is None:
                raise ArgumentError("need samples or a histogram")
            if self.mean is None:
                self.mean = 0.0
            return
        self.samples = np.atleast_1d(np.asarray(self.samples, float))
        if self.samples.size == 0:
            raise ArgumentError("empty sample set")
        if self.weights is None:
            self.weights = np.full(self.samples.size, 1.0 / self.samples.size)
        else:
            w = np.asarray(self.weights, float)
            self.weights = w / w.sum()
        self.mean = float(np.dot(self.weights, self.samples))
        if self.edges is None:
            self.edges, self.density = _histogram(self.centered(), self.weights, self.bins)

    @classmethod
    def from_density(cls, edges, density, time=0):
        edges = np.asarray(edges, float)
        density = np.asarray(density, float)
        if edges.size != density.size + 1 or np.any(np.diff(edges) <= 0):
            raise ArgumentError("edges must be strictly increasing, one longer than density")
        mass = np.sum(density * np.diff(edges))
        return cls(time, None, edges=edges, density=density / mass, mean=0.0)

    def centered(self) -> np.ndarray:
        c = self.samples - self.mean
        # second pass removes the rounding residue of the first
        return c - np.dot(self.weights, c)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def second_moment(self, centered: bool = False) -> float:
        x = self.centered() if centered else self.samples
        return float(np.dot(self.weights, x * x))

    def std(self) -> float:
        return float(np.sqrt(self.second_moment(centered=True)))


def _histogram(x, w, bins):
    # a subnormal spread has no representable bin density; treat as a point
    if np.ptp(x) < np.finfo(float).tiny:
        return np.array([x[0] - 0.5, x[0] + 0.5]), np.array([1.0])
    if isinstance(bins, str):
        edges = np.histogram_bin_edges(x, bins=bins)
        if edges.size - 1 > MAX_BINS:
            edges = np.histogram_bin_edges(x, bins=MAX_BINS)
    else:
        edges = np.histogram_bin_edges(x, bins=bins)
    density, edges = np.histogram(x, bins=edges, weights=w, density=True)
    return edges, density


def merge(a: ActionDistribution, b: ActionDistribution, bins="fd") -> ActionDistribution:
    """Weighted union of two sample sets taken at the same time.

    Each part keeps its share of the total member count, so merging the two
    halves of an ensemble reproduces the full ensemble.
    """
    if a.time != b.time:
        raise ArgumentError("cannot merge distributions at different times")
    na, nb = a.samples.size, b.samples.size
    w = np.concatenate([a.weights * na, b.weights * nb])
    return ActionDistribution(a.time, np.concatenate([a.samples, b.samples]), w, bins=bins)


def evolve_actions(
    ensemble: Ensemble,
    params: MapParams,
    times,
    bins="fd",
    max_stored: int = MAX_STORED_SAMPLES,
) -> list[ActionDistribution]:
    """Action samples of every member at each requested time."""
    times = np.asarray(times, dtype=np.int64)
    if times.size * len(ensemble) > max_stored:
        raise ResourceError(
            f"{times.size} times x {len(ensemble)} members exceeds the cap of {max_stored}"
        )
    s = accumulate_action(params, (ensemble.r, ensemble.p), times)
    return [ActionDistribution(int(t), s[i], ensemble.weights, bins=bins) for i, t in enumerate(times)]


def initial_ps_analytic(spec: WavePacketSpec, s_grid) -> np.ndarray:
    """Linearised density of ``s = cos r0`` for the packet at ``t = 1``.

    ``P(s) = (pi xi^2)^(-1/2) (1 - s^2)^(-1/2) exp[-(s - s0)^2 / (xi^2 (1 - s0^2))]``
    with ``s0 = cos r0``.  Points with ``|s| >= 1 - 1e-12`` get density 0.
    """
    s = np.asarray(s_grid, float)
    s0 = np.cos(spec.r0)
    xi2 = spec.xi**2
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0 - S_CLIP
    si = s[inside]
    out[inside] = (
        np.exp(-((si - s0) ** 2) / (xi2 * (1.0 - s0**2)))
        / np.sqrt(np.pi * xi2)
        / np.sqrt(1.0 - si**2)
    )
    return out


@dataclass(frozen=True)
class DiffusionFit:
    exponent: float
    intercept: float
    window: tuple
    n_points: int

    @property
    def regime(self) -> str:
        return classify_diffusion(self.exponent)


def classify_diffusion(exponent: float, tol: float = 0.05) -> str:
    if exponent >= 2.0 - tol:
        return "ballistic"
    if abs(exponent - 1.0) <= tol:
        return "normal"
    return "sub-diffusion" if exponent < 1.0 else "super-diffusion"


def diffusion_fit(times, second_moments, window=None) -> DiffusionFit:
    """Least-squares line through ``(ln t, ln <s^2>)`` inside ``window``."""
    t = np.asarray(times, float)
    m = np.asarray(second_moments, float)
    if window is None:
        window = (t.min(), t.max())
    sel = (t >= window[0]) & (t <= window[1])
    if np.count_nonzero(sel) < 3:
        raise ArgumentError("diffusion_fit needs at least 3 points in the window")
    if np.any(m[sel] <= 0) or np.any(t[sel] <= 0):
        raise ArgumentError("second moments and times must be positive in the window")
    slope, icpt = np.polyfit(np.log(t[sel]), np.log(m[sel]), 1)
    return DiffusionFit(float(slope), float(icpt), (float(window[0]), float(window[1])), int(sel.sum()))
