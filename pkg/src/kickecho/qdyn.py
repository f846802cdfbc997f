"""Quantum kicked rotator on the quantised torus.

The torus ``[0, 2pi) x [0, 2pi)`` is quantised with ``N`` levels, which gives
``hbar = 2pi / N`` and position/momentum grids ``r_j = p_j = 2pi j / N``.
States are stored in the position representation; the numpy forward FFT
(``norm="ortho"``) maps them to momentum amplitudes on the unshifted grid
``p_k = k hbar``.  One Floquet period kicks first, then drifts::

    psi <- exp(-i K cos r / hbar) psi
    psi <- IFFT[ exp(-i p^2 / (2 hbar)) FFT[psi] ]

For even ``N`` the kinetic phase is periodic in ``p`` with period 2pi, so the
unshifted grid is a faithful torus quantisation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError

TWO_PI = 2.0 * np.pi

#: Periodic images summed on each side when building a coherent state.
N_IMAGES = 3


@dataclass(frozen=True)
class TorusGrid:
    N: int

    def __post_init__(self):
        N = self.N
        if N < 8 or N & (N - 1):
            raise ArgumentError(f"N must be a power of two >= 8, got {N}")

    @property
    def hbar(self) -> float:
        return TWO_PI / self.N

    @property
    def r_grid(self) -> np.ndarray:
        return TWO_PI * np.arange(self.N) / self.N

    p_grid = r_grid


@dataclass
class QuantumState:
    amplitudes: np.ndarray
    grid: TorusGrid

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def momentum_amplitudes(self) -> np.ndarray:
        return np.fft.fft(self.amplitudes, norm="ortho")

    def copy(self):
        return QuantumState(self.amplitudes.copy(), self.grid)


@dataclass
class EchoSeries:
    sigma: float
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.size


def coherent_state(grid: TorusGrid, r0: float, p0: float, xi: float | None = None) -> QuantumState:
    """Periodised Gaussian packet centred at ``(r0, p0)``.

    ``xi`` defaults to ``sqrt(hbar)``, i.e. ``k = hbar / xi^2 = 1``.
    """
    hbar = grid.hbar
    if xi is None:
        xi = np.sqrt(hbar)
    if not xi > 0:
        raise ArgumentError("xi must be > 0")
    # nearest dropped image sits at least 2pi * N_IMAGES away
    tail = np.exp(-((TWO_PI * N_IMAGES) ** 2) / (2.0 * xi**2))
    if tail > 1e-12:
        raise ConfigError(f"xi={xi} too wide for {N_IMAGES} periodic images (tail {tail:.1e})")
    r = grid.r_grid
    psi = np.zeros(grid.N, dtype=complex)
    for w in range(-N_IMAGES, N_IMAGES + 1):
        x = r + TWO_PI * w
        psi += np.exp(1j * p0 * x / hbar - (x - r0) ** 2 / (2.0 * xi**2))
    psi /= np.linalg.norm(psi)
    return QuantumState(psi, grid)


def circular_mean(values, probs) -> float:
    """Mean angle of a distribution on [0, 2pi)."""
    z = np.dot(probs, np.exp(1j * np.asarray(values)))
    return float(np.mod(np.angle(z), TWO_PI))


def moments(state: QuantumState) -> dict:
    """Circular means and spreads in position and momentum."""
    g = state.grid
    out = {}
    for name, amps in (("r", state.amplitudes), ("p", state.momentum_amplitudes())):
        prob = np.abs(amps) ** 2
        prob /= prob.sum()
        mu = circular_mean(g.r_grid, prob)
        # unwrap around the mean before taking the spread
        d = np.mod(g.r_grid - mu + np.pi, TWO_PI) - np.pi
        out[name] = mu
        out[f"d{name}"] = float(np.sqrt(np.dot(prob, d * d)))
    return out


class Propagator:
    """Precomputed phase vectors for kick strengths ``K + sigma * hbar``.

    Several perturbations share the kinetic phase and the FFT workspace, so
    all echo partners are advanced together as rows of one array.
    """

    def __init__(self, grid: TorusGrid, K: float, sigmas=(0.0,)):
        self.grid = grid
        hbar = grid.hbar
        c = np.cos(grid.r_grid)
        base = np.exp(-1j * K * c / hbar)
        # (K + sigma hbar) cos r / hbar = K cos r / hbar + sigma cos r
        self.kick = np.stack([base * np.exp(-1j * s * c) for s in sigmas])
        p = grid.p_grid
        self.kinetic = np.exp(-1j * p * p / (2.0 * hbar))

    def step(self, psi: np.ndarray) -> np.ndarray:
        psi = psi * self.kick
        phi = np.fft.fft(psi, axis=-1, norm="ortho")
        phi *= self.kinetic
        return np.fft.ifft(phi, axis=-1, norm="ortho")

    def step_back(self, psi: np.ndarray) -> np.ndarray:
        phi = np.fft.fft(psi, axis=-1, norm="ortho")
        phi *= self.kinetic.conj()
        psi = np.fft.ifft(phi, axis=-1, norm="ortho")
        return psi * self.kick.conj()


def floquet_step(state: QuantumState, K: float) -> QuantumState:
    """Advance a state by one kick-then-drift period."""
    prop = Propagator(state.grid, K)
    return QuantumState(prop.step(state.amplitudes[None, :])[0], state.grid)


def evolve(state: QuantumState, K: float, steps: int) -> QuantumState:
    prop = Propagator(state.grid, K)
    psi = state.amplitudes[None, :]
    for _ in range(steps):
        psi = prop.step(psi)
    return QuantumState(psi[0], state.grid)


def floquet_matrix(grid: TorusGrid, K: float) -> np.ndarray:
    """Dense Floquet matrix built from an explicit DFT matrix (for small N)."""
    N = grid.N
    j = np.arange(N)
    F = np.exp(-2j * np.pi * np.outer(j, j) / N) / np.sqrt(N)
    kick = np.exp(-1j * K * np.cos(grid.r_grid) / grid.hbar)
    kin = np.exp(-1j * grid.p_grid**2 / (2.0 * grid.hbar))
    return F.conj().T @ (kin[:, None] * F) @ np.diag(kick)


def echo_series(state0: QuantumState, K: float, sigmas, T: int, norm_log=None) -> list[EchoSeries]:
    """Loschmidt echoes for several perturbations from one unperturbed run.

    ``norm_log``, when a list, receives the unperturbed norm after every step.
    """
    sigmas = [float(s) for s in sigmas]
    if any(s < 0 for s in sigmas):
        raise ArgumentError("sigma must be >= 0")
    if T < 0:
        raise ArgumentError("horizon must be >= 0")
    hbar = state0.grid.hbar
    for s in sigmas:
        if K > 0 and s * hbar > 0.1 * K:
            warnings.warn(f"eps = {s * hbar:.3g} exceeds 0.1 K; perturbation is not small")
    prop = Propagator(state0.grid, K, [0.0] + sigmas)
    psi = np.repeat(state0.amplitudes[None, :], len(sigmas) + 1, axis=0)
    M = np.empty((len(sigmas), T + 1))
    M[:, 0] = 1.0
    for t in range(1, T + 1):
        psi = prop.step(psi)
        overlap = psi[1:].conj() @ psi[0]
        # overlap of the normalised states: rounding drift in the norms
        # would otherwise enter M at four times its size
        sq = np.einsum("ij,ij->i", psi.real, psi.real) + np.einsum("ij,ij->i", psi.imag, psi.imag)
        M[:, t] = (overlap.real**2 + overlap.imag**2) / (sq[1:] * sq[0])
        if norm_log is not None:
            norm_log.append(float(np.sqrt(sq[0])))
    times = np.arange(T + 1)
    meta = {"N": state0.grid.N, "K": K, "hbar": hbar}
    return [EchoSeries(s, times, M[i], dict(meta)) for i, s in enumerate(sigmas)]


def loschmidt_echo(state0: QuantumState, K: float, sigma: float, T: int) -> EchoSeries:
    """``M(t) = |<psi_{K+eps}(t)|psi_K(t)>|^2`` for ``t = 0..T`` with ``eps = sigma hbar``."""
    return echo_series(state0, K, [sigma], T)[0]


def echo_forward_backward(state0: QuantumState, K: float, sigma: float, t: int) -> float:
    """``|<psi0| U_{K+eps}^{-t} U_K^t |psi0>|^2``: the echo as a forward-backward overlap."""
    fwd = Propagator(state0.grid, K)
    back = Propagator(state0.grid, K + sigma * state0.grid.hbar)
    psi = state0.amplitudes[None, :]
    for _ in range(t):
        psi = fwd.step(psi)
    for _ in range(t):
        psi = back.step_back(psi)
    return float(abs(np.vdot(state0.amplitudes, psi[0])) ** 2)


def saturation_estimate(series: EchoSeries, tail: int | None = None, tail_fraction: float | None = None,
                        min_tail: int = 1000) -> float:
    """Mean echo over the last ``tail`` points (or ``tail_fraction`` of the series)."""
    n = len(series)
    if tail is None:
        frac = 0.5 if tail_fraction is None else tail_fraction
        tail = int(round(frac * n))
    if tail <= 0:
        raise ArgumentError("empty tail window")
    if tail > n:
        raise ArgumentError(f"tail window {tail} longer than the series ({n})")
    if tail < min_tail:
        raise ArgumentError(f"tail window {tail} shorter than the minimum {min_tail}")
    return float(np.mean(series.values[-tail:]))
