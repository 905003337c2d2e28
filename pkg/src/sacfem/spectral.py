"""Dirichlet eigenpairs of the Laplacian on the unit cube and solvers built
on them: the heat semigroup, the deterministic convolution with the
semigroup, a pseudo-spectral Galerkin path for the full nonlinear dynamics,
and exactly simulable Ornstein-Uhlenbeck paths for the additive linear case.

Eigenfunctions are e_k(x) = 2^(3/2) sin(k1 pi x1) sin(k2 pi x2) sin(k3 pi x3)
with eigenvalue lambda_k = pi^2 (k1^2 + k2^2 + k3^2); modes are ordered by
eigenvalue with lexicographic tie-breaking so a truncation level is
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft

__all__ = [
    "SpectralBasis",
    "ModalVector",
    "ModalTrajectory",
    "PathBlowupError",
    "build_spectral_basis",
    "eval_modes",
    "heat_apply",
    "convolve_s0",
    "galerkin_path",
    "exact_ou_path",
    "euler_ou_path",
    "logistic_flow",
]

_SQRT8 = 2.0 ** 1.5


class PathBlowupError(RuntimeError):
    """A sample path produced non-finite values."""

    def __init__(self, step, detail=""):
        super().__init__(f"non-finite state at step {step}{detail}")
        self.step = step


@dataclass(eq=False)
class SpectralBasis:
    modes: np.ndarray    # (count, 3) positive integer triples
    lambdas: np.ndarray  # (count,) pi^2 |k|^2, non-decreasing
    count: int

    @property
    def max_index(self):
        return int(self.modes.max())


@dataclass(eq=False)
class ModalVector:
    coeffs: np.ndarray
    basis: SpectralBasis

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.count,):
            raise ValueError(
                f"modal coefficients have shape {self.coeffs.shape}, "
                f"expected ({self.basis.count},)"
            )

    def check_finite(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise FloatingPointError("non-finite modal coefficients")
        return self


@dataclass(eq=False)
class ModalTrajectory:
    times: np.ndarray
    coeffs: np.ndarray   # (n_samples, count)
    basis: SpectralBasis

    def state(self, i) -> ModalVector:
        return ModalVector(self.coeffs[i], self.basis)


def build_spectral_basis(count: int) -> SpectralBasis:
    """First `count` Dirichlet modes ordered by (eigenvalue, k1, k2, k3)."""
    if count < 1:
        raise ValueError("mode count must be positive")
    box = max(2, int(round(count ** (1.0 / 3.0))) + 2)
    while True:
        rng = np.arange(1, box + 1)
        k1, k2, k3 = np.meshgrid(rng, rng, rng, indexing="ij")
        modes = np.column_stack([k1.ravel(), k2.ravel(), k3.ravel()])
        ksq = (modes ** 2).sum(axis=1)
        order = np.lexsort((modes[:, 2], modes[:, 1], modes[:, 0], ksq))
        modes = modes[order]
        ksq = ksq[order]
        if modes.shape[0] >= count and ksq[count - 1] <= box * box + 2:
            modes = modes[:count]
            return SpectralBasis(
                modes=modes,
                lambdas=np.pi ** 2 * ksq[:count].astype(float),
                count=count,
            )
        box += 2


def eval_modes(basis: SpectralBasis, points: np.ndarray, kind: str = "sine",
               out: Optional[np.ndarray] = None, chunk: int = 131072) -> np.ndarray:
    """Mode values at arbitrary points, shape (n_points, count).

    kind="sine" gives the Dirichlet eigenfunctions; kind="cosine" replaces
    every sine by a cosine (an orthonormal family that does NOT vanish on
    the boundary, kept for exploratory runs only).
    """
    if kind == "sine":
        fn = np.sin
    elif kind == "cosine":
        fn = np.cos
    else:
        raise ValueError(f"unknown mode kind {kind!r}")
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    k = np.pi * basis.modes.astype(float)
    if out is None:
        out = np.empty((m, basis.count))
    for start in range(0, m, chunk):
        sl = slice(start, min(start + chunk, m))
        block = fn(np.outer(points[sl, 0], k[:, 0]))
        block *= fn(np.outer(points[sl, 1], k[:, 1]))
        block *= fn(np.outer(points[sl, 2], k[:, 2]))
        block *= _SQRT8
        out[sl] = block
    return out


def heat_apply(basis: SpectralBasis, v: ModalVector, t: float) -> ModalVector:
    """exp(t * Laplacian) applied coefficient-wise."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    return ModalVector(v.coeffs * np.exp(-basis.lambdas * t), basis)


def convolve_s0(basis: SpectralBasis, g: np.ndarray, dt: float, t: float) -> ModalVector:
    """integral_0^t exp((t-s) Laplacian) g(s) ds for g piecewise constant in
    time on the uniform grid s_j = j*dt, with g given as samples (J+1, count).

    Each step [s_j, s_j+dt] contributes g_j (1 - exp(-lam dt))/lam
    * exp(-lam (t - s_j - dt)) per mode; this is exact for the interpolant.
    """
    g = np.asarray(g, dtype=float)
    steps = t / dt
    j_t = int(round(steps))
    if abs(steps - j_t) > 1e-9:
        raise ValueError(f"t = {t} is not on the sample grid with dt = {dt}")
    if j_t > g.shape[0] - 1:
        raise ValueError("not enough samples to reach t")
    lam = basis.lambdas
    acc = np.zeros(basis.count)
    step_factor = (1.0 - np.exp(-lam * dt)) / lam
    for j in range(j_t):
        acc += g[j] * step_factor * np.exp(-lam * (t - (j + 1) * dt))
    return ModalVector(acc, basis)


def logistic_flow(v, tau):
    """Exact time-tau flow of y' = y - y^3 applied entry-wise."""
    decay = np.exp(-2.0 * tau)
    return v / np.sqrt(decay + v * v * (1.0 - decay))


class _GridTransform:
    """Tensor sine collocation on the grid x_j = j/M with M = 2*kmax + 1.

    Cubing on this grid is alias-free after truncation back to modes <= kmax:
    product modes in (M, 3*kmax] fold onto 2M - k > kmax and are discarded.
    """

    def __init__(self, kmax: int):
        self.kmax = kmax
        self.m = 2 * kmax + 1
        self.npts = self.m - 1

    def slots(self, basis: SpectralBasis):
        k = basis.modes - 1
        return k[:, 0], k[:, 1], k[:, 2]

    def to_grid(self, tensor):
        return scipy.fft.dstn(tensor, type=1) / 8.0

    def to_tensor(self, grid):
        return scipy.fft.dstn(grid, type=1) / float(self.m ** 3)

    def scatter(self, basis: SpectralBasis, coeffs):
        tensor = np.zeros((self.kmax,) * 3)
        i, j, k = self.slots(basis)
        tensor[i, j, k] = coeffs * _SQRT8
        padded = np.zeros((self.npts,) * 3)
        padded[: self.kmax, : self.kmax, : self.kmax] = tensor
        return padded

    def gather(self, basis: SpectralBasis, tensor):
        i, j, k = self.slots(basis)
        return tensor[i, j, k] / _SQRT8


def _sigma_values(kind, y):
    # local import: the noise module depends on this one for its basis
    from .noise import sigma_values
    return sigma_values(kind, y)


def galerkin_path(basis: SpectralBasis, y0: ModalVector, noise, increments,
                  tau: float, scheme: str = "semi-implicit", cubic: bool = True,
                  sample_stride: int = 1) -> ModalTrajectory:
    """Pathwise time integration of the truncated system
    dy = (Laplacian y + y - y^3) dt + noise, in modal coordinates.

    The cubic term and the state-dependent noise factor are evaluated
    pseudo-spectrally on the collocation grid (alias-free for the cubic).
    `noise` carries the mode amplitudes and the scalar profile; `increments`
    supplies one row of scaled Brownian increments per step.
    """
    if scheme not in ("semi-implicit", "splitting"):
        raise ValueError(f"unknown scheme {scheme!r}")
    table = increments.table
    n_steps = table.shape[0]
    lam = basis.lambdas
    kmax = basis.max_index
    sigma_kind = noise.sigma_kind
    noise_on = sigma_kind != "zero" and noise.basis.count > 0
    if noise_on:
        if table.shape[1] != noise.basis.count:
            raise ValueError("increment table does not match the noise truncation")
        kmax = max(kmax, noise.basis.max_index)
    work = _GridTransform(kmax)

    y = y0.coeffs.copy()
    denom = 1.0 + tau * lam
    decay = np.exp(-lam * tau)
    times = [0.0]
    samples = [y.copy()]

    for step in range(n_steps):
        if noise_on:
            r_grid = work.to_grid(work.scatter(noise.basis, noise.amplitudes * table[step]))
        if scheme == "semi-implicit":
            # rational linear factor, mirroring the finite element step
            drift = y + tau * y
            if cubic:
                grid = work.to_grid(work.scatter(basis, y))
                drift -= tau * work.gather(basis, work.to_tensor(grid * grid * grid))
            if noise_on:
                grid_y = work.to_grid(work.scatter(basis, y))
                load = work.gather(basis, work.to_tensor(r_grid * _sigma_values(sigma_kind, grid_y)))
                drift += load
            y = drift / denom
        else:
            # reaction subflow, then the exact heat propagator (available in
            # modal coordinates at no cost)
            grid = work.to_grid(work.scatter(basis, y))
            phi = logistic_flow(grid, tau) if cubic else grid * np.exp(tau)
            rhs = work.gather(basis, work.to_tensor(phi))
            if noise_on:
                rhs += work.gather(basis, work.to_tensor(r_grid * _sigma_values(sigma_kind, phi)))
            y = decay * rhs
        if not np.all(np.isfinite(y)):
            raise PathBlowupError(step)
        if (step + 1) % sample_stride == 0 or step == n_steps - 1:
            times.append((step + 1) * tau)
            samples.append(y.copy())

    return ModalTrajectory(np.array(times), np.array(samples), basis)


def exact_ou_path(basis: SpectralBasis, y0: ModalVector, amplitudes: np.ndarray,
                  increments, tau: float, sample_stride: int = 1) -> ModalTrajectory:
    """Exact per-mode Ornstein-Uhlenbeck update for the additive linear case
    dy_k = -lambda_k y_k dt + a_k dW_k.

    Consumes the same standard normals as the Euler path (Z = dW / sqrt(tau))
    so the two schemes are coupled pathwise.
    """
    table = increments.table
    lam = basis.lambdas
    amplitudes = np.asarray(amplitudes, dtype=float)
    decay = np.exp(-lam * tau)
    noise_scale = amplitudes * np.sqrt((1.0 - np.exp(-2.0 * lam * tau)) / (2.0 * lam))
    inv_sqrt_tau = 1.0 / np.sqrt(tau)

    y = y0.coeffs.copy()
    times = [0.0]
    samples = [y.copy()]
    for step in range(table.shape[0]):
        z = table[step] * inv_sqrt_tau
        y = decay * y + noise_scale * z
        if (step + 1) % sample_stride == 0 or step == table.shape[0] - 1:
            times.append((step + 1) * tau)
            samples.append(y.copy())
    return ModalTrajectory(np.array(times), np.array(samples), basis)


def euler_ou_path(basis: SpectralBasis, y0: ModalVector, amplitudes: np.ndarray,
                  increments, tau: float, sample_stride: int = 1) -> ModalTrajectory:
    """Explicit Euler-Maruyama path for the same additive linear system."""
    lam = basis.lambdas
    if tau * lam.max() >= 2.0:
        raise ValueError(
            f"explicit Euler unstable: tau * lambda_max = {tau * lam.max():.3f} >= 2"
        )
    table = increments.table
    amplitudes = np.asarray(amplitudes, dtype=float)
    y = y0.coeffs.copy()
    times = [0.0]
    samples = [y.copy()]
    for step in range(table.shape[0]):
        y = y - tau * lam * y + amplitudes * table[step]
        if (step + 1) % sample_stride == 0 or step == table.shape[0] - 1:
            times.append((step + 1) * tau)
            samples.append(y.copy())
    return ModalTrajectory(np.array(times), np.array(samples), basis)
