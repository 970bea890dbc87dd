"""Kinetic Gaussian kernel, shear, the semigroup of ``Delta_v - v . grad_x`` and Duhamel sums.

The free kinetic motion started at ``(x, v)`` has Gaussian increments with
``Var x = 2t^3/3``, ``Var v = 2t`` and ``Cov = t^2`` per dimension
(:func:`kernel_density`).  The semigroup solving ``du/dt = Delta_v u - v . grad_x u``
is ``P_t f = shear_t(q_t * f)`` where ``q_t(x, v) = p_t(x, -v)``; on the lattice
it is applied as the exact Fourier multiplier

    exp(sum_i -t^3 xi_i^2 / 3 + t^2 xi_i eta_i - t eta_i^2)

followed by the shear ``f(x - t v, v)`` (an x-phase per v-slice).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import lattice as lat_mod
from .lattice import AnisotropicLattice, LatticeField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    K: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"step count K must be a positive integer, got {self.K}")

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def nodes(self) -> np.ndarray:
        return self.T * np.arange(self.K + 1) / self.K

    def index_of(self, t: float) -> int:
        k = round(t / self.dt)
        if not (0 <= k <= self.K) or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"time {t} is not a node of the grid (T={self.T}, K={self.K})")
        return int(k)


class SpaceTimeField:
    """Lattice samples at every time node; ``values.shape == (K+1,) + lattice.shape + (c,)``.

    A static field stores a single slice (leading length 1) that is returned for
    every node.
    """

    def __init__(self, grid: TimeGrid, lattice: AnisotropicLattice, values: np.ndarray):
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == lattice.ndim + 1:
            vals = vals[..., None]
        if vals.shape[1:-1] != lattice.shape or vals.shape[0] not in (1, grid.K + 1):
            raise ValueError(
                f"values shape {vals.shape} incompatible with K={grid.K} and lattice {lattice.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("SpaceTimeField values must be finite")
        vals.flags.writeable = False
        self.grid = grid
        self.lattice = lattice
        self.values = vals

    @classmethod
    def static(cls, grid: TimeGrid, field: LatticeField) -> "SpaceTimeField":
        return cls(grid, field.lattice, field.values[None])

    @classmethod
    def zeros(cls, grid: TimeGrid, lattice: AnisotropicLattice, components: int = 1) -> "SpaceTimeField":
        return cls(grid, lattice, np.zeros((1,) + lattice.shape + (components,)))

    @property
    def is_static(self) -> bool:
        return self.values.shape[0] == 1

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def array(self, k: int, component: int = 0) -> np.ndarray:
        return self.values[0 if self.is_static else k, ..., component]

    def slice(self, k: int) -> LatticeField:
        return LatticeField(self.lattice, self.values[0 if self.is_static else k])

    def full(self) -> np.ndarray:
        """Values with the time axis expanded to K+1 slices."""
        if self.is_static:
            return np.broadcast_to(self.values, (self.grid.K + 1,) + self.values.shape[1:])
        return self.values


# ---------------------------------------------------------------------------
# kernel


def kernel_density(t: float, x, v) -> np.ndarray | float:
    """Density of ``(sqrt2 int_0^t B ds, sqrt2 B_t)`` at ``(x, v)``; x and v have trailing size d."""
    if not t > 0:
        raise ValueError(f"kernel time must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if v.ndim == 0:
        v = v[None]
    d = x.shape[-1]
    q = (3 * np.sum(x**2, axis=-1) + np.sum((3 * x - 2 * t * v) ** 2, axis=-1)) / (4 * t**3)
    out = (4 * math.pi**2 * t**4 / 3) ** (-d / 2) * np.exp(-q)
    return float(out) if np.ndim(out) == 0 else out


def kernel_on_lattice(t: float, lattice: AnisotropicLattice) -> np.ndarray:
    """``p_t`` at the lattice nodes (box centred at the origin)."""
    xs = [lattice.coord(a) for a in lattice.x_axes]
    vs = [lattice.coord(a) for a in lattice.v_axes]
    x = np.stack(np.broadcast_arrays(*xs, *vs)[: lattice.d], axis=-1)
    v = np.stack(np.broadcast_arrays(*xs, *vs)[lattice.d :], axis=-1)
    return kernel_density(t, x, v)


def kernel_mass(t: float, lattice: AnisotropicLattice) -> float:
    """Node-sum quadrature of ``p_t`` over the box."""
    return float(lattice.cell_volume * np.sum(kernel_on_lattice(t, lattice)))


# ---------------------------------------------------------------------------
# multipliers


@lru_cache(maxsize=64)
def _spectral_multiplier(lattice: AnisotropicLattice, t: float) -> np.ndarray:
    expo = 0.0
    for i in range(lattice.d):
        xi = lattice.freq(i, half=True)
        eta = lattice.freq(lattice.d + i, half=True)
        expo = expo - (t**3 / 3) * xi**2 + t**2 * xi * eta - t * eta**2
    return np.exp(expo)


def _wrapped_offsets(lattice: AnisotropicLattice, axis: int) -> np.ndarray:
    n = lattice.shape[axis]
    h = lattice.hx if axis < lattice.d else lattice.hv
    idx = np.arange(n)
    return lattice._view(h * (((idx + n // 2) % n) - n // 2), axis)


@lru_cache(maxsize=64)
def _sampled_multiplier(lattice: AnisotropicLattice, t: float) -> np.ndarray:
    # q_t(a, b) = p_t(a, -b) sampled at wrapped offsets, discrete mass renormalised to 1
    a = np.stack(np.broadcast_arrays(*[_wrapped_offsets(lattice, i) for i in range(lattice.ndim)]), axis=-1)
    q = kernel_density(t, a[..., : lattice.d], -a[..., lattice.d :])
    q = q / q.sum()
    return lat_mod.fft(q, lattice)


@lru_cache(maxsize=64)
def _shear_phase(lattice: AnisotropicLattice, t: float) -> np.ndarray:
    phase = 0.0
    for i in range(lattice.d):
        xi = lattice.freq(i, half=False)
        v = lattice.coord(lattice.d + i)
        phase = phase + xi * v
    return np.exp(-1j * t * phase)


def shear_array(t: float, arr: np.ndarray, lattice: AnisotropicLattice) -> np.ndarray:
    if t == 0:
        return np.array(arr, dtype=float)
    axes = lattice.x_axes
    spec = sfft.fftn(arr, axes=axes, workers=lat_mod._WORKERS)
    spec *= _shear_phase(lattice, float(t))
    return sfft.ifftn(spec, axes=axes, workers=lat_mod._WORKERS).real


def shear_apply(t: float, f: LatticeField) -> LatticeField:
    """``f(x - t v, v)`` by an x-Fourier phase on each v-slice."""
    lat = f.lattice
    out = np.stack([shear_array(t, f.component(c), lat) for c in range(f.components)], axis=-1)
    return LatticeField(lat, out)


class KineticSemigroup:
    """``P_t`` on one lattice; ``kernel`` is ``"spectral"`` (exact multiplier) or ``"sampled"``."""

    def __init__(self, lattice: AnisotropicLattice, kernel: str = "spectral", t_min: float = 0.0):
        if kernel not in ("spectral", "sampled"):
            raise ValueError(f"unknown kernel mode {kernel!r}")
        self.lattice = lattice
        self.kernel = kernel
        self.t_min = float(t_min)

    def multiplier(self, t: float) -> np.ndarray:
        if self.kernel == "spectral":
            return _spectral_multiplier(self.lattice, float(t))
        return _sampled_multiplier(self.lattice, float(t))

    def apply_array(self, t: float, arr: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ValueError(f"semigroup time must be nonnegative, got {t}")
        lat = self.lattice
        if t == 0:
            return np.array(arr, dtype=float)
        if t < self.t_min:
            log.warning("t=%g below t_min=%g: kernel under-resolved, applying shear only", t, self.t_min)
            return shear_array(t, arr, lat)
        smoothed = lat_mod.ifft(lat_mod.fft(arr, lat) * self.multiplier(t), lat)
        return shear_array(t, smoothed, lat)

    def __call__(self, t: float, f: LatticeField) -> LatticeField:
        out = np.stack([self.apply_array(t, f.component(c)) for c in range(f.components)], axis=-1)
        return LatticeField(f.lattice, out)


def semigroup_apply(t: float, f: LatticeField, kernel: str = "spectral", t_min: float = 0.0) -> LatticeField:
    """``P_t f``; t = 0 returns f."""
    return KineticSemigroup(f.lattice, kernel, t_min)(t, f)


# ---------------------------------------------------------------------------
# Duhamel


def duhamel_integral(
    lam: float,
    f: SpaceTimeField,
    t: float,
    rule: str = "left",
    semigroup: KineticSemigroup | None = None,
) -> LatticeField:
    """``int_0^t e^{-lam(t-s)} P_{t-s} f_s ds`` by a direct quadrature over the s-nodes.

    ``rule="left"`` sums s = t_0..t_{k-1}; ``rule="trapezoid"`` halves the end weights
    and includes ``f_t``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if rule not in ("left", "trapezoid"):
        raise ValueError(f"unknown quadrature rule {rule!r}")
    grid, lat = f.grid, f.lattice
    sg = semigroup or KineticSemigroup(lat)
    k = grid.index_of(t)
    dt = grid.dt
    out = np.zeros(lat.shape + (f.components,))
    for m in range(k):
        tau = (k - m) * dt
        w = dt * (0.5 if (rule == "trapezoid" and m == 0) else 1.0) * math.exp(-lam * tau)
        for c in range(f.components):
            out[..., c] += w * sg.apply_array(tau, f.array(m, c))
    if rule == "trapezoid" and k > 0:
        for c in range(f.components):
            out[..., c] += 0.5 * dt * f.array(k, c)
    return LatticeField(lat, out)


def duhamel_all(
    lam: float,
    f: SpaceTimeField,
    rule: str = "left",
    semigroup: KineticSemigroup | None = None,
) -> SpaceTimeField:
    """Duhamel integral at every node by the one-step recursion
    ``w_{k+1} = e^{-lam dt} P_dt (w_k + c_k dt f_k)``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if rule not in ("left", "trapezoid"):
        raise ValueError(f"unknown quadrature rule {rule!r}")
    grid, lat = f.grid, f.lattice
    sg = semigroup or KineticSemigroup(lat)
    dt = grid.dt
    decay = math.exp(-lam * dt)
    out = np.zeros((grid.K + 1,) + lat.shape + (f.components,))
    for c in range(f.components):
        w = np.zeros(lat.shape)
        for k in range(grid.K):
            weight = 0.5 if (rule == "trapezoid" and k == 0) else 1.0
            w = decay * sg.apply_array(dt, w + weight * dt * f.array(k, c))
            out[k + 1, ..., c] = w
            if rule == "trapezoid":
                out[k + 1, ..., c] += 0.5 * dt * f.array(k + 1, c)
    return SpaceTimeField(grid, lat, out)


def generator_residual(u: SpaceTimeField, f: SpaceTimeField, lam: float) -> np.ndarray:
    """Max-norm residual of ``du/dt - Delta_v u + v . grad_x u + lam u - f`` per interval.

    Time derivative by forward difference, space terms spectrally at the interval
    midpoint (average of the two end slices).
    """
    lat, grid = u.lattice, u.grid
    dt = grid.dt
    res = np.empty(grid.K)
    for k in range(grid.K):
        a, b = u.array(k), u.array(k + 1)
        mid = 0.5 * (a + b)
        res[k] = float(np.max(np.abs((b - a) / dt - kinetic_operator(mid, lat) + lam * mid
                                     - 0.5 * (f.array(k) + f.array(k + 1)))))
    return res


def kinetic_operator(arr: np.ndarray, lattice: AnisotropicLattice) -> np.ndarray:
    """``Delta_v arr - v . grad_x arr`` computed spectrally."""
    out = np.zeros(lattice.shape)
    for i in range(lattice.d):
        o2 = [0] * lattice.ndim
        o2[lattice.d + i] = 2
        o1 = [0] * lattice.ndim
        o1[i] = 1
        out += lat_mod.spectral_derivative(arr, lattice, o2)
        out -= lattice.coord(lattice.d + i) * lat_mod.spectral_derivative(arr, lattice, o1)
    return out
