"""Periodic anisotropic lattices, dyadic block operators and weighted Hölder norms.

Conventions
-----------
A lattice covers the periodic box ``[-Lx, Lx)^d x [-Lv, Lv)^d``.  Sample arrays
have shape ``(Nx,)*d + (Nv,)*d`` (position axes first); a :class:`LatticeField`
carries one extra trailing axis for components.  The scaling vector is
``a = (3, 1)``: position frequencies are measured as ``|xi|^(1/3)`` and velocity
frequencies as ``|eta|``.

All transforms are real FFTs over every lattice axis (``scipy.fft.rfftn``), so
symbols are stored on the full frequency grid and sliced to the half grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

SCALING = (3, 1)

_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Set the thread count used by every FFT in the package."""
    global _WORKERS
    _WORKERS = max(1, int(n))


@dataclass(frozen=True)
class AnisotropicLattice:
    d: int = 1
    Lx: float = 8 * math.pi
    Lv: float = 8 * math.pi
    Nx: int = 256
    Nv: int = 256

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")
        for name in ("Nx", "Nv"):
            n = getattr(self, name)
            if n < 2 or n % 2:
                raise ValueError(f"{name} must be a positive even integer, got {n}")
        if not (self.Lx > 0 and self.Lv > 0):
            raise ValueError("half-periods Lx, Lv must be positive")

    @property
    def scaling(self) -> tuple[int, int]:
        return SCALING

    @property
    def hx(self) -> float:
        return 2 * self.Lx / self.Nx

    @property
    def hv(self) -> float:
        return 2 * self.Lv / self.Nv

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.Nx,) * self.d + (self.Nv,) * self.d

    @property
    def ndim(self) -> int:
        return 2 * self.d

    @property
    def n_nodes(self) -> int:
        return self.Nx**self.d * self.Nv**self.d

    @property
    def x_axes(self) -> tuple[int, ...]:
        return tuple(range(self.d))

    @property
    def v_axes(self) -> tuple[int, ...]:
        return tuple(range(self.d, 2 * self.d))

    @property
    def cell_volume(self) -> float:
        return self.hx**self.d * self.hv**self.d

    def _view(self, arr: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.ndim
        shape[axis] = arr.size
        return arr.reshape(shape)

    def axis_coords(self, axis: int) -> np.ndarray:
        if axis < self.d:
            return -self.Lx + self.hx * np.arange(self.Nx)
        return -self.Lv + self.hv * np.arange(self.Nv)

    def coord(self, axis: int) -> np.ndarray:
        """Coordinate of ``axis`` as an array broadcastable against the lattice."""
        return self._view(self.axis_coords(axis), axis)

    def axis_freqs(self, axis: int, half: bool = False) -> np.ndarray:
        n, h = (self.Nx, self.hx) if axis < self.d else (self.Nv, self.hv)
        if half and axis == self.ndim - 1:
            return 2 * np.pi * np.fft.rfftfreq(n, d=h)
        return 2 * np.pi * np.fft.fftfreq(n, d=h)

    def freq(self, axis: int, half: bool = True) -> np.ndarray:
        return self._view(self.axis_freqs(axis, half), axis)

    @property
    def half_shape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.shape[-1] // 2 + 1,)

    def x_radius(self) -> np.ndarray:
        return np.sqrt(sum(self.coord(a) ** 2 for a in self.x_axes))

    def v_radius(self) -> np.ndarray:
        return np.sqrt(sum(self.coord(a) ** 2 for a in self.v_axes))

    def points(self) -> np.ndarray:
        """All node coordinates, shape ``lattice.shape + (2d,)``."""
        grids = np.meshgrid(*[self.axis_coords(a) for a in range(self.ndim)], indexing="ij")
        return np.stack(grids, axis=-1)

    def freq_norm_a(self, half: bool = False) -> np.ndarray:
        """``|xi|^(1/3) + |eta|`` on the (full or half) frequency grid."""
        xi2 = sum(self.freq(a, half) ** 2 for a in self.x_axes)
        eta2 = sum(self.freq(a, half) ** 2 for a in self.v_axes)
        return np.sqrt(xi2) ** (1.0 / 3.0) + np.sqrt(eta2)

    def weight(self, kappa: float) -> np.ndarray:
        """``rho_kappa`` sampled on the lattice (broadcastable)."""
        if kappa == 0:
            return np.ones((1,) * self.ndim)
        x2 = sum(self.coord(a) ** 2 for a in self.x_axes)
        v2 = sum(self.coord(a) ** 2 for a in self.v_axes)
        return ((1 + x2) ** (1.0 / 3.0) + 1 + v2) ** (-kappa / 2)


@dataclass(frozen=True, eq=False)
class LatticeField:
    """Samples of a scalar or vector field; ``values.shape == lattice.shape + (components,)``."""

    lattice: AnisotropicLattice
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape == self.lattice.shape:
            vals = vals[..., None]
        if vals.shape[:-1] != self.lattice.shape or vals.shape[-1] < 1:
            raise ValueError(
                f"values shape {vals.shape} does not match lattice {self.lattice.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("LatticeField values must be finite")
        if vals is self.values or np.shares_memory(vals, self.values):
            vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def component(self, i: int = 0) -> np.ndarray:
        return self.values[..., i]

    @classmethod
    def zeros(cls, lattice: AnisotropicLattice, components: int = 1) -> "LatticeField":
        return cls(lattice, np.zeros(lattice.shape + (components,)))

    @classmethod
    def from_function(cls, lattice: AnisotropicLattice, fn: Callable) -> "LatticeField":
        """Sample ``fn(x, v)`` where x, v are lists of broadcastable coordinate arrays."""
        xs = [lattice.coord(a) for a in lattice.x_axes]
        vs = [lattice.coord(a) for a in lattice.v_axes]
        out = np.broadcast_to(np.asarray(fn(xs, vs), dtype=float), lattice.shape)
        return cls(lattice, out)

    def __add__(self, other: "LatticeField") -> "LatticeField":
        _check_same(self, other)
        return LatticeField(self.lattice, self.values + other.values)

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        _check_same(self, other)
        return LatticeField(self.lattice, self.values - other.values)

    def __mul__(self, c: float) -> "LatticeField":
        return LatticeField(self.lattice, self.values * c)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_same(a: LatticeField, b: LatticeField) -> None:
    if a.lattice != b.lattice:
        raise ValueError("lattice mismatch")
    if a.components != b.components:
        raise ValueError("component mismatch")


@dataclass(frozen=True)
class HolderSpec:
    s: float
    kappa: float = 0.0
    p: float = math.inf

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.kappa)):
            raise ValueError("HolderSpec exponents must be finite")


# ---------------------------------------------------------------------------
# distance and weights


def anisotropic_distance(z, z_prime) -> np.ndarray | float:
    """``|x - x'|^(1/3) + |v - v'|`` for points with 2d coordinates."""
    z = np.asarray(z, dtype=float)
    zp = np.asarray(z_prime, dtype=float)
    if z.shape[-1] != zp.shape[-1] or z.shape[-1] % 2:
        raise ValueError("points must have the same even number of coordinates")
    d = z.shape[-1] // 2
    diff = z - zp
    out = np.linalg.norm(diff[..., :d], axis=-1) ** (1.0 / 3.0) + np.linalg.norm(
        diff[..., d:], axis=-1
    )
    return float(out) if out.ndim == 0 else out


def weight_rho(kappa: float, z) -> np.ndarray | float:
    """``((1 + |x|^2)^(1/3) + 1 + |v|^2)^(-kappa/2)``."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1] // 2
    x2 = np.sum(z[..., :d] ** 2, axis=-1)
    v2 = np.sum(z[..., d:] ** 2, axis=-1)
    out = ((1 + x2) ** (1.0 / 3.0) + 1 + v2) ** (-kappa / 2)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# transforms


def fft(arr: np.ndarray, lattice: AnisotropicLattice) -> np.ndarray:
    return sfft.rfftn(arr, axes=range(lattice.ndim), workers=_WORKERS)


def ifft(spec: np.ndarray, lattice: AnisotropicLattice) -> np.ndarray:
    return sfft.irfftn(spec, s=lattice.shape, axes=range(lattice.ndim), workers=_WORKERS)


def derivative_symbol(lattice: AnisotropicLattice, orders: Sequence[int]) -> np.ndarray:
    """Half-grid multiplier of ``prod_axis (d/d axis)^orders[axis]``.

    Odd derivatives along an axis zero that axis's Nyquist mode so real fields
    stay real.
    """
    sym = np.ones((1,) * lattice.ndim, dtype=complex)
    for axis, k in enumerate(orders):
        if k == 0:
            continue
        w = lattice.axis_freqs(axis, half=True)
        m = (1j * w) ** k
        if k % 2:
            m[lattice.shape[axis] // 2] = 0
        sym = sym * lattice._view(m, axis)
    return sym


def spectral_derivative(arr: np.ndarray, lattice: AnisotropicLattice, orders: Sequence[int]) -> np.ndarray:
    return ifft(fft(arr, lattice) * derivative_symbol(lattice, orders), lattice)


def _tensor_orders(lattice: AnisotropicLattice, k1: int, k2: int):
    """Every ordered index tuple of k1 x-derivatives and k2 v-derivatives, as order vectors."""
    d = lattice.d
    for xs in itertools.product(range(d), repeat=k1):
        for vs in itertools.product(range(d), repeat=k2):
            orders = [0] * lattice.ndim
            for i in xs:
                orders[i] += 1
            for i in vs:
                orders[d + i] += 1
            yield orders


def derivative_tensor_norm(arr: np.ndarray, lattice: AnisotropicLattice, k1: int, k2: int) -> np.ndarray:
    """Pointwise Euclidean norm of the tensor ``grad_x^k1 grad_v^k2 arr``."""
    if k1 == 0 and k2 == 0:
        return np.abs(arr)
    spec = fft(arr, lattice)
    acc = np.zeros(lattice.shape)
    cache: dict[tuple, np.ndarray] = {}
    for orders in _tensor_orders(lattice, k1, k2):
        key = tuple(orders)
        if key not in cache:
            cache[key] = ifft(spec * derivative_symbol(lattice, orders), lattice) ** 2
        acc += cache[key]
    return np.sqrt(acc)


# ---------------------------------------------------------------------------
# dyadic filter bank


def _bump_step(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def chi0_profile(r) -> np.ndarray:
    """Radial cutoff: 1 on ``r <= 1``, 0 on ``r >= 4/3``, C-infinity in between."""
    r = np.asarray(r, dtype=float)
    up = _bump_step(4.0 / 3.0 - r)
    down = _bump_step(r - 1.0)
    return up / (up + down)


@dataclass(frozen=True, eq=False)
class DyadicFilterBank:
    lattice: AnisotropicLattice
    J: int
    symbols: np.ndarray  # (J+1,) + lattice.shape, full frequency grid
    chi0: Callable = field(default=chi0_profile)

    @cached_property
    def half_symbols(self) -> np.ndarray:
        n = self.lattice.shape[-1] // 2 + 1
        return np.ascontiguousarray(self.symbols[..., :n])

    def violations(self) -> list[str]:
        """Names of DyadicFilterBank invariants that fail (empty when healthy)."""
        out = []
        total = self.symbols.sum(axis=0)
        if np.max(np.abs(total - 1)) > 1e-12:
            out.append("partition of unity")
        if self.symbols.min() < -1e-12 or self.symbols.max() > 1 + 1e-12:
            out.append("symbol range")
        r = self.lattice.freq_norm_a(half=False)
        if np.any(self.symbols[0][r > 4.0 / 3.0] != 0):
            out.append("support of block 0")
        for j in range(1, self.J + 1):
            outside = (r < 2.0 ** (j - 1)) | (r > 2.0 ** (j + 1))
            if np.any(self.symbols[j][outside] != 0):
                out.append(f"support of block {j}")
        flipped = self.symbols
        for axis in range(self.lattice.ndim):
            flipped = np.roll(np.flip(flipped, axis=axis + 1), 1, axis=axis + 1)
        if np.max(np.abs(flipped - self.symbols)) > 1e-12:
            out.append("symbol symmetry")
        return out


def build_filter_bank(lattice: AnisotropicLattice) -> DyadicFilterBank:
    r = lattice.freq_norm_a(half=False)
    rmax = float(r.max())
    J = 0
    while 2.0 ** (J + 1) <= rmax:
        J += 1
    if J + 1 < 3:
        raise ValueError(
            f"lattice resolves only {J + 1} dyadic blocks (max |xi|_a = {rmax:.3g}); need at least 3"
        )
    symbols = np.empty((J + 1,) + lattice.shape)
    symbols[0] = chi0_profile(r)
    prev = symbols[0]
    for j in range(1, J):
        cur = chi0_profile(r / 2.0**j)
        symbols[j] = cur - prev
        prev = cur
    symbols[J] = 1.0 - prev
    bank = DyadicFilterBank(lattice, J, symbols)
    bad = bank.violations()
    if bad:
        raise RuntimeError(f"filter bank invariants violated: {bad}")
    return bank


def _check_bank(f: LatticeField, bank: DyadicFilterBank) -> None:
    if f.lattice != bank.lattice:
        raise ValueError("lattice mismatch between field and filter bank")


def blocks_of(arr: np.ndarray, bank: DyadicFilterBank) -> np.ndarray:
    """All blocks ``R_j arr`` for j = 0..J of a scalar array, stacked on axis 0."""
    lat = bank.lattice
    spec = fft(arr, lat)
    return np.stack([ifft(spec * s, lat) for s in bank.half_symbols])


def block_array(arr: np.ndarray, j: int, bank: DyadicFilterBank) -> np.ndarray:
    lat = bank.lattice
    return ifft(fft(arr, lat) * bank.half_symbols[j], lat)


def block_apply(f: LatticeField, j: int, bank: DyadicFilterBank) -> LatticeField:
    """``R_j f``: keep the frequency content selected by block j."""
    _check_bank(f, bank)
    if not 0 <= j <= bank.J:
        raise ValueError(f"block index {j} outside 0..{bank.J}")
    out = np.stack([block_array(f.component(c), j, bank) for c in range(f.components)], axis=-1)
    return LatticeField(f.lattice, out)


def low_pass_array(arr: np.ndarray, k: int, bank: DyadicFilterBank) -> np.ndarray:
    if k <= 0:
        return np.zeros(bank.lattice.shape)
    k = min(k, bank.J + 1)
    lat = bank.lattice
    return ifft(fft(arr, lat) * bank.half_symbols[:k].sum(axis=0), lat)


def low_pass(f: LatticeField, k: int, bank: DyadicFilterBank) -> LatticeField:
    """``S_k f = sum_{j<k} R_j f``; the zero field for k <= 0."""
    _check_bank(f, bank)
    if k < -1:
        raise ValueError("k must be >= -1")
    out = np.stack([low_pass_array(f.component(c), k, bank) for c in range(f.components)], axis=-1)
    return LatticeField(f.lattice, out)


# ---------------------------------------------------------------------------
# norms


def _lp(arr: np.ndarray, p: float, cell: float) -> float:
    if math.isinf(p):
        return float(np.max(arr))
    return float((cell * np.sum(arr**p)) ** (1.0 / p))


def block_norms(f: LatticeField, bank: DyadicFilterBank, kappa: float = 0.0, p: float = math.inf) -> np.ndarray:
    """``||rho_kappa R_j f||_{L^p}`` for every j (pointwise Euclidean norm over components)."""
    _check_bank(f, bank)
    lat = f.lattice
    w = lat.weight(kappa)
    sq = np.zeros((bank.J + 1,) + lat.shape)
    for c in range(f.components):
        sq += blocks_of(f.component(c), bank) ** 2
    mags = np.sqrt(sq) * w
    return np.array([_lp(m, p, lat.cell_volume) for m in mags])


def holder_norm(f: LatticeField, spec: HolderSpec, bank: DyadicFilterBank) -> float:
    """Weighted anisotropic Hölder norm ``sup_j 2^{js} ||rho R_j f||``.

    For integer ``s >= 0`` the term ``||rho grad_v^s f||`` is added.
    """
    norms = block_norms(f, bank, spec.kappa, spec.p)
    j = np.arange(bank.J + 1)
    total = float(np.max(2.0 ** (j * spec.s) * norms))
    if spec.s >= 0 and float(spec.s).is_integer():
        lat = f.lattice
        k2 = int(spec.s)
        sq = np.zeros(lat.shape)
        for c in range(f.components):
            sq += derivative_tensor_norm(f.component(c), lat, 0, k2) ** 2
        total += _lp(np.sqrt(sq) * lat.weight(spec.kappa), spec.p, lat.cell_volume)
    return total


def bernstein_ratio(f: LatticeField, j: int, k1: int, k2: int, bank: DyadicFilterBank) -> float:
    """``||grad_x^k1 grad_v^k2 R_j f||_inf / (2^{j(3 k1 + k2)} ||R_j f||_inf)``; 0 if the block vanishes."""
    _check_bank(f, bank)
    lat = f.lattice
    num = np.zeros(lat.shape)
    den = np.zeros(lat.shape)
    for c in range(f.components):
        blk = block_array(f.component(c), j, bank)
        den += blk**2
        num += derivative_tensor_norm(blk, lat, k1, k2) ** 2
    den_max = math.sqrt(float(den.max()))
    scale = max(1.0, f.max_abs())
    if den_max <= 1e-13 * scale:
        return 0.0
    a1, a2 = SCALING
    return math.sqrt(float(num.max())) / (2.0 ** (j * (a1 * k1 + a2 * k2)) * den_max)
