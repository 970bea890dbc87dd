"""Gaussian drifts with power-law spectrum in x and no v-dependence.

A sample is ``U(x) = sum_k c_k e^{i xi_k . x}`` with Hermitian, independent centred
Gaussian coefficients of variance ``E|c_k|^2 = s_k``, where

    s_k = |xi_k|^{-gamma} * dxi^d      (riesz_x_delta_v)
    s_k = weights[k]                   (tabulated)

and ``s_0 = 0``.  For ``f, g`` on the x-grid with ``fhat_k = hx^d * fft(f)_k`` this gives
``E <U, f> <U, g> = sum_k s_k fhat_k conj(ghat_k)`` (see :func:`pairing_covariance`).
The field is copied along every v-axis, so ``div_v U`` vanishes identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from . import lattice as lat_mod
from .lattice import AnisotropicLattice, DyadicFilterBank, LatticeField, blocks_of
from .rng import derive_seed, substream

KINDS = ("riesz_x_delta_v", "tabulated")


@dataclass(frozen=True, eq=False)
class SpectralMeasureSpec:
    d: int
    gamma: float = 0.0
    kind: str = "riesz_x_delta_v"
    moment_exponent: float | None = None
    weights: np.ndarray | None = None  # tabulated: shape (Nx,)*d, full x-frequency grid

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectral measure kind {self.kind!r}")
        if self.kind == "riesz_x_delta_v":
            if not 0 <= self.gamma < self.d:
                raise ValueError(f"gamma must lie in [0, d) = [0, {self.d}), got {self.gamma}")
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != self.d:
                raise ValueError("tabulated weights must have one axis per position dimension")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("tabulated weights must be finite and nonnegative")
            flipped = w
            for a in range(self.d):
                flipped = np.roll(np.flip(flipped, axis=a), 1, axis=a)
            if not np.allclose(flipped, w, rtol=1e-12, atol=0):
                raise ValueError("tabulated weights must be symmetric under xi -> -xi")
            object.__setattr__(self, "weights", w)

    def check_sde_window(self) -> None:
        """Reject exponents outside ``(d - 2/3, d)``, the window used for SDE drifts."""
        if self.kind == "riesz_x_delta_v" and not (self.d - 2.0 / 3.0 < self.gamma < self.d):
            raise ValueError(f"gamma must lie in (d-2/3, d) = ({self.d - 2 / 3:.4g}, {self.d}) for SDE drifts")

    def theoretical_slope(self) -> float:
        return 1.5 * (self.d - self.gamma)

    def spectrum(self, lattice: AnisotropicLattice) -> np.ndarray:
        """Coefficient variances ``s_k`` on the full x-frequency grid."""
        if lattice.d != self.d:
            raise ValueError("spec and lattice dimensions differ")
        if self.kind == "tabulated":
            if self.weights.shape != (lattice.Nx,) * self.d:
                raise ValueError("tabulated weights do not match the lattice x-grid")
            s = self.weights.copy()
        else:
            r2 = 0.0
            for a in range(self.d):
                w = lattice.axis_freqs(a)
                shape = [1] * self.d
                shape[a] = w.size
                r2 = r2 + w.reshape(shape) ** 2
            r2 = np.broadcast_to(r2, (lattice.Nx,) * self.d)
            dxi = math.pi / lattice.Lx
            with np.errstate(divide="ignore"):
                s = np.where(r2 > 0, r2 ** (-self.gamma / 2), 0.0) * dxi**self.d
        s = np.array(s, dtype=float)
        s[(0,) * self.d] = 0.0
        return s


@dataclass(frozen=True, eq=False)
class GaussianFieldSample:
    lattice: AnisotropicLattice
    components: int
    field: LatticeField
    seed: int
    spec: SpectralMeasureSpec

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def sample_x(spec: SpectralMeasureSpec, lattice: AnisotropicLattice, seed: int) -> np.ndarray:
    """One scalar sample on the x-grid, shape ``(Nx,)*d``."""
    d = lattice.d
    axes = tuple(range(d))
    shape = (lattice.Nx,) * d
    rng = substream(seed, 0)
    white = rng.standard_normal(shape)
    scale = np.sqrt(spec.spectrum(lattice) / lattice.Nx**d)
    half = scale[..., : lattice.Nx // 2 + 1]
    w_hat = sfft.rfftn(white, axes=axes, workers=lat_mod._WORKERS)
    return sfft.irfftn(w_hat * half, s=shape, axes=axes, workers=lat_mod._WORKERS) * lattice.Nx**d


def _replicate_v(xfield: np.ndarray, lattice: AnisotropicLattice) -> np.ndarray:
    return np.broadcast_to(xfield.reshape(xfield.shape + (1,) * lattice.d), lattice.shape)


def sample_field(
    spec: SpectralMeasureSpec, lattice: AnisotropicLattice, seed: int, components: int | None = None
) -> GaussianFieldSample:
    """Draw ``components`` independent fields (default d, the vector drift)."""
    comps = lattice.d if components is None else int(components)
    if comps < 1:
        raise ValueError("components must be positive")
    vals = np.stack(
        [_replicate_v(sample_x(spec, lattice, derive_seed(seed, c)), lattice) for c in range(comps)], axis=-1
    )
    return GaussianFieldSample(lattice, comps, LatticeField(lattice, vals), int(seed), spec)


# ---------------------------------------------------------------------------
# covariance


def x_transform(f: np.ndarray, lattice: AnisotropicLattice) -> np.ndarray:
    """``hx^d * fft(f)`` over the x-grid."""
    return lattice.hx**lattice.d * sfft.fftn(f, axes=tuple(range(lattice.d)))


def pairing(u: np.ndarray, f: np.ndarray, lattice: AnisotropicLattice) -> float:
    return float(lattice.hx**lattice.d * np.sum(u * f))


def pairing_covariance(spec: SpectralMeasureSpec, lattice: AnisotropicLattice, f: np.ndarray, g: np.ndarray) -> float:
    """Spectral quadrature of ``E <U, f> <U, g>``."""
    s = spec.spectrum(lattice)
    return float(np.real(np.sum(s * x_transform(f, lattice) * np.conj(x_transform(g, lattice)))))


@dataclass
class CovarianceReport:
    empirical: float
    theoretical: float
    stderr: float
    n_samples: int

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.empirical == self.theoretical else math.inf
        return (self.empirical - self.theoretical) / self.stderr


def covariance_check(
    spec: SpectralMeasureSpec,
    lattice: AnisotropicLattice,
    f: np.ndarray,
    g: np.ndarray,
    n_samples: int,
    seed: int,
) -> CovarianceReport:
    """Empirical covariance of ``<U, f>`` and ``<U, g>`` against the spectral quadrature."""
    prods = np.empty(n_samples)
    for i in range(n_samples):
        u = sample_x(spec, lattice, derive_seed(seed, i))
        prods[i] = pairing(u, f, lattice) * pairing(u, g, lattice)
    return CovarianceReport(
        float(prods.mean()),
        pairing_covariance(spec, lattice, f, g),
        float(prods.std(ddof=1) / math.sqrt(n_samples)),
        n_samples,
    )


def coefficient_power(spec: SpectralMeasureSpec, lattice: AnisotropicLattice, probes, n_samples: int, seed: int):
    """Sample mean and stderr of ``|c_k|^2`` at the given x-frequency index tuples."""
    probes = [tuple(np.atleast_1d(p)) for p in probes]
    vals = np.empty((n_samples, len(probes)))
    n = lattice.Nx**lattice.d
    for i in range(n_samples):
        c = sfft.fftn(sample_x(spec, lattice, derive_seed(seed, i))) / n
        vals[i] = [abs(c[p]) ** 2 for p in probes]
    s = spec.spectrum(lattice)
    expected = np.array([s[p] for p in probes])
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(n_samples), expected


# ---------------------------------------------------------------------------
# block decay


@dataclass
class SlopeFit:
    slope: float
    stderr: float
    j: np.ndarray
    mean_block_norm: np.ndarray
    block_stderr: np.ndarray

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.slope - z * self.stderr, self.slope + z * self.stderr

    def to_csv(self) -> str:
        lines = ["j,mean_block_norm,stderr"]
        lines += [f"{int(j)},{float(m)!r},{float(s)!r}" for j, m, s in zip(self.j, self.mean_block_norm, self.block_stderr)]
        return "\n".join(lines) + "\n"


def block_lp_norms(field: LatticeField, bank: DyadicFilterBank, p: float = 2.0) -> np.ndarray:
    """Node-averaged ``(mean |R_j U|^p)^{1/p}`` per block (Euclidean over components)."""
    sq = np.zeros((bank.J + 1,) + field.lattice.shape)
    for c in range(field.components):
        sq += blocks_of(field.component(c), bank) ** 2
    mag = np.sqrt(sq).reshape(bank.J + 1, -1)
    if math.isinf(p):
        return mag.max(axis=1)
    return np.mean(mag**p, axis=1) ** (1.0 / p)


def _fit(j: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(j, np.log2(y), 1)[0])


def block_decay_slope(
    samples,
    bank: DyadicFilterBank,
    j_range=None,
    p: float = 2.0,
    n_boot: int = 200,
    seed: int = 0,
) -> SlopeFit:
    """Least-squares slope of ``log2 E ||R_j U||_p`` against j over an ensemble.

    ``samples`` is a sequence of :class:`LatticeField` or :class:`GaussianFieldSample`.
    The stderr comes from a bootstrap over samples.
    """
    fields = [s.field if isinstance(s, GaussianFieldSample) else s for s in samples]
    if not fields:
        raise ValueError("no samples supplied")
    j = np.arange(1, bank.J) if j_range is None else np.asarray(list(j_range))
    if j.size < 4:
        raise ValueError(f"need at least 4 blocks for a slope fit, got {j.size}")
    norms = np.array([block_lp_norms(f, bank, p)[j] for f in fields])
    if np.any(norms.mean(axis=0) <= 0):
        raise ValueError("some fitted blocks carry no content")
    mean = norms.mean(axis=0)
    slope = _fit(j, mean)
    n = len(fields)
    se = norms.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    boot_rng = np.random.Generator(np.random.PCG64(seed))
    boots = [_fit(j, norms[boot_rng.integers(0, n, n)].mean(axis=0)) for _ in range(n_boot)] if n > 1 else [slope]
    return SlopeFit(slope, float(np.std(boots, ddof=1)) if n > 1 else 0.0, j, mean, se)


def slope_lattice(d: int = 1) -> AnisotropicLattice:
    """Lattice on which a v-constant field resolves blocks 1..4 without touching the top block."""
    if d != 1:
        return AnisotropicLattice(d=d, Lx=4 * math.pi, Lv=8 * math.pi, Nx=2**9, Nv=2)
    return AnisotropicLattice(d=1, Lx=4 * math.pi, Lv=8 * math.pi, Nx=2**18, Nv=2)


def divergence_v(field: LatticeField) -> np.ndarray:
    """``sum_i d/dv_i U_i`` computed spectrally."""
    lat = field.lattice
    out = np.zeros(lat.shape)
    for i in range(lat.d):
        orders = [0] * lat.ndim
        orders[lat.d + i] = 1
        out += lat_mod.spectral_derivative(field.component(i), lat, orders)
    return out
