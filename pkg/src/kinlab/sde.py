"""Kinetic SDE ``dX = V dt, dV = b(t, X, V) dt + sqrt2 dW`` with mollified drifts, plus
Monte Carlo estimators for occupation functionals, Krylov-type window bounds,
moment ratios, drift-functional Cauchy tables and the Itô martingale check.

Integrator (step h, per dimension): the free flow is sampled exactly,

    dV = sqrt(2h) z1,    dX = (h/2) dV + sqrt(h^3/6) z2,

so ``Var dX = 2h^3/3``, ``Var dV = 2h``, ``Cov = h^2``; then
``X <- X + V h + dX`` and ``V <- V + b(t, X, V) h + dV`` with the drift taken at
the left endpoint.  Lattice drifts are read by periodic multilinear interpolation.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, special

from . import lattice as lat_mod
from .lattice import AnisotropicLattice, LatticeField, weight_rho
from .rng import derive_seed
from .semigroup import SpaceTimeField

log = logging.getLogger(__name__)

CHUNK = 1000
N_BOOT = 200


# ---------------------------------------------------------------------------
# mollifier


def _bump_standard(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    m = r < 1
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


def _bump_quartic(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    m = r < 1
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 4))
    return out


BUMPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "standard": _bump_standard,
    "quartic": _bump_quartic,
}

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(400)
_R = 0.5 * (_GL_NODES + 1)
_W = 0.5 * _GL_WEIGHTS


def radial_bump_transform(bump: str, d: int, k: np.ndarray) -> np.ndarray:
    """Fourier transform of the radial bump on the unit ball of R^d, normalised to 1 at k = 0.

    Hankel form: ``phihat(k) ~ k^{1-d/2} int_0^1 phi(r) J_{d/2-1}(k r) r^{d/2} dr``.
    """
    k = np.asarray(k, dtype=float)
    phi = BUMPS[bump](_R)
    mass = np.sum(_W * phi * _R ** (d - 1))
    nu = d / 2 - 1
    out = np.ones_like(k)
    nz = k > 0
    kk = k[nz][:, None]
    # J_nu(kr) / (kr)^nu  ->  1 / (2^nu Gamma(nu+1)) as kr -> 0
    kr = kk * _R
    kernel = special.jv(nu, kr) / kr**nu * (2**nu * special.gamma(nu + 1))
    out[nz] = np.sum(_W * phi * _R ** (d - 1) * kernel, axis=1) / mass
    return out


@dataclass(frozen=True)
class MollifierSpec:
    """``Gamma_n(x, v) = n^{(ax + av) d} Gamma(n^ax x, n^av v)`` with a product radial bump."""

    n: int
    bump: str = "standard"
    x_exponent: float = 1.0
    v_exponent: float = 3.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"mollifier level must be a positive integer, got {self.n}")
        if self.bump not in BUMPS:
            raise ValueError(f"unknown bump {self.bump!r}; choose from {sorted(BUMPS)}")

    @property
    def x_radius(self) -> float:
        return self.n ** (-self.x_exponent)

    @property
    def v_radius(self) -> float:
        return self.n ** (-self.v_exponent)


@lru_cache(maxsize=32)
def _mollifier_symbol(lattice: AnisotropicLattice, spec: MollifierSpec) -> np.ndarray:
    xi2 = sum(lattice.freq(a) ** 2 for a in lattice.x_axes)
    eta2 = sum(lattice.freq(a) ** 2 for a in lattice.v_axes)
    sx = np.broadcast_to(np.sqrt(xi2), lattice.half_shape)
    sv = np.broadcast_to(np.sqrt(eta2), lattice.half_shape)

    def radial(vals, scale):
        uniq, inv = np.unique(vals * scale, return_inverse=True)
        return radial_bump_transform(spec.bump, lattice.d, uniq)[inv].reshape(vals.shape)

    return radial(sx, spec.x_radius) * radial(sv, spec.v_radius)


def bump_on_lattice(lattice: AnisotropicLattice, spec: MollifierSpec) -> np.ndarray:
    """``Gamma_n`` sampled at wrapped offsets and normalised to unit discrete mass."""
    rx = np.zeros((1,) * lattice.ndim)
    rv = np.zeros((1,) * lattice.ndim)
    for a in range(lattice.ndim):
        n = lattice.shape[a]
        h = lattice.hx if a < lattice.d else lattice.hv
        off = lattice._view(h * (((np.arange(n) + n // 2) % n) - n // 2), a)
        if a < lattice.d:
            rx = rx + off**2
        else:
            rv = rv + off**2
    phi = BUMPS[spec.bump]
    g = phi(np.sqrt(rx) / spec.x_radius) * phi(np.sqrt(rv) / spec.v_radius)
    return g / g.sum()


def mollify_drift(b: LatticeField, spec: MollifierSpec, method: str = "spectral") -> LatticeField:
    """``b * Gamma_n`` componentwise.

    ``method="spectral"`` multiplies by the exact bump transform ``Gammahat(xi / n^ax, eta / n^av)``.
    ``method="direct"`` convolves with the sampled, renormalised bump and refuses
    bumps narrower than three cells per axis.
    """
    lat = b.lattice
    if method == "spectral":
        sym = _mollifier_symbol(lat, spec)
    elif method == "direct":
        if spec.x_radius < 3 * lat.hx or spec.v_radius < 3 * lat.hv:
            raise ValueError(
                f"bump radii ({spec.x_radius:.3g}, {spec.v_radius:.3g}) span fewer than 3 cells "
                f"(hx={lat.hx:.3g}, hv={lat.hv:.3g})"
            )
        sym = lat_mod.fft(bump_on_lattice(lat, spec), lat)
    else:
        raise ValueError(f"unknown mollification method {method!r}")
    out = np.stack([lat_mod.ifft(lat_mod.fft(b.component(c), lat) * sym, lat) for c in range(b.components)], axis=-1)
    return LatticeField(lat, out)


# ---------------------------------------------------------------------------
# lattice lookups


def _coords(lattice: AnisotropicLattice, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    cx = [(x[:, i] + lattice.Lx) / lattice.hx for i in range(lattice.d)]
    cv = [(v[:, i] + lattice.Lv) / lattice.hv for i in range(lattice.d)]
    return np.array(cx + cv)


def interpolate(arr: np.ndarray, lattice: AnisotropicLattice, x: np.ndarray, v: np.ndarray, order: int = 1,
                prefiltered: bool = False) -> np.ndarray:
    """Periodic spline interpolation (order 1 = multilinear) of a lattice array at points."""
    return ndimage.map_coordinates(
        arr, _coords(lattice, x, v), order=order, mode="grid-wrap", prefilter=(order > 1 and not prefiltered)
    )


class FieldDrift:
    """Drift read from a vector lattice field (static) or a vector space-time field."""

    def __init__(self, source: LatticeField | SpaceTimeField):
        self.source = source
        self.lattice = source.lattice
        if source.components != self.lattice.d:
            raise ValueError("drift field must have d components")

    def __call__(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        src = self.source
        if isinstance(src, SpaceTimeField):
            k = min(int(math.floor(t / src.grid.dt + 1e-9)), src.grid.K)
            comps = [src.array(k, c) for c in range(src.components)]
        else:
            comps = [src.component(c) for c in range(src.components)]
        return np.stack([interpolate(c, self.lattice, x, v) for c in comps], axis=-1)


class ConstantDrift:
    def __init__(self, c: Sequence[float]):
        self.c = np.asarray(c, dtype=float)

    def __call__(self, t, x, v):
        return np.broadcast_to(self.c, x.shape)


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class SdeConfig:
    x0: tuple
    v0: tuple
    T: float
    K: int
    M: int
    master_seed: int = 0

    def __post_init__(self):
        if len(self.x0) != len(self.v0) or len(self.x0) < 1:
            raise ValueError("x0 and v0 must have the same positive length")
        if self.M < 2:
            raise ValueError("need at least 2 paths")
        if self.K < 1:
            raise ValueError("need at least 1 step")
        if not self.T > 0:
            raise ValueError("horizon must be positive")

    @property
    def d(self) -> int:
        return len(self.x0)

    @property
    def h(self) -> float:
        return self.T / self.K

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(self.K + 1) / self.K

    def with_start(self, x0, v0) -> "SdeConfig":
        return SdeConfig(tuple(x0), tuple(v0), self.T, self.K, self.M, self.master_seed)


@dataclass
class PathEnsemble:
    config: SdeConfig
    states: np.ndarray  # (M, K+1, 2d)
    seeds: np.ndarray  # (M,) uint64
    poisoned: np.ndarray  # (M,) bool
    excursions: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    @property
    def X(self) -> np.ndarray:
        return self.states[..., : self.config.d]

    @property
    def V(self) -> np.ndarray:
        return self.states[..., self.config.d :]

    @property
    def n_poisoned(self) -> int:
        return int(self.poisoned.sum())


def path_noise(seed: int, K: int, d: int) -> np.ndarray:
    """Standard normals ``(K, 2, d)`` for one path."""
    return np.random.Generator(np.random.PCG64(seed)).standard_normal((K, 2, d))


def _simulate_chunk(cfg: SdeConfig, drift, b2, seeds: np.ndarray) -> np.ndarray:
    d, K, h = cfg.d, cfg.K, cfg.h
    m = len(seeds)
    noise = np.stack([path_noise(int(s), K, d) for s in seeds])
    out = np.empty((m, K + 1, 2 * d))
    x = np.tile(np.asarray(cfg.x0, dtype=float), (m, 1))
    v = np.tile(np.asarray(cfg.v0, dtype=float), (m, 1))
    out[:, 0, :d] = x
    out[:, 0, d:] = v
    sv, sx = math.sqrt(2 * h), math.sqrt(h**3 / 6)
    for k in range(K):
        t = k * h
        dv = sv * noise[:, k, 0]
        dx = 0.5 * h * dv + sx * noise[:, k, 1]
        bt = np.zeros_like(v)
        if drift is not None:
            bt = bt + drift(t, x, v)
        if b2 is not None:
            bt = bt + b2(t, x, v)
        x, v = x + v * h + dx, v + bt * h + dv
        out[:, k + 1, :d] = x
        out[:, k + 1, d:] = v
    return out


def simulate_ensemble(cfg: SdeConfig, drift=None, b2=None, jobs: int = 1, lattice: AnisotropicLattice | None = None) -> PathEnsemble:
    """Simulate ``cfg.M`` paths; path i uses seed ``derive_seed(master_seed, i)``.

    Paths are processed in fixed chunks, so the result does not depend on ``jobs``.
    ``lattice`` (defaults to the drift's) is used only for the excursion count.
    """
    seeds = np.array([derive_seed(cfg.master_seed, i) for i in range(cfg.M)], dtype=np.uint64)
    chunks = [seeds[i : i + CHUNK] for i in range(0, cfg.M, CHUNK)]
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda s: _simulate_chunk(cfg, drift, b2, s), chunks))
    else:
        parts = [_simulate_chunk(cfg, drift, b2, s) for s in chunks]
    states = np.concatenate(parts)
    finite = np.all(np.isfinite(states), axis=(1, 2))
    poisoned = ~finite
    if poisoned.any():
        log.warning("%d paths produced non-finite states", int(poisoned.sum()))
    lat = lattice or getattr(drift, "lattice", None)
    excursions = 0
    if lat is not None:
        d = cfg.d
        with np.errstate(invalid="ignore"):
            out_x = np.any(np.abs(states[..., :d]) >= lat.Lx, axis=(1, 2))
            out_v = np.any(np.abs(states[..., d:]) >= lat.Lv, axis=(1, 2))
        excursions = int(np.sum(out_x | out_v))
        if excursions:
            log.info("%d paths left the periodic box (wrapped for drift lookups)", excursions)
    return PathEnsemble(cfg, states, seeds, poisoned, excursions)


# ---------------------------------------------------------------------------
# occupation functionals


def path_values(ens: PathEnsemble, f, lattice: AnisotropicLattice | None = None, order: int = 1) -> np.ndarray:
    """``f(t_k, Z_{t_k})`` for every path and node; shape ``(M, K+1)`` (or ``(M, K+1, c)`` for vector f).

    ``f`` may be a callable ``f(t, x, v)``, a :class:`LatticeField` or a :class:`SpaceTimeField`.
    """
    cfg = ens.config
    d = cfg.d
    M, K1 = cfg.M, cfg.K + 1
    if callable(f) and not isinstance(f, (LatticeField, SpaceTimeField)):
        out = np.empty((M, K1))
        for k, t in enumerate(ens.times):
            out[:, k] = f(t, ens.states[:, k, :d], ens.states[:, k, d:])
        return out
    lat = f.lattice
    comps = f.components
    out = np.empty((M, K1, comps))
    static = isinstance(f, LatticeField) or f.is_static
    if static:
        arrs = [f.component(c) if isinstance(f, LatticeField) else f.array(0, c) for c in range(comps)]
        if order > 1:
            arrs = [ndimage.spline_filter(a, order=order, mode="grid-wrap") for a in arrs]
        x = ens.states[..., :d].reshape(-1, d)
        v = ens.states[..., d:].reshape(-1, d)
        for c in range(comps):
            out[..., c] = interpolate(arrs[c], lat, x, v, order, prefiltered=True).reshape(M, K1)
    else:
        grid = f.grid
        for k, t in enumerate(ens.times):
            kk = min(int(math.floor(t / grid.dt + 1e-9)), grid.K)
            for c in range(comps):
                a = f.array(kk, c)
                if order > 1:
                    a = ndimage.spline_filter(a, order=order, mode="grid-wrap")
                out[:, k, c] = interpolate(a, lat, ens.states[:, k, :d], ens.states[:, k, d:], order, prefiltered=True)
    return out[..., 0] if comps == 1 else out


def occupation_integrals(ens: PathEnsemble, f, order: int = 1) -> np.ndarray:
    """``A_t = int_0^t f(s, Z_s) ds`` at every node by the left-endpoint rule; ``A_0 = 0``."""
    vals = path_values(ens, f, order=order)
    A = np.zeros_like(vals)
    A[:, 1:] = ens.config.h * np.cumsum(vals[:, :-1], axis=1)
    return A


def functional_integral(ens: PathEnsemble, f, t0: float, t1: float) -> np.ndarray:
    """Per-path left-endpoint sum of ``f(s, Z_s)`` over ``[t0, t1)``."""
    h = ens.config.h
    k0, k1 = round(t0 / h), round(t1 / h)
    for t, k in ((t0, k0), (t1, k1)):
        if abs(k * h - t) > 1e-9 * max(1.0, ens.config.T) or not 0 <= k <= ens.config.K:
            raise ValueError(f"window end {t} is not on the time grid")
    if not k0 < k1:
        raise ValueError("need t0 < t1")
    A = occupation_integrals(ens, f)
    return A[:, k1] - A[:, k0]


# ---------------------------------------------------------------------------
# statistics helpers


def bootstrap_stderr(samples: np.ndarray, statistic: Callable[[np.ndarray], float], n_boot: int = N_BOOT, seed: int = 0) -> float:
    """Bootstrap standard error of ``statistic`` over the leading (path) axis."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(samples)
    vals = [statistic(samples[rng.integers(0, n, n)]) for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


def lp_norm(x: np.ndarray, p: float) -> float:
    x = np.abs(x)
    if math.isinf(p):
        return float(x.max())
    return float(np.mean(x**p) ** (1.0 / p))


def loglog_slope(sizes: np.ndarray, values: np.ndarray) -> float:
    return float(np.polyfit(np.log(sizes), np.log(values), 1)[0])


# ---------------------------------------------------------------------------
# Krylov windows


def krylov_exponent(alpha: float, q: float) -> float:
    return (2 + alpha - (0.0 if math.isinf(q) else 2.0 / q)) / 2


@dataclass
class KrylovReport:
    alpha: float
    q: float
    p: float
    windows: np.ndarray  # sigma_w
    estimates: np.ndarray  # envelope of normalised L^p window norms
    slope: float
    slope_stderr: float
    ratios: np.ndarray
    weighted_factor: float = 1.0

    @property
    def target(self) -> float:
        return krylov_exponent(self.alpha, self.q)

    def to_csv(self) -> str:
        lines = ["sigma_w,estimate,ratio"]
        lines += [f"{float(s)!r},{float(e)!r},{float(r)!r}" for s, e, r in zip(self.windows, self.estimates, self.ratios)]
        return "\n".join(lines) + "\n"


def _window_powers(A: np.ndarray, steps: Sequence[int], p: float) -> tuple[np.ndarray, list[slice]]:
    """``|A_{s+w} - A_s|^p`` per path for every window length w and start s (stride w/2).

    Returns the ``(M, n_windows)`` matrix and the column slice belonging to each w.
    """
    K = A.shape[1] - 1
    cols, groups, pos = [], [], 0
    for w in steps:
        starts = np.arange(0, K - w + 1, max(1, w // 2))
        cols.append(np.abs(A[:, starts + w] - A[:, starts]) ** p)
        groups.append(slice(pos, pos + starts.size))
        pos += starts.size
    return np.concatenate(cols, axis=1), groups


def _sup_over_starts(means: np.ndarray, groups: list[slice], p: float) -> np.ndarray:
    """``sup_s (E|.|^p)^{1/p}`` per window length; ``means`` has windows on the last axis."""
    return np.stack([means[..., g].max(axis=-1) for g in groups], axis=-1) ** (1.0 / p)


def krylov_scan(
    ens: PathEnsemble,
    family: Sequence,
    norms: Sequence[float],
    alpha: float,
    q: float,
    p: float = 2.0,
    window_steps: Sequence[int] | None = None,
    weight_nu: float = 0.0,
    seed: int = 0,
) -> KrylovReport:
    """Window-norm envelope ``max_f sup_s ||int_s^{s+sigma} f(Z) dr||_{L^p} / ||f||`` against sigma.

    ``norms`` are the ``L^q_T C^alpha(rho_delta)`` norms of the family members.  The
    slope stderr is a bootstrap over paths (multinomial path weights).  ``weight_nu``
    multiplies the bound by ``rho_{-nu}(z0)``.
    """
    K, M = ens.config.K, ens.config.M
    if math.isinf(p) or p < 1:
        raise ValueError("window norms need a finite p >= 1")
    if window_steps is None:
        window_steps = [2**i for i in range(int(math.log2(K)))]
    steps = np.array(sorted(set(int(w) for w in window_steps)))
    if steps.size < 2 or steps.min() < 1 or steps.max() > K:
        raise ValueError("window grid must contain at least two sizes within [1, K]")
    norms = np.asarray(norms, dtype=float)
    if len(norms) != len(family) or np.any(norms <= 0):
        raise ValueError("need one positive norm per family member")
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = rng.multinomial(M, np.full(M, 1.0 / M), size=N_BOOT).astype(float)
    est = np.zeros(steps.size)
    boot = np.zeros((N_BOOT, steps.size))
    for f, nf in zip(family, norms):
        powers, groups = _window_powers(occupation_integrals(ens, f), steps, p)
        est = np.maximum(est, _sup_over_starts(powers.mean(axis=0), groups, p) / nf)
        boot = np.maximum(boot, _sup_over_starts(counts @ powers / M, groups, p) / nf)
    sig = steps * ens.config.h
    slope = loglog_slope(sig, est)
    boots = [loglog_slope(sig, b) for b in boot]
    z0 = np.concatenate([ens.config.x0, ens.config.v0])
    wf = float(weight_rho(-weight_nu, z0)) if weight_nu else 1.0
    ratios = est / (sig ** krylov_exponent(alpha, q) * wf)
    return KrylovReport(alpha, q, p, sig, est, slope, float(np.std(boots, ddof=1)), ratios, wf)


@dataclass
class HolderFit:
    exponent: float
    stderr: float
    lags: np.ndarray
    moduli: np.ndarray


def holder_exponent_of_A(
    ens: PathEnsemble,
    family: Sequence,
    p: float = 2.0,
    lag_steps: Sequence[int] | None = None,
    norms: Sequence[float] | None = None,
    seed: int = 0,
) -> HolderFit:
    """Fit ``sup_s ||A_{s+tau} - A_s||_{L^p}`` against tau in log-log (envelope over the family)."""
    norms = np.ones(len(family)) if norms is None else np.asarray(norms, dtype=float)
    rep = krylov_scan(ens, family, norms, 0.0, math.inf, p, lag_steps, seed=seed)
    return HolderFit(rep.slope, rep.slope_stderr, rep.windows, rep.estimates)


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentRow:
    delta: float
    ratio: float
    stderr: float


def moment_report(ens: PathEnsemble, deltas: Sequence[float], seed: int = 0) -> list[MomentRow]:
    """``E sup_t rho_delta(Z_t) / rho_delta(z0)`` per delta, bootstrap stderr."""
    cfg = ens.config
    z0 = np.concatenate([cfg.x0, cfg.v0]).astype(float)
    rows = []
    for dl in deltas:
        sup = np.max(weight_rho(dl, ens.states), axis=1) / weight_rho(dl, z0)
        rows.append(MomentRow(float(dl), float(sup.mean()), bootstrap_stderr(sup, np.mean, seed=seed)))
    return rows


# ---------------------------------------------------------------------------
# drift functionals


@dataclass
class CauchyReport:
    levels: list[int]
    reference_level: int
    differences: np.ndarray  # consecutive pairs
    difference_stderr: np.ndarray
    independence: float
    independence_stderr: float
    noise_floor: float

    def monotone_within(self, slack: float) -> bool:
        d = self.differences
        return bool(np.all(d[1:] <= d[:-1] + slack))

    def to_csv(self) -> str:
        lines = ["n,m,l2_sup_difference,stderr"]
        for i in range(len(self.differences)):
            lines.append(
                f"{self.levels[i]},{self.levels[i + 1]},{float(self.differences[i])!r},{float(self.difference_stderr[i])!r}"
            )
        lines.append(f"bump_pair,{self.levels[-1]},{float(self.independence)!r},{float(self.independence_stderr)!r}")
        lines.append(f"noise_floor,{self.reference_level},{float(self.noise_floor)!r},0.0")
        return "\n".join(lines) + "\n"


def _sup_l2(D: np.ndarray) -> float:
    """``sup_t sqrt(E |D_t|^2)`` for D of shape (M, K+1[, d])."""
    sq = D**2
    if sq.ndim == 3:
        sq = sq.sum(axis=-1)
    return float(np.sqrt(sq.mean(axis=0)).max())


def drift_functional_cauchy(
    cfg: SdeConfig,
    b: LatticeField,
    levels: Sequence[int],
    reference_level: int,
    second_bump: str = "quartic",
    jobs: int = 1,
    method: str = "spectral",
) -> CauchyReport:
    """L^2 Cauchy table of ``A_t^{b_n} = int_0^t b_n(Z_s) ds`` along paths driven by ``b_{n*}``."""
    levels = [int(n) for n in levels]
    if sorted(levels) != levels or len(set(levels)) != len(levels) or len(levels) < 2:
        raise ValueError("levels must be strictly increasing with at least two entries")
    if reference_level <= levels[-1]:
        raise ValueError("reference level must exceed every compared level")
    b_ref = mollify_drift(b, MollifierSpec(reference_level), method)
    ens = simulate_ensemble(cfg, FieldDrift(b_ref), jobs=jobs)
    A = {n: occupation_integrals(ens, mollify_drift(b, MollifierSpec(n), method)) for n in levels}
    diffs, errs = [], []
    for n, m in zip(levels[:-1], levels[1:]):
        D = A[n] - A[m]
        diffs.append(_sup_l2(D))
        errs.append(bootstrap_stderr(D, _sup_l2))
    top = levels[-1]
    A2 = occupation_integrals(ens, mollify_drift(b, MollifierSpec(top, bump=second_bump), method))
    Dind = A[top] - A2
    A_ref = occupation_integrals(ens, b_ref)
    end = A_ref[:, -1].reshape(cfg.M, -1)
    floor = bootstrap_stderr(end, lambda s: float(np.sqrt(np.mean(np.sum(s**2, axis=-1)))))
    return CauchyReport(levels, reference_level, np.array(diffs), np.array(errs),
                        _sup_l2(Dind), bootstrap_stderr(Dind, _sup_l2), floor)


# ---------------------------------------------------------------------------
# Itô martingale check


@dataclass
class ItoReport:
    slope: float
    slope_stderr: float
    qv_mean: float
    predicted_qv_mean: float
    qv_stderr: float
    bands: float
    max_abs_martingale: float

    @property
    def regression_passes(self) -> bool:
        return abs(self.slope) <= self.bands * self.slope_stderr or self.slope_stderr == 0 and self.slope == 0

    @property
    def qv_passes(self) -> bool:
        diff = abs(self.qv_mean - self.predicted_qv_mean)
        return diff <= self.bands * self.qv_stderr if self.qv_stderr > 0 else diff == 0

    @property
    def passes(self) -> bool:
        return self.regression_passes and self.qv_passes


def _regression_slope(M: np.ndarray) -> float:
    x = M[:, :-1].ravel()
    y = (M[:, 1:] - M[:, :-1]).ravel()
    xc = x - x.mean()
    den = float(np.dot(xc, xc))
    return 0.0 if den == 0 else float(np.dot(xc, y - y.mean()) / den)


def ito_martingale_test(u: SpaceTimeField, ens: PathEnsemble, f, bands: float = 3.0, seed: int = 0) -> ItoReport:
    """Check that ``M_t = u(t, Z_t) - u(0, Z_0) - int_0^t f(s, Z_s) ds`` is a martingale.

    (i) pooled regression of ``M_{t+h} - M_t`` on ``M_t`` (slope 0 within ``bands`` bootstrap
    stderr); (ii) ``E [M]_T`` against ``E 2 int_0^T |grad_v u|^2(s, Z_s) ds`` within ``bands``
    combined stderr of the two sample means.  u is read by periodic cubic splines.
    """
    cfg = ens.config
    if u.grid.K != cfg.K or abs(u.grid.T - cfg.T) > 1e-12:
        raise ValueError("u and the ensemble must share the time grid")
    lat = u.lattice
    uz = path_values(ens, u, order=3)
    A = occupation_integrals(ens, f, order=3)
    M = uz - uz[:, :1] - A
    grads = []
    for i in range(lat.d):
        orders = [0] * lat.ndim
        orders[lat.d + i] = 1
        g = np.empty((u.grid.K + 1,) + lat.shape)
        for k in range(u.grid.K + 1):
            g[k] = lat_mod.spectral_derivative(u.array(k), lat, orders)
        grads.append(path_values(ens, SpaceTimeField(u.grid, lat, g), order=3))
    gsq = sum(gi**2 for gi in grads)
    pred = 2 * cfg.h * np.sum(gsq[:, :-1], axis=1)
    qv = np.sum(np.diff(M, axis=1) ** 2, axis=1)
    slope = _regression_slope(M)
    se = bootstrap_stderr(M, _regression_slope, n_boot=N_BOOT // 2, seed=seed)
    n = len(qv)
    combined = math.sqrt((qv.var(ddof=1) + pred.var(ddof=1)) / n)
    return ItoReport(slope, se, float(qv.mean()), float(pred.mean()), combined, bands, float(np.abs(M).max()))
