"""Fast invariant suites run by ``krl selftest``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gaussian_field import SpectralMeasureSpec, divergence_v, sample_field
from .lattice import AnisotropicLattice, DyadicFilterBank, LatticeField, block_apply, build_filter_bank
from .paraproduct import bony_decomposition, para_low_high
from .sde import SdeConfig, simulate_ensemble
from .semigroup import SpaceTimeField, TimeGrid, duhamel_all, kernel_density, kernel_mass, semigroup_apply
from .solver import PdeProblem, picard_solve


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _random_field(lat: AnisotropicLattice, seed: int) -> LatticeField:
    return LatticeField(lat, np.random.default_rng(seed).standard_normal(lat.shape))


def _smooth(lat: AnisotropicLattice) -> LatticeField:
    x, v = lat.coord(0), lat.coord(lat.d)
    return LatticeField(lat, np.broadcast_to(np.cos(x / 4) * np.exp(-(v**2) / 8), lat.shape))


def suite_spectral(lat: AnisotropicLattice, bank: DyadicFilterBank, **_) -> SuiteResult:
    bad = bank.violations()
    f = _random_field(lat, 1)
    rec = sum(block_apply(f, j, bank).values for j in range(bank.J + 1))
    err = float(np.max(np.abs(rec - f.values)))
    leak = 0.0
    for j in range(bank.J + 1):
        bj = block_apply(f, j, bank)
        for i in range(bank.J + 1):
            if abs(i - j) > 2:
                leak = max(leak, block_apply(bj, i, bank).max_abs())
    ok = not bad and err <= 1e-10 and leak <= 1e-12
    return SuiteResult("spectral", ok, f"violations={bad or 'none'} reconstruction={err:.2e} leak={leak:.2e}")


def suite_paraproduct(lat: AnisotropicLattice, bank: DyadicFilterBank, **_) -> SuiteResult:
    f, g = _random_field(lat, 2), _random_field(lat, 3)
    err = float(np.max(np.abs(bony_decomposition(f, g, bank).total().values - f.values * g.values)))
    one = LatticeField(lat, np.ones(lat.shape))
    lh = para_low_high(one, g, bank).values
    ref = g.values - block_apply(g, 0, bank).values - block_apply(g, 1, bank).values
    err1 = float(np.max(np.abs(lh - ref)))
    return SuiteResult("paraproduct", err <= 1e-10 and err1 <= 1e-10, f"bony={err:.2e} constant_low_high={err1:.2e}")


def suite_semigroup(lat: AnisotropicLattice, bank: DyadicFilterBank, **_) -> SuiteResult:
    mass = abs(kernel_mass(1.0, lat) - 1)
    f = _smooth(lat)
    law = float(np.max(np.abs(semigroup_apply(0.5, semigroup_apply(0.25, f)).values - semigroup_apply(0.75, f).values)))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        lam, t = rng.uniform(0.5, 2), rng.uniform(0.5, 2)
        x, v = rng.normal(size=lat.d), rng.normal(size=lat.d)
        lhs = kernel_density(lam * t, x, v)
        rhs = lam ** (-2 * lat.d) * kernel_density(t, lam**-1.5 * x, lam**-0.5 * v)
        worst = max(worst, abs(lhs - rhs) / rhs)
    ok = mass <= 1e-6 and law <= 1e-6 and worst <= 1e-12
    return SuiteResult("semigroup", ok, f"mass_err={mass:.2e} law={law:.2e} scaling={worst:.2e}")


def suite_solver(lat: AnisotropicLattice, bank: DyadicFilterBank, **_) -> SuiteResult:
    grid = TimeGrid(0.5, 16)
    F = SpaceTimeField.static(grid, _smooth(lat))
    u = picard_solve(PdeProblem(F), bank=bank).u
    ref = duhamel_all(0.0, F)
    err = float(np.max(np.abs(u.values - ref.values)))
    bound = float(np.max(np.abs(u.values))) <= 1.05 * grid.T * F.slice(0).max_abs()
    return SuiteResult("solver", err == 0.0 and bound, f"zero_drift_reduction={err:.2e} max_bound={'ok' if bound else 'violated'}")


def suite_gaussian(lat: AnisotropicLattice, bank: DyadicFilterBank, **_) -> SuiteResult:
    spec = SpectralMeasureSpec(lat.d, 5.0 / 6.0 if lat.d == 1 else lat.d - 0.2)
    a, b = sample_field(spec, lat, 9), sample_field(spec, lat, 9)
    same = np.array_equal(a.values, b.values)
    div = float(np.max(np.abs(divergence_v(a.field))))
    mean = abs(float(a.values.mean()))
    ok = same and div <= 1e-12 * max(1.0, a.field.max_abs()) and mean <= 1e-12
    return SuiteResult("gaussian_field", ok, f"deterministic={same} div_v={div:.2e} mean={mean:.2e}")


def suite_sde(lat: AnisotropicLattice, bank: DyadicFilterBank, jobs: int = 1, **_) -> SuiteResult:
    cfg = SdeConfig((0.0,) * lat.d, (0.0,) * lat.d, 1.0, 64, 4000, 12345)
    e1 = simulate_ensemble(cfg, jobs=1)
    e2 = simulate_ensemble(cfg, jobs=max(2, jobs))
    same = np.array_equal(e1.states, e2.states)
    XT, VT = e1.X[:, -1, 0], e1.V[:, -1, 0]
    n = cfg.M

    def z(sample, target):
        return abs(sample.mean() - target) / (sample.std(ddof=1) / math.sqrt(n))

    zs = [z(VT**2, 2.0), z(XT**2, 2.0 / 3.0), z(XT * VT, 1.0)]
    ok = same and max(zs) <= 3
    return SuiteResult("sde", ok, f"jobs_invariant={same} moment_z=" + "/".join(f"{v:.2f}" for v in zs))


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "spectral": suite_spectral,
    "paraproduct": suite_paraproduct,
    "semigroup": suite_semigroup,
    "solver": suite_solver,
    "gaussian_field": suite_gaussian,
    "sde": suite_sde,
}


def corrupt_bank(bank: DyadicFilterBank) -> DyadicFilterBank:
    """Fault injection: scale one block's symbol so the partition of unity breaks."""
    sym = bank.symbols.copy()
    sym[1] *= 1.01
    return DyadicFilterBank(bank.lattice, bank.J, sym)


def run_suites(lat: AnisotropicLattice, names=None, fault: str | None = None, jobs: int = 1) -> list[SuiteResult]:
    names = list(SUITES) if names is None else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    bank = build_filter_bank(lat)
    if fault == "filter-bank":
        bank = corrupt_bank(bank)
    elif fault is not None:
        raise ValueError(f"unknown fault {fault!r}")
    return [SUITES[n](lat=lat, bank=bank, jobs=jobs) for n in names]
