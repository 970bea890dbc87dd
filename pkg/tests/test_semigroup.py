import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_random_field
from kinlab.lattice import AnisotropicLattice, LatticeField
from kinlab.semigroup import (
    KineticSemigroup,
    SpaceTimeField,
    TimeGrid,
    duhamel_all,
    duhamel_integral,
    generator_residual,
    kernel_density,
    kernel_mass,
    semigroup_apply,
    shear_apply,
)


def localized(lat):
    x, v = lat.coord(0), lat.coord(1)
    return LatticeField(lat, np.broadcast_to(np.cos(x / 4) * np.exp(-(v**2) / 8), lat.shape))


# --- grids and containers


def test_time_grid():
    g = TimeGrid(0.5, 4)
    assert g.dt == 0.125
    assert np.allclose(g.nodes, [0, 0.125, 0.25, 0.375, 0.5])
    assert g.index_of(0.375) == 3
    with pytest.raises(ValueError):
        g.index_of(0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_static_spacetime_field(small_lattice):
    f = smooth_random_field(small_lattice, 0)
    F = SpaceTimeField.static(TimeGrid(1.0, 8), f)
    assert F.is_static
    assert np.array_equal(F.array(5), f.values[..., 0])
    assert F.full().shape == (9,) + small_lattice.shape + (1,)


# --- kernel


def test_kernel_value_at_origin():
    # normalised density of the joint law with Var x = 2/3, Var v = 2, Cov = 1 at t = 1
    assert kernel_density(1.0, 0.0, 0.0) == pytest.approx((4 * math.pi**2 / 3) ** -0.5, rel=1e-14)


def test_kernel_exponent():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t, x, v = rng.uniform(0.2, 2), rng.normal(), rng.normal()
        ratio = kernel_density(t, x, v) / kernel_density(t, 0.0, 0.0)
        assert ratio == pytest.approx(math.exp(-(3 * x**2 + (3 * x - 2 * t * v) ** 2) / (4 * t**3)), rel=1e-12)


def test_kernel_moments_by_quadrature():
    g = np.linspace(-12, 12, 1201)
    h = g[1] - g[0]
    X, V = np.meshgrid(g, g, indexing="ij")
    p = kernel_density(1.0, X[..., None], V[..., None])
    m = h * h
    assert m * p.sum() == pytest.approx(1, abs=1e-10)
    assert m * (p * X**2).sum() == pytest.approx(2 / 3, abs=1e-8)
    assert m * (p * V**2).sum() == pytest.approx(2, abs=1e-8)
    assert m * (p * X * V).sum() == pytest.approx(1, abs=1e-8)


def test_kernel_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        kernel_density(0.0, 0.0, 0.0)


def test_kernel_scaling_identity():
    rng = np.random.default_rng(1)
    for d in (1, 2):
        for _ in range(500):
            lam, t = rng.uniform(0.3, 3), rng.uniform(0.3, 3)
            x, v = rng.normal(size=d), rng.normal(size=d)
            lhs = kernel_density(lam * t, x, v)
            rhs = lam ** (-2 * d) * kernel_density(t, lam**-1.5 * x, lam**-0.5 * v)
            assert abs(lhs - rhs) <= 1e-12 * rhs


@pytest.mark.parametrize("t", [0.5, 1.0])
def test_kernel_mass_default_lattice(default_lattice, t):
    assert abs(kernel_mass(t, default_lattice) - 1) <= 1e-6


@pytest.mark.xfail(strict=True, reason="x-width of p_0.25 is about half a grid cell on the default lattice")
def test_kernel_mass_short_time_default_lattice(default_lattice):
    assert abs(kernel_mass(0.25, default_lattice) - 1) <= 1e-6


def test_kernel_mass_short_time_resolved():
    lat = AnisotropicLattice(d=1, Lx=2 * math.pi, Lv=8 * math.pi, Nx=256, Nv=256)
    assert abs(kernel_mass(0.25, lat) - 1) <= 1e-6


# --- shear


def drop_x_nyquist(f):
    """Remove the x-Nyquist mode, which a real shifted grid function cannot carry."""
    a = np.fft.fft(f.values, axis=0)
    a[f.lattice.Nx // 2] = 0
    return LatticeField(f.lattice, np.real(np.fft.ifft(a, axis=0)))


def test_shear_zero_and_round_trip(default_lattice):
    f = drop_x_nyquist(smooth_random_field(default_lattice, 2))
    assert np.array_equal(shear_apply(0.0, f).values, f.values)
    back = shear_apply(-0.7, shear_apply(0.7, f))
    assert np.max(np.abs(back.values - f.values)) <= 1e-10


def test_shear_matches_resampling(default_lattice):
    lat = default_lattice
    x, v = lat.coord(0), lat.coord(1)
    k = 3 * math.pi / lat.Lx
    f = LatticeField(lat, np.broadcast_to(np.sin(k * x), lat.shape))
    t = 0.37
    assert np.max(np.abs(shear_apply(t, f).values[..., 0] - np.sin(k * (x - t * v)))) <= 1e-9


# --- semigroup


def test_semigroup_constants(default_lattice):
    c = LatticeField(default_lattice, np.full(default_lattice.shape, 3.0))
    for t in (0.25, 1.0):
        assert np.max(np.abs(semigroup_apply(t, c).values - 3.0)) <= 1e-12


def test_semigroup_time_zero(default_lattice):
    f = smooth_random_field(default_lattice, 3)
    assert np.array_equal(semigroup_apply(0.0, f).values, f.values)


@pytest.mark.parametrize("kx,kv", [(1, 0), (0, 3), (2, 5)])
def test_semigroup_on_modes(default_lattice, kx, kv):
    # u = exp(-(m^2 t - k m t^2 + k^2 t^3 / 3)) sin(k x + (m - k t) v) solves the kinetic equation
    lat = default_lattice
    x, v = lat.coord(0), lat.coord(1)
    k, m = kx * math.pi / lat.Lx, kv * math.pi / lat.Lv
    f = LatticeField(lat, np.broadcast_to(np.sin(k * x + m * v), lat.shape))
    for t in (0.25, 0.8):
        ref = math.exp(-(m * m * t - k * m * t * t + k * k * t**3 / 3)) * np.sin(k * x + (m - k * t) * v)
        assert np.max(np.abs(semigroup_apply(t, f).values[..., 0] - ref)) <= 1e-9


def test_semigroup_law(default_lattice):
    f = localized(default_lattice)
    for s in (0.25, 0.5):
        for t in (0.25, 0.5):
            lhs = semigroup_apply(t, semigroup_apply(s, f)).values
            assert np.max(np.abs(lhs - semigroup_apply(s + t, f).values)) <= 1e-6


def test_mass_and_positivity(default_lattice):
    f = LatticeField(default_lattice, np.abs(smooth_random_field(default_lattice, 4).values))
    for t in (0.25, 1.0):
        g = semigroup_apply(t, f)
        assert abs(g.values.mean() - f.values.mean()) <= 1e-8
        assert g.values.min() >= -1e-10


def test_sampled_kernel_agrees_when_resolved(default_lattice):
    f = localized(default_lattice)
    a = semigroup_apply(1.0, f, kernel="sampled").values
    b = semigroup_apply(1.0, f).values
    assert np.max(np.abs(a - b)) <= 1e-6


def test_short_time_cutoff_is_shear(default_lattice, caplog):
    f = localized(default_lattice)
    sg = KineticSemigroup(default_lattice, t_min=0.05)
    out = sg(0.01, f)
    assert np.max(np.abs(out.values - shear_apply(0.01, f).values)) == 0
    assert "under-resolved" in caplog.text


def test_semigroup_rejects_negative_time(default_lattice):
    with pytest.raises(ValueError):
        semigroup_apply(-0.1, localized(default_lattice))


@settings(max_examples=15, deadline=None)
@given(s=st.floats(0.05, 1.0), t=st.floats(0.05, 1.0))
def test_semigroup_law_property(s, t):
    lat = AnisotropicLattice(d=1, Lx=8 * math.pi, Lv=8 * math.pi, Nx=64, Nv=64)
    f = localized(lat)
    lhs = semigroup_apply(t, semigroup_apply(s, f)).values
    assert np.max(np.abs(lhs - semigroup_apply(s + t, f).values)) <= 1e-10


# --- Duhamel


def test_duhamel_constant_lambda_zero(small_lattice):
    c = LatticeField(small_lattice, np.full(small_lattice.shape, 2.0))
    F = SpaceTimeField.static(TimeGrid(1.0, 10), c)
    for t in (0.3, 1.0):
        assert np.max(np.abs(duhamel_integral(0.0, F, t).values - 2.0 * t)) <= 1e-12


@pytest.mark.parametrize("K", [16, 64])
def test_duhamel_constant_lambda_positive(small_lattice, K):
    lam, c, T = 3.0, 2.0, 1.0
    F = SpaceTimeField.static(TimeGrid(T, K), LatticeField(small_lattice, np.full(small_lattice.shape, c)))
    exact = c * (1 - math.exp(-lam * T)) / lam
    err = np.max(np.abs(duhamel_integral(lam, F, T).values - exact))
    assert err <= 2 * c * lam * T / K


def test_duhamel_trapezoid_second_order(small_lattice):
    lam, c = 3.0, 1.0
    errs = []
    for K in (16, 32):
        F = SpaceTimeField.static(TimeGrid(1.0, K), LatticeField(small_lattice, np.full(small_lattice.shape, c)))
        errs.append(np.max(np.abs(duhamel_integral(lam, F, 1.0, rule="trapezoid").values - (1 - math.exp(-lam)) / lam)))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


@pytest.mark.parametrize("rule", ["left", "trapezoid"])
def test_duhamel_recursion_matches_direct_sum(default_lattice, rule):
    lat = default_lattice
    grid = TimeGrid(0.5, 8)
    x, v = lat.coord(0), lat.coord(1)
    vals = np.stack([np.broadcast_to(np.cos(x / 4 + 0.3 * k) * np.exp(-(v - 0.2 * k) ** 2 / 8), lat.shape)[..., None]
                     for k in range(grid.K + 1)])
    F = SpaceTimeField(grid, lat, vals)
    rec = duhamel_all(1.5, F, rule=rule)
    for t in (0.25, 0.5):
        direct = duhamel_integral(1.5, F, t, rule=rule).values
        assert np.max(np.abs(rec.slice(grid.index_of(t)).values - direct)) <= 1e-12


@pytest.mark.parametrize("lam", [0.0, 2.0])
def test_generator_residual_first_order(default_lattice, lam):
    f = localized(default_lattice)
    res = []
    for K in (16, 32):
        F = SpaceTimeField.static(TimeGrid(0.5, K), f)
        res.append(generator_residual(duhamel_all(lam, F), F, lam).max())
    assert 1.7 <= res[0] / res[1] <= 2.3
