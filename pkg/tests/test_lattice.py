import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_random_field
from kinlab.lattice import (
    AnisotropicLattice,
    HolderSpec,
    LatticeField,
    anisotropic_distance,
    bernstein_ratio,
    block_apply,
    blocks_of,
    build_filter_bank,
    chi0_profile,
    holder_norm,
    low_pass,
    spectral_derivative,
    weight_rho,
)


def brute_blocks(f: np.ndarray, lat: AnisotropicLattice, J: int) -> np.ndarray:
    """Blocks built from the radial profile with a full complex FFT (independent of the bank)."""
    r = lat.freq_norm_a(half=False)
    chis = [chi0_profile(r / 2.0**j) for j in range(J)]
    syms = [chis[0]] + [chis[j] - chis[j - 1] for j in range(1, J)] + [1 - chis[J - 1]]
    fh = np.fft.fftn(f)
    return np.stack([np.real(np.fft.ifftn(fh * s)) for s in syms])


# --- lattice construction


def test_rejects_odd_grid():
    with pytest.raises(ValueError):
        AnisotropicLattice(Nx=31)


def test_rejects_too_few_blocks():
    with pytest.raises(ValueError, match="dyadic blocks"):
        build_filter_bank(AnisotropicLattice(d=1, Lx=8 * math.pi, Lv=8 * math.pi, Nx=8, Nv=8))


def test_default_lattice_block_count(default_bank):
    assert default_bank.J == 4


def test_field_values_read_only(small_lattice):
    f = LatticeField.zeros(small_lattice)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


def test_field_rejects_nonfinite(small_lattice):
    a = np.zeros(small_lattice.shape)
    a[0, 0] = np.nan
    with pytest.raises(ValueError):
        LatticeField(small_lattice, a)


# --- filter bank


def test_partition_of_unity(default_bank):
    assert np.max(np.abs(default_bank.symbols.sum(axis=0) - 1)) <= 1e-12
    assert default_bank.violations() == []


def test_chi0_plateaus():
    assert np.all(chi0_profile(np.linspace(0, 1, 50)) == 1)
    assert np.all(chi0_profile(np.linspace(4 / 3, 5, 50)) == 0)
    mid = chi0_profile(np.linspace(1.01, 1.32, 40))
    assert np.all(np.diff(mid) <= 0) and mid[0] > mid[-1]


def test_bank_matches_brute_force(default_lattice, default_bank):
    f = smooth_random_field(default_lattice, 7)
    ours = blocks_of(f.values[..., 0], default_bank)
    ref = brute_blocks(f.values[..., 0], default_lattice, default_bank.J)
    assert np.max(np.abs(ours - ref)) <= 1e-12


def test_reconstruction_and_disjointness(default_lattice, default_bank):
    f = LatticeField(default_lattice, np.random.default_rng(0).standard_normal(default_lattice.shape))
    blocks = [block_apply(f, j, default_bank) for j in range(default_bank.J + 1)]
    assert np.max(np.abs(sum(b.values for b in blocks) - f.values)) <= 1e-10
    for j, bj in enumerate(blocks):
        for i in range(default_bank.J + 1):
            if abs(i - j) > 2:
                assert block_apply(bj, i, default_bank).max_abs() <= 1e-12


def test_block_supports_are_exact(default_lattice, default_bank):
    r = default_lattice.freq_norm_a(half=False)
    for j in range(1, default_bank.J + 1):
        assert np.all(default_bank.symbols[j][(r < 2.0 ** (j - 1)) | (r > 2.0 ** (j + 1))] == 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_reconstruction_property(small_lattice, small_bank, seed):
    f = LatticeField(small_lattice, np.random.default_rng(seed).standard_normal(small_lattice.shape))
    rec = sum(block_apply(f, j, small_bank).values for j in range(small_bank.J + 1))
    assert np.max(np.abs(rec - f.values)) <= 1e-10


def test_low_pass_edge_cases(default_lattice, default_bank):
    f = smooth_random_field(default_lattice, 3)
    assert low_pass(f, -1, default_bank).max_abs() == 0
    assert low_pass(f, 0, default_bank).max_abs() == 0
    assert np.max(np.abs(low_pass(f, default_bank.J + 1, default_bank).values - f.values)) <= 1e-12
    c = LatticeField(default_lattice, np.full(default_lattice.shape, 2.5))
    assert np.max(np.abs(low_pass(c, 1, default_bank).values - 2.5)) <= 1e-12


# --- spectral derivatives


def test_spectral_derivative_of_mode(default_lattice):
    x, v = default_lattice.coord(0), default_lattice.coord(1)
    k, m = 3 * math.pi / default_lattice.Lx, 5 * math.pi / default_lattice.Lv
    f = np.sin(k * x) * np.cos(m * v) + 0 * x * v
    dx = spectral_derivative(f, default_lattice, [1, 0])
    dv = spectral_derivative(f, default_lattice, [0, 1])
    assert np.max(np.abs(dx - k * np.cos(k * x) * np.cos(m * v))) <= 1e-11
    assert np.max(np.abs(dv + m * np.sin(k * x) * np.sin(m * v))) <= 1e-11


# --- Hölder norms


def test_holder_norm_zero(default_lattice, default_bank):
    assert holder_norm(LatticeField.zeros(default_lattice), HolderSpec(0.5), default_bank) == 0.0


@pytest.mark.parametrize("s", [-0.4, 0.3, 1.5])
def test_holder_norm_matches_definition(default_lattice, default_bank, s):
    f = smooth_random_field(default_lattice, 11)
    j = 2
    g = block_apply(f, j, default_bank)
    g = LatticeField(default_lattice, g.values / g.max_abs())
    blocks = brute_blocks(g.values[..., 0], default_lattice, default_bank.J)
    expected = max(2.0 ** (i * s) * np.max(np.abs(b)) for i, b in enumerate(blocks))
    assert holder_norm(g, HolderSpec(s), default_bank) == pytest.approx(expected, rel=1e-10)


def test_holder_norm_integer_s_adds_derivative(default_lattice, default_bank):
    f = smooth_random_field(default_lattice, 12)
    blocks = brute_blocks(f.values[..., 0], default_lattice, default_bank.J)
    sup = max(2.0**i * np.max(np.abs(b)) for i, b in enumerate(blocks))
    dv = spectral_derivative(f.values[..., 0], default_lattice, [0, 1])
    assert holder_norm(f, HolderSpec(1.0), default_bank) == pytest.approx(sup + np.max(np.abs(dv)), rel=1e-10)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), s1=st.floats(-0.9, 0.4), gap=st.floats(0.05, 1.0))
def test_holder_norm_monotone_in_s(small_lattice, small_bank, seed, s1, gap):
    f = smooth_random_field(small_lattice, seed)
    s2 = s1 + gap
    if float(s2).is_integer() or float(s1).is_integer():
        return
    assert holder_norm(f, HolderSpec(s1), small_bank) <= holder_norm(f, HolderSpec(s2), small_bank) + 1e-12


def test_interpolation_constant(corpus, default_bank):
    worst = 0.0
    for s0, s1, th in [(-0.5, 0.5, 0.5), (-1.0, 1.0, 0.5)]:
        st_ = th * s0 + (1 - th) * s1
        for f in corpus[:30]:
            lhs = holder_norm(f, HolderSpec(st_), default_bank)
            rhs = holder_norm(f, HolderSpec(s0), default_bank) ** th * holder_norm(f, HolderSpec(s1), default_bank) ** (1 - th)
            worst = max(worst, lhs / rhs)
    assert worst <= 4.0


# --- Bernstein


def test_bernstein_constant_field(default_lattice, default_bank):
    c = LatticeField(default_lattice, np.ones(default_lattice.shape))
    assert bernstein_ratio(c, 0, 1, 1, default_bank) == 0.0


@pytest.mark.parametrize("k", [(0, 1), (1, 0), (0, 2)])
def test_bernstein_ratio_uniform(corpus, default_bank, k):
    vals = np.array([[bernstein_ratio(f, j, *k, default_bank) for j in range(1, default_bank.J + 1)] for f in corpus[:40]])
    first, second = vals[:20].max(), vals[20:].max()
    assert np.all(np.isfinite(vals)) and first > 0
    # one constant per derivative pair: the bound measured on one half holds on the other within x2
    assert second <= 2 * first and first <= 2 * second


# --- distance and weight


def test_anisotropic_distance_scaling():
    rng = np.random.default_rng(5)
    z, w = rng.normal(size=(50, 4)), rng.normal(size=(50, 4))
    lam = 2.7
    scale = np.array([lam**3, lam**3, lam, lam])
    assert np.allclose(anisotropic_distance(z * scale, w * scale), lam * anisotropic_distance(z, w), rtol=1e-12)


@pytest.mark.parametrize("kappa", [-2.0, 1.0, 3.0])
def test_weight_equivalence(kappa):
    g = np.linspace(-30, 30, 301)
    X, V = np.meshgrid(g, g, indexing="ij")
    z = np.stack([X.ravel(), V.ravel()], axis=-1)
    ratio = weight_rho(kappa, z) / (1 + anisotropic_distance(z, np.zeros(2))) ** (-kappa)
    assert ratio.min() > 0
    assert ratio.max() / ratio.min() <= 2.0 ** (abs(kappa) * 1.5)
