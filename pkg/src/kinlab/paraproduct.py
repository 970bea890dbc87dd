"""Bony paraproducts on the lattice and the paraproduct form of ``b . grad_v u``.

Notation: ``f < g`` is the low-high paraproduct ``sum_k S_{k-1} f R_k g``,
``f o g`` the resonant term ``sum_k R_k f Rt_k g`` and ``f <= g`` their sum.

``Rt_k`` sums the blocks ``k-w..k+w`` clipped to ``0..J``.  With the low-pass
``S_{k-1}`` stopping at block k-2, the decomposition ``f g = f < g + f o g + g < f``
is exact only for ``w = 1`` (the default); ``w = 2`` counts the pairs with
``|j - k| = 2`` twice and is kept for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import DyadicFilterBank, LatticeField, blocks_of, spectral_derivative


@dataclass(frozen=True, eq=False)
class BonyTriple:
    low_high: LatticeField
    resonant: LatticeField
    high_low: LatticeField

    def total(self) -> LatticeField:
        return self.low_high + self.resonant + self.high_low


def _low_sums(blocks: np.ndarray) -> np.ndarray:
    """``S_{k-1}`` for k = 0..J, i.e. sum of blocks 0..k-2."""
    out = np.zeros_like(blocks)
    if len(blocks) > 2:
        out[2:] = np.cumsum(blocks, axis=0)[:-2]
    return out


RESONANT_WIDTH = 1


def _neighbour_sums(blocks: np.ndarray, width: int = RESONANT_WIDTH) -> np.ndarray:
    """``Rt_k`` = sum of blocks k-width..k+width clipped to the available range."""
    J = len(blocks) - 1
    cs = np.concatenate([np.zeros_like(blocks[:1]), np.cumsum(blocks, axis=0)])
    out = np.empty_like(blocks)
    for k in range(J + 1):
        out[k] = cs[min(J, k + width) + 1] - cs[max(0, k - width)]
    return out


def low_high_blocks(fb: np.ndarray, gb: np.ndarray) -> np.ndarray:
    return np.einsum("k...,k...->...", _low_sums(fb), gb)


def resonant_blocks(fb: np.ndarray, gb: np.ndarray, width: int = RESONANT_WIDTH) -> np.ndarray:
    return np.einsum("k...,k...->...", fb, _neighbour_sums(gb, width))


def _pairs(f: LatticeField, g: LatticeField, bank: DyadicFilterBank):
    if f.lattice != g.lattice or f.lattice != bank.lattice:
        raise ValueError("lattice mismatch")
    cf, cg = f.components, g.components
    if cf != cg and 1 not in (cf, cg):
        raise ValueError(f"component mismatch: {cf} vs {cg}")
    n = max(cf, cg)
    fbl = [blocks_of(f.component(c), bank) for c in range(cf)]
    gbl = [blocks_of(g.component(c), bank) for c in range(cg)]
    return [(fbl[min(c, cf - 1)], gbl[min(c, cg - 1)]) for c in range(n)]


def para_low_high(f: LatticeField, g: LatticeField, bank: DyadicFilterBank) -> LatticeField:
    """``f < g``; vector operands are handled componentwise (a scalar broadcasts)."""
    out = [low_high_blocks(fb, gb) for fb, gb in _pairs(f, g, bank)]
    return LatticeField(f.lattice, np.stack(out, axis=-1))


def resonant(
    f: LatticeField, g: LatticeField, bank: DyadicFilterBank, width: int = RESONANT_WIDTH
) -> LatticeField:
    """``f o g``; componentwise like :func:`para_low_high`."""
    if width < 1:
        raise ValueError("resonant width must be >= 1")
    out = [resonant_blocks(fb, gb, width) for fb, gb in _pairs(f, g, bank)]
    return LatticeField(f.lattice, np.stack(out, axis=-1))


def bony_decomposition(f: LatticeField, g: LatticeField, bank: DyadicFilterBank) -> BonyTriple:
    pairs = _pairs(f, g, bank)
    lh = np.stack([low_high_blocks(a, b) for a, b in pairs], axis=-1)
    rs = np.stack([resonant_blocks(a, b) for a, b in pairs], axis=-1)
    hl = np.stack([low_high_blocks(b, a) for a, b in pairs], axis=-1)
    lat = f.lattice
    return BonyTriple(LatticeField(lat, lh), LatticeField(lat, rs), LatticeField(lat, hl))


class DriftProduct:
    """Evaluates ``div_v(b <= u) + grad_v u < b - (div_v b) <= u`` for a fixed drift.

    The blocks of ``b`` and ``div_v b`` are computed once so repeated calls with
    different ``u`` only transform ``u``.
    """

    def __init__(self, b: LatticeField, div_b: LatticeField, bank: DyadicFilterBank):
        lat = bank.lattice
        if b.lattice != lat or div_b.lattice != lat:
            raise ValueError("lattice mismatch")
        if b.components != lat.d:
            raise ValueError(f"drift must have d={lat.d} components, got {b.components}")
        if div_b.components != 1:
            raise ValueError("div_b must be scalar")
        self.bank = bank
        self.lattice = lat
        self.b_blocks = [blocks_of(b.component(i), bank) for i in range(lat.d)]
        self.div_zero = not np.any(div_b.values)
        self.div_blocks = None if self.div_zero else blocks_of(div_b.component(0), bank)
        self.is_zero = not np.any(b.values) and self.div_zero

    def __call__(self, u: np.ndarray) -> np.ndarray:
        lat, bank = self.lattice, self.bank
        if self.is_zero:
            return np.zeros(lat.shape)
        ub = blocks_of(u, bank)
        out = np.zeros(lat.shape)
        for i in range(lat.d):
            orders = [0] * lat.ndim
            orders[lat.d + i] = 1
            bb = self.b_blocks[i]
            b_le_u = low_high_blocks(bb, ub) + resonant_blocks(bb, ub)
            out += spectral_derivative(b_le_u, lat, orders)
            du_blocks = blocks_of(spectral_derivative(u, lat, orders), bank)
            out += low_high_blocks(du_blocks, bb)
        if not self.div_zero:
            out -= low_high_blocks(self.div_blocks, ub) + resonant_blocks(self.div_blocks, ub)
        return out


def drift_gradient_product(
    b: LatticeField, div_b: LatticeField, u: LatticeField, bank: DyadicFilterBank
) -> LatticeField:
    """Paraproduct form of ``b . grad_v u`` that stays meaningful for rough ``b``."""
    if u.components != 1:
        raise ValueError("u must be scalar")
    return LatticeField(u.lattice, DriftProduct(b, div_b, bank)(u.component(0)))
