"""Mild solver for ``du/dt = Delta_v u - v . grad_x u - lam u + b . grad_v u + f``, u(0) = 0.

The drift term is evaluated in paraproduct form (:class:`~kinlab.paraproduct.DriftProduct`)
and the equation is solved as a fixed point of the left-endpoint Duhamel map

    u_{k+1} = e^{-lam dt} P_dt (u_k + dt (D_k u_k + f_k)).

Because the map is explicit in time, marching once through the grid yields its
exact fixed point (``method="march"``).  ``method="picard"`` iterates the full
map instead, optionally damped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import AnisotropicLattice, DyadicFilterBank, HolderSpec, LatticeField, build_filter_bank, holder_norm
from .paraproduct import DriftProduct
from .semigroup import KineticSemigroup, SpaceTimeField, TimeGrid, duhamel_all

log = logging.getLogger(__name__)


class PicardDivergence(RuntimeError):
    """Raised when the fixed-point iteration fails to reach its tolerance."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = list(history)


@dataclass
class PdeProblem:
    f: SpaceTimeField
    lam: float = 0.0
    b: SpaceTimeField | None = None
    div_b: SpaceTimeField | None = None

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be a nonnegative real, got {self.lam}")
        if self.f.components != 1:
            raise ValueError("forcing f must be scalar")
        lat, grid = self.f.lattice, self.f.grid
        for name in ("b", "div_b"):
            m = getattr(self, name)
            if m is not None and (m.lattice != lat or m.grid != grid):
                raise ValueError(f"{name} does not share the forcing's lattice and time grid")
        if self.b is not None and self.b.components != lat.d:
            raise ValueError(f"drift must have {lat.d} components")
        if self.div_b is not None and self.div_b.components != 1:
            raise ValueError("div_b must be scalar")

    @property
    def lattice(self) -> AnisotropicLattice:
        return self.f.lattice

    @property
    def grid(self) -> TimeGrid:
        return self.f.grid

    @property
    def has_drift(self) -> bool:
        return self.b is not None and bool(np.any(self.b.values))

    def with_lambda(self, lam: float) -> "PdeProblem":
        return PdeProblem(self.f, lam, self.b, self.div_b)


@dataclass
class SolveResult:
    u: SpaceTimeField
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


class _DriftOperator:
    """Drift term per time node; static drifts share one precomputed product."""

    def __init__(self, problem: PdeProblem, bank: DyadicFilterBank):
        self.problem = problem
        self.bank = bank
        self._cache: dict[int, DriftProduct] = {}
        self.active = problem.has_drift or (
            problem.div_b is not None and bool(np.any(problem.div_b.values))
        )

    def _product(self, k: int) -> DriftProduct:
        p = self.problem
        key = 0 if (p.b is None or p.b.is_static) and (p.div_b is None or p.div_b.is_static) else k
        if key not in self._cache:
            lat = p.lattice
            b = p.b.slice(k) if p.b is not None else LatticeField.zeros(lat, lat.d)
            div = p.div_b.slice(k) if p.div_b is not None else LatticeField.zeros(lat, 1)
            if key != 0:
                self._cache.clear()
            self._cache[key] = DriftProduct(b, div, self.bank)
        return self._cache[key]

    def __call__(self, k: int, u: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros_like(u)
        return self._product(k)(u)


def _march(problem: PdeProblem, drift: _DriftOperator, sg: KineticSemigroup) -> np.ndarray:
    grid, lat = problem.grid, problem.lattice
    dt = grid.dt
    decay = math.exp(-problem.lam * dt)
    out = np.zeros((grid.K + 1,) + lat.shape)
    for k in range(grid.K):
        g = drift(k, out[k]) + problem.f.array(k)
        nxt = decay * sg.apply_array(dt, out[k] + dt * g)
        if not np.all(np.isfinite(nxt)):
            raise PicardDivergence(f"non-finite solution at step {k + 1}", [math.inf])
        out[k + 1] = nxt
    return out


def _picard_map(problem: PdeProblem, drift: _DriftOperator, sg: KineticSemigroup, u: np.ndarray, rule: str) -> np.ndarray:
    grid, lat = problem.grid, problem.lattice
    g = np.empty((grid.K + 1,) + lat.shape)
    for k in range(grid.K + 1):
        g[k] = drift(k, u[k]) + problem.f.array(k)
    return duhamel_all(problem.lam, SpaceTimeField(grid, lat, g), rule=rule, semigroup=sg).values[..., 0]


def picard_solve(
    problem: PdeProblem,
    max_iter: int = 50,
    tol: float = 1e-8,
    method: str = "march",
    damping: float = 1.0,
    rule: str = "left",
    bank: DyadicFilterBank | None = None,
    semigroup: KineticSemigroup | None = None,
    verify: bool = False,
) -> SolveResult:
    """Mild solution on the problem's time grid.

    ``method="march"`` sweeps once and is the exact fixed point of the left-endpoint
    map; with ``verify=True`` one extra Picard application measures the residual.
    ``method="picard"`` starts from the Duhamel integral of f and iterates
    ``u <- (1 - damping) u + damping * Map(u)`` until the sup-in-time max-norm change
    falls below ``tol``; failure raises :class:`PicardDivergence` carrying the history.
    """
    if method not in ("march", "picard"):
        raise ValueError(f"unknown method {method!r}")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if max_iter < 1:
        raise ValueError("max_iter must be positive")
    lat, grid = problem.lattice, problem.grid
    bank = bank or build_filter_bank(lat)
    sg = semigroup or KineticSemigroup(lat)
    drift = _DriftOperator(problem, bank)

    if method == "march":
        if rule != "left":
            raise ValueError("marching is only explicit for the left-endpoint rule")
        u = _march(problem, drift, sg)
        history: list[float] = []
        residual = 0.0
        if verify:
            residual = float(np.max(np.abs(_picard_map(problem, drift, sg, u, rule) - u)))
            history.append(residual)
        return SolveResult(SpaceTimeField(grid, lat, u), 1, residual, history)

    u = duhamel_all(problem.lam, problem.f, rule=rule, semigroup=sg).values[..., 0]
    history = []
    for it in range(1, max_iter + 1):
        new = _picard_map(problem, drift, sg, u, rule)
        if damping != 1.0:
            new = (1 - damping) * u + damping * new
        change = float(np.max(np.abs(new - u)))
        history.append(change)
        log.debug("picard iteration %d: change %.3e", it, change)
        u = new
        if not math.isfinite(change) or change > 1e12:
            raise PicardDivergence(f"Picard iteration blew up at iteration {it}", history)
        if change < tol:
            return SolveResult(SpaceTimeField(grid, lat, u), it, change, history)
    raise PicardDivergence(
        f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations (last change {history[-1]:.3e})",
        history,
    )


# ---------------------------------------------------------------------------
# backward equation


def reflect_x(arr: np.ndarray, lattice: AnisotropicLattice, offset: int = 0) -> np.ndarray:
    """``g(x, v) = h(-x, v)`` on the periodic grid (node n maps to N - n mod N).

    ``offset`` shifts the lattice axes when ``arr`` has leading axes (e.g. time).
    """
    out = arr
    for a in lattice.x_axes:
        out = np.roll(np.flip(out, axis=a + offset), 1, axis=a + offset)
    return out


def _reflect_time_space(field: SpaceTimeField, sign: float) -> SpaceTimeField:
    vals = field.values if field.is_static else field.values[::-1]
    return SpaceTimeField(field.grid, field.lattice, sign * reflect_x(vals, field.lattice, offset=1))


def backward_solve(problem: PdeProblem, **kwargs) -> SolveResult:
    """Solve ``du/dt + Delta_v u + v . grad_x u - lam u + b . grad_v u = f`` with u(T) = 0.

    With ``w(s, x, v) = u(T - s, -x, v)`` the problem becomes the forward one with
    forcing ``-f(T - s, -x, v)`` and drift ``b(T - s, -x, v)``.
    """
    f_t = _reflect_time_space(problem.f, -1.0)
    b_t = _reflect_time_space(problem.b, 1.0) if problem.b is not None else None
    div_t = _reflect_time_space(problem.div_b, 1.0) if problem.div_b is not None else None
    res = picard_solve(PdeProblem(f_t, problem.lam, b_t, div_t), **kwargs)
    u = _reflect_time_space(res.u, 1.0)
    return SolveResult(u, res.iterations, res.residual, res.history)


# ---------------------------------------------------------------------------
# Schauder ratios


@dataclass(frozen=True)
class ExponentSpec:
    alpha_b: float
    q_b: float
    kappa: float
    alpha: float
    q: float
    delta: float = 0.0

    def __post_init__(self):
        ab, qb, k, a, q = self.alpha_b, self.q_b, self.kappa, self.alpha, self.q
        for name, val in (("q_b", qb), ("q", q)):
            if not val > 0:
                raise ValueError(f"{name} must be positive")
        iqb = 0.0 if math.isinf(qb) else 2.0 / qb
        iq = 0.0 if math.isinf(q) else 2.0 / q
        if k >= 1:
            raise ValueError("kappa < 1 violated")
        kmax = (1 + ab - iqb) / (3 + ab - iqb)
        if not 0 <= k <= kmax:
            raise ValueError(f"kappa in [0, (1+alpha_b-2/q_b)/(3+alpha_b-2/q_b)] = [0, {kmax:.4g}] violated by kappa={k}")
        amin = iqb + (3 * k - 1) / (1 - k)
        if not (amin < a <= ab):
            raise ValueError(f"alpha in (2/q_b+(3kappa-1)/(1-kappa), alpha_b] = ({amin:.4g}, {ab:.4g}] violated by alpha={a}")
        denom = 1 + (1 - k) * a - 3 * k
        if denom <= 0:
            raise ValueError("1+(1-kappa)alpha-3kappa > 0 violated")
        qmin = (2 - 2 * k) / denom
        if not (qmin < q <= qb):
            raise ValueError(f"q in ((2-2kappa)/(1+(1-kappa)alpha-3kappa), q_b] = ({qmin:.4g}, {qb}] violated by q={q}")
        if 1 + a - iq <= 0:
            raise ValueError("1+alpha-2/q > 0 violated")

    @property
    def two_over_q(self) -> float:
        return 0.0 if math.isinf(self.q) else 2.0 / self.q

    @property
    def nu(self) -> float:
        return 2 * self.kappa / (1 + self.alpha - self.two_over_q) + self.delta

    def theta_max(self) -> float:
        return 2 - self.two_over_q


@dataclass
class SchauderReport:
    exponents: ExponentSpec
    lambdas: list[float]
    thetas: list[float]
    forcing_norm: float
    ratios: np.ndarray  # (len(thetas), len(lambdas))

    @property
    def nu(self) -> float:
        return self.exponents.nu

    def spread(self) -> np.ndarray:
        """Per theta: max over lambda of the ratio divided by the lambda = 0 (first) ratio."""
        base = self.ratios[:, :1]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(base > 0, self.ratios.max(axis=1, keepdims=True) / base, 0.0)
        return out[:, 0]

    def to_csv(self) -> str:
        lines = ["theta,lambda,ratio"]
        for i, th in enumerate(self.thetas):
            for j, lam in enumerate(self.lambdas):
                lines.append(f"{float(th)!r},{float(lam)!r},{float(self.ratios[i, j])!r}")
        return "\n".join(lines) + "\n"


def time_norm(field: SpaceTimeField, spec: HolderSpec, bank: DyadicFilterBank, q: float) -> float:
    """Discrete ``L^q_T C^s(rho)`` norm over the time nodes (q = inf gives the max)."""
    n = 1 if field.is_static else field.grid.K + 1
    vals = np.array([holder_norm(field.slice(k), spec, bank) for k in range(n)])
    if math.isinf(q):
        return float(vals.max())
    if field.is_static:
        return float(vals[0] * field.grid.T ** (1 / q))
    return float((field.grid.dt * np.sum(vals[:-1] ** q)) ** (1 / q))


def schauder_scan(
    problem: PdeProblem,
    exponents: ExponentSpec,
    lambdas=(0.0, 1.0, 4.0, 16.0, 64.0),
    thetas=(0.0, 0.5, 1.0),
    bank: DyadicFilterBank | None = None,
    **solve_kwargs,
) -> SchauderReport:
    """Solve for each lambda and tabulate ``(1+lam)^{theta/2} ||u||_{C^{2+alpha-2/q-theta}(rho_nu)} / ||f||``."""
    thetas = [float(t) for t in thetas]
    for th in thetas:
        if not 0 <= th < exponents.theta_max():
            raise ValueError(f"theta in [0, 2-2/q) = [0, {exponents.theta_max():.4g}) violated by theta={th}")
    lat = problem.lattice
    bank = bank or build_filter_bank(lat)
    fnorm = time_norm(problem.f, HolderSpec(exponents.alpha, exponents.delta), bank, exponents.q)
    ratios = np.zeros((len(thetas), len(lambdas)))
    if fnorm == 0:
        return SchauderReport(exponents, list(lambdas), thetas, 0.0, ratios)
    base_s = 2 + exponents.alpha - exponents.two_over_q
    for j, lam in enumerate(lambdas):
        u = picard_solve(problem.with_lambda(lam), bank=bank, **solve_kwargs).u
        for i, th in enumerate(thetas):
            un = time_norm(u, HolderSpec(base_s - th, exponents.nu), bank, math.inf)
            ratios[i, j] = (1 + lam) ** (th / 2) * un / fnorm
    return SchauderReport(exponents, list(lambdas), thetas, fnorm, ratios)
