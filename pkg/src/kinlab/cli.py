"""Command-line driver: ``krl <subcommand> [--config PATH] [--out DIR] [--jobs N] [--seed U64]``.

Config files hold one ``key=value`` per line; ``#`` starts a comment.  Unknown keys
are errors.  Each run writes ``config_echo.txt`` (a timestamp comment followed by
the resolved configuration) next to its CSV outputs; rerunning with
``--config config_echo.txt`` reproduces the CSVs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 invariant failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as kio
from . import lattice as lat_mod
from .gaussian_field import SpectralMeasureSpec, block_decay_slope, sample_field, slope_lattice
from .lattice import AnisotropicLattice, HolderSpec, LatticeField, build_filter_bank, holder_norm
from .sde import (
    FieldDrift,
    MollifierSpec,
    SdeConfig,
    drift_functional_cauchy,
    holder_exponent_of_A,
    ito_martingale_test,
    krylov_scan,
    mollify_drift,
    moment_report,
    simulate_ensemble,
)
from .selftest import SUITES, run_suites
from .semigroup import SpaceTimeField, TimeGrid
from .solver import ExponentSpec, PdeProblem, PicardDivergence, backward_solve, picard_solve, schauder_scan

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("kinlab")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

LATTICE_KEYS = {
    "lattice.d": "1",
    "lattice.Nx": "256",
    "lattice.Nv": "256",
    "lattice.Lx": repr(8 * math.pi),
    "lattice.Lv": repr(8 * math.pi),
}
TIME_KEYS = {"time.T": "1.0", "time.K": "128"}
DRIFT_KEYS = {"drift.kind": "zero", "drift.seed": "11", "drift.file": "", "field.gamma": repr(5.0 / 6.0)}
MOLL_KEYS = {"mollifier.n": "16", "mollifier.bump": "standard"}
SDE_KEYS = {"sde.paths": "10000", "sde.seed": "0", "sde.x0": "0", "sde.v0": "0"}
OUT_KEYS = {"output.dir": "krl_out"}

COMMAND_KEYS: dict[str, dict[str, str]] = {
    "selftest": {**LATTICE_KEYS, **OUT_KEYS},
    "sample-field": {**LATTICE_KEYS, **OUT_KEYS, "field.gamma": repr(2.0 / 3.0), "field.samples": "16",
                     "sde.seed": "0"},
    "besov-slope": {**OUT_KEYS, "lattice.d": "1", "field.gamma_grid": "0,0.6666666666666666,0.95",
                    "field.samples": "16", "sde.seed": "0"},
    "solve-pde": {**LATTICE_KEYS, **TIME_KEYS, **DRIFT_KEYS, **MOLL_KEYS, **OUT_KEYS,
                  "pde.lambda": "0", "pde.tol": "1e-8", "pde.max_iter": "50", "pde.method": "march",
                  "pde.damping": "1", "schauder.lambda_grid": "0,1,4,16,64", "schauder.theta_grid": "0,0.5,1",
                  "schauder.alpha": "0", "schauder.q": "inf", "schauder.kappa": "0", "schauder.delta": "0",
                  "pde.write_solution": "1"},
    "simulate": {**LATTICE_KEYS, **TIME_KEYS, **DRIFT_KEYS, **MOLL_KEYS, **SDE_KEYS, **OUT_KEYS,
                 "sde.format": "binary"},
    "krylov": {**LATTICE_KEYS, **TIME_KEYS, **DRIFT_KEYS, **MOLL_KEYS, **SDE_KEYS, **OUT_KEYS,
               "krylov.alpha": "-0.5", "krylov.q": "inf", "krylov.p": "2", "krylov.min_window": "2",
               "krylov.max_window": "256"},
    "cauchy": {**LATTICE_KEYS, **TIME_KEYS, **DRIFT_KEYS, **SDE_KEYS, **OUT_KEYS,
               "drift.kind": "gaussian", "mollifier.levels": "4,8,16,32", "mollifier.reference": "64",
               "mollifier.second_bump": "quartic"},
    "moments": {**LATTICE_KEYS, **TIME_KEYS, **DRIFT_KEYS, **MOLL_KEYS, **SDE_KEYS, **OUT_KEYS,
                "moments.deltas": "-2,0,2", "moments.z0_grid": "0:0;2:0;0:2"},
    "ito-test": {**LATTICE_KEYS, **TIME_KEYS, **DRIFT_KEYS, **MOLL_KEYS, **SDE_KEYS, **OUT_KEYS,
                 "ito.bands": "3"},
}
for _cmd in ("simulate", "krylov", "cauchy", "moments", "ito-test"):
    COMMAND_KEYS[_cmd]["time.K"] = "512"


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = val
    return out


class Config:
    def __init__(self, command: str, given: dict[str, str]):
        allowed = COMMAND_KEYS[command]
        unknown = sorted(set(given) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        self.values = {**allowed, **given}

    def str(self, key: str) -> str:
        return self.values[key]

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a real number, got {self.values[key]!r}") from exc

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {self.values[key]!r}") from exc

    def floats(self, key: str) -> list[float]:
        try:
            return [float(s) for s in self.values[key].split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated reals") from exc

    def echo(self) -> str:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        lines = [f"# generated {stamp}"] + [f"{k}={self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"


def lattice_from(cfg: Config) -> AnisotropicLattice:
    try:
        return AnisotropicLattice(
            d=cfg.int("lattice.d"), Lx=cfg.float("lattice.Lx"), Lv=cfg.float("lattice.Lv"),
            Nx=cfg.int("lattice.Nx"), Nv=cfg.int("lattice.Nv"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _drift_field(cfg: Config, lat: AnisotropicLattice, mollify: bool = True) -> LatticeField | None:
    kind = cfg.str("drift.kind")
    if kind == "zero":
        return None
    if kind == "gaussian":
        spec = SpectralMeasureSpec(lat.d, cfg.float("field.gamma"))
        spec.check_sde_window()
        raw = sample_field(spec, lat, cfg.int("drift.seed")).field
    elif kind == "file":
        raw = kio.read_field(cfg.str("drift.file"))
        if raw.lattice != lat:
            raise ConfigError("drift file lattice differs from the configured lattice")
    else:
        raise ConfigError(f"drift.kind must be zero, gaussian or file, got {kind!r}")
    if not mollify:
        return raw
    return mollify_drift(raw, MollifierSpec(cfg.int("mollifier.n"), cfg.str("mollifier.bump")))


def _sde_config(cfg: Config, d: int, seed: int, x0=None, v0=None) -> SdeConfig:
    def vec(key):
        vals = cfg.floats(key)
        return tuple(vals * d if len(vals) == 1 else vals)

    return SdeConfig(
        tuple(x0) if x0 is not None else vec("sde.x0"),
        tuple(v0) if v0 is not None else vec("sde.v0"),
        cfg.float("time.T"), cfg.int("time.K"), cfg.int("sde.paths"), seed,
    )


def smooth_forcing(lat: AnisotropicLattice) -> LatticeField:
    x = lat.coord(0)
    vv = sum(lat.coord(a) ** 2 for a in lat.v_axes)
    return LatticeField(lat, np.broadcast_to(np.cos(x / 4) * np.exp(-vv / 8), lat.shape))


def krylov_family(lat: AnisotropicLattice):
    """Velocity modes ``cos(0.75 * 2^j v_0)``, j = 0..4, plus the constant 1."""
    fns, fields = [], []
    for j in range(5):
        w = 0.75 * 2**j
        fns.append(lambda t, x, v, w=w: np.cos(w * v[:, 0]))
        fields.append(LatticeField(lat, np.broadcast_to(np.cos(w * lat.coord(lat.d)), lat.shape)))
    fns.append(lambda t, x, v: np.ones(len(x)))
    fields.append(LatticeField(lat, np.ones(lat.shape)))
    return fns, fields


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_selftest(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    names = args.suite.split(",") if args.suite else None
    try:
        results = run_suites(lat, names, fault=args.inject_fault, jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    lines = ["suite,passed"]
    for r in results:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} ({r.detail})")
        lines.append(f"{r.name},{int(r.passed)}")
    _write(out, "selftest.csv", "\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def cmd_sample_field(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    seed = cfg.int("sde.seed")
    spec = SpectralMeasureSpec(lat.d, cfg.float("field.gamma"))
    kio.write_field(out / "field.krlf", sample_field(spec, lat, seed).field)
    slat = slope_lattice(lat.d)
    bank = build_filter_bank(slat)
    fit = block_decay_slope(
        [sample_field(spec, slat, seed + 1 + i, components=1) for i in range(cfg.int("field.samples"))], bank, seed=seed
    )
    _write(out, "blocks.csv", fit.to_csv())
    _write(out, "slope.csv", f"gamma,theoretical_slope,fitted_slope,stderr\n{spec.gamma!r},"
           f"{spec.theoretical_slope()!r},{fit.slope!r},{fit.stderr!r}\n")
    print(f"fitted slope {fit.slope:.4f} +- {fit.stderr:.4f} (theory {spec.theoretical_slope():.4f})")
    return EXIT_OK


def cmd_besov_slope(cfg: Config, out: Path, args) -> int:
    d = cfg.int("lattice.d")
    slat = slope_lattice(d)
    bank = build_filter_bank(slat)
    seed = cfg.int("sde.seed")
    lines = ["gamma,theoretical_slope,fitted_slope,stderr"]
    for gamma in cfg.floats("field.gamma_grid"):
        spec = SpectralMeasureSpec(d, gamma)
        fit = block_decay_slope(
            [sample_field(spec, slat, seed + i, components=1) for i in range(cfg.int("field.samples"))], bank, seed=seed
        )
        lines.append(f"{gamma!r},{spec.theoretical_slope()!r},{fit.slope!r},{fit.stderr!r}")
        print(f"gamma={gamma:.4f}: slope {fit.slope:.4f} +- {fit.stderr:.4f} (theory {spec.theoretical_slope():.4f})")
    _write(out, "slopes.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_solve_pde(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    grid = TimeGrid(cfg.float("time.T"), cfg.int("time.K"))
    bank = build_filter_bank(lat)
    F = SpaceTimeField.static(grid, smooth_forcing(lat))
    b = _drift_field(cfg, lat)
    B = SpaceTimeField.static(grid, b) if b is not None else None
    problem = PdeProblem(F, cfg.float("pde.lambda"), B, None)
    kw = dict(max_iter=cfg.int("pde.max_iter"), tol=cfg.float("pde.tol"), method=cfg.str("pde.method"),
              damping=cfg.float("pde.damping"))
    res = picard_solve(problem, bank=bank, **kw)
    if cfg.int("pde.write_solution"):
        kio.write_spacetime(out / "solution", res.u)
    alpha = cfg.float("schauder.alpha")
    q = cfg.float("schauder.q")
    expo = ExponentSpec(alpha_b=alpha if b is None else min(alpha, 0.0), q_b=math.inf, kappa=cfg.float("schauder.kappa"),
                        alpha=alpha, q=q, delta=cfg.float("schauder.delta"))
    rep = schauder_scan(problem, expo, cfg.floats("schauder.lambda_grid"), cfg.floats("schauder.theta_grid"), bank, **kw)
    _write(out, "schauder.csv", rep.to_csv())
    _write(out, "solve.csv", f"iterations,residual,max_abs_u\n{res.iterations},{res.residual!r},"
           f"{float(np.max(np.abs(res.u.values)))!r}\n")
    print(f"solved in {res.iterations} iteration(s); Schauder spread per theta: {np.round(rep.spread(), 3).tolist()}")
    return EXIT_OK


def cmd_simulate(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    b = _drift_field(cfg, lat)
    scfg = _sde_config(cfg, lat.d, args.seed_value)
    ens = simulate_ensemble(scfg, FieldDrift(b) if b is not None else None, jobs=args.jobs, lattice=lat)
    fmt = cfg.str("sde.format")
    if fmt == "csv":
        kio.write_ensemble_csv(out / "ensemble.csv", ens.states, ens.times)
    elif fmt == "binary":
        kio.write_ensemble_binary(out / "ensemble.krle", ens.states, scfg.T, scfg.master_seed)
    else:
        raise ConfigError("sde.format must be csv or binary")
    d = lat.d
    XT, VT = ens.X[:, -1, :], ens.V[:, -1, :]
    lines = ["quantity,component,value,stderr"]
    n = scfg.M
    for i in range(d):
        for name, s in (("var_x", XT[:, i] - XT[:, i].mean()), ("var_v", VT[:, i] - VT[:, i].mean())):
            sq = s**2
            lines.append(f"{name},{i},{float(sq.mean())!r},{float(sq.std(ddof=1) / math.sqrt(n))!r}")
        c = (XT[:, i] - XT[:, i].mean()) * (VT[:, i] - VT[:, i].mean())
        lines.append(f"cov_xv,{i},{float(c.mean())!r},{float(c.std(ddof=1) / math.sqrt(n))!r}")
    lines.append(f"poisoned,-1,{ens.n_poisoned},0")
    lines.append(f"excursions,-1,{ens.excursions},0")
    _write(out, "summary.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_krylov(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    bank = build_filter_bank(lat)
    b = _drift_field(cfg, lat)
    scfg = _sde_config(cfg, lat.d, args.seed_value)
    ens = simulate_ensemble(scfg, FieldDrift(b) if b is not None else None, jobs=args.jobs, lattice=lat)
    alpha, q, p = cfg.float("krylov.alpha"), cfg.float("krylov.q"), cfg.float("krylov.p")
    fns, fields = krylov_family(lat)
    tq = 1.0 if math.isinf(q) else scfg.T ** (1 / q)
    norms = [tq * holder_norm(f, HolderSpec(alpha), bank) for f in fields]
    lo, hi = cfg.int("krylov.min_window"), min(cfg.int("krylov.max_window"), scfg.K)
    steps = [w for w in (2**i for i in range(0, 31)) if lo <= w <= hi]
    rep = krylov_scan(ens, fns, norms, alpha, q, p, steps)
    hf = holder_exponent_of_A(ens, fns, p, steps, norms)
    _write(out, "krylov.csv", rep.to_csv())
    _write(out, "krylov_fit.csv", "alpha,q,p,target,fitted_slope,stderr,holder_exponent\n"
           f"{alpha!r},{q!r},{p!r},{rep.target!r},{rep.slope!r},{rep.slope_stderr!r},{hf.exponent!r}\n")
    print(f"fitted slope {rep.slope:.4f} +- {rep.slope_stderr:.4f} (target {rep.target:.4f})")
    return EXIT_OK


def cmd_cauchy(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    raw = _drift_field(cfg, lat, mollify=False)
    if raw is None:
        raise ConfigError("cauchy needs a nonzero drift (drift.kind=gaussian or file)")
    scfg = _sde_config(cfg, lat.d, args.seed_value)
    levels = [int(v) for v in cfg.floats("mollifier.levels")]
    rep = drift_functional_cauchy(scfg, raw, levels, cfg.int("mollifier.reference"),
                                  cfg.str("mollifier.second_bump"), jobs=args.jobs)
    _write(out, "cauchy.csv", rep.to_csv())
    print(rep.to_csv(), end="")
    return EXIT_OK


def cmd_moments(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    b = _drift_field(cfg, lat)
    deltas = cfg.floats("moments.deltas")
    lines = ["z0,delta,ratio,stderr"]
    for entry in cfg.str("moments.z0_grid").split(";"):
        try:
            xs, vs = entry.split(":")
            x0 = [float(xs)] * lat.d
            v0 = [float(vs)] * lat.d
        except ValueError as exc:
            raise ConfigError(f"moments.z0_grid entry {entry!r} must look like x:v") from exc
        scfg = _sde_config(cfg, lat.d, args.seed_value, x0, v0)
        ens = simulate_ensemble(scfg, FieldDrift(b) if b is not None else None, jobs=args.jobs, lattice=lat)
        for row in moment_report(ens, deltas):
            lines.append(f"{entry},{row.delta!r},{row.ratio!r},{row.stderr!r}")
    _write(out, "moments.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_ito_test(cfg: Config, out: Path, args) -> int:
    lat = lattice_from(cfg)
    bank = build_filter_bank(lat)
    grid = TimeGrid(cfg.float("time.T"), cfg.int("time.K"))
    f = smooth_forcing(lat)
    b = _drift_field(cfg, lat)
    B = SpaceTimeField.static(grid, b) if b is not None else None
    u = backward_solve(PdeProblem(SpaceTimeField.static(grid, f), 0.0, B, None), bank=bank).u
    scfg = _sde_config(cfg, lat.d, args.seed_value)
    ens = simulate_ensemble(scfg, FieldDrift(b) if b is not None else None, jobs=args.jobs, lattice=lat)
    rep = ito_martingale_test(u, ens, f, bands=cfg.float("ito.bands"))
    _write(out, "ito.csv", "check,statistic,reference,stderr,passed\n"
           f"regression_slope,{rep.slope!r},0.0,{rep.slope_stderr!r},{int(rep.regression_passes)}\n"
           f"quadratic_variation,{rep.qv_mean!r},{rep.predicted_qv_mean!r},{rep.qv_stderr!r},{int(rep.qv_passes)}\n")
    print(f"regression {'PASS' if rep.regression_passes else 'FAIL'}, quadratic variation {'PASS' if rep.qv_passes else 'FAIL'}")
    return EXIT_OK if rep.passes else EXIT_INVARIANT


COMMANDS = {
    "selftest": cmd_selftest,
    "sample-field": cmd_sample_field,
    "solve-pde": cmd_solve_pde,
    "simulate": cmd_simulate,
    "krylov": cmd_krylov,
    "cauchy": cmd_cauchy,
    "moments": cmd_moments,
    "ito-test": cmd_ito_test,
    "besov-slope": cmd_besov_slope,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="krl", description="Kinetic SDE / Kolmogorov PDE numerical laboratory")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("--seed", type=int, help="master seed (overrides sde.seed)")
    p.add_argument("--suite", help="selftest: comma-separated suite names " + str(sorted(SUITES)))
    p.add_argument("--inject-fault", dest="inject_fault", help=argparse.SUPPRESS)
    return p


def _setup_logging() -> None:
    level = os.environ.get("KRL_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"KRL_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        _setup_logging()
        given = parse_config_text(Path(args.config).read_text()) if args.config else {}
        if args.seed is not None:
            if "sde.seed" not in COMMAND_KEYS[args.command]:
                raise ConfigError(f"--seed is not used by {args.command}")
            given["sde.seed"] = str(args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive")
        cfg = Config(args.command, given)
        args.seed_value = cfg.int("sde.seed") if "sde.seed" in cfg.values else 0
        out = Path(args.out or cfg.str("output.dir"))
        cfg.values["output.dir"] = str(out)
        out.mkdir(parents=True, exist_ok=True)
        lat_mod.set_fft_workers(args.jobs)
        _write(out, "config_echo.txt", cfg.echo())
        return COMMANDS[args.command](cfg, out, args)
    except PicardDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
