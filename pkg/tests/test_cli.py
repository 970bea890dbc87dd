import subprocess
import sys
from pathlib import Path

import pytest

from kinlab.cli import COMMAND_KEYS, Config, ConfigError, main, parse_config_text

SMALL_LATTICE = {"lattice.Nx": "64", "lattice.Nv": "64"}
SMALL = {
    "selftest": SMALL_LATTICE,
    "sample-field": {**SMALL_LATTICE, "field.samples": "4"},
    "besov-slope": {"field.samples": "4"},
    "solve-pde": {**SMALL_LATTICE, "time.K": "16", "drift.kind": "gaussian", "mollifier.n": "4"},
    "simulate": {**SMALL_LATTICE, "time.K": "16", "sde.paths": "100", "sde.format": "csv"},
    "krylov": {**SMALL_LATTICE, "time.K": "32", "sde.paths": "400", "krylov.max_window": "16"},
    "cauchy": {**SMALL_LATTICE, "time.K": "16", "sde.paths": "200", "mollifier.levels": "2,4",
               "mollifier.reference": "8"},
    "moments": {**SMALL_LATTICE, "time.K": "16", "sde.paths": "200"},
    "ito-test": {**SMALL_LATTICE, "time.K": "16", "sde.paths": "200"},
}


def write_cfg(path: Path, values: dict) -> Path:
    path.write_text("# small run\n" + "".join(f"{k}={v}\n" for k, v in values.items()))
    return path


def csvs(directory: Path) -> dict:
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


def echo_body(directory: Path) -> list:
    return [ln for ln in (directory / "config_echo.txt").read_text().splitlines() if not ln.startswith("# generated")]


def test_parse_config_text():
    assert parse_config_text("a=1 # c\n\n# only comment\n b = x y \n") == {"a": "1", "b": "x y"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a=1\na=2\n")
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("nonsense\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        Config("selftest", {"lattice.bogus": "1"})


def test_echo_lists_every_key_sorted():
    lines = Config("moments", {}).echo().splitlines()
    assert lines[0].startswith("# generated ")
    keys = [ln.split("=", 1)[0] for ln in lines[1:]]
    assert keys == sorted(COMMAND_KEYS["moments"])


@pytest.mark.parametrize("command", sorted(SMALL))
def test_command_runs_and_reproduces_from_echo(tmp_path, command):
    first = tmp_path / "first"
    cfg = write_cfg(tmp_path / "run.cfg", SMALL[command])
    assert main([command, "--config", str(cfg), "--out", str(first), "--jobs", "1"]) == 0
    assert csvs(first)
    second = tmp_path / "second"
    assert main([command, "--config", str(first / "config_echo.txt"), "--out", str(second), "--jobs", "2"]) == 0
    assert csvs(first) == csvs(second)
    assert [ln for ln in echo_body(first) if not ln.startswith("output.dir")] == \
        [ln for ln in echo_body(second) if not ln.startswith("output.dir")]


def test_unknown_key_exit_code(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", {"lattice.bogus": "3"})
    assert main(["selftest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_value_exit_code(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", {"lattice.Nx": "sixty"})
    assert main(["selftest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_exit_code(tmp_path):
    assert main(["selftest", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_bad_subcommand_exit_code():
    assert main(["frobnicate"]) == 2


def test_seed_flag_only_where_used(tmp_path):
    assert main(["selftest", "--seed", "3", "--out", str(tmp_path / "o")]) == 2


def test_seed_flag_changes_output(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", SMALL["moments"])
    main(["moments", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["moments", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert "sde.seed=1" in echo_body(tmp_path / "a")
    assert csvs(tmp_path / "a") != csvs(tmp_path / "b")


def test_selftest_suite_filter(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", SMALL_LATTICE)
    assert main(["selftest", "--config", str(cfg), "--out", str(tmp_path / "o"), "--suite", "spectral,semigroup"]) == 0
    assert (tmp_path / "o" / "selftest.csv").read_text() == "suite,passed\nspectral,1\nsemigroup,1\n"
    assert main(["selftest", "--config", str(cfg), "--out", str(tmp_path / "p"), "--suite", "nope"]) == 2


def test_selftest_detects_injected_fault(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", SMALL_LATTICE)
    code = main(["selftest", "--config", str(cfg), "--out", str(tmp_path / "o"), "--inject-fault", "filter-bank"])
    assert code == 4
    assert "spectral,0" in (tmp_path / "o" / "selftest.csv").read_text()


def test_picard_divergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", {**SMALL["solve-pde"], "pde.method": "picard", "pde.max_iter": "1",
                                         "pde.tol": "1e-30"})
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", SMALL_LATTICE)
    res = subprocess.run([sys.executable, "-m", "kinlab", "selftest", "--config", str(cfg), "--out", str(tmp_path / "o"),
                          "--suite", "spectral"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("spectral: PASS")
