import csv

import pytest

from vwsolve import cli
from vwsolve.cli import (
    HEADER,
    ScenarioError,
    dump_default_config,
    list_presets,
    load_scenario,
    main,
    parse_scenario,
    run_scenario,
)
from vwsolve.presets import PRESETS
from vwsolve.system_solver import PicardDivergence

TINY = """
[scenario]
name = tiny
experiments = solve, h3, eikonal

[system]
lam1 = H(x)
lam2 = 0.5*H(x)
l12 = 0.2*bump(x,0,3)
l21 = 0.3*bump(x,0,3)
g1 = bump(x,-1,2)   # comment
g2 = bump(x,0.5,2)
T = 0.5

[scale]
kind = log

[solve]
L = 8
N = 64
steps = 16
eps_max = 0.3
ratio = 0.5
count = 4
"""


def test_presets_listed(capsys):
    assert main(["presets"]) == 0
    names = capsys.readouterr().out.split()
    assert names == ["heaviside_2x2", "time_dirac", "smooth_consistency", "scalar_transport"]
    assert list_presets().split() == names


@pytest.mark.parametrize("name", list(PRESETS))
def test_presets_parse(name):
    sc = load_scenario(name)
    assert sc.name == name
    assert len(sc.config.ladder) >= 4


def test_defaults_round_trip(capsys):
    assert main(["defaults"]) == 0
    text = capsys.readouterr().out
    assert text == dump_default_config()
    sc = parse_scenario(text)
    assert [e for e, _ in sc.experiments] == ["solve", "h3", "moderateness"]
    assert sc.config.scale.kind == "log" and len(sc.spec.a12) == 2
    assert sc.config.N == 256 and sc.spec.structure == "general"


def test_parse_details():
    sc = parse_scenario(TINY)
    assert sc.spec.T == 0.5
    assert sc.config.ladder[0] == pytest.approx(0.3)
    assert sc.experiments == [("solve", None), ("h3", None), ("eikonal", None)]
    sc2 = parse_scenario(TINY.replace("solve, h3, eikonal", "perturbation(3), solve"))
    assert sc2.experiments[0] == ("perturbation", 3.0)


@pytest.mark.parametrize("bad", [
    TINY.replace("[system]", "[sistem]"),
    TINY.replace("lam1 = H(x)", "lam1 = H(x"),
    TINY.replace("solve, h3, eikonal", "solve, fly"),
    TINY.replace("solve, h3, eikonal", "h3(2)"),
    TINY.replace("T = 0.5", "T = 0.5\ncolour = red"),
    TINY.replace("steps = 16", "steps = many"),
    TINY.replace("solve, h3, eikonal", "consistency"),
])
def test_parse_errors(bad):
    with pytest.raises((ScenarioError, ValueError)):
        parse_scenario(bad)


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", "--preset", "nope"]) == 2
    assert main(["run"]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text(TINY.replace("lam1 = H(x)", "lam1 = H(x)*H(x)"))
    assert main(["run", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    sc = parse_scenario(TINY)
    sc.output = str(out / "a")
    code = run_scenario(sc)
    return code, out


def test_run_writes_reports(tiny_run):
    code, out = tiny_run
    assert code == 0
    for name in ("summary", "solve", "h3", "eikonal"):
        with open(out / "a" / f"{name}.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == HEADER
        assert all(r[0] == "tiny" for r in rows[1:])
    verdicts = (out / "a" / "verdicts.txt").read_text().splitlines()
    assert verdicts[0] == "scenario tiny" and verdicts[-1] == "ALL PASS"


def test_run_is_deterministic(tiny_run, tmp_path):
    _, out = tiny_run
    path = tmp_path / "s.ini"
    path.write_text(TINY)
    assert main(["run", str(path), "--output", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "summary.csv").read_text() == (out / "a" / "summary.csv").read_text()


def test_output_env_var(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert parse_scenario(TINY).output == str(tmp_path / "env")


def test_failed_verdict_exit_code(monkeypatch, tmp_path):
    monkeypatch.setattr(cli, "EIKONAL_FACTOR", 1e9)
    sc = parse_scenario(TINY.replace("solve, h3, eikonal", "eikonal"))
    sc.output = str(tmp_path)
    assert run_scenario(sc) == 1
    assert "1 FAILED" in (tmp_path / "verdicts.txt").read_text()


def test_numerical_failure_exit_code(monkeypatch, tmp_path, capsys):
    def boom(*a, **k):
        raise PicardDivergence("diverged")

    monkeypatch.setattr(cli, "solve_at", boom)
    sc = parse_scenario(TINY)
    sc.output = str(tmp_path)
    assert run_scenario(sc) == 3
    assert "diverged" in capsys.readouterr().err


def test_save_solutions(tmp_path):
    sc = parse_scenario(TINY.replace("solve, h3, eikonal", "solve"))
    sc.output = str(tmp_path)
    assert run_scenario(sc, save_solutions=True) == 0
    assert len(list(tmp_path.glob("u1_eps*.bin"))) == 4
