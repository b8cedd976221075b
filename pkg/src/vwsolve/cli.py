"""Scenario files, presets and the ``vwsolve`` command line.

A scenario is an INI-style file::

    [scenario]   name, experiments (comma separated), output
    [system]     n, T, sobolev_s, smoothing_21, lam1, lam2, a12, l11 ... g2
    [mollifier]  radius, moments
    [scale]      kind (power|log), a, c
    [scale.NAME] per-coefficient scale override (NAME = l22, g1, ...)
    [solve]      L, N, steps, mode, window, eps_max, ratio, count | ladder,
                 picard_tol, picard_max_iters, window_shrink, min_window,
                 probes, power_iters, seed, path, data_scale

Vector entries (``lam1``/``lam2`` in 2-D, ``a12 = c0; c1; ...``) are
separated by semicolons.  Exit codes: 0 all verdicts pass, 1 a verdict
failed, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .characteristics import FlowError, eikonal_residual
from .coeff_dsl import DSLError
from .experiments import consistency_experiment, moderateness_experiment, perturbation_experiment
from .field_numerics import GridError, export_binary
from .nets import EpsilonLadder, NetsError, fit_moderateness, make_ladder
from .presets import PRESETS
from .propagators import PropagatorError
from .regularization import Mollifier, RegularizationError, Scale
from .system_solver import PicardDivergence, SolveConfig, SpecError, SystemSpec, solve_at

log = logging.getLogger("vwsolve")

__all__ = ["Scenario", "load_scenario", "parse_scenario", "run_scenario", "list_presets",
           "dump_default_config", "main", "OUTPUT_ENV"]

OUTPUT_ENV = "VWSOLVE_OUTPUT"
EXPERIMENTS = ("solve", "h3", "moderateness", "consistency", "perturbation", "eikonal")
HEADER = ["scenario", "eps", "quantity", "value", "verdict"]
PICARD_RATIO_MAX = 0.95
EIKONAL_FACTOR = 3.5

SYSTEM_KEYS = ("lam1", "lam2", "a12", "l11", "l12", "l21", "l22", "f1", "f2", "g1", "g2")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    spec: SystemSpec
    config: SolveConfig
    experiments: list = field(default_factory=list)  # (name, arg or None)
    output: str = "vwsolve_out"


def _split_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(";") if p.strip()]


def _experiments(text: str) -> list:
    out = []
    for item in re.split(r",(?![^()]*\))", text):
        item = item.strip()
        if not item:
            continue
        m = re.fullmatch(r"(\w+)(?:\((.*)\))?", item)
        if not m or m.group(1) not in EXPERIMENTS:
            raise ScenarioError(f"unknown experiment {item!r}")
        name, arg = m.group(1), m.group(2)
        if name == "perturbation":
            try:
                arg = float(arg) if arg else 2.0
            except ValueError as exc:
                raise ScenarioError(f"bad perturbation order in {item!r}") from exc
        elif arg:
            raise ScenarioError(f"experiment {name} takes no argument")
        out.append((name, arg))
    if not out:
        raise ScenarioError("no experiments listed")
    return out


def _scale(section) -> Scale:
    return Scale(section.get("kind", "power"), section.getfloat("a", 1.0), section.getfloat("c", 1.0))


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc
    for sec in ("scenario", "system"):
        if not cp.has_section(sec):
            raise ScenarioError(f"missing [{sec}] section")
    known = {"scenario", "system", "mollifier", "scale", "solve"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith("scale."):
            raise ScenarioError(f"unknown section [{sec}]")
    sc, sy = cp["scenario"], cp["system"]
    try:
        n = sy.getint("n", 1)
        kw = {}
        for key in SYSTEM_KEYS:
            if key in sy:
                kw[key] = _split_list(sy[key]) if key in ("lam1", "lam2", "a12") else sy[key]
        for key in sy:
            if key not in SYSTEM_KEYS + ("n", "T", "sobolev_s", "smoothing_21"):
                raise ScenarioError(f"unknown key {key!r} in [system]")
        if "lam1" not in kw or "lam2" not in kw:
            raise ScenarioError("[system] needs lam1 and lam2")
        spec = SystemSpec.from_strings(n=n, T=sy.getfloat("T", 1.0), sobolev_s=sy.getfloat("sobolev_s", 0.0),
                                       smoothing_21=sy.getboolean("smoothing_21", True),
                                       name=sc.get("name", "scenario"), **kw)

        mo = cp["mollifier"] if cp.has_section("mollifier") else {}
        moll = Mollifier(radius=float(mo.get("radius", 1.0)), moments=int(mo.get("moments", 0)))
        scale = _scale(cp["scale"]) if cp.has_section("scale") else Scale("power")
        overrides = {sec.split(".", 1)[1]: _scale(cp[sec]) for sec in cp.sections() if sec.startswith("scale.")}
        so = cp["solve"] if cp.has_section("solve") else cp[cp.default_section]
        if "ladder" in so:
            ladder = EpsilonLadder(tuple(float(v) for v in so["ladder"].replace(";", ",").split(",")))
        else:
            ladder = make_ladder(so.getfloat("eps_max", 0.3), so.getfloat("ratio", 0.5), so.getint("count", 8),
                                 log_scale=scale.kind == "log" or any(s.kind == "log" for s in overrides.values()))
        window = so.get("window")
        config = SolveConfig(
            ladder=ladder, mollifier=moll, scale=scale, scale_overrides=overrides,
            L=so.getfloat("L", 8.0), N=so.getint("N", 256), steps=so.getint("steps", 128),
            mode=so.get("mode", "identity"), window=float(window) if window else None,
            data_scale=so.get("data_scale", "coefficient"),
            picard_tol=so.getfloat("picard_tol", 1e-8), picard_max_iters=so.getint("picard_max_iters", 60),
            window_shrink=so.getfloat("window_shrink", 0.5), min_window=so.getint("min_window", 1),
            probes=so.getint("probes", 8), power_iters=so.getint("power_iters", 4), seed=so.getint("seed", 42),
            path=so.get("path", "auto"),
        )
        experiments = _experiments(sc.get("experiments", "solve"))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc
    names = {e for e, _ in experiments}
    if "consistency" in names and (spec.has_atoms or config.mode != "full"):
        raise ScenarioError("consistency needs an atom-free spec and mode = full")
    if "eikonal" in names and spec.n != 1:
        raise ScenarioError("the eikonal experiment is 1-D only")
    out = os.environ.get(OUTPUT_ENV) or sc.get("output", f"vwsolve_out/{spec.name}")
    return Scenario(spec.name, spec, config, experiments, out)


def load_scenario(path_or_preset: str) -> Scenario:
    if path_or_preset in PRESETS:
        return parse_scenario(PRESETS[path_or_preset])
    p = Path(path_or_preset)
    if not p.is_file():
        raise ScenarioError(f"no scenario file or preset named {path_or_preset!r}")
    return parse_scenario(p.read_text())


# ---------------------------------------------------------------------------
# running


class _Report:
    def __init__(self, scenario: str, outdir: Path):
        self.scenario = scenario
        self.outdir = outdir
        self.rows = []
        self.tables = {}

    def add(self, table: str, eps, quantity: str, value, verdict=None):
        row = [self.scenario, "" if eps is None else repr(float(eps)), quantity,
               repr(float(value)) if isinstance(value, (float, int, np.floating)) else str(value),
               "" if verdict is None else ("pass" if verdict else "fail")]
        self.rows.append(row)
        self.tables.setdefault(table, []).append(row)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r[4] == "fail"]

    def write(self):
        self.outdir.mkdir(parents=True, exist_ok=True)
        for name, rows in list(self.tables.items()) + [("summary", self.rows)]:
            with open(self.outdir / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(HEADER)
                w.writerows(rows)
        lines = [f"scenario {self.scenario}"]
        for r in self.rows:
            if r[4]:
                eps = f" eps={r[1]}" if r[1] else ""
                lines.append(f"{r[4].upper():4s} {r[2]}{eps} value={r[3]}")
        lines.append("ALL PASS" if not self.failures else f"{len(self.failures)} FAILED")
        (self.outdir / "verdicts.txt").write_text("\n".join(lines) + "\n")


class NumericalFailure(RuntimeError):
    def __init__(self, experiment, eps, exc):
        super().__init__(f"{experiment} failed at eps={eps}: {exc}")
        self.experiment, self.eps = experiment, eps


NUMERICAL = (FlowError, PicardDivergence, GridError, PropagatorError, FloatingPointError, NetsError,
             np.linalg.LinAlgError)


def _solve_ladder(sc: Scenario, rep: _Report, with_h3: bool, save: bool):
    sols = []
    for eps in sc.config.ladder:
        try:
            sol = solve_at(sc.spec, sc.config, eps, with_h3=with_h3)
        except NUMERICAL as exc:
            raise NumericalFailure("solve", eps, exc) from exc
        if save:
            rep.outdir.mkdir(parents=True, exist_ok=True)
            export_binary(sol.u1.final, rep.outdir / f"u1_eps{eps:.6g}.bin")
            export_binary(sol.u2.final, rep.outdir / f"u2_eps{eps:.6g}.bin")
        sol.system = None
        sols.append(sol)
    return sols


def _report_solve(sc, rep, sols):
    s = sc.spec.sobolev_s
    for sol in sols:
        rep.add("solve", sol.eps, "u1_sup_Hs", sol.sup_norm(1, s))
        rep.add("solve", sol.eps, "u2_sup_Hs", sol.sup_norm(2, s))
        rep.add("solve", sol.eps, "path", sol.path)
        iters = sum(len(inc) for _, _, inc in sol.picard)
        rep.add("solve", sol.eps, "picard_iterations", iters)
        ratios = [r for w in sol.picard_ratios() for r in w]
        if ratios:
            rep.add("solve", sol.eps, "picard_max_ratio", max(ratios), max(ratios) <= PICARD_RATIO_MAX)


def _report_h3(sc, rep, sols):
    T = sc.spec.T
    for sol in sols:
        h = sol.h3
        rep.add("h3", sol.eps, "lower", h.lower)
        rep.add("h3", sol.eps, "upper", h.upper, h.bracket_ok)
        rep.add("h3", sol.eps, "T_star", h.T_star, h.lower * h.T_star / T < 0.9)
        for i in (0, 1):
            rep.add("h3", sol.eps, f"C{i + 1}", h.C[i])
            rep.add("h3", sol.eps, f"C{i + 1}_inv", h.C_inv[i])
    eps = [sol.eps for sol in sols]
    if len(eps) >= 4:
        for i in (0, 1):
            for key, vals in ((f"C{i + 1}_inv", [sol.h3.C_inv[i] for sol in sols]),
                              (f"C{i + 1}", [1 / sol.h3.C[i] for sol in sols])):
                r = fit_moderateness(eps, vals, quantity=key)
                rep.add("h3", None, f"{key}_moderate_{r.model}", r.exponent, r.verdict)


def _report_moderateness(sc, rep, sols):
    for r in moderateness_experiment(sc.spec, sc.config, sols):
        rep.add("moderateness", None, f"{r.quantity}_{r.model}_exponent", r.exponent, r.verdict)
        rep.add("moderateness", None, f"{r.quantity}_residual", r.residual)


def _run_eikonal(sc, rep):
    from .system_solver import RegularizedSystem

    eps = sc.config.ladder[len(sc.config.ladder) // 2]
    rs = RegularizedSystem(sc.spec, sc.config, eps)
    flow = rs.flows[0]
    r = rs.W - 1.0
    x = np.linspace(-r / 2, r / 2, 9)
    tt = np.linspace(0.2, sc.spec.T, 4)
    xi = np.array([-2.0, 0.5, 3.0])
    hs = (0.04, 0.02)
    flow.h_ode = hs[-1] / 20
    res = [eikonal_residual(flow, tt, x, xi, h) for h in hs]
    rep.add("eikonal", eps, "residual_h", res[0])
    rep.add("eikonal", eps, "residual_h/2", res[1])
    factor = res[0] / res[1] if res[1] > 0 else float("inf")
    rep.add("eikonal", eps, "reduction_factor", factor, factor >= EIKONAL_FACTOR or res[0] < 1e-12)


def run_scenario(sc: Scenario, save_solutions: bool = False) -> int:
    outdir = Path(sc.output)
    rep = _Report(sc.name, outdir)
    names = [e for e, _ in sc.experiments]
    current = None
    try:
        sols = None
        if {"solve", "h3", "moderateness"} & set(names):
            current = "solve"
            sols = _solve_ladder(sc, rep, "h3" in names, save_solutions)
        for name, arg in sc.experiments:
            current = name
            if name == "solve":
                _report_solve(sc, rep, sols)
            elif name == "h3":
                _report_h3(sc, rep, sols)
            elif name == "moderateness":
                _report_moderateness(sc, rep, sols)
            elif name == "consistency":
                res = consistency_experiment(sc.spec, sc.config)
                for e, g in zip(res.eps, res.gaps):
                    rep.add("consistency", e, "sup_t_L2_gap", g)
                rep.add("consistency", None, "strictly_decreasing", int(res.decreasing), res.decreasing)
                rep.add("consistency", None, "final_gap", res.gaps[-1], res.final_ok)
            elif name == "perturbation":
                (res,) = perturbation_experiment(sc.spec, sc.config, arg)
                for e, d in zip(res.eps, res.diffs):
                    rep.add("perturbation", e, f"diff_q{arg:g}", d)
                rep.add("perturbation", None, f"order_q{arg:g}", res.order, res.passed)
            elif name == "eikonal":
                _run_eikonal(sc, rep)
    except NumericalFailure as exc:
        rep.write()
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NUMERICAL as exc:
        rep.write()
        print(f"error: {current} failed: {exc}", file=sys.stderr)
        return 3
    rep.write()
    for line in (outdir / "verdicts.txt").read_text().splitlines():
        print(line)
    return 0 if not rep.failures else 1


def list_presets() -> str:
    return "\n".join(PRESETS)


def dump_default_config() -> str:
    return """# vwsolve scenario (defaults shown; '#' starts a comment)
[scenario]
name = custom
experiments = solve, h3, moderateness   # also: consistency, perturbation(q), eikonal
# output = vwsolve_out/custom          # or set VWSOLVE_OUTPUT

[system]
n = 1
T = 1.0
sobolev_s = 0
smoothing_21 = true
lam1 = H(x)                  # one entry per direction, ';' separated
lam2 = H(x)
a12 = 0; 0                   # c0; c1 ... cn  (a12 = c0 + sum c_j D_j)
l11 = 0
l12 = 0
l21 = 0.5*bump(x,0,4)
l22 = 0
f1 = 0
f2 = 0
g1 = bump(x,-1,2.5)
g2 = bump(x,0.5,2.5)

[mollifier]
radius = 1.0
moments = 0                  # number of vanishing moments

[scale]
kind = log                   # power: omega = c*eps^a, log: 1/log(1/eps)
a = 1
c = 1

# [scale.l22]                # per-coefficient override
# kind = log

[solve]
L = 8
N = 256
steps = 128
mode = identity              # identity | full | exact
eps_max = 0.3
ratio = 0.5
count = 8
picard_tol = 1e-8
picard_max_iters = 60
window_shrink = 0.5
min_window = 1
probes = 8
power_iters = 4
seed = 42
path = auto                  # auto | general | direct
data_scale = coefficient     # coefficient | epsilon
"""


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="vwsolve", description="Regularized hyperbolic 2x2 systems.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file or preset")
    run.add_argument("scenario", nargs="?")
    run.add_argument("--preset")
    run.add_argument("--output", help=f"output directory (overrides the file and ${OUTPUT_ENV})")
    run.add_argument("--save-solutions", action="store_true")
    sub.add_parser("presets", help="list built-in scenarios")
    sub.add_parser("defaults", help="print a commented default scenario")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "presets":
        print(list_presets())
        return 0
    if args.command == "defaults":
        print(dump_default_config(), end="")
        return 0
    target = args.preset or args.scenario
    if not target or (args.preset and args.scenario):
        print("error: give exactly one of a scenario file or --preset", file=sys.stderr)
        return 2
    if args.preset and args.preset not in PRESETS:
        print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
        return 2
    try:
        sc = load_scenario(target)
    except (ScenarioError, SpecError, DSLError, RegularizationError, NetsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.output:
        sc.output = args.output
    try:
        return run_scenario(sc, args.save_solutions)
    except (SpecError, RegularizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
