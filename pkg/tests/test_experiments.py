from dataclasses import replace

import numpy as np
import pytest

from vwsolve.experiments import (
    consistency_experiment,
    moderateness_experiment,
    pair_norm,
    pde_residual,
    perturbation_experiment,
    substitution_residuals,
)
from vwsolve.fd_oracle import fd_gap, fd_reference
from vwsolve.field_numerics import Grid
from vwsolve.nets import make_ladder
from vwsolve.regularization import Scale
from vwsolve.system_solver import SolveConfig, SpecError, SystemSpec, solve_at

SMOOTH = SystemSpec.from_strings(
    "0.8 + 0.4*bump(x,0,3)", "-0.5 + 0.3*bump(x,1,3)", a12=("0.2*bump(x,0,3)",),
    l11="0.2*bump(x,0,3)", l12="0.3*bump(x,-1,3)", l21="0.4*bump(x,1,3)", l22="0.1*bump(x,0,3)",
    g1="bump(x,0,2.5)", g2="0.5*bump(x,0.5,2.5)", T=0.5)
HEAVI = SystemSpec.from_strings(
    "H(x)", "H(x)", a12=("0", "0.2*bump(x,0,3)"), l11="0.1*bump(x,0,4)", l12="0.3*bump(x,0,4)",
    l21="0.5*bump(x,0,4)", l22="0.1*bump(x,0,4)", g1="bump(x,-1,2.5)", g2="bump(x,0.5,2.5)", T=0.5)


def test_pair_norm():
    g = Grid(1, np.pi, 32)
    a = np.ones((3, 32))
    assert pair_norm(g, a, 0 * a) == pytest.approx(np.sqrt(2 * np.pi))
    assert pair_norm(g, a, a) == pytest.approx(np.sqrt(4 * np.pi))


def test_consistency_small_ladder():
    cfg = SolveConfig(ladder=make_ladder(0.4, 0.5, 4), scale=Scale("power"), mode="full",
                      L=8.0, N=64, steps=16, estimate_norm=False)
    res = consistency_experiment(SMOOTH, cfg, threshold=1e-2)
    assert res.decreasing and res.passed
    # first-order smoothing of a smooth coefficient: O(omega^2)
    ratios = res.gaps[:-1] / res.gaps[1:]
    assert np.all(ratios > 3.0)
    assert set(res.norms) == {"u1_H0", "u1_H1", "u2_H0", "u2_H1"}


def test_consistency_rejects_atoms_and_identity_mode():
    cfg = SolveConfig(mode="full")
    with pytest.raises(SpecError):
        consistency_experiment(HEAVI, cfg)
    with pytest.raises(SpecError):
        consistency_experiment(SMOOTH, SolveConfig(mode="exact"))


def test_perturbation_orders():
    cfg = SolveConfig(ladder=make_ladder(0.3, 0.5, 4, log_scale=True), L=8.0, N=64, steps=16,
                      estimate_norm=False)
    res = perturbation_experiment(HEAVI, cfg, [2.0, 3.0])
    assert [r.q for r in res] == [2.0, 3.0]
    for r in res:
        assert r.passed
        assert r.order >= r.q - 0.25
    with pytest.raises(SpecError):
        perturbation_experiment(HEAVI, cfg, 0.5)


@pytest.fixture(scope="module")
def heavi_solution():
    cfg = SolveConfig(L=8.0, N=128, steps=32)
    return solve_at(HEAVI, cfg, 0.05)


def test_substitution_residuals(heavi_solution):
    r1, r2 = substitution_residuals(heavi_solution)
    assert r1 < 1e-7 and r2 < 1e-12


def test_pde_residual_small(heavi_solution):
    res = pde_residual(heavi_solution)
    assert 0 < res < 0.5
    with pytest.raises(ValueError):
        pde_residual(replace(heavi_solution, system=None))


def test_moderateness_needs_four_rungs(heavi_solution):
    with pytest.raises(SpecError):
        moderateness_experiment(HEAVI, SolveConfig(), [heavi_solution] * 3)


def test_moderateness_reports():
    cfg = SolveConfig(ladder=make_ladder(0.3, 0.5, 4, log_scale=True), L=8.0, N=64, steps=16,
                      estimate_norm=False)
    reps = moderateness_experiment(HEAVI, cfg)
    assert [r.quantity for r in reps] == ["u1_H0", "u1_H1", "u2_H0", "u2_H1"]
    assert all(r.verdict for r in reps)


def test_fd_oracle_agrees_with_characteristics():
    sol = solve_at(SMOOTH, SolveConfig(mode="exact", L=8.0, N=128, steps=32), None)
    u1, u2 = fd_reference(sol.system, refine=2)
    assert u1.shape == sol.u1.values.shape
    assert fd_gap(sol, refine=2) < 5e-3


def test_fd_oracle_rejects_two_dimensions():
    spec = SystemSpec.from_strings(("0", "0"), ("0", "0"), n=2, g1="bump(x1,0,1)*bump(x2,0,1)", T=0.1)
    sol = solve_at(spec, SolveConfig(mode="exact", L=4.0, N=32, steps=4), None)
    with pytest.raises(ValueError):
        fd_reference(sol.system)
