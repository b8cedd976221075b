from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from vwsolve.field_numerics import bessel_apply
from vwsolve.nets import make_ladder
from vwsolve.propagators import solve_scalar
from vwsolve.system_solver import (
    PicardDivergence,
    RegularizedSystem,
    SolveConfig,
    SpecError,
    SystemSpec,
    apply_coupling,
    build_U0,
    build_U0_tilde,
    estimate_h3,
    solve_at,
    solve_regularized,
    solve_system,
)

SMALL = SolveConfig(L=8.0, N=64, steps=32, mode="exact", probes=8, power_iters=1)
DATA = dict(g1="bump(x,0,2.5)", g2="0.5*bump(x,0.5,2.5)")


def smooth_spec(**kw):
    base = dict(lam1="0.6 + 0.3*bump(x,0,3)", lam2="-0.4", a12=("0.1*bump(x,0,3)",),
                l11="0.2*bump(x,0,3)", l12="0.3*bump(x,0,3)", l21="0.4*bump(x,1,3)",
                l22="0.1*bump(x,0,3)", T=0.5, **DATA)
    base.update(kw)
    return SystemSpec.from_strings(**base)


def interior(rs, r=3.0):
    return np.abs(rs.grid.axis) < r


# validation ------------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(T=0.0),
    dict(sobolev_s=-1.0),
    dict(g1="delta(t-0.5)"),
    dict(n=3),
    dict(l11="H(x2)"),
])
def test_spec_validation(kw):
    base = dict(lam1="1", lam2="1", g1="bump(x,0,1)")
    base.update(kw)
    if kw.get("n") == 3:
        base.update(lam1=("1",) * 3, lam2=("1",) * 3)
    with pytest.raises(SpecError):
        SystemSpec.from_strings(**base)


def test_zero_order_path_rejects_first_order_a12():
    with pytest.raises(SpecError):
        SystemSpec.from_strings("1", "1", a12=("0", "1"), smoothing_21=False)


def test_config_validation():
    with pytest.raises(SpecError):
        SolveConfig(mode="sharp")
    with pytest.raises(SpecError):
        SolveConfig(path="fast")
    with pytest.raises(SpecError):
        SolveConfig(steps=1)
    with pytest.raises(SpecError):
        SolveConfig(window_shrink=1.0)


def test_box_too_small():
    spec = SystemSpec.from_strings("5", "0", g1="bump(x,0,3)", T=1.0)
    with pytest.raises(SpecError, match="box too small"):
        RegularizedSystem(spec, SMALL, None)


def test_data_must_be_compact():
    spec = SystemSpec.from_strings("0", "0", g1="H(x)")
    with pytest.raises(SpecError):
        RegularizedSystem(spec, replace(SMALL, mode="identity"), 0.01)


def test_structure_and_round_trip():
    spec = smooth_spec()
    assert spec.structure == "general"
    assert smooth_spec(l21="0").structure == "triangular"
    assert smooth_spec(smoothing_21=False).structure == "zero_order"
    again = SystemSpec.from_strings(**{k: v for k, v in _unpack(spec.to_strings()).items()}, T=spec.T)
    assert again.entries() == spec.entries()


def _unpack(d):
    out = dict(lam1=d["lam1_1"], lam2=d["lam2_1"], a12=(d["a12_0"],))
    out.update({k: d[k] for k in ("l11", "l12", "l21", "l22", "f1", "f2", "g1", "g2")})
    return out


# operators -------------------------------------------------------------------


@pytest.fixture(scope="module")
def rs():
    return RegularizedSystem(smooth_spec(), SMALL, None)


def test_U0_tilde_composition(rs):
    U01, U02 = build_U0(rs, 1).values, build_U0(rs, 2).values
    expect = U01 + rs.P1.G_all(rs.B0 * U02)
    np.testing.assert_allclose(build_U0_tilde(rs).values, expect, atol=1e-14)


def test_coupling_composition(rs):
    u = np.broadcast_to(rs.g1, (rs.M + 1,) + rs.grid.shape).copy()
    step = rs.P2.G_all(rs.L21 * bessel_apply(rs.grid, u, -1))
    expect = rs.P1.G_all(rs.B0 * step)
    got = apply_coupling(rs, build_U0(rs, 1)).values
    np.testing.assert_allclose(rs.G_op(u), expect, atol=1e-14)
    assert got.shape == u.shape and np.all(got[0] == 0)


def test_coupling_with_constant_coefficients():
    """With lambda = 0 and constants a, b: G u = -(a b t^2 / 2) u for time-independent u."""
    a, b = 0.7, -1.3
    spec = SystemSpec.from_strings("0", "0", l12=str(a), l21=str(b), smoothing_21=False, T=1.0, **DATA)
    rs = RegularizedSystem(spec, SMALL, None)
    u = np.broadcast_to(rs.g1, (rs.M + 1,) + rs.grid.shape)
    out = rs.G_op(np.array(u))
    t = rs.times[:, None]
    mask = interior(rs)
    exact = -a * b * t**2 / 2 * rs.g1
    # trapezoid in the outer integral is exact for the linear inner result
    np.testing.assert_allclose(out[:, mask], exact[:, mask], atol=1e-12)


def test_constant_system_matches_matrix_exponential():
    B = np.array([[0.3, 0.8], [-0.6, 0.1]])
    spec = SystemSpec.from_strings("0", "0", l11=str(B[0, 0]), l12=str(B[0, 1]), l21=str(B[1, 0]),
                                   l22=str(B[1, 1]), smoothing_21=False, T=1.0, **DATA)
    sol = solve_at(spec, replace(SMALL, steps=64), None)
    assert sol.path == "zero_order"
    E = expm(1j * B * spec.T)
    rs = sol.system
    mask = interior(rs)
    u1 = E[0, 0] * rs.g1 + E[0, 1] * rs.g2
    u2 = E[1, 0] * rs.g1 + E[1, 1] * rs.g2
    assert np.max(np.abs(sol.u1.values[-1, mask] - u1[mask])) < 1e-4
    assert np.max(np.abs(sol.u2.values[-1, mask] - u2[mask])) < 1e-4


def test_decoupled_system_equals_scalar_solves():
    spec = smooth_spec(a12=("0",), l12="0", l21="0", f1="0.2*bump(x,0,2)*t")
    sol = solve_at(spec, SMALL, None)
    rs = sol.system
    ref = solve_scalar([rs.lam1[0]], rs.coeffs["l11"], rs.F1, rs.g1, rs.grid, rs.times,
                       h_ode=rs.flows[0].h_ode)
    np.testing.assert_allclose(sol.u1.values, ref.values, atol=1e-10)
    ref2 = solve_scalar([rs.lam2[0]], rs.coeffs["l22"], None, rs.g2, rs.grid, rs.times,
                        h_ode=rs.flows[1].h_ode)
    np.testing.assert_allclose(sol.u2.values, ref2.values, atol=1e-10)


def test_zero_data_gives_zero_solution():
    spec = smooth_spec(g1="0", g2="0")
    sol = solve_at(spec, SMALL, None, with_h3=False)
    assert np.all(sol.u1.values == 0) and np.all(sol.u2.values == 0)


@pytest.fixture(scope="module")
def rs_tight():
    return RegularizedSystem(smooth_spec(), replace(SMALL, picard_tol=1e-12), None)


@settings(max_examples=5, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_solution_is_linear_in_data(rs_tight, a, b):
    rs = rs_tight
    s1 = _solve(rs.with_data(g1=rs.g1, g2=0 * rs.g2))
    s2 = _solve(rs.with_data(g1=0 * rs.g1, g2=rs.g2))
    sc = _solve(rs.with_data(g1=a * rs.g1, g2=b * rs.g2))
    np.testing.assert_allclose(sc.u1.values, a * s1.u1.values + b * s2.u1.values, atol=1e-7)
    np.testing.assert_allclose(sc.u2.values, a * s1.u2.values + b * s2.u2.values, atol=1e-7)


def _solve(rs):
    return solve_regularized(rs, with_h3=False)


def test_picard_solution_satisfies_both_equations(rs):
    sol = solve_at(rs.spec, replace(SMALL, picard_tol=1e-11), None)
    u1, u2 = sol.u1.values, sol.u2.values
    r1 = u1 - rs.U0(1) - rs.P1.G_all(rs.couple(u2))
    r2 = u2 - rs.U0(2) - rs.P2.G_all(rs.smooth21(u1))
    assert np.max(rs.norms(r1)) < 1e-9 * np.max(rs.norms(u1))
    assert np.max(rs.norms(r2)) < 1e-12
    assert all(r < 0.5 for w in sol.picard_ratios() for r in w)


def test_direct_and_picard_paths_agree_on_triangular():
    spec = smooth_spec(l21="0")
    a = solve_at(spec, SMALL, None)
    b = solve_at(spec, replace(SMALL, path="general"), None)
    assert a.path == "direct" and b.path == "general"
    np.testing.assert_allclose(a.u1.values, b.u1.values, atol=1e-12)
    with pytest.raises(SpecError):
        solve_at(smooth_spec(), replace(SMALL, path="direct"), None)


def test_picard_divergence_reported():
    spec = SystemSpec.from_strings("0", "0", l12="60", l21="60", smoothing_21=False, T=1.0, **DATA)
    cfg = replace(SMALL, min_window=32, picard_max_iters=10, estimate_norm=False)
    with pytest.raises(PicardDivergence):
        solve_at(spec, cfg, None)


def test_window_shrinks_for_strong_coupling():
    spec = SystemSpec.from_strings("0", "0", l12="6", l21="6", smoothing_21=False, T=1.0, **DATA)
    sol = solve_at(spec, replace(SMALL, picard_tol=1e-10), None)
    assert sol.h3.lower > 1
    assert len(sol.picard) > 1
    # still agrees with the matrix exponential
    B = np.array([[0, 6.0], [6.0, 0]])
    E = expm(1j * B)
    rs = sol.system
    mask = interior(rs)
    u1 = E[0, 0] * rs.g1 + E[0, 1] * rs.g2
    assert np.max(np.abs(sol.u1.values[-1, mask] - u1[mask])) < 5e-2


def test_h3_bracket(rs):
    rep = estimate_h3(rs)
    assert 0 < rep.lower <= rep.upper
    assert rep.bracket_ok
    assert rep.T_star == rs.spec.T
    assert set(rep.row()) >= {"eps", "lower", "upper", "T_star", "C1", "C2"}
    with pytest.raises(SpecError):
        estimate_h3(rs, trials=4)


def test_h3_vanishes_without_back_coupling():
    rep = estimate_h3(RegularizedSystem(smooth_spec(l21="0"), SMALL, None))
    assert rep.lower == 0 and rep.upper == 0


def test_h3_is_reproducible(rs):
    a, b = estimate_h3(rs, seed=7), estimate_h3(rs, seed=7)
    assert a.lower == b.lower


def test_solve_system_over_ladder():
    spec = SystemSpec.from_strings("H(x)", "0", g1="bump(x,-1,2)", T=0.5)
    cfg = SolveConfig(L=8.0, N=64, steps=16, ladder=make_ladder(0.3, 0.5, 4, log_scale=True))
    sols = solve_system(spec, cfg)
    assert [s.eps for s in sols] == list(cfg.ladder)
    assert all(s.system is None for s in sols)
    # the smoothed step is steeper on lower rungs but transport keeps the L2 norm close
    norms = [s.sup_norm(1, 0) for s in sols]
    assert max(norms) / min(norms) < 1.5


def test_scale_overrides():
    from vwsolve.regularization import Scale

    cfg = SolveConfig(scale=Scale("power"), scale_overrides={"l22": Scale("log")}, data_scale="epsilon")
    assert cfg.scale_for("l22").kind == "log"
    assert cfg.scale_for("lam1_1").kind == "power"
    assert cfg.scale_for("g1") == Scale("power", 1.0, 1.0)
