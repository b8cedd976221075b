"""Numerical experiments on ladders of regularized systems."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .coeff_dsl import parse_expr
from .field_numerics import sobolev_norms, spectral_derivative
from .nets import ModeratenessReport, check_negligible, fit_moderateness
from .system_solver import (
    RegularizedSystem,
    SolveConfig,
    SpecError,
    SystemSolution,
    SystemSpec,
    solve_at,
    solve_regularized,
)

__all__ = [
    "ConsistencyResult",
    "PerturbationResult",
    "consistency_experiment",
    "perturbation_experiment",
    "moderateness_experiment",
    "pde_residual",
    "substitution_residuals",
    "pair_norm",
]

PERTURBATION = "bump(x,0,1)"


def pair_norm(grid, a1, a2, s: float = 0.0) -> float:
    """sup over stamps of ``sqrt(||a1||^2 + ||a2||^2)`` in H^s."""
    n1 = sobolev_norms(grid, a1, s)
    n2 = sobolev_norms(grid, a2, s)
    return float(np.max(np.sqrt(n1**2 + n2**2)))


@dataclass
class ConsistencyResult:
    eps: np.ndarray
    gaps: np.ndarray
    threshold: float
    norms: dict = field(default_factory=dict)  # quantity -> sup_t norms along the ladder

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.gaps) < 0))

    @property
    def final_ok(self) -> bool:
        return bool(self.gaps[-1] < self.threshold)

    @property
    def passed(self) -> bool:
        return self.decreasing and self.final_ok


def consistency_experiment(spec: SystemSpec, config: SolveConfig, threshold: float = 1e-3) -> ConsistencyResult:
    """Gap ``sup_t ||u_eps - u||_{L2}`` between smoothed and unregularized solutions."""
    if spec.has_atoms:
        raise SpecError("consistency needs a spec without distributional atoms")
    if config.mode == "exact":
        raise SpecError("consistency needs a smoothing mode")
    exact = solve_at(spec, replace(config, mode="exact"), None, with_h3=False)
    gaps, norms = [], {}
    s = spec.sobolev_s
    for eps in config.ladder:
        sol = solve_at(spec, config, eps, with_h3=False)
        gaps.append(pair_norm(sol.u1.grid, sol.u1.values - exact.u1.values, sol.u2.values - exact.u2.values))
        for comp in (1, 2):
            for order in (s, s + 1):
                norms.setdefault(f"u{comp}_H{order:g}", []).append(sol.sup_norm(comp, order))
    return ConsistencyResult(config.ladder.array, np.asarray(gaps), threshold, norms)


@dataclass
class PerturbationResult:
    q: float
    eps: np.ndarray
    diffs: np.ndarray
    order: float
    passed: bool


def perturbation_experiment(spec: SystemSpec, config: SolveConfig, q, perturbation: str = PERTURBATION,
                            tol: float = 1e-12) -> list:
    """Perturb ``g1`` by ``eps^q * perturbation`` and fit the decay of the solution difference.

    ``q`` may be a single order or a sequence; the unperturbed net is solved once.
    """
    qs = [q] if np.isscalar(q) else list(q)
    if any(qq < 1 for qq in qs):
        raise SpecError("perturbation order must be at least 1")
    cfg = replace(config, picard_tol=min(config.picard_tol, tol))
    p_expr = parse_expr(perturbation)
    s = spec.sobolev_s
    diffs = {qq: [] for qq in qs}
    for eps in cfg.ladder:
        rs = RegularizedSystem(spec, cfg, eps)
        base = solve_regularized(rs, with_h3=False)
        bump = rs._data(rs._reg("g1", p_expr, None))
        for qq in qs:
            pert = solve_regularized(rs.with_data(g1=rs.g1 + eps**qq * bump), with_h3=False)
            diffs[qq].append(pair_norm(rs.grid, pert.u1.values - base.u1.values,
                                       pert.u2.values - base.u2.values, s))
    out = []
    for qq in qs:
        ok, order = check_negligible(cfg.ladder, diffs[qq], qq)
        out.append(PerturbationResult(qq, cfg.ladder.array, np.asarray(diffs[qq]), order, ok))
    return out


def moderateness_experiment(spec: SystemSpec, config: SolveConfig,
                            solutions: Sequence[SystemSolution] | None = None) -> list[ModeratenessReport]:
    """Fits of ``sup_t ||u_i||`` at orders s and s+1 for both components."""
    if solutions is None:
        solutions = [solve_at(spec, config, eps, with_h3=False) for eps in config.ladder]
    if len(solutions) < 4:
        raise SpecError("moderateness fits need at least 4 rungs")
    s = spec.sobolev_s
    eps = [sol.eps for sol in solutions]
    reports = []
    for comp in (1, 2):
        for order in (s, s + 1):
            samples = [sol.sup_norm(comp, order) for sol in solutions]
            reports.append(fit_moderateness(eps, samples, quantity=f"u{comp}_H{order:g}"))
    return reports


def pde_residual(sol: SystemSolution) -> float:
    """sup over interior stamps of the L2 residual (centered in t, spectral in x)."""
    rs: RegularizedSystem = sol.system
    if rs is None:
        raise ValueError("solution does not carry its regularized system")
    n, grid = rs.spec.n, rs.grid
    u1, u2 = sol.u1.values, sol.u2.values
    inner = slice(1, -1)
    Dt = lambda u: -1j * (u[2:] - u[:-2]) / (2 * rs.dt)

    def transport(lams, u):
        out = np.zeros_like(u[inner])
        for j, rc in enumerate(lams):
            if rc.is_zero:
                continue
            lam = rs._on_grid([rc])
            out += lam[inner] * spectral_derivative(grid, u[inner], j)
        return out

    def zero_order(name, u):
        a = rs.coefficient_arrays(name)
        return 0 if a is None else a[inner] * u[inner]

    r1 = Dt(u1) - transport(rs.lam1, u1) - rs.couple(u2)[inner] - zero_order("l11", u1)
    r2 = Dt(u2) - transport(rs.lam2, u2) - rs.smooth21(u1)[inner] - zero_order("l22", u2)
    if rs.F1 is not None:
        r1 = r1 - rs.F1[inner]
    if rs.F2 is not None:
        r2 = r2 - rs.F2[inner]
    return pair_norm(grid, r1, r2)


def substitution_residuals(sol: SystemSolution) -> tuple[float, float]:
    """Re-evaluate both integral equations at the computed pair (sup_t H^s)."""
    rs: RegularizedSystem = sol.system
    u1, u2 = sol.u1.values, sol.u2.values
    r1 = u1 - rs.U0(1) - rs.P1.G_all(rs.couple(u2))
    r2 = u2 - rs.U0(2) - rs.P2.G_all(rs.smooth21(u1))
    return float(np.max(rs.norms(r1))), float(np.max(rs.norms(r2)))
