"""Regularized 2x2 systems ``D_t u = A u + L u + f`` and their fixed-point solution.

    A = [[sum_j lam1_j D_j, a12(t,x,D)], [0, sum_j lam2_j D_j]]
    L = [[l11, l12], [l21 <D>^-1, l22]]

with ``a12 = c0 + sum_j c_j D_j``.  Writing ``U0_i = G0_i g_i + G_i f_i``,

    u1 = U~0 + G u1,   U~0 = U0_1 + G_1((a12 + l12) U0_2),
    G  = G_1 o (a12 + l12) o G_2 o l21 <D>^-1,
    u2 = U0_2 + G_2(l21 <D>^-1 u1).

``u1`` is found by Picard iteration on successive time windows; when
``l21 = 0`` the formulas are used directly.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .characteristics import CharFlow, FoldError, family_bounds, phase_bounds
from .coeff_dsl import CoeffExpr, is_zero, parse_expr, print_expr, support_radius
from .field_numerics import Grid, Trajectory, bessel_apply, check_support, sobolev_norms, spectral_derivative
from .nets import EpsilonLadder, default_ladder
from .propagators import Propagator
from .regularization import (
    Mollifier,
    RegularizationError,
    RegularizedCoefficient,
    Scale,
    exact_coefficient,
    regularize,
    sup_norms,
)

log = logging.getLogger(__name__)

__all__ = [
    "SystemSpec",
    "SolveConfig",
    "RegularizedSystem",
    "SystemSolution",
    "H3Report",
    "SpecError",
    "PicardDivergence",
    "solve_at",
    "solve_regularized",
    "solve_system",
    "estimate_h3",
    "build_U0",
    "build_U0_tilde",
    "apply_coupling",
]

CONTRACTION = 0.9
# RK4 steps per mollifier width inside regularized time atoms
FINE_STEPS = 64


class SpecError(ValueError):
    """Invalid system definition or configuration."""


class PicardDivergence(RuntimeError):
    pass


def _expr(v) -> CoeffExpr:
    if isinstance(v, CoeffExpr):
        return v
    return parse_expr(str(v))


def _exprs(v, n) -> tuple:
    if isinstance(v, (str, CoeffExpr)) or np.isscalar(v):
        v = [v]
    return tuple(_expr(e) for e in v)


@dataclass(frozen=True)
class SystemSpec:
    lam1: tuple
    lam2: tuple
    a12: tuple = ()
    l11: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    l12: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    l21: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    l22: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    f1: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    f2: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    g1: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    g2: CoeffExpr = field(default_factory=lambda: parse_expr("0"))
    T: float = 1.0
    sobolev_s: float = 0.0
    n: int = 1
    smoothing_21: bool = True
    name: str = "custom"

    @classmethod
    def from_strings(cls, lam1, lam2, a12=("0",), l11="0", l12="0", l21="0", l22="0",
                     f1="0", f2="0", g1="0", g2="0", **kw) -> "SystemSpec":
        n = kw.get("n", 1)
        spec = cls(_exprs(lam1, n), _exprs(lam2, n), _exprs(a12, n), _expr(l11), _expr(l12),
                   _expr(l21), _expr(l22), _expr(f1), _expr(f2), _expr(g1), _expr(g2), **kw)
        spec.validate()
        return spec

    def entries(self) -> dict:
        d = {}
        for j, e in enumerate(self.lam1):
            d[f"lam1_{j + 1}"] = e
        for j, e in enumerate(self.lam2):
            d[f"lam2_{j + 1}"] = e
        for j, e in enumerate(self.a12):
            d[f"a12_{j}"] = e
        for k in ("l11", "l12", "l21", "l22", "f1", "f2", "g1", "g2"):
            d[k] = getattr(self, k)
        return d

    def to_strings(self) -> dict:
        return {k: print_expr(e) for k, e in self.entries().items()}

    def validate(self) -> None:
        n = self.n
        if n not in (1, 2):
            raise SpecError("dimension must be 1 or 2")
        if len(self.lam1) != n or len(self.lam2) != n:
            raise SpecError("need one speed per direction in lam1 and lam2")
        if len(self.a12) not in (0, 1, n + 1):
            raise SpecError("a12 takes (c0,) or (c0, c1, ..., cn)")
        if self.T <= 0:
            raise SpecError("T must be positive")
        if self.sobolev_s < 0:
            raise SpecError("negative Sobolev orders are not supported")
        for name in ("g1", "g2"):
            e = getattr(self, name)
            if e.singular_variable == "t":
                raise SpecError(f"{name} is initial data and cannot depend on t-atoms")
        if not self.smoothing_21 and any(not is_zero(c) for c in self.a12[1:]):
            raise SpecError("the path without <D>^-1 needs a zero-order a12")
        for name, e in self.entries().items():
            if e.singular_variable not in (None, "t") and int(e.singular_variable[1:]) > n:
                raise SpecError(f"{name} uses {e.singular_variable} in dimension {n}")

    @property
    def structure(self) -> str:
        if is_zero(self.l21):
            return "triangular"
        return "general" if self.smoothing_21 else "zero_order"

    @property
    def has_atoms(self) -> bool:
        return any(e.atoms for e in self.entries().values())

    def with_data(self, **kw) -> "SystemSpec":
        kw = {k: _expr(v) if k in ("g1", "g2", "f1", "f2") else v for k, v in kw.items()}
        return replace(self, **kw)


@dataclass
class SolveConfig:
    ladder: EpsilonLadder = field(default_factory=lambda: default_ladder(log_scale=True))
    mollifier: Mollifier = field(default_factory=Mollifier)
    scale: Scale = field(default_factory=lambda: Scale("log"))
    L: float = 8.0
    N: int = 256
    steps: int = 128
    mode: str = "identity"
    window: float | None = None
    data_scale: str = "coefficient"
    scale_overrides: dict = field(default_factory=dict)
    picard_tol: float = 1e-8
    picard_max_iters: int = 60
    window_shrink: float = 0.5
    min_window: int = 1
    probes: int = 8
    power_iters: int = 4
    seed: int = 42
    path: str = "auto"
    h_ode: float | None = None
    estimate_norm: bool = True
    check_support: bool = True

    def __post_init__(self):
        if self.mode not in ("identity", "full", "exact"):
            raise SpecError(f"unknown mode {self.mode!r}")
        if self.picard_tol <= 0 or self.min_window < 1 or not 0 < self.window_shrink < 1:
            raise SpecError("picard_tol > 0, min_window >= 1 and 0 < window_shrink < 1 required")
        if self.path not in ("auto", "general", "direct"):
            raise SpecError(f"unknown path {self.path!r}")
        if self.data_scale not in ("coefficient", "epsilon"):
            raise SpecError(f"unknown data scale {self.data_scale!r}")
        if self.steps < 2:
            raise SpecError("need at least 2 time steps")

    @property
    def W(self) -> float:
        return self.L - 1.0 if self.window is None else self.window

    def grid(self, n: int) -> Grid:
        return Grid(n, self.L, self.N)

    def scale_for(self, name: str) -> Scale:
        base = name.split("_")[0]
        if name in self.scale_overrides:
            return self.scale_overrides[name]
        if base in self.scale_overrides:
            return self.scale_overrides[base]
        if base in ("g1", "g2", "f1", "f2") and self.data_scale == "epsilon":
            return Scale("power", 1.0, 1.0)
        return self.scale


def _is_zero_rc(rc: RegularizedCoefficient | None) -> bool:
    return rc is None or rc.is_zero


class RegularizedSystem:
    """All regularized coefficients, flows and propagators of one rung ``eps``."""

    def __init__(self, spec: SystemSpec, config: SolveConfig, eps: float | None):
        spec.validate()
        self.spec, self.config, self.eps = spec, config, eps
        n = spec.n
        self.grid = config.grid(n)
        self.times = np.linspace(0.0, spec.T, config.steps + 1)
        self.M = config.steps
        self.dt = spec.T / config.steps
        W = config.W
        if W > config.L - 0.5:
            raise SpecError("truncation window must satisfy W <= L - 0.5")
        self.W = W
        try:
            self.coeffs = {}
            for name, e in spec.entries().items():
                data = name in ("g1", "g2")
                self.coeffs[name] = self._reg(name, e, None if data else W)
        except RegularizationError as exc:
            raise SpecError(str(exc)) from exc
        c = self.coeffs
        self.lam1 = [c[f"lam1_{j + 1}"] for j in range(n)]
        self.lam2 = [c[f"lam2_{j + 1}"] for j in range(n)]
        a12 = [c[f"a12_{j}"] for j in range(len(spec.a12))]
        self.a12_c0 = a12[0] if a12 else None
        self.a12_d = a12[1:] if len(a12) > 1 else []
        pts = self.grid.points
        self._pts = pts

        self.flows = [self._flow(self.lam1, [c["l11"]]), self._flow(self.lam2, [c["l22"]])]
        self.P1 = Propagator(self.flows[0], None if _is_zero_rc(c["l11"]) else c["l11"], self.grid, self.times)
        self.P2 = Propagator(self.flows[1], None if _is_zero_rc(c["l22"]) else c["l22"], self.grid, self.times)

        self.B0 = self._on_grid([self.a12_c0, c["l12"]])
        self.Bd = [self._on_grid([cj]) for cj in self.a12_d]
        self.L21 = self._on_grid([c["l21"]])
        self.F1 = self._on_grid([c["f1"]])
        self.F2 = self._on_grid([c["f2"]])
        self.g1 = self._data(c["g1"])
        self.g2 = self._data(c["g2"])
        self._check_domain()

    # construction helpers ---------------------------------------------------
    def _reg(self, name, e, window):
        cfg = self.config
        if cfg.mode == "exact":
            return exact_coefficient(e, window=window, n=self.spec.n)
        return regularize(e, cfg.mollifier, cfg.scale_for(name), self.eps, mode=cfg.mode,
                          window=window, n=self.spec.n)

    def _flow(self, lams, extra) -> CharFlow:
        cfg = self.config
        h_ode = cfg.h_ode or min(self.dt, self.grid.h / 4)
        stiff = []
        for rc in list(lams) + list(extra):
            if rc.mode == "exact":
                continue
            if rc.singular_variable == "t":
                h = rc.omega * rc.mollifier.radius / FINE_STEPS
                stiff += [(a, b, h) for a, b in rc.time_stiff_intervals()]
            elif rc.has_x_atoms and rc in lams:
                h_ode = min(h_ode, rc.omega * rc.mollifier.radius / 16)
        return CharFlow(list(lams), self.spec.n, self.config.L, 0.5, h_ode, tuple(stiff))

    def _on_grid(self, rcs) -> np.ndarray | None:
        rcs = [r for r in rcs if not _is_zero_rc(r)]
        if not rcs:
            return None
        shape = self.grid.shape
        out = np.zeros((self.M + 1,) + shape, dtype=complex)
        for r in rcs:
            if r.source.singular_variable != "t" and "t" not in _vars(r.source):
                out += np.broadcast_to(r(0.0, self._pts), shape)
            else:
                for m, t in enumerate(self.times):
                    out[m] += np.broadcast_to(r(t, self._pts), shape)
        return out

    def _data(self, rc) -> np.ndarray:
        if _is_zero_rc(rc):
            return np.zeros(self.grid.shape, dtype=complex)
        return np.asarray(np.broadcast_to(rc(0.0, self._pts), self.grid.shape), dtype=complex)

    def reach(self) -> float:
        """Largest displacement ``|gamma(x,t;s) - x|`` over both traced families."""
        r = 0.0
        for P in (self.P1, self.P2):
            d = P.family.gam - P.family.points
            r = max(r, float(np.max(np.abs(d) if self.spec.n == 1 else np.linalg.norm(d, axis=-1))))
        return r

    def _check_domain(self):
        cfg = self.config
        supp = 0.0
        for name in ("g1", "g2", "f1", "f2"):
            e = self.spec.entries()[name]
            if is_zero(e):
                continue
            R = support_radius(e, None, self.spec.n)
            if not math.isfinite(R):
                raise SpecError(f"{name} is not compactly supported")
            rc = self.coeffs[name]
            if rc.mode != "exact" and rc.singular_variable not in (None, "t"):
                R += rc.omega * cfg.mollifier.radius
            if rc.mode == "full":
                R += rc.omega * cfg.mollifier.radius
            supp = max(supp, R)
        need = supp + self.reach() + 1.0
        if need > cfg.L:
            raise SpecError(f"box too small: data radius {supp:.3g} + reach {self.reach():.3g} + 1 "
                            f"exceeds L = {cfg.L}")

    def with_data(self, g1=None, g2=None, F1=None, F2=None) -> "RegularizedSystem":
        """Shallow copy with replaced grid data (arrays); flows and propagators are shared."""
        other = copy.copy(self)
        for name, v in (("g1", g1), ("g2", g2), ("F1", F1), ("F2", F2)):
            if v is not None:
                setattr(other, name, np.asarray(v, dtype=complex))
        return other

    # operators -----------------------------------------------------------
    def U0(self, i: int) -> np.ndarray:
        P, g, F = (self.P1, self.g1, self.F1) if i == 1 else (self.P2, self.g2, self.F2)
        out = P.G0_all(g)
        if F is not None:
            out = out + P.G_all(F)
        return out

    def couple(self, v: np.ndarray) -> np.ndarray:
        """``(a12 + l12) v`` row by row."""
        out = np.zeros_like(v)
        if self.B0 is not None:
            out += self.B0 * v
        for j, Bj in enumerate(self.Bd):
            if Bj is not None:
                out += Bj * spectral_derivative(self.grid, v, j)
        return out

    def smooth21(self, u: np.ndarray) -> np.ndarray:
        """``l21 <D>^-1 u`` (or ``l21 u`` on the zero-order path)."""
        if self.L21 is None:
            return np.zeros_like(u)
        if self.spec.smoothing_21:
            return self.L21 * bessel_apply(self.grid, u, -1)
        return self.L21 * u

    def G_op(self, u: np.ndarray, stop: int | None = None) -> np.ndarray:
        """Composed operator ``G_1 (a12 + l12) G_2 l21 <D>^-1`` on rows up to ``stop``."""
        if self.L21 is None:
            return np.zeros_like(u)
        v = self.P2.G_all(self.smooth21(u), stop)
        return self.P1.G_all(self.couple(v), stop)

    def U0_tilde(self, U02: np.ndarray | None = None) -> np.ndarray:
        U02 = self.U0(2) if U02 is None else U02
        return self.U0(1) + self.P1.G_all(self.couple(U02))

    def u2_from(self, u1: np.ndarray, U02: np.ndarray) -> np.ndarray:
        return U02 + self.P2.G_all(self.smooth21(u1))

    def norms(self, u: np.ndarray, s: float | None = None) -> np.ndarray:
        return sobolev_norms(self.grid, u, self.spec.sobolev_s if s is None else s)

    def interior_mask(self) -> np.ndarray:
        """Smooth cutoff equal to 1 well inside the truncation window."""
        from .regularization import smooth_step

        r_int = max(self.W - 0.5 - self.reach(), 1.0)
        ax = smooth_step(0)(r_int - np.abs(self.grid.axis))
        return ax if self.spec.n == 1 else ax[:, None] * ax[None, :]

    def coefficient_arrays(self, name: str) -> np.ndarray | None:
        return self._on_grid([self.coeffs[name]])


def _vars(e: CoeffExpr) -> set:
    from .coeff_dsl import variables

    return variables(e.smooth)


def build_U0(rs: RegularizedSystem, i: int) -> Trajectory:
    return Trajectory(rs.grid, rs.times, rs.U0(i))


def build_U0_tilde(rs: RegularizedSystem) -> Trajectory:
    return Trajectory(rs.grid, rs.times, rs.U0_tilde())


def apply_coupling(rs: RegularizedSystem, u1: Trajectory) -> Trajectory:
    return Trajectory(rs.grid, rs.times, rs.G_op(u1.values))


# ---------------------------------------------------------------------------
# (H3) report


@dataclass
class H3Report:
    eps: float | None
    lower: float
    upper: float
    T_star: float
    C: tuple
    C_inv: tuple
    C_alpha: tuple
    family: tuple = ()
    probes: int = 0

    @property
    def bracket_ok(self) -> bool:
        return self.lower <= self.upper * (1 + 1e-9) + 1e-12

    def row(self) -> dict:
        return {"eps": self.eps, "lower": self.lower, "upper": self.upper, "T_star": self.T_star,
                "C1": self.C[0], "C2": self.C[1], "C1_inv": self.C_inv[0], "C2_inv": self.C_inv[1]}


def _bell_complete(x: Sequence[float], i: int) -> float:
    """Complete Bell polynomial ``Y_i(x_1, ..., x_i)``."""
    Y = [1.0]
    for m in range(i):
        Y.append(sum(math.comb(m, j) * Y[m - j] * x[j] for j in range(m + 1)))
    return Y[i]


def _composition_bound(fb: dict, k: int, n: int) -> float:
    """H^k bound of ``v -> A v(gamma)`` from the family constants."""
    Ca = [n * c for c in fb["C_alpha"]]
    A = fb["A"]
    jac = fb["C"] ** (-n / 2)
    F = [_bell_complete(Ca, i) for i in range(k + 1)]
    D = [jac * sum(math.comb(j, i) * A[j - i] * F[i] for i in range(j + 1)) for j in range(k + 1)]
    return math.sqrt(sum(math.comb(k, j) * n**j * D[j] ** 2 for j in range(k + 1)))


def _multiplier_bound(sups: Sequence[float], k: int, n: int) -> float:
    """H^k bound of multiplication by a function with derivative sups ``sups[r]``."""
    S = [sum(math.comb(j, i) * sups[j - i] for i in range(j + 1)) for j in range(k + 1)]
    return math.sqrt(sum(math.comb(k, j) * n**j * S[j] ** 2 for j in range(k + 1)))


def _deriv_sups(rcs, rs: RegularizedSystem, k: int) -> list:
    out = [0.0] * (k + 1)
    t_grid = rs.times if any("t" in _vars(r.source) or r.singular_variable == "t" for r in rcs) else [0.0]
    pts = rs._pts.reshape(-1, rs.spec.n) if rs.spec.n > 1 else rs._pts
    for r in rcs:
        if _is_zero_rc(r):
            continue
        for order in range(k + 1):
            out[order] += sup_norms(r, t_grid, pts, order)
    return out


def _random_probe(rs: RegularizedSystem, rng, mask) -> np.ndarray:
    g = rs.grid
    K = max(4, g.N // 8)
    hat = np.zeros(g.shape, dtype=complex)
    if g.n == 1:
        idx = np.r_[0:K + 1, g.N - K:g.N]
        hat[idx] = rng.standard_normal(len(idx)) + 1j * rng.standard_normal(len(idx))
    else:
        idx = np.r_[0:K + 1, g.N - K:g.N]
        sub = rng.standard_normal((len(idx), len(idx))) + 1j * rng.standard_normal((len(idx), len(idx)))
        hat[np.ix_(idx, idx)] = sub
    v = np.fft.ifftn(hat) * mask
    return v / float(sobolev_norms(g, v, rs.spec.sobolev_s))


def estimate_h3(rs: RegularizedSystem, trials: int | None = None, power_iters: int | None = None,
                seed: int | None = None) -> H3Report:
    """Bracket ``||G||`` on ``C([0,T], H^s)`` between random-probe and constructive bounds."""
    cfg = rs.config
    trials = cfg.probes if trials is None else trials
    power_iters = cfg.power_iters if power_iters is None else power_iters
    seed = cfg.seed if seed is None else seed
    if trials < 8:
        raise SpecError("need at least 8 probes")
    spec, n, T = rs.spec, rs.spec.n, rs.spec.T
    s = spec.sobolev_s

    # phase constants at t = T on the interior
    delta = 0.02
    for rc in rs.lam1 + rs.lam2:
        if rc.mode != "exact" and rc.has_x_atoms:
            delta = min(delta, rc.omega / 8)
    r_int = max(rs.W - 0.5 - rs.reach(), 1.0)
    if n == 1:
        xs = np.linspace(-r_int, r_int, 201)
    else:
        ax = np.linspace(-r_int, r_int, 41)
        xs = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    pb = [phase_bounds(f, T, xs, delta=delta) for f in rs.flows]

    lower = 0.0
    if rs.L21 is not None:
        rng = np.random.default_rng(seed)
        mask = rs.interior_mask()
        best, best_out = -1.0, None
        for _ in range(trials):
            p = _random_probe(rs, rng, mask)
            u = np.broadcast_to(p, (rs.M + 1,) + rs.grid.shape)
            out = rs.G_op(np.array(u))
            r = float(np.max(rs.norms(out)))
            if r > best:
                best, best_out = r, out
        lower = best
        for _ in range(power_iters):
            u = best_out * mask
            nu = float(np.max(rs.norms(u)))
            if nu == 0:
                break
            u = u / nu
            best_out = rs.G_op(u)
            lower = max(lower, float(np.max(rs.norms(best_out))))

    upper = 0.0
    k0 = math.ceil(s)
    k1 = math.ceil(s + 1) if spec.smoothing_21 else k0
    fams = ()
    if rs.L21 is not None:
        fb = [family_bounds(P.family, rs.grid.L, max(k1, 1)) for P in (rs.P1, rs.P2)]
        fams = tuple(fb)
        K1 = _composition_bound(fb[0], k0, n)
        K2 = _composition_bound(fb[1], k1, n)
        c = rs.coeffs
        l21 = _multiplier_bound(_deriv_sups([c["l21"]], rs, k1), k1, n)
        b0 = _multiplier_bound(_deriv_sups([rs.a12_c0, c["l12"]], rs, k0), k0, n)
        bd = sum(_multiplier_bound(_deriv_sups([cj], rs, k0), k0, n) for cj in rs.a12_d)
        upper = 0.5 * T**2 * K1 * (b0 + bd) * K2 * l21
    if not (math.isfinite(lower) and math.isfinite(upper)):
        raise FloatingPointError("non-finite operator norm estimate")

    k = 0
    while lower * 2.0**-k >= CONTRACTION and rs.M % 2 ** (k + 1) == 0:
        k += 1
    return H3Report(rs.eps, lower, upper, T * 2.0**-k, tuple(p.C for p in pb), tuple(p.C_inv for p in pb),
                    tuple(tuple(p.C_alpha) for p in pb), fams, trials)


# ---------------------------------------------------------------------------
# solving


@dataclass
class SystemSolution:
    eps: float | None
    u1: Trajectory
    u2: Trajectory
    path: str
    picard: list = field(default_factory=list)  # per window: (j0, j1, [increments])
    h3: H3Report | None = None
    U0_tilde: np.ndarray | None = None
    system: RegularizedSystem | None = field(default=None, repr=False)

    def sup_norm(self, component: int, s: float) -> float:
        u = self.u1 if component == 1 else self.u2
        return float(np.max(sobolev_norms(u.grid, u.values, s)))

    def picard_ratios(self, floor: float = 1e-13) -> list:
        """Consecutive increment ratios per window, ignoring increments below ``floor``."""
        out = []
        for _, _, inc in self.picard:
            r = [b / a for a, b in zip(inc, inc[1:]) if a > floor and b > floor]
            out.append(r)
        return out


def _picard(rs: RegularizedSystem, Ut: np.ndarray, norm_est: float):
    cfg = rs.config
    M = rs.M
    k = 0
    while norm_est * 2.0**-k >= CONTRACTION and M // 2 ** (k + 1) >= cfg.min_window:
        k += 1
    w = max(M // 2**k, cfg.min_window)
    scale = max(float(np.max(rs.norms(Ut))), 1e-300)
    tol = cfg.picard_tol * scale
    U = Ut.copy()
    history = []
    j0 = 0
    while j0 < M:
        j1 = min(j0 + w, M)
        incs = []
        ok = False
        for _ in range(cfg.picard_max_iters):
            V = Ut[:j1 + 1] + rs.G_op(U, stop=j1)[:j1 + 1]
            d = float(np.max(rs.norms(V[j0 + 1:j1 + 1] - U[j0 + 1:j1 + 1])))
            U[j0 + 1:j1 + 1] = V[j0 + 1:j1 + 1]
            incs.append(d)
            if not math.isfinite(d):
                break
            if d <= tol:
                ok = True
                break
            if len(incs) >= 4 and incs[-1] > incs[-2] > incs[-3] and incs[-1] > incs[0]:
                break
        if ok:
            history.append((j0, j1, incs))
            j0 = j1
            continue
        if w <= cfg.min_window:
            raise PicardDivergence(f"Picard iteration diverged on [{rs.times[j0]:.4g}, {rs.times[j1]:.4g}] "
                                   f"at the minimal window (eps={rs.eps})")
        w = max(int(w * cfg.window_shrink), cfg.min_window)
        U[j0 + 1:] = Ut[j0 + 1:]
        log.info("shrinking Picard window to %d steps", w)
    return U, history


def solve_regularized(rs: RegularizedSystem, with_h3: bool | None = None,
                      h3: H3Report | None = None) -> SystemSolution:
    """Solve an already assembled regularized system (reuses its flows and propagators)."""
    config, spec = rs.config, rs.spec
    U02 = rs.U0(2)
    Ut = rs.U0_tilde(U02)
    path = config.path
    if path == "auto":
        path = "direct" if spec.structure == "triangular" else spec.structure
    if path == "direct" and spec.structure != "triangular":
        raise SpecError("direct formulas need l21 = 0")
    with_h3 = config.estimate_norm if with_h3 is None else with_h3
    if h3 is None and with_h3:
        h3 = estimate_h3(rs)
    if path == "direct":
        u1, hist = Ut, []
    else:
        u1, hist = _picard(rs, Ut, h3.lower if h3 is not None else 0.0)
    u2 = rs.u2_from(u1, U02) if path != "direct" else U02
    sol = SystemSolution(rs.eps, Trajectory(rs.grid, rs.times, u1), Trajectory(rs.grid, rs.times, u2),
                         path, hist, h3, Ut, rs)
    if config.check_support:
        check_support(rs.grid, u1[-1])
        check_support(rs.grid, u2[-1])
    return sol


def solve_at(spec: SystemSpec, config: SolveConfig, eps: float | None, with_h3: bool | None = None) -> SystemSolution:
    """Solve the regularized system for one ``eps`` (``None`` with ``mode="exact"``)."""
    return solve_regularized(RegularizedSystem(spec, config, eps), with_h3)


def solve_system(spec: SystemSpec, config: SolveConfig, keep_system: bool = False) -> list:
    """Solve over the whole ladder; returns one :class:`SystemSolution` per rung."""
    out = []
    for eps in config.ladder:
        sol = solve_at(spec, config, eps)
        if not keep_system:
            sol.system = None
        out.append(sol)
    return out
