"""Mollifiers, scales and regularized coefficients.

A coefficient ``e`` (see :mod:`vwsolve.coeff_dsl`) is turned into the smooth
function ``e * psi_w`` with ``psi_w(y) = w^-1 psi(y / w)`` and ``w = omega(eps)``.
Atoms are convolved in closed form; the smooth part is either passed through
(``mode="identity"``) or convolved by quadrature (``mode="full"``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import sympy as sp
from scipy.interpolate import CubicHermiteSpline, make_interp_spline

from .coeff_dsl import BinOp, Call, CoeffExpr, Node, Num, Pow, Var, support_radius, variables

__all__ = [
    "Mollifier",
    "Scale",
    "RegularizedCoefficient",
    "RegularizationError",
    "regularize",
    "exact_coefficient",
    "sup_norms",
    "moment_defect",
    "smooth_step",
]

TRANSITION_WIDTH = 0.5
CDF_KNOTS = 2049
QUAD_NODES = 64
# nodes per unit length of the tabulated full-mode smoothing (1-D, time independent)
TABLE_DENSITY = 256


class RegularizationError(ValueError):
    pass


_Y = sp.Symbol("y", real=True)


def _integrate(f, radius: float) -> float:
    """Composite Gauss-Legendre on [-radius, radius]; exact to rounding for the bump."""
    y, w = np.polynomial.legendre.leggauss(64)
    edges = np.linspace(-radius, radius, 9)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += float(np.sum(w * f((a + b) / 2 + (b - a) / 2 * y)) * (b - a) / 2)
    return total


def _masked(fn, radius):
    """Evaluate ``fn`` only on ``|y| < radius``; zero elsewhere."""

    def wrapped(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        inside = np.abs(y) < radius
        if np.any(inside):
            with np.errstate(all="ignore"):
                out[inside] = fn(y[inside])
        return out

    return wrapped


@dataclass(frozen=True)
class Mollifier:
    """Even bump profile on ``[-radius, radius]`` with ``moments`` vanishing moments.

    ``moments=0`` is the plain non-negative Friedrichs mollifier; for
    ``moments=M > 0`` the profile is multiplied by an even polynomial chosen
    so that the moments of order ``1..M`` vanish (the result is signed).
    """

    radius: float = 1.0
    moments: int = 0
    kind: str = "bump"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.kind != "bump":
            raise RegularizationError(f"unknown mollifier kind {self.kind!r}")
        if self.radius <= 0 or self.moments < 0:
            raise RegularizationError("mollifier needs radius > 0 and moments >= 0")

    # symbolic profile --------------------------------------------------
    @property
    def expr(self) -> sp.Expr:
        if "expr" not in self._cache:
            R = sp.nsimplify(self.radius)
            base = sp.exp(-1 / (1 - (_Y / R) ** 2))
            base_fn = sp.lambdify(_Y, base, "numpy")
            base_num = _masked(base_fn, self.radius)

            def mom(j):
                return _integrate(lambda y: y**j * base_num(y), self.radius)

            degs = list(range(0, self.moments + 1, 2))
            A = np.array([[mom(i + j) for j in degs] for i in degs])
            rhs = np.zeros(len(degs))
            rhs[0] = 1.0
            coef = np.linalg.solve(A, rhs)
            poly = sum(sp.Float(c, 30) * _Y**d for c, d in zip(coef, degs))
            self._cache["expr"] = sp.expand(poly) * base
        return self._cache["expr"]

    def derivative(self, k: int = 0):
        """Numeric ``psi^(k)``, vanishing outside the support."""
        key = ("d", k)
        if key not in self._cache:
            fn = sp.lambdify(_Y, sp.diff(self.expr, _Y, k), "numpy", cse=True)
            self._cache[key] = _masked(fn, self.radius)
        return self._cache[key]

    def __call__(self, y):
        return self.derivative(0)(y)

    def max_abs(self, k: int = 0) -> float:
        key = ("max", k)
        if key not in self._cache:
            y = np.linspace(-self.radius, self.radius, 20001)
            self._cache[key] = float(np.max(np.abs(self.derivative(k)(y))))
        return self._cache[key]

    def l2_norm(self) -> float:
        return math.sqrt(_integrate(lambda y: self(y) ** 2, self.radius))

    # quadrature ---------------------------------------------------------
    @property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes on the support and weights ``w_j psi(y_j)`` summing to 1."""
        if "nodes" not in self._cache:
            y, w = np.polynomial.legendre.leggauss(QUAD_NODES)
            y = y * self.radius
            W = w * self.radius * self(y)
            self._cache["nodes"] = (y, W / W.sum())
        return self._cache["nodes"]

    def moment(self, j: int) -> float:
        return _integrate(lambda y: y**j * self(y), self.radius)

    # cumulative profile --------------------------------------------------
    @property
    def cdf(self):
        """``Psi(u) = int_{-inf}^u psi`` as a cubic Hermite spline with exact slopes."""
        if "cdf" not in self._cache:
            knots = np.linspace(-self.radius, self.radius, CDF_KNOTS)
            gy, gw = np.polynomial.legendre.leggauss(12)
            a, b = knots[:-1], knots[1:]
            mid, half = (a + b) / 2, (b - a) / 2
            pts = mid[:, None] + half[:, None] * gy[None, :]
            pieces = (self(pts) * gw[None, :]).sum(axis=1) * half
            values = np.concatenate([[0.0], np.cumsum(pieces)])
            values /= values[-1]
            spline = CubicHermiteSpline(knots, values, self(knots))
            R = self.radius

            def cdf(u):
                u = np.asarray(u, dtype=float)
                out = spline(np.clip(u, -R, R))
                out[u <= -R] = 0.0
                out[u >= R] = 1.0
                return out

            self._cache["cdf"] = cdf
        return self._cache["cdf"]


@dataclass(frozen=True)
class Scale:
    """``omega(eps) = c eps^a`` (``kind="power"``) or ``1/log(1/eps)`` (``kind="log"``)."""

    kind: str = "power"
    a: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "log"):
            raise RegularizationError(f"unknown scale kind {self.kind!r}")
        if self.kind == "power" and (self.a <= 0 or self.c <= 0):
            raise RegularizationError("power scale needs a > 0 and c > 0")

    def __call__(self, eps: float) -> float:
        if not 0 < eps <= 1:
            raise RegularizationError(f"eps must lie in (0, 1], got {eps}")
        if self.kind == "power":
            return self.c * eps**self.a
        if eps >= math.exp(-1):
            raise RegularizationError("log scale needs eps < exp(-1)")
        return 1.0 / math.log(1.0 / eps)

    def lower_power(self) -> tuple[float, float]:
        """(c, a) with ``omega(eps) >= c eps^a`` on the admissible range."""
        if self.kind == "power":
            return self.c, self.a
        # 1/log(1/eps) >= eps for eps < 1/e
        return 1.0, 1.0


# ---------------------------------------------------------------------------
# symbolic smooth parts


@lru_cache(maxsize=None)
def _symbols(n: int):
    return (sp.Symbol("t", real=True),) + tuple(sp.Symbol(f"x{j}", real=True) for j in range(1, n + 1))


def _to_sympy(node: Node, syms: dict) -> sp.Expr:
    if isinstance(node, Num):
        return sp.Float(node.value)
    if isinstance(node, Var):
        if node.name not in syms:
            raise RegularizationError(f"variable {node.name} not available in this dimension")
        return syms[node.name]
    if isinstance(node, BinOp):
        a, b = _to_sympy(node.left, syms), _to_sympy(node.right, syms)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[node.op]
    if isinstance(node, Pow):
        return _to_sympy(node.base, syms) ** node.exponent
    args = [_to_sympy(a, syms) for a in node.args]
    if node.func == "sin":
        return sp.sin(args[0])
    if node.func == "cos":
        return sp.cos(args[0])
    if node.func == "exp":
        return sp.exp(args[0])
    center = args[1] if len(args) > 1 else 0
    radius = args[2] if len(args) > 2 else 1
    u = (args[0] - center) / radius
    return sp.Piecewise((sp.E * sp.exp(-1 / (1 - u**2)), u**2 < 1), (0, True))


@lru_cache(maxsize=None)
def _smooth_derivative(node: Node, n: int, alpha: tuple):
    syms = _symbols(n)
    env = {"t": syms[0], **{f"x{j}": syms[j] for j in range(1, n + 1)}}
    expr = _to_sympy(node, env)
    for j, k in enumerate(alpha):
        if k:
            expr = sp.diff(expr, syms[j + 1], k)
    fn = sp.lambdify(syms, expr, "numpy", cse=True)

    def evaluate(t, *xs):
        with np.errstate(all="ignore"):
            return fn(t, *xs)

    evaluate.is_zero = expr == 0
    return evaluate


def smooth_step(k: int = 0):
    """k-th derivative of the C-infinity step S with S=0 on s<=0 and S=1 on s>=1."""
    return _smooth_step(k)


@lru_cache(maxsize=None)
def _smooth_step(k: int):
    s = sp.Symbol("s", real=True)
    f0 = sp.exp(-1 / s)
    f1 = sp.exp(-1 / (1 - s))
    fn = sp.lambdify(s, sp.diff(f0 / (f0 + f1), s, k), "numpy", cse=True)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        if k == 0:
            out[x >= 1] = 1.0
        mid = (x > 0) & (x < 1)
        if np.any(mid):
            with np.errstate(all="ignore"):
                out[mid] = fn(x[mid])
        return out

    return evaluate


def _cutoff_derivative(x, window: float, k: int):
    """``d^k/dx^k`` of ``S((window - |x|)/TRANSITION_WIDTH)``."""
    x = np.asarray(x, dtype=float)
    sgn = np.where(x >= 0, -1.0, 1.0)
    s = (window - np.abs(x)) / TRANSITION_WIDTH
    return smooth_step(k)(s) * (sgn / TRANSITION_WIDTH) ** k


# ---------------------------------------------------------------------------


def _as_alpha(alpha, n: int) -> tuple:
    if np.isscalar(alpha):
        if n != 1 and alpha != 0:
            raise RegularizationError("multi-index required for n >= 2")
        return (int(alpha),) + (0,) * (n - 1)
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != n:
        raise RegularizationError("multi-index length does not match dimension")
    return alpha


@dataclass(frozen=True, eq=False)
class RegularizedCoefficient:
    """Smooth evaluator ``(t, x, alpha) -> d^alpha_x (e * psi_omega)(t, x)``.

    ``x`` is an array of 1-D positions for ``n == 1``; for ``n >= 2`` its last
    axis holds the coordinates.  ``mode="exact"`` means no regularization
    (only allowed for atom-free expressions).
    """

    source: CoeffExpr
    mollifier: Mollifier | None
    scale: Scale | None
    eps: float | None
    max_order: int
    mode: str = "identity"
    window: float | None = None
    n: int = 1

    @property
    def omega(self) -> float:
        return 0.0 if self.mode == "exact" else self.scale(self.eps)

    @property
    def singular_variable(self) -> str | None:
        return self.source.singular_variable

    @property
    def has_x_atoms(self) -> bool:
        v = self.source.singular_variable
        return v is not None and v != "t"

    def time_stiff_intervals(self) -> list[tuple[float, float]]:
        """Time intervals where time atoms make the coefficient vary on the scale omega."""
        if self.source.singular_variable != "t":
            return []
        w = self.omega * self.mollifier.radius
        return [(a.location - w, a.location + w) for a in self.source.atoms]

    @property
    def is_zero(self) -> bool:
        return not self.source.atoms and _smooth_derivative(self.source.smooth, self.n, (0,) * self.n).is_zero

    @property
    def truncated(self) -> bool:
        if self.window is None:
            return False
        return support_radius(self.source, None, self.n) > self.window - TRANSITION_WIDTH

    def _coords(self, x):
        x = np.asarray(x, dtype=float)
        if self.n == 1:
            return (x,)
        return tuple(x[..., j] for j in range(self.n))

    def _smooth(self, t, xs, alpha):
        fn = _smooth_derivative(self.source.smooth, self.n, alpha)
        shape = np.broadcast(np.asarray(t), *xs).shape
        if fn.is_zero:
            return np.zeros(shape, dtype=complex)
        if self.mode in ("identity", "exact"):
            return np.broadcast_to(np.asarray(fn(t, *xs), dtype=complex), shape)
        if self._tabulated:
            return np.broadcast_to(self._table(alpha, t, xs[0]), shape)
        return self._quadrature(fn, t, xs, shape)

    @cached_property
    def _tabulated(self) -> bool:
        return (self.mode == "full" and self.n == 1 and self.source.singular_variable != "t"
                and "t" not in variables(self.source.smooth))

    @cached_property
    def _tables(self) -> dict:
        return {}

    def _table(self, alpha, t, x):
        """Quintic interpolant of the smoothed part on a fine grid; quadrature outside it."""
        tab = self._tables.get(alpha)
        if tab is None:
            R = support_radius(self.source, None, 1)
            compact = math.isfinite(R)
            R = (R if compact else 32.0) + self.omega * self.mollifier.radius + 0.5
            nodes = np.linspace(-R, R, 2 * math.ceil(R * TABLE_DENSITY) + 1)
            fn = _smooth_derivative(self.source.smooth, 1, alpha)
            vals = self._quadrature(fn, 0.0, (nodes,), nodes.shape)
            tab = (R, compact, make_interp_spline(nodes, vals, k=5))
            self._tables[alpha] = tab
        R, compact, spl = tab
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= R
        if np.all(inside):
            return spl(x)
        out = np.asarray(spl(np.clip(x, -R, R)), dtype=complex)
        if compact:
            out[~inside] = 0.0
            return out
        fn = _smooth_derivative(self.source.smooth, 1, alpha)
        out[~inside] = self._quadrature(fn, t, (x[~inside],), x[~inside].shape)
        return out

    def _quadrature(self, fn, t, xs, shape):
        y, W = self.mollifier.nodes
        w = self.omega
        if self.source.singular_variable == "t":
            tt = np.asarray(t, dtype=float)[..., None] - w * y
            vals = fn(tt, *(np.asarray(xi)[..., None] for xi in xs))
            return np.broadcast_to(np.asarray(vals, dtype=complex), shape + y.shape) @ W
        # tensor quadrature over the spatial directions
        shifts = [g.ravel() for g in np.meshgrid(*([y] * self.n), indexing="ij")]
        weights = np.prod(np.meshgrid(*([W] * self.n), indexing="ij"), axis=0).ravel()
        tt = np.asarray(t, dtype=float)[..., None]
        shifted = [np.asarray(xi, dtype=float)[..., None] - w * sh for xi, sh in zip(xs, shifts)]
        vals = fn(tt, *shifted)
        return np.broadcast_to(np.asarray(vals, dtype=complex), shape + weights.shape) @ weights

    def _atoms(self, t, xs, alpha):
        shape = np.broadcast(np.asarray(t), *xs).shape
        out = np.zeros(shape, dtype=complex)
        if not self.source.atoms:
            return out
        m, w = self.mollifier, self.omega
        var = self.source.singular_variable
        if var == "t":
            if any(alpha):
                return out
            arg = np.asarray(t, dtype=float)
            k_extra = 0
        else:
            j = int(var[1:]) - 1
            if j >= self.n:
                raise RegularizationError(f"atom variable {var} outside dimension {self.n}")
            if any(a for i, a in enumerate(alpha) if i != j):
                return out
            arg = xs[j]
            k_extra = alpha[j]
        for atom in self.source.atoms:
            u = (arg - atom.location) / w
            if atom.kind == "H":
                if k_extra == 0:
                    val = m.cdf(u)
                else:
                    val = w ** (-k_extra) * m.derivative(k_extra - 1)(u)
            else:
                k = atom.order + k_extra
                val = w ** (-1 - k) * m.derivative(k)(u)
            out = out + atom.coefficient * np.broadcast_to(val, shape)
        return out

    def _raw(self, t, xs, alpha):
        if self.mode == "exact" and self.source.atoms:
            raise RegularizationError("exact evaluation of a distributional coefficient")
        return self._smooth(t, xs, alpha) + self._atoms(t, xs, alpha)

    def __call__(self, t, x, alpha=0):
        alpha = _as_alpha(alpha, self.n)
        if sum(alpha) > self.max_order:
            raise RegularizationError(f"derivative order {sum(alpha)} exceeds max_order {self.max_order}")
        xs = self._coords(x)
        if not self.truncated:
            return np.asarray(self._raw(t, xs, alpha))
        # Leibniz rule with the product cutoff prod_j chi(x_j)
        total = 0
        for beta in itertools.product(*(range(a + 1) for a in alpha)):
            rest = tuple(a - b for a, b in zip(alpha, beta))
            coef = math.prod(math.comb(a, b) for a, b in zip(alpha, beta))
            chi = 1.0
            for xj, bj in zip(xs, beta):
                chi = chi * _cutoff_derivative(xj, self.window, bj)
            total = total + coef * chi * self._raw(t, xs, rest)
        return np.asarray(total)


def regularize(
    e: CoeffExpr,
    mollifier: Mollifier,
    scale: Scale,
    eps: float,
    max_order: int | None = None,
    mode: str = "identity",
    window: float | None = None,
    n: int = 1,
) -> RegularizedCoefficient:
    """Regularize ``e`` at parameter ``eps``.

    ``window`` truncates non-compact coefficients smoothly to zero outside
    ``|x_j| <= window`` (transition width 0.5).
    """
    if not 0 < eps <= 1:
        raise RegularizationError(f"eps must lie in (0, 1], got {eps}")
    if mode not in ("identity", "full"):
        raise RegularizationError(f"unknown smoothing mode {mode!r}")
    scale(eps)  # validates the scale domain
    cap = 2 * n + 2
    if max_order is None:
        max_order = cap
    if max_order > cap + 2:
        raise RegularizationError(f"max_order {max_order} above the configured cap {cap + 2}")
    return RegularizedCoefficient(e, mollifier, scale, eps, max_order, mode, window, n)


def exact_coefficient(e: CoeffExpr, window: float | None = None, n: int = 1,
                      max_order: int | None = None) -> RegularizedCoefficient:
    """Unregularized evaluator for an atom-free coefficient."""
    if e.atoms:
        raise RegularizationError("exact evaluation needs an atom-free coefficient")
    return RegularizedCoefficient(e, None, None, None, max_order if max_order is not None else 2 * n + 2,
                                  "exact", window, n)


def _sample_points(x_window, n: int):
    if isinstance(x_window, tuple) and len(x_window) == 2 and np.isscalar(x_window[0]):
        lo, hi = x_window
        if n == 1:
            return np.linspace(lo, hi, 4097)
        g = np.linspace(lo, hi, 257)
        return np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return np.asarray(x_window, dtype=float)


def sup_norms(r: RegularizedCoefficient, t_grid, x_window, order: int) -> float:
    """``max |d^alpha r|`` over the sampled (t, x) for all ``|alpha| == order``."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    pts = _sample_points(x_window, r.n)
    if t_grid.size == 0 or pts.size == 0:
        raise RegularizationError("empty sample set")
    best = 0.0
    alphas = [a for a in itertools.product(range(order + 1), repeat=r.n) if sum(a) == order]
    for t in t_grid:
        for alpha in alphas:
            vals = r(t, pts, alpha)
            best = max(best, float(np.max(np.abs(vals))))
    return best


def moment_defect(m: Mollifier, up_to: int) -> list[float]:
    """``[|int psi - 1|, |int y psi|, ..., |int y^up_to psi|]``."""
    out = [abs(m.moment(0) - 1.0)]
    out.extend(abs(m.moment(j)) for j in range(1, up_to + 1))
    return out
