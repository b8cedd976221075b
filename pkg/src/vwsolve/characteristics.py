"""Characteristic flows, phase functions and phase-bound constants.

The flow solves ``d/ds gamma(x,t;s) = -lambda(s, gamma)`` with ``gamma(x,t;t) = x``;
the phase is ``phi(t,x,xi) = gamma(x,t;0) . xi``.  Integration is classical
fixed-step RK4, refined inside declared stiff time intervals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "CharFlow",
    "FlowFamily",
    "PhaseBounds",
    "FlowError",
    "FlowExitError",
    "FoldError",
    "solve_flow",
    "phase",
    "eikonal_residual",
    "phase_bounds",
    "tri_offset",
    "family_bounds",
]

SEGMENT = 0.01


class FlowError(RuntimeError):
    pass


class FlowExitError(FlowError):
    pass


class FoldError(FlowError):
    pass


def tri_offset(m):
    """Start of row ``m`` in triangle-packed storage (rows k = 0..m)."""
    m = np.asarray(m)
    return m * (m + 1) // 2


@dataclass(eq=False)
class CharFlow:
    """Characteristic flow for speeds ``lambda_j(t, x)``, j = 1..n.

    ``stiff`` lists time intervals ``(a, b)`` or ``(a, b, h)`` where steps are
    refined to ``h`` (default ``h_fine``); these hold regularized time atoms.
    """

    speeds: Sequence[Callable]
    n: int = 1
    L: float = math.inf
    margin: float = 0.5
    h_ode: float = 0.01
    stiff: tuple = ()
    h_fine: float | None = None

    def __post_init__(self):
        if len(self.speeds) != self.n:
            raise FlowError("need one speed per direction")
        if self.h_ode <= 0:
            raise FlowError("h_ode must be positive")
        self.stiff = tuple(self.stiff)

    # vector field ---------------------------------------------------------
    def velocity(self, s: float, y: np.ndarray) -> np.ndarray:
        """``lambda(s, y)`` (real part), with the same shape as the state."""
        if self.n == 1:
            return np.real(np.broadcast_to(self.speeds[0](s, y), y.shape))
        cols = [np.real(np.broadcast_to(c(s, y), y.shape[:-1])) for c in self.speeds]
        return np.stack(cols, axis=-1)

    def substeps(self, a: float, b: float) -> int:
        length = abs(b - a)
        n = max(1, math.ceil(length / self.h_ode - 1e-9))
        lo, hi = min(a, b), max(a, b)
        for iv in self.stiff:
            h = iv[2] if len(iv) > 2 else self.h_fine
            if h and lo < iv[1] and hi > iv[0]:
                n = max(n, math.ceil(length / h - 1e-9))
        return n

    def _rk4(self, s0, s1, y, theta=None, integrand=None):
        """RK4 from s0 to s1 (either direction); ``theta`` accumulates -int_{s0}^{s} integrand."""
        nsub = self.substeps(s0, s1)
        dt = (s1 - s0) / nsub
        s = s0
        for _ in range(nsub):
            k1 = -self.velocity(s, y)
            y2 = y + 0.5 * dt * k1
            k2 = -self.velocity(s + 0.5 * dt, y2)
            y3 = y + 0.5 * dt * k2
            k3 = -self.velocity(s + 0.5 * dt, y3)
            y4 = y + dt * k3
            k4 = -self.velocity(s + dt, y4)
            if integrand is not None:
                q1 = integrand(s, y)
                q2 = integrand(s + 0.5 * dt, y2)
                q3 = integrand(s + 0.5 * dt, y3)
                q4 = integrand(s + dt, y4)
                theta = theta - dt / 6 * (q1 + 2 * q2 + 2 * q3 + q4)
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            s = s + dt
        return y, theta

    def _check_box(self, y, start, where):
        if not math.isfinite(self.L):
            return
        r = np.abs(y) if self.n == 1 else np.max(np.abs(y), axis=-1)
        moved = np.abs(y - start) > 1e-12
        if self.n > 1:
            moved = np.any(moved, axis=-1)
        bad = (r > self.L - self.margin) & moved
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise FlowExitError(f"characteristic left the safety box |x| <= {self.L - self.margin} "
                                f"at index {tuple(idx)} ({where})")

    def _segments(self, a, b):
        nseg = max(1, math.ceil(abs(b - a) / SEGMENT - 1e-9))
        return np.linspace(a, b, nseg + 1)

    def solve(self, x, t: float, s: float) -> np.ndarray:
        """``gamma(x, t; s)`` for an array of points."""
        return self.solve_with_integral(x, t, s)[0]

    def solve_with_integral(self, x, t: float, s: float, integrand: Callable | None = None):
        """``(gamma(x,t;s), int_s^t integrand(tau, gamma(x,t;tau)) dtau)``."""
        y0 = np.asarray(x, dtype=float)
        y = y0.copy()
        theta = np.zeros(y0.shape if self.n == 1 else y0.shape[:-1], dtype=complex) \
            if integrand is not None else None
        if s == t:
            return y, theta
        nodes = self._segments(t, s)
        for a, b in zip(nodes[:-1], nodes[1:]):
            y, theta = self._rk4(a, b, y, theta, integrand)
        self._check_box(y, y0, f"t={t}, s={s}")
        return y, theta

    def trace_family(self, points, times, integrand: Callable | None = None) -> "FlowFamily":
        """Backward traces from every stamp ``t_m`` to every earlier stamp ``t_k``.

        Storage is triangle packed: row ``tri_offset(m) + k`` holds
        ``gamma(x, t_m; t_k)`` and ``int_{t_k}^{t_m} integrand(tau, gamma(x,t_m;tau)) dtau``.
        """
        pts = np.asarray(points, dtype=float)
        times = np.asarray(times, dtype=float)
        M = len(times) - 1
        P = int(tri_offset(M + 1))
        gam = np.empty((P,) + pts.shape)
        theta = np.zeros((P,) + (pts.shape if self.n == 1 else pts.shape[:-1]), dtype=complex) \
            if integrand is not None else None
        Y = np.broadcast_to(pts, (M + 1,) + pts.shape).copy()
        Th = np.zeros((M + 1,) + (pts.shape if self.n == 1 else pts.shape[:-1]), dtype=complex) \
            if integrand is not None else None
        gam[tri_offset(np.arange(M + 1)) + np.arange(M + 1)] = pts
        for j in range(M, 0, -1):
            ys, th = self._rk4(times[j], times[j - 1], Y[j:], None if Th is None else Th[j:], integrand)
            Y[j:] = ys
            idx = tri_offset(np.arange(j, M + 1)) + j - 1
            gam[idx] = ys
            if Th is not None:
                Th[j:] = th
                theta[idx] = th
            self._check_box(ys, pts, f"tracing back to t={times[j - 1]:.6g}")
        return FlowFamily(self, pts, times, gam, theta)


@dataclass(eq=False)
class FlowFamily:
    flow: CharFlow
    points: np.ndarray
    times: np.ndarray
    gam: np.ndarray
    theta: np.ndarray | None

    def row(self, m: int, k: int) -> int:
        return int(tri_offset(m)) + k

    def gamma(self, m: int, k: int) -> np.ndarray:
        return self.gam[self.row(m, k)]

    def integral(self, m: int, k: int):
        if self.theta is None:
            return 0.0
        return self.theta[self.row(m, k)]


def solve_flow(flow: CharFlow, x, t: float, s: float) -> np.ndarray:
    return flow.solve(x, t, s)


def phase(flow: CharFlow, t: float, x, xi) -> np.ndarray:
    """``gamma(x, t; 0) . xi`` (real)."""
    g = flow.solve(x, t, 0.0)
    xi = np.asarray(xi, dtype=float)
    if flow.n == 1:
        return g * xi
    return np.sum(g * xi, axis=-1)


def eikonal_residual(flow: CharFlow, t_samples, x_samples, xi_samples, h_fd: float = 1e-2) -> float:
    """``max |d_t phi - sum_j lambda_j d_j phi|`` with centered differences of step ``h_fd``.

    Time samples closer than ``h_fd`` to 0 use the exact initial slice
    (residual zero by construction) and are skipped.
    """
    xs = np.asarray(x_samples, dtype=float)
    xis = np.atleast_1d(np.asarray(xi_samples, dtype=float))
    worst = 0.0
    for t in np.atleast_1d(t_samples):
        if t < h_fd:
            continue
        g_tp = flow.solve(xs, t + h_fd, 0.0)
        g_tm = flow.solve(xs, t - h_fd, 0.0)
        dt = (g_tp - g_tm) / (2 * h_fd)
        lam = flow.velocity(t, xs)
        if flow.n == 1:
            dx = (flow.solve(xs + h_fd, t, 0.0) - flow.solve(xs - h_fd, t, 0.0)) / (2 * h_fd)
            for xi in xis:
                worst = max(worst, float(np.max(np.abs(dt * xi - lam * dx * xi))))
        else:
            jac = []
            for j in range(flow.n):
                e = np.zeros(flow.n)
                e[j] = h_fd
                jac.append((flow.solve(xs + e, t, 0.0) - flow.solve(xs - e, t, 0.0)) / (2 * h_fd))
            xis2 = xis.reshape(-1, flow.n)
            for xi in xis2:
                lhs = dt @ xi
                rhs = sum(lam[..., j] * (jac[j] @ xi) for j in range(flow.n))
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# ---------------------------------------------------------------------------
# phase-bound constants

_STENCILS = {
    0: np.array([0, 0, 1, 0, 0], dtype=float),
    1: np.array([1, -8, 0, 8, -1], dtype=float) / 12,
    2: np.array([-1, 16, -30, 16, -1], dtype=float) / 12,
    3: np.array([-1, 2, 0, -2, 1], dtype=float) / 2,
    4: np.array([1, -4, 6, -4, 1], dtype=float),
}
MAX_ORDER = 4


@dataclass
class PhaseBounds:
    """Constants of the flow map ``y -> gamma(y, t; 0)`` on the sampled region.

    ``C`` lower-bounds the Jacobian (1-D: min |d gamma/dx|; 2-D: min singular
    value), ``C_alpha[k-1]`` is ``max |d^alpha gamma|`` over ``|alpha| = k``.
    """

    t: float
    C: float
    C_inv: float
    C_alpha: list
    C_beta: float
    argmin: float | tuple = 0.0
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {"t": self.t, "C": self.C, "C_inv": self.C_inv, "C_beta": self.C_beta}
        d.update({f"C_alpha_{k + 1}": v for k, v in enumerate(self.C_alpha)})
        return d


def phase_bounds(flow: CharFlow, t: float, x, delta: float = 0.02, max_order: int | None = None) -> PhaseBounds:
    """Finite-difference phase constants at sample points ``x``.

    Raises :class:`FoldError` when the Jacobian degenerates (C <= 0).
    """
    xs = np.asarray(x, dtype=float)
    n = flow.n
    order = MAX_ORDER if max_order is None else min(max_order, MAX_ORDER)
    if n == 1:
        offs = np.arange(-2, 3) * delta
        G = np.stack([flow.solve(xs + o, t, 0.0) for o in offs])  # (5, P)
        derivs = {k: np.tensordot(_STENCILS[k], G, axes=1) / delta**k for k in range(1, order + 1)}
        d1 = derivs[1]
        C = float(np.min(d1))
        loc = float(xs.ravel()[int(np.argmin(d1))])
        if not C > 0:
            raise FoldError(f"flow fold at x={loc} (d gamma/dx = {C:.3e})")
        C_alpha = [float(np.max(np.abs(derivs[k]))) for k in range(1, order + 1)]
        return PhaseBounds(t, C, 1 / C, C_alpha, C_alpha[0], loc)
    # n = 2: 5x5 stencil of flows around each point
    G = np.empty((5, 5) + xs.shape)
    for a, b in itertools.product(range(5), repeat=2):
        G[a, b] = flow.solve(xs + delta * np.array([a - 2, b - 2]), t, 0.0)
    C_alpha = []
    jac = np.empty(xs.shape[:-1] + (2, 2))
    for k in range(1, order + 1):
        best = 0.0
        for a in range(k + 1):
            alpha = (a, k - a)
            w = np.outer(_STENCILS[alpha[0]], _STENCILS[alpha[1]]) / delta**k
            d = np.tensordot(w, G, axes=([0, 1], [0, 1]))
            best = max(best, float(np.max(np.abs(d))))
            if k == 1:
                jac[..., :, 1 - a] = d  # alpha=(1,0) -> column 0
        C_alpha.append(best)
    sv = np.linalg.svd(jac, compute_uv=False)[..., -1]
    det = np.linalg.det(jac)
    C = float(np.min(sv))
    i = np.unravel_index(int(np.argmin(sv)), sv.shape)
    loc = tuple(float(v) for v in xs[i])
    if not (C > 0 and np.all(det > 0)):
        raise FoldError(f"flow fold near x={loc}")
    return PhaseBounds(t, C, 1 / C, C_alpha, C_alpha[0], loc)


def _dx(values, axis: int, h: float):
    """Second-order central difference along a periodic axis."""
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2 * h)


def _fd_derivs(values, n: int, h: float, order: int):
    """``max |d^alpha v|`` over |alpha| = 1..order (repeated central differences, trailing grid axes)."""
    out = []
    level = [values]
    for r in range(1, order + 1):
        nxt = []
        for i, v in enumerate(level):
            if n == 1:
                nxt.append(_dx(v, -1, h))
            else:
                # mixed derivatives: d_x applied to the first entry, d_y to all
                if i == 0:
                    nxt.append(_dx(v, -2, h))
                nxt.append(_dx(v, -1, h))
        level = nxt
        out.append(max(float(np.max(np.abs(v))) for v in level))
    return out


def family_bounds(family: FlowFamily, L: float, order: int, chunk: int = 1024) -> dict:
    """Flow and amplitude constants over every traced pair ``(t_m, t_k)``.

    Returns ``C`` (min Jacobian singular value), ``C_alpha`` (max |d^alpha gamma|,
    |alpha| = 1..order) and ``A`` (max |d^alpha exp(i theta)|, |alpha| = 0..order),
    all from central differences of ``gamma - x`` and ``exp(i theta) - 1`` on the
    grid (a monotone map keeps a positive difference quotient, so no spurious folds).
    """
    n = family.flow.n
    pts = family.points
    N = pts.shape[0]
    h = 2 * L / N
    C = math.inf
    C_alpha = [0.0] * order
    A = [1.0] + [0.0] * order
    P = family.gam.shape[0]
    for a in range(0, P, chunk):
        disp = family.gam[a:a + chunk] - pts
        if n == 1:
            ca = _fd_derivs(disp, 1, h, order)
            jac = 1 + _dx(disp, -1, h)
            C = min(C, float(np.min(jac)))
            derivs = [float(np.max(np.abs(jac)))] + ca[1:]
        else:
            comps = [disp[..., l] for l in range(2)]
            per = [_fd_derivs(c, 2, h, order) for c in comps]
            derivs = [max(p[r] for p in per) for r in range(order)]
            J = np.empty(disp.shape[:-1] + (2, 2))
            for l in range(2):
                J[..., l, 0] = _dx(comps[l], -2, h)
                J[..., l, 1] = _dx(comps[l], -1, h)
            J[..., 0, 0] += 1
            J[..., 1, 1] += 1
            C = min(C, float(np.min(np.linalg.svd(J, compute_uv=False)[..., -1])))
            derivs[0] = float(np.max(np.abs(J)))
        C_alpha = [max(c, d) for c, d in zip(C_alpha, derivs)]
        if family.theta is not None:
            amp = np.exp(1j * family.theta[a:a + chunk])
            A[0] = max(A[0], float(np.max(np.abs(amp))))
            ad = _fd_derivs(amp - 1, n, h, order)
            A = [A[0]] + [max(x, y) for x, y in zip(A[1:], ad)]
    if not C > 0:
        raise FoldError("flow fold detected in the traced family")
    return {"C": C, "C_alpha": C_alpha, "A": A}
