"""Independent method-of-lines reference for regularized 1-D systems.

Upwind-biased fifth-order differences for the transport terms, fourth-order
central differences for ``a12``'s derivative part, FFT for ``<D>^-1`` and
classical RK4 in time.  Used only to cross-check the characteristic solver.
"""

from __future__ import annotations

import math

import numpy as np

from .field_numerics import Grid, bessel_apply, sobolev_norms

__all__ = ["fd_reference", "fd_gap"]

# u_x at i from i-3..i+2, for information coming from the left
_LEFT = np.array([-2.0, 15.0, -60.0, 20.0, 30.0, -3.0]) / 60.0
_LEFT_OFFS = np.arange(-3, 3)
_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def _upwind_dx(u, lam, h):
    """``d/dx u`` biased towards the side that ``d_t u = lam u_x`` draws from."""
    left = sum(c * np.roll(u, -o) for c, o in zip(_LEFT, _LEFT_OFFS))
    right = -sum(c * np.roll(u, o) for c, o in zip(_LEFT, _LEFT_OFFS))
    return np.where(lam > 0, right, left) / h


def _central_dx(u, h):
    return sum(c * np.roll(u, -o) for c, o in zip(_CENTRAL, range(-2, 3))) / h


class _Coeffs:
    def __init__(self, rs, x):
        self.rs, self.x, self._cache = rs, x, {}

    def __call__(self, t):
        c = self._cache.get(t)
        if c is None:
            rs, x = self.rs, self.x
            ev = lambda rc: None if rc is None or rc.is_zero else np.asarray(np.broadcast_to(rc(t, x), x.shape), complex)
            co = rs.coeffs
            c = {"lam1": ev(rs.lam1[0]).real if not rs.lam1[0].is_zero else np.zeros_like(x),
                 "lam2": ev(rs.lam2[0]).real if not rs.lam2[0].is_zero else np.zeros_like(x),
                 "c0": ev(rs.a12_c0) if rs.a12_c0 is not None else None,
                 "c1": ev(rs.a12_d[0]) if rs.a12_d else None}
            for k in ("l11", "l12", "l21", "l22", "f1", "f2"):
                c[k] = ev(co[k])
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[t] = c
        return c


def _rhs(t, u1, u2, C, grid, smoothing):
    c = C(t)
    h = grid.h
    du1 = c["lam1"] * _upwind_dx(u1, c["lam1"], h)
    du2 = c["lam2"] * _upwind_dx(u2, c["lam2"], h)
    z1 = np.zeros_like(u1)
    z2 = np.zeros_like(u2)
    for key, v in (("c0", u2), ("l11", u1), ("l12", u2), ("f1", None)):
        if c[key] is not None:
            z1 = z1 + (c[key] if v is None else c[key] * v)
    if c["c1"] is not None:
        du1 = du1 + c["c1"] * _central_dx(u2, h)
    if c["l21"] is not None:
        z2 = z2 + c["l21"] * (bessel_apply(grid, u1, -1) if smoothing else u1)
    for key, v in (("l22", u2), ("f2", None)):
        if c[key] is not None:
            z2 = z2 + (c[key] if v is None else c[key] * v)
    return du1 + 1j * z1, du2 + 1j * z2


def fd_reference(rs, refine: int = 4, cfl: float = 0.5):
    """Solve the regularized system of ``rs`` on a ``refine``-times finer grid.

    Returns ``(u1, u2)`` sampled back on the coarse grid at every stamp.
    """
    if rs.spec.n != 1:
        raise ValueError("the finite-difference reference is 1-D only")
    fine = Grid(1, rs.grid.L, rs.grid.N * refine)
    x = fine.axis
    C = _Coeffs(rs, x)
    co = rs.coeffs
    g = lambda rc: np.zeros(x.shape, complex) if rc.is_zero else np.asarray(np.broadcast_to(rc(0.0, x), x.shape), complex)
    u1, u2 = g(co["g1"]), g(co["g2"])
    stiff = []
    for rc in rs.lam1 + rs.lam2 + [co["l11"], co["l22"], co["l12"], co["l21"]]:
        if rc.mode != "exact" and rc.singular_variable == "t":
            stiff += [(a, b, rc.omega) for a, b in rc.time_stiff_intervals()]
    M, dt = rs.M, rs.dt
    out1 = np.zeros((M + 1, rs.grid.N), complex)
    out2 = np.zeros_like(out1)
    out1[0], out2[0] = u1[::refine], u2[::refine]
    smoothing = rs.spec.smoothing_21
    for m in range(M):
        t0 = rs.times[m]
        vmax = max(float(np.max(np.abs(C(t0)["lam1"]))), float(np.max(np.abs(C(t0)["lam2"]))),
                   float(np.max(np.abs(C(t0 + dt)["lam1"]))), float(np.max(np.abs(C(t0 + dt)["lam2"]))), 1e-12)
        nsub = math.ceil(dt * vmax / (cfl * fine.h))
        for a, b, w in stiff:
            if a < t0 + dt and b > t0:
                nsub = max(nsub, math.ceil(dt / (w / 16)))
        k = dt / nsub
        for j in range(nsub):
            t = t0 + j * k
            a1, a2 = _rhs(t, u1, u2, C, fine, smoothing)
            b1, b2 = _rhs(t + k / 2, u1 + k / 2 * a1, u2 + k / 2 * a2, C, fine, smoothing)
            c1, c2 = _rhs(t + k / 2, u1 + k / 2 * b1, u2 + k / 2 * b2, C, fine, smoothing)
            d1, d2 = _rhs(t + k, u1 + k * c1, u2 + k * c2, C, fine, smoothing)
            u1 = u1 + k / 6 * (a1 + 2 * b1 + 2 * c1 + d1)
            u2 = u2 + k / 6 * (a2 + 2 * b2 + 2 * c2 + d2)
        out1[m + 1], out2[m + 1] = u1[::refine], u2[::refine]
    return out1, out2


def fd_gap(sol, refine: int = 4, cfl: float = 0.5) -> float:
    """sup over stamps of the L2 distance between ``sol`` and the finite-difference reference."""
    rs = sol.system
    r1, r2 = fd_reference(rs, refine, cfl)
    d1 = sobolev_norms(rs.grid, sol.u1.values - r1, 0.0)
    d2 = sobolev_norms(rs.grid, sol.u2.values - r2, 0.0)
    return float(np.max(np.sqrt(d1**2 + d2**2)))
