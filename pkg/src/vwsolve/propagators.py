"""Scalar propagators for ``D_t w = sum_j lambda_j D_j w + ell w + f`` (``D = -i d``).

With the flow ``gamma`` of the speeds,

    G0 w0 (t, x) = b(t, x) w0(gamma(x, t; 0)),     b = exp(i int_0^t ell(tau, gamma(x,t;tau)) dtau)
    G f (t, x)   = i int_0^t exp(i int_s^t ell(tau, gamma(x,t;tau)) dtau) f(s, gamma(x, t; s)) ds

evaluated on the stamps of a uniform time grid (trapezoid rule in s).
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np

from .characteristics import CharFlow, FlowFamily, tri_offset
from scipy import sparse

from .field_numerics import (
    SPLINE_DEGREE,
    Field,
    Grid,
    PeriodicSpline,
    Trajectory,
    _bspline_weights,
    _fft,
    _ifft,
    _prefilter,
)

__all__ = [
    "transport_symbol",
    "Propagator",
    "apply_G0",
    "apply_G",
    "solve_scalar",
    "PropagatorError",
]


class PropagatorError(ValueError):
    pass


# largest Duhamel operator (stored entries) assembled as a sparse matrix
SPARSE_LIMIT = 2.5e7


def transport_symbol(flow: CharFlow, ell: Callable | None, t: float, x) -> np.ndarray:
    """``exp(i int_0^t ell(tau, gamma(x,t;tau)) dtau)`` along the backward characteristic."""
    x = np.asarray(x, dtype=float)
    shape = x.shape if flow.n == 1 else x.shape[:-1]
    if ell is None:
        return np.ones(shape, dtype=complex)
    _, theta = flow.solve_with_integral(x, t, 0.0, ell)
    return np.exp(1j * theta)


@lru_cache(maxsize=64)
def _pairs(start: int, stop: int):
    """Pairs (m, k) with start < m <= stop, start <= k <= m, grouped by m."""
    ms, ks, seg = [], [], []
    for m in range(start + 1, stop + 1):
        seg.append(len(ms))
        for k in range(start, m + 1):
            ms.append(m)
            ks.append(k)
    ms, ks = np.array(ms, dtype=np.int64), np.array(ks, dtype=np.int64)
    w = np.ones(len(ms))
    w[(ks == start) | (ks == ms)] = 0.5
    return ms, ks, w, np.array(seg, dtype=np.int64)


class Propagator:
    """G0 and G for one scalar equation on a fixed grid and time ladder.

    All backward characteristics between time stamps are traced once at
    construction; applications then cost one spline gather per (t_m, t_k) pair.
    """

    def __init__(self, flow: CharFlow, ell: Callable | None, grid: Grid, times):
        self.flow = flow
        self.ell = ell
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        dt = np.diff(self.times)
        if self.times[0] != 0 or np.ptp(dt) > 1e-9 * max(1.0, self.times[-1]) or np.any(dt <= 0):
            raise PropagatorError("time stamps must be uniform and start at 0")
        self.dt = float(dt[0])
        self.M = len(self.times) - 1
        self.family: FlowFamily = flow.trace_family(grid.points, self.times, ell)
        self.amp = None if self.family.theta is None else np.exp(1j * self.family.theta)
        self._duhamel = None

    # ------------------------------------------------------------------
    def symbol(self, m: int) -> np.ndarray:
        """``b(t_m, x)`` on the grid."""
        if self.amp is None:
            return np.ones(self.grid.shape, dtype=complex)
        return self.amp[tri_offset(m)]

    def G0_all(self, w0, start: int = 0) -> np.ndarray:
        """Homogeneous solution with data ``w0`` at ``t_start`` for stamps ``m >= start``.

        Rows before ``start`` are zero.
        """
        w0 = np.asarray(w0, dtype=complex)
        out = np.zeros((self.M + 1,) + self.grid.shape, dtype=complex)
        spline = PeriodicSpline(self.grid, w0)
        m = np.arange(start, self.M + 1)
        rows = tri_offset(m) + start
        vals = spline(self.family.gam[rows])
        if self.amp is not None:
            vals = vals * self.amp[rows]
        out[start:] = vals
        return out

    def G_all(self, f, stop: int | None = None, start: int = 0) -> np.ndarray:
        """Duhamel term ``i int_{t_start}^{t_m} ...`` for ``start < m <= stop``; other rows zero."""
        f = np.asarray(f, dtype=complex)
        if f.shape != (self.M + 1,) + self.grid.shape:
            raise PropagatorError(f"forcing has shape {f.shape}, expected {(self.M + 1,) + self.grid.shape}")
        stop = self.M if stop is None else stop
        out = np.zeros_like(f)
        if stop <= start:
            return out
        if start == 0 and self._use_sparse():
            coef = _ifft(_fft(f, self.grid.n) / self._prefilter_denom(), self.grid.n)
            res = (self._duhamel_matrix() @ coef.reshape(-1)).reshape(f.shape)
            out[1:stop + 1] = res[1:stop + 1]
            return out
        ms, ks, w, seg = _pairs(start, stop)
        rows = tri_offset(ms) + ks
        spline = PeriodicSpline(self.grid, f)
        vals = spline(self.family.gam[rows], rows=ks)
        if self.amp is not None:
            vals = vals * self.amp[rows]
        vals *= w.reshape((-1,) + (1,) * self.grid.n)
        out[start + 1:stop + 1] = 1j * self.dt * np.add.reduceat(vals, seg, axis=0)
        return out

    def _use_sparse(self) -> bool:
        P = self.M * (self.M + 3) // 2 + 1
        nnz = P * self.grid.N**self.grid.n * (SPLINE_DEGREE + 1) ** self.grid.n
        return nnz <= SPARSE_LIMIT

    def _prefilter_denom(self):
        filt = _prefilter(self.grid.N, SPLINE_DEGREE)
        return filt if self.grid.n == 1 else filt[:, None] * filt[None, :]

    def _duhamel_matrix(self):
        """Sparse map from spline coefficients on all stamps to ``G f`` on all stamps."""
        if self._duhamel is not None:
            return self._duhamel
        p = SPLINE_DEGREE
        g = self.grid
        ms, ks, w, _ = _pairs(0, self.M)
        rows = tri_offset(ms) + ks
        gam = self.family.gam[rows]
        coeff = (1j * self.dt * w).reshape((-1,) + (1,) * g.n)
        if self.amp is not None:
            coeff = coeff * self.amp[rows]
        coeff = np.broadcast_to(coeff, (len(rows),) + g.shape)
        size = g.N**g.n
        s = (g.wrap(gam) + g.L) / g.h
        i = np.floor(s).astype(np.int64)
        u = s - i
        offs = range(-((p - 1) // 2), p + 1 - (p - 1) // 2)
        flat = np.arange(size).reshape(g.shape)
        out_row = ms.reshape((-1,) + (1,) * g.n) * size + flat
        data, cols, rws = [], [], []
        if g.n == 1:
            for off, wt in zip(offs, _bspline_weights(u, p)):
                data.append((coeff * wt).ravel())
                cols.append((ks[:, None] * size + (i + off) % g.N).ravel())
                rws.append(np.broadcast_to(out_row, wt.shape).ravel())
        else:
            wx = _bspline_weights(u[..., 0], p)
            wy = _bspline_weights(u[..., 1], p)
            for ox, ax in zip(offs, wx):
                ix = (i[..., 0] + ox) % g.N
                for oy, ay in zip(offs, wy):
                    iy = (i[..., 1] + oy) % g.N
                    data.append((coeff * ax * ay).ravel())
                    cols.append((ks[:, None, None] * size + ix * g.N + iy).ravel())
                    rws.append(np.broadcast_to(out_row, ax.shape).ravel())
        shape = ((self.M + 1) * size,) * 2
        mat = sparse.coo_matrix((np.concatenate(data), (np.concatenate(rws), np.concatenate(cols))), shape=shape)
        self._duhamel = mat.tocsr()
        return self._duhamel

    def index(self, t: float) -> int:
        m = int(round(t / self.dt))
        if m < 0 or m > self.M or abs(self.times[m] - t) > 1e-9 * max(1.0, abs(t)):
            raise PropagatorError(f"t={t} is not a time stamp")
        return m


def apply_G0(p: Propagator, w0: Field, t: float) -> Field:
    m = p.index(t)
    spline = PeriodicSpline(p.grid, w0.values)
    vals = spline(p.family.gamma(m, 0)) * p.symbol(m)
    return Field(p.grid, vals, t)


def apply_G(p: Propagator, f: Trajectory, t: float) -> Field:
    m = p.index(t)
    if len(f.times) != p.M + 1 or np.max(np.abs(f.times - p.times)) > 1e-12:
        raise PropagatorError("forcing trajectory stamps do not match the propagator")
    return Field(p.grid, p.G_all(f.values, stop=m)[m], t)


def _forcing_values(f, grid: Grid, times) -> np.ndarray | None:
    if f is None:
        return None
    if callable(f):
        pts = grid.points
        return np.stack([np.broadcast_to(np.asarray(f(t, pts), dtype=complex), grid.shape) for t in times])
    if isinstance(f, Trajectory):
        return f.values
    return np.asarray(f, dtype=complex)


def solve_scalar(speeds, ell, f, w0, grid: Grid, times, h_ode: float | None = None,
                 margin: float = 0.5, stiff=(), h_fine=None) -> Trajectory:
    """``w = G0 w0 + G f`` on the stamps ``times``.

    ``speeds`` is a sequence of callables ``(t, x)``; ``ell`` and ``f`` are
    callables, arrays on (times, grid) or None; ``w0`` is an array or Field.
    """
    times = np.asarray(times, dtype=float)
    if h_ode is None:
        h_ode = min(grid.h / 4, float(times[1] - times[0]))
    flow = CharFlow(list(speeds), grid.n, grid.L, margin, h_ode, tuple(stiff), h_fine)
    p = Propagator(flow, ell, grid, times)
    w0v = w0.values if isinstance(w0, Field) else np.asarray(w0, dtype=complex)
    vals = p.G0_all(w0v)
    fv = _forcing_values(f, grid, times)
    if fv is not None:
        vals = vals + p.G_all(fv)
    return Trajectory(grid, times, vals)
