"""Periodic grids, spectral multipliers, Sobolev norms and spline interpolation.

The torus ``[-L, L)^n`` stands in for R^n.  Fields are stored as complex
arrays of shape ``(N,)`` or ``(N, N)``; frequencies are ``k pi / L``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "Trajectory",
    "GridError",
    "bessel_multiplier",
    "bessel_apply",
    "sobolev_norm",
    "sobolev_norms",
    "spectral_derivative",
    "apply_first_order_symbol",
    "PeriodicSpline",
    "interpolate",
    "check_support",
    "export_csv",
    "export_binary",
    "read_binary",
]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError("only n = 1 or 2 is supported")
        if self.L <= 0:
            raise GridError("L must be positive")
        if self.N < 16 or self.N & (self.N - 1):
            raise GridError("N must be a power of two and at least 16")

    @property
    def h(self) -> float:
        return 2 * self.L / self.N

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def points(self) -> np.ndarray:
        """Node coordinates: shape (N,) for n=1, (N, N, 2) for n=2."""
        if self.n == 1:
            return self.axis
        return np.stack(np.meshgrid(self.axis, self.axis, indexing="ij"), axis=-1)

    @property
    def freq(self) -> np.ndarray:
        """Angular frequencies along one axis in FFT order."""
        return np.fft.fftfreq(self.N, d=1.0 / self.N) * math.pi / self.L

    def freqs(self) -> list[np.ndarray]:
        k = self.freq
        if self.n == 1:
            return [k]
        return list(np.meshgrid(k, k, indexing="ij"))

    def xi_sq(self) -> np.ndarray:
        return sum(k**2 for k in self.freqs())

    def radius(self) -> np.ndarray:
        """|x| at the nodes."""
        p = self.points
        return np.abs(p) if self.n == 1 else np.linalg.norm(p, axis=-1)

    def wrap(self, x):
        return (np.asarray(x, dtype=float) + self.L) % (2 * self.L) - self.L


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise GridError(f"values of shape {v.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("non-finite field values")
        object.__setattr__(self, "values", v)

    def with_values(self, values, time=None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fields at uniform time stamps ``times`` stored as one array (M+1, *grid.shape)."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0:
            raise GridError("trajectory times must start at 0 with at least two stamps")
        dt = np.diff(t)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(1.0, t[-1]):
            raise GridError("trajectory times must be uniform and increasing")
        if self.values.shape != (t.size,) + self.grid.shape:
            raise GridError("trajectory values do not match grid and times")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.times)

    def __getitem__(self, m) -> Field:
        return Field(self.grid, self.values[m], self.times[m])

    @property
    def final(self) -> Field:
        return self[-1]


def _fft(v, n):
    return np.fft.fftn(v, axes=tuple(range(-n, 0)))


def _ifft(v, n):
    return np.fft.ifftn(v, axes=tuple(range(-n, 0)))


def bessel_apply(grid: Grid, values: np.ndarray, m: float) -> np.ndarray:
    """``<D>^m`` applied to an array whose trailing axes are the grid."""
    if m == 0:
        return np.asarray(values, dtype=complex).copy()
    mult = (1 + grid.xi_sq()) ** (m / 2)
    return _ifft(_fft(values, grid.n) * mult, grid.n)


def bessel_multiplier(f: Field, m: float) -> Field:
    return f.with_values(bessel_apply(f.grid, f.values, m))


def sobolev_norms(grid: Grid, values: np.ndarray, s: float) -> np.ndarray:
    """H^s norms over the trailing grid axes; s=0 is the L2 norm on the box."""
    hat = _fft(values, grid.n)
    w = (1 + grid.xi_sq()) ** s
    axes = tuple(range(-grid.n, 0))
    total = np.sum(w * np.abs(hat) ** 2, axis=axes)
    return np.sqrt(total * (2 * grid.L) ** grid.n / grid.N ** (2 * grid.n))


def sobolev_norm(f: Field, s: float) -> float:
    return float(sobolev_norms(f.grid, f.values, s))


def spectral_derivative(grid: Grid, values: np.ndarray, j: int = 0) -> np.ndarray:
    """``D_j = -i d/dx_j`` spectrally; the Nyquist mode is zeroed to keep real data real."""
    k = grid.freqs()[j].copy()
    nyq = grid.N // 2
    if grid.n == 1:
        k[nyq] = 0.0
    elif j == 0:
        k[nyq, :] = 0.0
    else:
        k[:, nyq] = 0.0
    return _ifft(_fft(values, grid.n) * k, grid.n)


def apply_first_order_symbol(coeffs, f: Field, t: float) -> Field:
    """``sum_j c_j(t, x) D_j f + c_0(t, x) f``.

    ``coeffs`` is a sequence ``(c_0, c_1, ..., c_n)``; each entry is a
    callable ``(t, x) -> values`` (e.g. a RegularizedCoefficient) or None.
    """
    grid = f.grid
    pts = grid.points
    out = np.zeros(grid.shape, dtype=complex)
    c0 = coeffs[0]
    if c0 is not None:
        out += np.broadcast_to(c0(t, pts), grid.shape) * f.values
    for j, cj in enumerate(coeffs[1:]):
        if cj is None:
            continue
        out += np.broadcast_to(cj(t, pts), grid.shape) * spectral_derivative(grid, f.values, j)
    return f.with_values(out, t)


# ---------------------------------------------------------------------------
# periodic cubic B-spline interpolation


SPLINE_DEGREE = 5


def _bspline_weights(u, p: int):
    """Uniform B-spline weights at fractional offset ``u`` in [0, 1).

    Entry r multiplies the coefficient at knot ``i + r - (p - 1) // 2``
    (Cox-de Boor recursion on integer knots).
    """
    u = np.asarray(u, dtype=float)
    left = [None] + [u + j - 1 for j in range(1, p + 1)]
    right = [None] + [j - u for j in range(1, p + 1)]
    N = [np.ones_like(u)] + [None] * p
    for j in range(1, p + 1):
        saved = np.zeros_like(u)
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return N


def _prefilter(N: int, p: int) -> np.ndarray:
    """DFT of the sampled cardinal B-spline (symmetric, so real)."""
    w = [float(v) for v in _bspline_weights(np.array(0.0), p)]
    offs = np.arange(p + 1) - (p - 1) // 2
    theta = 2 * math.pi * np.arange(N) / N
    return sum(wi * np.cos(o * theta) for wi, o in zip(w, offs) if wi != 0.0)


class PeriodicSpline:
    """Periodic B-spline interpolant of odd degree (tensor product for n=2).

    Coefficients come from an FFT prefilter; evaluation is local with
    ``degree + 1`` taps per direction.  ``values`` may carry leading batch axes.
    """

    def __init__(self, grid: Grid, values: np.ndarray, degree: int = SPLINE_DEGREE):
        if degree % 2 != 1:
            raise GridError("spline degree must be odd")
        self.grid = grid
        self.degree = degree
        values = np.asarray(values, dtype=complex)
        filt = _prefilter(grid.N, degree)
        denom = filt if grid.n == 1 else filt[:, None] * filt[None, :]
        self.coef = _ifft(_fft(values, grid.n) / denom, grid.n)

    def __call__(self, points, rows=None) -> np.ndarray:
        """Evaluate at ``points``.

        With ``rows`` given, the coefficient stack has one leading axis and
        member ``b`` of the point batch is evaluated on stack entry ``rows[b]``.
        """
        g = self.grid
        p = self.degree
        pts = np.asarray(points, dtype=float)
        s = (g.wrap(pts) + g.L) / g.h
        i = np.floor(s).astype(np.int64)
        u = s - i
        if rows is not None:
            b = np.asarray(rows).reshape((-1,) + (1,) * (pts.ndim - g.n))
            take = lambda *idx: self.coef[(b,) + idx]
        else:
            take = lambda *idx: self.coef[(Ellipsis,) + idx]
        offs = range(-((p - 1) // 2), p + 1 - (p - 1) // 2)
        if g.n == 1:
            out = 0
            for off, w in zip(offs, _bspline_weights(u, p)):
                out = out + w * take((i + off) % g.N)
            return out
        wx = _bspline_weights(u[..., 0], p)
        wy = _bspline_weights(u[..., 1], p)
        out = 0
        for ox, ax in zip(offs, wx):
            ix = (i[..., 0] + ox) % g.N
            for oy, ay in zip(offs, wy):
                iy = (i[..., 1] + oy) % g.N
                out = out + ax * ay * take(ix, iy)
        return out


def interpolate(f: Field, points) -> np.ndarray:
    return PeriodicSpline(f.grid, f.values)(points)


def check_support(grid: Grid, values: np.ndarray, margin: float = 1.0, tol: float = 1e-12) -> float:
    """L2 mass outside ``|x_j| < L - margin`` relative to the total; raises above ``tol``."""
    inner = grid.L - margin
    ax = np.abs(grid.axis) >= inner
    mask = ax if grid.n == 1 else (ax[:, None] | ax[None, :])
    v = np.abs(np.asarray(values)) ** 2
    total = float(np.sum(v))
    if total == 0:
        return 0.0
    outside = math.sqrt(float(np.sum(v[..., mask])) / total)
    if outside > tol:
        raise GridError(f"field mass {outside:.3e} near the box boundary; enlarge L")
    return outside


def export_csv(f: Field, path) -> None:
    g = f.grid
    if g.n == 1:
        cols = [g.axis]
    else:
        p = g.points.reshape(-1, 2)
        cols = [p[:, 0], p[:, 1]]
    v = f.values.ravel()
    header = ("x," if g.n == 1 else "x1,x2,") + "Re,Im"
    np.savetxt(path, np.column_stack(cols + [v.real, v.imag]), delimiter=",", header=header,
               comments="", fmt="%.17g")


def export_binary(f: Field, path) -> None:
    """Header: little-endian int32 (N, n); body: interleaved float64 (Re, Im)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", f.grid.N, f.grid.n))
        body = np.empty(f.values.size * 2, dtype="<f8")
        body[0::2] = f.values.real.ravel()
        body[1::2] = f.values.imag.ravel()
        fh.write(body.tobytes())


def read_binary(path) -> tuple[int, int, np.ndarray]:
    with open(path, "rb") as fh:
        N, n = struct.unpack("<ii", fh.read(8))
        body = np.frombuffer(fh.read(), dtype="<f8")
    vals = (body[0::2] + 1j * body[1::2]).reshape((N,) * n)
    return N, n, vals
