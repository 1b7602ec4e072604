"""History segments x: [-r, 0] -> R^n as piecewise cubic Hermite functions.

Each interval carries its own end slopes (``d0`` at the left end, ``d1`` at
the right end), so a derivative jump at a breakpoint is represented exactly.
That matters for solutions started from data that do not satisfy the
compatibility condition, whose derivative jumps at t = 0.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, MalformedInputError

__all__ = [
    "PiecewiseHermite",
    "Segment",
    "combine",
    "shift_extract",
    "hermite_norms",
    "N_NORM",
]

N_NORM = 8
_SNAP = 1e-12


def _cubic_coeffs(hh, y0, y1, f0, f1):
    """Monomial coefficients in the local variable u in [0, 1]."""
    c0 = y0
    c1 = hh * f0
    c2 = -3.0 * y0 - 2.0 * hh * f0 + 3.0 * y1 - hh * f1
    c3 = 2.0 * y0 + hh * f0 - 2.0 * y1 + hh * f1
    return c0, c1, c2, c3


def hermite_value(hh, u, y0, y1, f0, f1):
    if isinstance(u, float):
        # scalar weights first: four array operations instead of a dozen
        u2 = u * u
        u3 = u2 * u
        h01 = 3.0 * u2 - 2.0 * u3
        return ((1.0 - h01) * y0 + ((u3 - 2.0 * u2 + u) * hh) * f0 + h01 * y1
                + ((u3 - u2) * hh) * f1)
    u2 = u * u
    u3 = u2 * u
    h00 = 2.0 * u3 - 3.0 * u2 + 1.0
    h10 = u3 - 2.0 * u2 + u
    h01 = -2.0 * u3 + 3.0 * u2
    h11 = u3 - u2
    return h00 * y0 + h10 * hh * f0 + h01 * y1 + h11 * hh * f1


def hermite_slope(hh, u, y0, y1, f0, f1):
    if isinstance(u, float):
        u2 = u * u
        g00 = (6.0 * u2 - 6.0 * u) / hh
        return g00 * (y0 - y1) + (3.0 * u2 - 4.0 * u + 1.0) * f0 + (3.0 * u2 - 2.0 * u) * f1
    u2 = u * u
    g00 = 6.0 * u2 - 6.0 * u
    g10 = 3.0 * u2 - 4.0 * u + 1.0
    g01 = -g00
    g11 = 3.0 * u2 - 2.0 * u
    return (g00 * y0 + g01 * y1) / hh + g10 * f0 + g11 * f1


def _snap_mesh(points, tol):
    pts = np.sort(np.asarray(points, dtype=float))
    keep = [pts[0]]
    for p in pts[1:]:
        if p - keep[-1] > tol:
            keep.append(p)
    # the original right end wins over a snapped neighbour
    keep[-1] = pts[-1]
    return np.array(keep)


def hermite_norms(mesh, values, d0, d1, nsub: int = N_NORM):
    """Sup norms of a (batch of) piecewise cubic(s) and of its derivative.

    ``values`` has shape (N+1, n, m) and ``d0``/``d1`` shape (N, n, m); the
    Euclidean magnitude is taken over ``n`` and one pair of norms is
    returned per column ``m``. Candidates per interval: both ends, ``nsub``
    interior samples, and the closed-form critical points of every
    component (roots of the quadratic derivative for values, the vertex of
    the derivative parabola for slopes).
    """
    mesh = np.asarray(mesh, dtype=float)
    hh = np.diff(mesh)[:, None, None]
    y0, y1 = values[:-1], values[1:]
    c0, c1, c2, c3 = _cubic_coeffs(hh, y0, y1, d0, d1)

    ug = np.concatenate(([0.0, 1.0], np.arange(1, nsub + 1) / (nsub + 1.0)))
    U = ug[None, :, None, None]

    def val(u):
        return c0[:, None] + u * (c1[:, None] + u * (c2[:, None] + u * c3[:, None]))

    def der(u):
        return (c1[:, None] + u * (2.0 * c2[:, None] + 3.0 * u * c3[:, None])) / hh[:, None]

    vmax = np.sqrt(np.sum(val(U) ** 2, axis=2)).max(axis=(0, 1))
    dmax = np.sqrt(np.sum(der(U) ** 2, axis=2)).max(axis=(0, 1))

    n = values.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        # roots of c1 + 2 c2 u + 3 c3 u^2, per component
        qa, qb, qc = 3.0 * c3, 2.0 * c2, c1
        disc = qb * qb - 4.0 * qa * qc
        sq = np.sqrt(np.where(disc >= 0.0, disc, 0.0))
        lin = np.abs(qa) < 1e-300
        r1 = np.where(lin, -qc / qb, (-qb + sq) / (2.0 * qa))
        r2 = np.where(lin, -qc / qb, (-qb - sq) / (2.0 * qa))
        vert = -c2 / (3.0 * c3)
    roots = []
    for rr in (r1, r2):
        ok = (disc >= 0.0) & np.isfinite(rr) & (rr > 0.0) & (rr < 1.0)
        roots.append(np.where(ok, rr, 0.0))
    vert = np.where(np.isfinite(vert) & (vert > 0.0) & (vert < 1.0), vert, 0.0)
    for j in range(n):
        for rr in roots:
            u = rr[:, j, :][:, None, None, :]
            vmax = np.maximum(vmax, np.sqrt(np.sum(val(u) ** 2, axis=2)).max(axis=(0, 1)))
        u = vert[:, j, :][:, None, None, :]
        dmax = np.maximum(dmax, np.sqrt(np.sum(der(u) ** 2, axis=2)).max(axis=(0, 1)))
    return vmax, dmax


class PiecewiseHermite:
    """Piecewise cubic Hermite function on ``[mesh[0], mesh[-1]]``.

    Parameters
    ----------
    mesh : (N+1,) strictly increasing breakpoints
    values : (N+1, n) node values
    d0, d1 : (N, n) slopes at the left / right end of each interval
    """

    def __init__(self, mesh, values, d0, d1):
        mesh = np.asarray(mesh, dtype=float)
        values = np.asarray(values, dtype=float)
        d0 = np.asarray(d0, dtype=float)
        d1 = np.asarray(d1, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
            d0 = d0.reshape(-1, 1)
            d1 = d1.reshape(-1, 1)
        if mesh.ndim != 1 or mesh.size < 2:
            raise MalformedInputError("mesh needs at least two breakpoints")
        if not np.all(np.diff(mesh) > 0):
            raise MalformedInputError("mesh must be strictly increasing")
        N = mesh.size - 1
        if values.shape[0] != N + 1 or d0.shape != (N, values.shape[1]) or d1.shape != d0.shape:
            raise MalformedInputError(
                f"Hermite data shapes do not match mesh of {N} intervals: "
                f"values {values.shape}, d0 {d0.shape}, d1 {d1.shape}")
        for a in (mesh, values, d0, d1):
            a.setflags(write=False)
        self.mesh = mesh
        self.values = values
        self.d0 = d0
        self.d1 = d1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def a(self) -> float:
        return float(self.mesh[0])

    @property
    def b(self) -> float:
        return float(self.mesh[-1])

    def _tol(self):
        return _SNAP * max(1.0, self.b - self.a, abs(self.a), abs(self.b))

    def _locate(self, s):
        s = np.asarray(s, dtype=float)
        tol = self._tol()
        if np.any(s < self.a - tol) or np.any(s > self.b + tol):
            raise DomainError(
                f"evaluation point outside [{self.a}, {self.b}]")
        idx = np.searchsorted(self.mesh, s, side="right") - 1
        return s, np.clip(idx, 0, self.mesh.size - 2)

    def _pieces(self, idx):
        t0 = self.mesh[idx]
        hh = self.mesh[idx + 1] - t0
        return t0, hh, self.values[idx], self.values[idx + 1], self.d0[idx], self.d1[idx]

    def eval(self, s):
        """Value at ``s``; a scalar ``s`` gives shape (n,), an array (k, n)."""
        s, idx = self._locate(s)
        t0, hh, y0, y1, f0, f1 = self._pieces(idx)
        u = np.clip((s - t0) / hh, 0.0, 1.0)
        if s.ndim:
            u, hh = u[:, None], hh[:, None]
        return hermite_value(hh, u, y0, y1, f0, f1)

    __call__ = eval

    def eval_deriv(self, s):
        """Derivative at ``s``: right-sided at interior breakpoints and at the
        left end, left-sided at the right end."""
        s, idx = self._locate(s)
        t0, hh, y0, y1, f0, f1 = self._pieces(idx)
        u = np.clip((s - t0) / hh, 0.0, 1.0)
        if s.ndim:
            u, hh = u[:, None], hh[:, None]
        return hermite_slope(hh, u, y0, y1, f0, f1)

    def eval_deriv_left(self, s):
        """Left-limit derivative (used at breakpoints of references)."""
        s = float(s)
        k = int(np.searchsorted(self.mesh, s - self._tol(), side="right")) - 1
        k = min(max(k, 0), self.mesh.size - 2)
        t0, hh, y0, y1, f0, f1 = self._pieces(k)
        u = min(max((s - t0) / hh, 0.0), 1.0)
        return hermite_slope(hh, u, y0, y1, f0, f1)

    # -- resampling ------------------------------------------------------
    def _resample(self, new_mesh):
        """Exact re-expression on a mesh whose intervals never straddle an
        old breakpoint."""
        new_mesh = np.asarray(new_mesh, dtype=float)
        mid = 0.5 * (new_mesh[:-1] + new_mesh[1:])
        idx = np.clip(np.searchsorted(self.mesh, mid, side="right") - 1, 0, self.mesh.size - 2)
        t0, hh, y0, y1, f0, f1 = self._pieces(idx)
        hh_c = hh[:, None]
        ua = ((new_mesh[:-1] - t0) / hh)[:, None]
        ub = ((new_mesh[1:] - t0) / hh)[:, None]
        va = hermite_value(hh_c, ua, y0, y1, f0, f1)
        vb = hermite_value(hh_c, ub, y0, y1, f0, f1)
        sa = hermite_slope(hh_c, ua, y0, y1, f0, f1)
        sb = hermite_slope(hh_c, ub, y0, y1, f0, f1)
        # keep original node values exactly where nodes are shared
        old = np.searchsorted(self.mesh, new_mesh)
        old = np.clip(old, 0, self.mesh.size - 1)
        shared = np.abs(self.mesh[old] - new_mesh) <= 0.0
        values = np.vstack([va, vb[-1:]])
        values[shared] = self.values[old[shared]]
        return new_mesh, values, sa, sb

    def restrict(self, a, b) -> "PiecewiseHermite":
        tol = self._tol()
        if a < self.a - tol or b > self.b + tol or b <= a:
            raise DomainError(f"cannot restrict [{self.a}, {self.b}] to [{a}, {b}]")
        a, b = max(a, self.a), min(b, self.b)
        inner = self.mesh[(self.mesh > a + tol) & (self.mesh < b - tol)]
        new_mesh = np.concatenate(([a], inner, [b]))
        return PiecewiseHermite(*self._resample(new_mesh))

    def refine(self, points) -> "PiecewiseHermite":
        """Insert extra breakpoints (exact)."""
        pts = np.concatenate((self.mesh, np.asarray(points, dtype=float)))
        pts = pts[(pts >= self.a) & (pts <= self.b)]
        new_mesh = _snap_mesh(pts, self._tol())
        new_mesh[0], new_mesh[-1] = self.a, self.b
        return PiecewiseHermite(*self._resample(new_mesh))

    def shifted(self, dt) -> "PiecewiseHermite":
        return PiecewiseHermite(self.mesh + dt, self.values, self.d0, self.d1)

    def norms(self, nsub: int = N_NORM):
        vmax, dmax = hermite_norms(self.mesh, self.values[:, :, None],
                                   self.d0[:, :, None], self.d1[:, :, None], nsub)
        return float(vmax[0]), float(dmax[0])


class Segment(PiecewiseHermite):
    """An element of C([-r, 0], R^n) with piecewise cubic Hermite data."""

    def __init__(self, r, mesh, values, derivs=None, *, d0=None, d1=None):
        r = float(r)
        if not r > 0:
            raise MalformedInputError("r must be positive")
        mesh = np.array(mesh, dtype=float)
        tol = _SNAP * max(1.0, r)
        if abs(mesh[0] + r) > tol or abs(mesh[-1]) > tol:
            raise MalformedInputError(
                f"segment mesh must run from -r={-r} to 0, got [{mesh[0]}, {mesh[-1]}]")
        mesh[0], mesh[-1] = -r, 0.0
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if d0 is None:
            if derivs is None:
                derivs = _spline_slopes(mesh, values)
            derivs = np.asarray(derivs, dtype=float).reshape(values.shape)
            d0, d1 = derivs[:-1], derivs[1:]
        super().__init__(mesh, values, d0, d1)
        self.r = r

    # -- constructors ----------------------------------------------------
    @classmethod
    def from_hermite(cls, r, ph: PiecewiseHermite) -> "Segment":
        return cls(r, ph.mesh, ph.values, d0=ph.d0, d1=ph.d1)

    @classmethod
    def constant(cls, r, c, n_intervals: int = 1) -> "Segment":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        mesh = np.linspace(-r, 0.0, n_intervals + 1)
        vals = np.tile(c, (n_intervals + 1, 1))
        return cls(r, mesh, vals, np.zeros_like(vals))

    @classmethod
    def zeros(cls, r, dim: int, n_intervals: int = 1) -> "Segment":
        return cls.constant(r, np.zeros(dim), n_intervals)

    @classmethod
    def from_function(cls, r, f, df=None, n_intervals: int = 64, mesh=None) -> "Segment":
        """Sample ``f`` (and ``df`` if given; otherwise spline slopes).

        ``f`` and ``df`` take an array of s values and return shape (k,) or
        (k, n).
        """
        if mesh is None:
            mesh = np.linspace(-r, 0.0, n_intervals + 1)
        mesh = np.asarray(mesh, dtype=float)
        vals = np.asarray(f(mesh), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        ders = None
        if df is not None:
            ders = np.asarray(df(mesh), dtype=float).reshape(vals.shape)
        return cls(r, mesh, vals, ders)

    # -- accessors ---------------------------------------------------------
    @property
    def derivs(self) -> np.ndarray:
        """Node derivatives: right-sided except at s = 0 (left-sided)."""
        return np.vstack([self.d0, self.d1[-1:]])

    def has_jumps(self) -> bool:
        return bool(np.any(self.d1[:-1] != self.d0[1:]))

    def norm_C(self, nsub: int = N_NORM) -> float:
        return self.norms(nsub)[0]

    def norm_W(self, nsub: int = N_NORM) -> float:
        v, d = self.norms(nsub)
        return max(v, d)

    # -- arithmetic ------------------------------------------------------
    def scale(self, a) -> "Segment":
        return Segment(self.r, self.mesh, a * self.values, d0=a * self.d0, d1=a * self.d1)

    def __add__(self, other):
        return combine(1.0, self, 1.0, other)

    def __sub__(self, other):
        return combine(1.0, self, -1.0, other)

    def __mul__(self, a):
        return self.scale(float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def refine(self, points) -> "Segment":
        return Segment.from_hermite(self.r, super().refine(points))

    def component(self, j) -> "Segment":
        """Components ``j`` (int, slice or index array) as a new segment."""
        sel = np.atleast_1d(np.arange(self.dim)[j])
        return Segment(self.r, self.mesh, self.values[:, sel],
                       d0=self.d0[:, sel], d1=self.d1[:, sel])

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "r": self.r,
            "dim": self.dim,
            "mesh": self.mesh.tolist(),
            "values": self.values.tolist(),
            "derivs": self.derivs.tolist(),
        }
        if self.has_jumps():
            left = np.vstack([self.d0[:1], self.d1])
            out["derivs_left"] = left.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        try:
            r, mesh = d["r"], np.asarray(d["mesh"], dtype=float)
            vals = np.asarray(d["values"], dtype=float)
            ders = np.asarray(d["derivs"], dtype=float)
        except KeyError as exc:
            raise MalformedInputError(f"segment JSON lacks field {exc}") from None
        if vals.ndim == 1:
            vals, ders = vals[:, None], ders[:, None]
        if "dim" in d and vals.shape[1] != int(d["dim"]):
            raise MalformedInputError("segment JSON: dim does not match values")
        left = d.get("derivs_left")
        if left is None:
            return cls(r, mesh, vals, ders)
        left = np.asarray(left, dtype=float).reshape(vals.shape)
        return cls(r, mesh, vals, d0=ders[:-1], d1=left[1:])

    def __repr__(self):
        return f"Segment(r={self.r}, dim={self.dim}, intervals={self.mesh.size - 1})"


def _spline_slopes(mesh, values):
    if mesh.size == 2:
        slope = (values[1] - values[0]) / (mesh[1] - mesh[0])
        return np.vstack([slope, slope])
    bc = "not-a-knot" if mesh.size > 3 else "natural"
    return CubicSpline(mesh, values, axis=0, bc_type=bc)(mesh, 1)


def combine(a: float, x: Segment, b: float, y: Segment) -> Segment:
    """Pointwise ``a*x + b*y`` on the union of both meshes (exact)."""
    if abs(x.r - y.r) > _SNAP * max(1.0, x.r):
        raise MalformedInputError(f"segments have different r: {x.r} vs {y.r}")
    if x.dim != y.dim:
        raise MalformedInputError(f"segments have different dims: {x.dim} vs {y.dim}")
    if x.mesh.size == y.mesh.size and np.array_equal(x.mesh, y.mesh):
        xm, ym = x, y
    else:
        tol = _SNAP * max(1.0, x.r)
        mesh = _snap_mesh(np.concatenate((x.mesh, y.mesh)), tol)
        mesh[0], mesh[-1] = -x.r, 0.0
        xm = PiecewiseHermite(*x._resample(mesh))
        ym = PiecewiseHermite(*y._resample(mesh))
    return Segment(x.r, xm.mesh, a * xm.values + b * ym.values,
                   d0=a * xm.d0 + b * ym.d0, d1=a * xm.d1 + b * ym.d1)


def shift_extract(traj, t: float) -> Segment:
    """The segment ``u(t)(s) = y(t + s)``, s in [-r, 0], of a trajectory."""
    return traj.segment(t)
