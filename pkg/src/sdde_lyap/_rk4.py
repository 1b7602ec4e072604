"""Fixed-step RK4 with cubic Hermite dense output for delay equations.

The right-hand side is called as ``rhs(t, y, read)`` where ``read(s)``
returns the solution at an earlier time ``s``. Lagged times inside the
step being computed are answered from a provisional interpolant on that
step; when that happens the step is iterated to a fixed point.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right

import numpy as np

from .errors import ConvergenceError, DomainError
from .segment import PiecewiseHermite, Segment, hermite_slope, hermite_value

_EPS = 1e-13


class DenseSolution:
    """History on ``[t0 - r, t0]`` followed by a growing Hermite store.

    ``f[0]`` is the right derivative at ``t0``; the left derivative there
    belongs to the history segment.
    """

    def __init__(self, t0: float, history: Segment):
        self.t0 = float(t0)
        self.r = history.r
        self.history = history
        self.ts = []
        self.ys = []
        self.fs = []
        self._arrays = None
        # plain-list copies of the history for fast scalar lookups
        self._hmesh = (history.mesh + self.t0).tolist()
        self._hvals = list(history.values)
        self._hd0 = list(history.d0)
        self._hd1 = list(history.d1)

    # -- growth --------------------------------------------------------
    def append(self, t, y, f):
        self.ts.append(t)
        self.ys.append(y)
        self.fs.append(f)
        self._arrays = None

    @property
    def t_last(self) -> float:
        return self.ts[-1]

    # -- evaluation ----------------------------------------------------
    def _hist(self, s):
        u = s - self.t0
        if u < -self.r:
            if u < -self.r * (1 + 1e-9) - 1e-12:
                raise DomainError(f"time {s} precedes the stored history")
            u = -self.r
        return u

    def _hist_value(self, s):
        hm = self._hmesh
        if s < hm[0]:
            self._hist(s)
            s = hm[0]
        elif s > hm[-1]:
            s = hm[-1]
        k = min(max(bisect_right(hm, s) - 1, 0), len(hm) - 2)
        hh = hm[k + 1] - hm[k]
        u = (s - hm[k]) / hh
        return hermite_value(hh, u, self._hvals[k], self._hvals[k + 1], self._hd0[k], self._hd1[k])

    def value(self, s):
        ts = self.ts
        if s <= self.t0 + _EPS * max(1.0, abs(self.t0)) or len(ts) < 2:
            return self._hist_value(float(s))
        k = bisect_right(ts, s) - 1
        if k >= len(ts) - 1:
            k = len(ts) - 2
        t0 = ts[k]
        hh = ts[k + 1] - t0
        u = float((s - t0) / hh)
        return hermite_value(hh, u, self.ys[k], self.ys[k + 1], self.fs[k], self.fs[k + 1])

    def slope_left(self, s):
        """Derivative with the left-limit convention at breakpoints."""
        ts = self.ts
        if s <= self.t0 + _EPS * max(1.0, abs(self.t0)) or len(ts) < 2:
            return self.history.eval_deriv_left(self._hist(s))
        k = bisect_right(ts, s - _EPS * max(1.0, abs(s))) - 1
        k = min(max(k, 0), len(ts) - 2)
        t0 = ts[k]
        hh = ts[k + 1] - t0
        u = float(min((s - t0) / hh, 1.0))
        return hermite_slope(hh, u, self.ys[k], self.ys[k + 1], self.fs[k], self.fs[k + 1])

    # -- bulk access ---------------------------------------------------
    def arrays(self):
        if self._arrays is None:
            self._arrays = (np.array(self.ts), np.array(self.ys), np.array(self.fs))
        return self._arrays

    def piecewise(self, a=None, b=None) -> PiecewiseHermite:
        """The solution on ``[a, b]`` (default: everything stored)."""
        ts, ys, fs = self.arrays()
        hist = self.history.shifted(self.t0)
        a = hist.a if a is None else a
        b = (ts[-1] if ts.size else self.t0) if b is None else b
        if ts.size < 2 or b <= self.t0:
            return hist.restrict(a, b)
        k0 = max(bisect_right(self.ts, a) - 1, 0)
        k1 = min(max(bisect_left(self.ts, b), k0 + 1), ts.size - 1)
        mesh, vals = ts[k0:k1 + 1], ys[k0:k1 + 1]
        d0, d1 = fs[k0:k1], fs[k0 + 1:k1 + 1]
        if a < self.t0 and k0 == 0:
            mesh = np.concatenate((hist.mesh[:-1], mesh))
            vals = np.vstack((hist.values[:-1], vals))
            d0 = np.vstack((hist.d0, d0))
            d1 = np.vstack((hist.d1, d1))
        return PiecewiseHermite(mesh, vals, d0, d1).restrict(a, b)

    def segment(self, t) -> Segment:
        """``s -> y(t + s)`` on ``[-r, 0]``."""
        t = float(t)
        tol = 1e-12 * max(1.0, abs(t), self.r)
        if t < self.t0 - tol or t > self.t_last + tol:
            raise DomainError(f"t={t} outside [{self.t0}, {self.t_last}]")
        if abs(t - self.t0) <= tol:
            return self.history
        t = min(t, self.t_last)
        piece = self.piecewise(t - self.r, t)
        return Segment.from_hermite(self.r, piece.shifted(-t))


class _Provisional:
    __slots__ = ("active", "touched", "tn", "hn", "yn", "fn", "y1", "f1")

    def __init__(self):
        self.active = False
        self.touched = False


def make_reader(dense: DenseSolution, prov: _Provisional):
    def read(s):
        if prov.active and s > prov.tn + _EPS * max(1.0, abs(prov.tn)):
            prov.touched = True
            u = float((s - prov.tn) / prov.hn)
            if u > 1.0:
                u = 1.0
            return hermite_value(prov.hn, u, prov.yn, prov.y1, prov.fn, prov.f1)
        return dense.value(s)
    return read


def integrate_dense(rhs, dense: DenseSolution, t_end: float, h: float, *,
                    fp_tol=1e-12, fp_maxiter=25, max_halvings=6,
                    blowup_bound=np.inf, on_node=None):
    """Advance ``dense`` to ``t_end`` on the grid ``t0 + k*h``.

    Returns ``True`` if the run completed, ``False`` if it stopped because
    the blow-up bound was exceeded. ``on_node(t, y, f)`` is called after
    every accepted node (also after the initial one).
    """
    prov = _Provisional()
    read = make_reader(dense, prov)

    if not dense.ts:
        y0 = np.array(dense.history.eval(0.0), dtype=float)
        f0 = np.asarray(rhs(dense.t0, y0, read), dtype=float)
        dense.append(dense.t0, y0, f0)
        if on_node is not None:
            on_node(dense.t0, y0, f0)

    def one_step(tn, yn, fn, hs):
        prov.active = True
        prov.tn, prov.hn, prov.yn, prov.fn = tn, hs, yn, fn
        prov.y1 = yn + hs * fn
        prov.f1 = fn
        half = 0.5 * hs
        try:
            for it in range(fp_maxiter + 1):
                prov.touched = False
                k2 = rhs(tn + half, yn + half * fn, read)
                k3 = rhs(tn + half, yn + half * k2, read)
                k4 = rhs(tn + hs, yn + hs * k3, read)
                y1 = yn + (hs / 6.0) * (fn + 2.0 * k2 + 2.0 * k3 + k4)
                f1 = rhs(tn + hs, y1, read)
                if not prov.touched:
                    return y1, f1
                dy = np.max(np.abs(y1 - prov.y1) / (1.0 + np.abs(y1)))
                df = np.max(np.abs(f1 - prov.f1) / (1.0 + np.abs(f1)))
                prov.y1, prov.f1 = y1, f1
                if it > 0 and max(dy, df) <= fp_tol:
                    return y1, f1
            return None
        finally:
            prov.active = False

    def macro(tn, yn, fn, hs, depth):
        res = one_step(tn, yn, fn, hs)
        if res is not None:
            return [(tn + hs, res[0], res[1])]
        if depth >= max_halvings:
            raise ConvergenceError(
                f"overlapping-delay iteration failed near t={tn} after {depth} halvings")
        first = macro(tn, yn, fn, 0.5 * hs, depth + 1)
        tm, ym, fm = first[-1]
        return first + macro(tm, ym, fm, tn + hs - tm, depth + 1)

    t_start = dense.t_last
    n_steps = int(np.ceil((t_end - t_start) / h - 1e-9))
    for k in range(1, n_steps + 1):
        tn, yn, fn = dense.ts[-1], dense.ys[-1], dense.fs[-1]
        t_next = min(t_start + k * h, t_end)
        if t_next - tn <= 1e-14 * max(1.0, abs(tn)):
            continue
        for t, y, f in macro(tn, yn, fn, t_next - tn, 0):
            dense.append(t, y, f)
            if on_node is not None:
                on_node(t, y, f)
            if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > blowup_bound:
                return False
    return True
