"""The linearized equation ``z'(t) = L(Pi(t, theta, xbar)) z_t`` along a reference.

``L(theta, xbar) phi = A phi(0) + B phi(-tau*) - B d (ell phi)`` with
``A = D2F``, ``B = D3F`` at ``(theta, xbar(0), xbar(-tau*))``, ``d`` the
reference derivative at the lag (left limit) and ``ell = D2tau(theta, xbar)``.

Several directions are propagated at once by stacking them column-wise:
a batch of ``m`` directions in R^n is a segment of dimension ``n*m`` whose
component ``i*m + j`` is component ``i`` of direction ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rk4 import DenseSolution, integrate_dense
from .driving import Phase
from .errors import CompatibilityError, DomainError, MalformedInputError, ModelViolation
from .sdde import StepControl, check_compatibility, integrate
from .segment import Segment, combine, hermite_norms

__all__ = [
    "FrozenL", "LinearSolution", "build_L", "frozen_along", "integrate_variational",
    "directional_derivative_check", "remainder_g", "direction_ensemble",
    "stack_directions", "unstack_directions", "batch_norms", "estimate_C0",
    "estimate_Cr", "inequality_checks",
]

_TAU_TOL = 1e-12


@dataclass(frozen=True)
class FrozenL:
    theta: np.ndarray
    tau: float
    A: np.ndarray
    B: np.ndarray
    d: np.ndarray
    ell: tuple  # ((s_k, w_k), ...)

    def __post_init__(self):
        object.__setattr__(self, "_terms", self._merge())

    def terms(self):
        """``[(lag, M), ...]`` with ``L phi = sum M @ phi(lag)``, lags merged."""
        return self._terms

    def _merge(self):
        out = [(0.0, self.A), (-self.tau, self.B)]
        Bd = self.B @ self.d
        for s, w in self.ell:
            out.append((float(s), -np.outer(Bd, w)))
        merged = []
        for lag, M in sorted(out, key=lambda p: -p[0]):
            if merged and abs(merged[-1][0] - lag) <= 1e-14:
                merged[-1] = (merged[-1][0], merged[-1][1] + M)
            else:
                merged.append((lag, np.array(M, dtype=float)))
        return merged

    def apply(self, phi):
        Bd = self.B @ self.d
        out = self.A @ phi.eval(0.0) + self.B @ phi.eval(-self.tau)
        for s, w in self.ell:
            out = out - Bd * float(np.dot(w, phi.eval(s)))
        return out

    def op_norm_C(self) -> float:
        """Operator norm on C as the sum of matrix norms over distinct lags.

        This is exact for scalar equations and an upper bound otherwise.
        """
        if self.A.shape == (1, 1):
            return float(sum(abs(M[0, 0]) for _, M in self._terms))
        return float(sum(np.linalg.norm(M, 2) for _, M in self._terms))


class _RefView:
    __slots__ = ("dense", "t")

    def __init__(self, dense, t):
        self.dense, self.t = dense, t

    def eval(self, s):
        return self.dense.value(self.t + min(s, 0.0))


def _frozen(model, th, view_eval, deriv_left, y1):
    tau = model.tau(th, view_eval)
    if not (-_TAU_TOL <= tau <= model.r * (1 + _TAU_TOL)):
        raise ModelViolation(f"delay {tau!r} outside [0, {model.r}]")
    tau = min(max(tau, 0.0), model.r)
    y2 = y1 if tau <= _TAU_TOL else view_eval.eval(-tau)
    A = np.atleast_2d(model.D2F(th, y1, y2))
    B = np.atleast_2d(model.D3F(th, y1, y2))
    ell = tuple((float(s), np.atleast_1d(np.asarray(w, dtype=float)))
                for s, w in model.D2tau(th, view_eval))
    d = deriv_left(-tau) if ell else np.zeros(model.dim)
    return FrozenL(th, tau, A, B, np.asarray(d, dtype=float), ell)


def build_L(model, theta, ubar: Segment, tol: float | None = None) -> FrozenL:
    """``L(theta, ubar)``; refuses points outside the compatibility set."""
    th = theta.theta if isinstance(theta, Phase) else np.asarray(theta, dtype=float)
    comp = check_compatibility(model, th, ubar, tol)
    if not comp.compatible:
        raise CompatibilityError(
            f"(theta, x) is not compatible: residual {comp.residual:.3e}")
    return _frozen(model, th, ubar, ubar.eval_deriv_left, ubar.eval(0.0))


def frozen_along(ref, t: float) -> FrozenL:
    """``L`` at ``Pi(t, theta0, x)`` read from the reference's dense output (cached)."""
    cache = ref.__dict__.setdefault("_lcache", {})
    key = round(t, 12)
    L = cache.get(key)
    if L is None:
        model = ref.model
        th = model.driving.advance_array(ref.theta0.theta, t)
        dense = ref.dense
        L = _frozen(model, th, _RefView(dense, t), lambda s: dense.slope_left(t + s),
                    dense.value(t))
        cache[key] = L
    return L


# ---------------------------------------------------------------------------
# batches of directions

def stack_directions(dirs) -> Segment:
    """Stack segments of equal ``r`` and ``dim`` into one batch segment."""
    dirs = list(dirs)
    if not dirs:
        raise MalformedInputError("no directions given")
    base = dirs[0]
    mesh = base.mesh
    for v in dirs[1:]:
        if v.dim != base.dim or abs(v.r - base.r) > 1e-12 * max(1.0, base.r):
            raise MalformedInputError("directions differ in r or dim")
        if v.mesh.size != mesh.size or not np.array_equal(v.mesh, mesh):
            mesh = np.union1d(mesh, v.mesh)
    if mesh is not base.mesh:
        dirs = [v.refine(mesh) if not np.array_equal(v.mesh, mesh) else v for v in dirs]
        mesh = dirs[0].mesh
    n, m = base.dim, len(dirs)

    def stack(attr):
        arr = np.stack([getattr(v, attr) for v in dirs], axis=-1)  # (k, n, m)
        return arr.reshape(arr.shape[0], n * m)

    return Segment(base.r, dirs[0].mesh, stack("values"), d0=stack("d0"), d1=stack("d1"))


def unstack_directions(batch: Segment, m: int):
    n = batch.dim // m
    out = []
    for j in range(m):
        idx = np.arange(n) * m + j
        out.append(batch.component(idx))
    return out


def batch_norms(batch: Segment, m: int):
    """Per-direction ``(norm_C, norm_W)`` arrays of a batch segment."""
    n = batch.dim // m
    k = batch.mesh.size
    vals = batch.values.reshape(k, n, m)
    d0 = batch.d0.reshape(k - 1, n, m)
    d1 = batch.d1.reshape(k - 1, n, m)
    vmax, dmax = hermite_norms(batch.mesh, vals, d0, d1)
    return vmax, np.maximum(vmax, dmax)


def scale_batch(batch: Segment, m: int, factors) -> Segment:
    n = batch.dim // m
    f = np.tile(np.asarray(factors, dtype=float), n)
    return Segment(batch.r, batch.mesh, batch.values * f, d0=batch.d0 * f, d1=batch.d1 * f)


# ---------------------------------------------------------------------------
# propagation

class LinearSolution:
    """Solution ``z`` of the variational equation, started at reference time ``t0``.

    Times passed to :meth:`segment` and :meth:`z` are relative to ``t0``.
    """

    def __init__(self, ref, v: Segment, t0: float, dense: DenseSolution, m: int):
        self.ref = ref
        self.v = v
        self.t0 = float(t0)
        self.dense = dense
        self.m = m

    @property
    def horizon(self) -> float:
        return self.dense.t_last

    def segment(self, t) -> Segment:
        return self.dense.segment(t)

    def z(self, t):
        return self.dense.value(float(t))

    def directions(self, t):
        return unstack_directions(self.segment(t), self.m)

    def norms(self, t):
        return batch_norms(self.segment(t), self.m)

    def window_sup_C(self, t, width):
        """Per-direction ``sup |z|`` over ``[t - width, t]``."""
        piece = self.dense.piecewise(t - width, t)
        n = piece.dim // self.m
        k = piece.mesh.size
        vmax, _ = hermite_norms(piece.mesh, piece.values.reshape(k, n, self.m),
                                piece.d0.reshape(k - 1, n, self.m),
                                piece.d1.reshape(k - 1, n, self.m))
        return vmax


def _variational_rhs(ref, t0, n, m):
    def rhs(t, y, read):
        L = frozen_along(ref, t0 + t)
        Z = y.reshape(n, m)
        out = np.zeros((n, m))
        for lag, M in L._terms:
            if lag >= -_TAU_TOL:
                zl = Z
            else:
                zl = read(t + lag).reshape(n, m)
            out += M @ zl
        return out.reshape(n * m)
    return rhs


def integrate_variational(model, ref, v: Segment, T: float, t0: float = 0.0,
                          ctrl: StepControl | None = None, check: bool = True
                          ) -> LinearSolution:
    """Propagate ``v`` (one direction, or a stacked batch) for time ``T``
    along ``ref`` starting at reference time ``t0``."""
    ctrl = ctrl or StepControl()
    n = model.dim
    if v.dim % n:
        raise MalformedInputError(f"direction dim {v.dim} is not a multiple of {n}")
    m = v.dim // n
    if t0 < 0 or t0 + T > ref.horizon + 1e-9 * max(1.0, t0 + T):
        raise DomainError(f"reference covers [0, {ref.horizon}], need [{t0}, {t0 + T}]")
    if check:
        comp = check_compatibility(model, ref.phase(t0), ref.segment(t0))
        if not comp.compatible:
            raise CompatibilityError(
                f"reference at t0={t0} is not compatible: residual {comp.residual:.3e}")
    h = ctrl.step(model.r)
    rhs = _variational_rhs(ref, t0, n, m)
    dense = DenseSolution(0.0, v)
    integrate_dense(rhs, dense, float(T), h, fp_tol=ctrl.fp_tol, fp_maxiter=ctrl.fp_maxiter,
                    max_halvings=ctrl.max_halvings)
    return LinearSolution(ref, v, t0, dense, m)


# ---------------------------------------------------------------------------
# checks of the linearization

@dataclass
class DerivativeCheckReport:
    eps: list
    errors: list
    ratios: list     # errors[i] / errors[i+1]
    orders: list     # log(ratio) / log(eps ratio)
    norm_w: float    # norm_W of w(t)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("eps", "errors", "ratios", "orders", "norm_w")}


def directional_derivative_check(model, theta0, x: Segment, v: Segment, t: float,
                                 eps_list, ctrl: StepControl | None = None,
                                 ) -> DerivativeCheckReport:
    """Compare ``(u(t, x + eps v) - u(t, x)) / eps`` with ``w(t, x, v)`` in W-norm."""
    comp = check_compatibility(model, theta0, x)
    if not comp.compatible:
        raise CompatibilityError(f"base point not compatible: residual {comp.residual:.3e}")
    ref = integrate(model, theta0, x, t, ctrl)
    lin = integrate_variational(model, ref, v, t, ctrl=ctrl, check=False)
    w = lin.segment(t)
    u = ref.segment(t)
    errs = []
    for eps in eps_list:
        pert = integrate(model, theta0, combine(1.0, x, eps, v), t, ctrl)
        if pert.blown_up:
            raise ModelViolation(f"perturbed run blew up at eps={eps}")
        q = combine(1.0 / eps, pert.segment(t), -1.0 / eps, u)
        errs.append(combine(1.0, q, -1.0, w).norm_W())
    ratios, orders = [], []
    for i in range(len(errs) - 1):
        ratio = errs[i] / errs[i + 1] if errs[i + 1] > 0 else np.inf
        ratios.append(float(ratio))
        orders.append(float(np.log(ratio) / np.log(eps_list[i] / eps_list[i + 1])))
    return DerivativeCheckReport(list(map(float, eps_list)), errs, ratios, orders, w.norm_W())


def remainder_g(model, theta, xbar: Segment, x: Segment):
    """``F(x) - F(xbar) - L(theta, xbar)(x - xbar)`` with F evaluated at the
    realized delays."""
    th = theta.theta if isinstance(theta, Phase) else np.asarray(theta, dtype=float)
    L = build_L(model, th, xbar)

    def field(seg):
        tau = model.tau(th, seg)
        if not (-_TAU_TOL <= tau <= model.r * (1 + _TAU_TOL)):
            raise ModelViolation(f"delay {tau!r} outside [0, {model.r}]")
        return model.F(th, seg.eval(0.0), seg.eval(-min(max(tau, 0.0), model.r)))

    diff = combine(1.0, x, -1.0, xbar)
    return np.asarray(field(x) - field(xbar) - L.apply(diff), dtype=float)


# ---------------------------------------------------------------------------
# direction ensembles and constants

def direction_ensemble(r: float, dim: int, m: int = 32, seed=0, n_intervals: int = 64):
    """``m`` unit C-norm directions: narrow bumps, Fourier modes and random
    Hermite data, in roughly equal thirds, on a common uniform mesh."""
    rng = np.random.default_rng(seed)
    mesh = np.linspace(-r, 0.0, n_intervals + 1)
    out = []
    kinds = ["bump", "fourier", "random"]
    for j in range(m):
        kind = kinds[j % 3]
        if kind == "bump":
            c = -r * rng.random()
            width = r * (0.05 + 0.15 * rng.random())
            u = (mesh - c) / width
            inside = np.abs(u) < 1.0
            prof = np.where(inside, np.cos(0.5 * np.pi * u) ** 2, 0.0)
            dprof = np.where(inside, -0.5 * np.pi / width * np.sin(np.pi * u), 0.0)
        elif kind == "fourier":
            k = j // 3
            ph = 2.0 * np.pi * rng.random()
            om = np.pi * (k + 1) / r
            prof = np.cos(om * mesh + ph)
            dprof = -om * np.sin(om * mesh + ph)
        else:
            coarse = np.linspace(-r, 0.0, 9)
            cv = rng.standard_normal(9)
            seg = Segment(r, coarse, cv)
            fine = seg.refine(mesh)
            prof, dprof = fine.values[:, 0], fine.derivs[:, 0]
        direc = rng.standard_normal(dim)
        direc /= np.linalg.norm(direc)
        vals = prof[:, None] * direc[None, :]
        ders = dprof[:, None] * direc[None, :]
        seg = Segment(r, mesh, vals, ders)
        nc = seg.norm_C()
        if nc == 0.0:
            seg = Segment.constant(r, direc, n_intervals)
            nc = 1.0
        out.append(seg.scale(1.0 / nc))
    return out


def estimate_C0(ref, t_start: float = 0.0, t_end: float | None = None) -> float:
    """``max ||L||`` over the reference's grid nodes in ``[t_start, t_end]``."""
    t_end = ref.horizon if t_end is None else t_end
    ts = ref.times
    sel = ts[(ts >= t_start - 1e-12) & (ts <= t_end + 1e-12)]
    return float(max(frozen_along(ref, float(t)).op_norm_C() for t in sel))


def estimate_Cr(model, ref, dirs, t0: float = 0.0, ctrl=None):
    """``max ||w(r)||_W / ||v||_C`` over the directions, started at ``t0``."""
    batch = stack_directions(dirs)
    m = len(dirs)
    lin = integrate_variational(model, ref, batch, model.r, t0=t0, ctrl=ctrl, check=False)
    nC0, _ = batch_norms(batch, m)
    _, nW = lin.norms(model.r)
    return float(np.max(nW / nC0)), lin


def _safe_ratio(num, den):
    """``num / den`` with ``0 / 0 = 0`` (both sides vanish, the bound holds)."""
    num = np.asarray(num, dtype=float)
    den = np.broadcast_to(np.asarray(den, dtype=float), num.shape)
    out = np.full(num.shape, np.inf)
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    out[~pos & (num == 0)] = 0.0
    return out


@dataclass
class InequalityReport:
    n_checked_i: int
    violations_i: int
    worst_ratio_i: float
    n_checked_iii: int
    violations_iii: int
    worst_ratio_iii: float
    C0_hat: float
    Cr_hat: float

    @property
    def n_pairs(self):
        return self.n_checked_i + self.n_checked_iii

    @property
    def ok(self):
        return self.violations_i == 0 and self.violations_iii == 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def inequality_checks(model, ref, dirs, T: float, t0: float = 0.0, sample_every=None,
                      n_fresh: int = 16, seed=0, ctrl=None, slack: float = 1e-6
                      ) -> InequalityReport:
    """Per-direction forms of the two norm-comparison inequalities.

    (i)   ``||w(t)||_W <= (1 + C0) max_{s in [-r, 0]} ||w(t + s)||_C``
    (iii) ``||w(t)||_C <= Cr * N(t) * ||v||_C`` where ``N(t)`` is the largest
          W-to-W gain of the propagator from ``t0 + r`` to ``t0 + t`` over a
          fresh ensemble together with the normalized ``w(r)`` of every
          direction.

    Checked at ``t = r, r + sample_every, ..., T`` (default spacing r).
    ``slack`` is a relative allowance for discretization error.
    """
    r = model.r
    sample_every = r if sample_every is None else sample_every
    m = len(dirs)
    C0 = estimate_C0(ref, t0, t0 + T)
    batch = stack_directions(dirs)
    nC_v, _ = batch_norms(batch, m)
    lin = integrate_variational(model, ref, batch, T, t0=t0, ctrl=ctrl, check=False)
    _, nW_r = lin.norms(r)
    Cr = float(np.max(nW_r / nC_v))

    times = np.arange(r, T + 1e-9 * max(1.0, T), sample_every)

    ni = vi = 0
    worst_i = 0.0
    for t in times:
        _, nW = lin.norms(t)
        sup_c = lin.window_sup_C(t, 2 * r)
        ratio = _safe_ratio(nW, (1.0 + C0) * sup_c)
        ni += m
        vi += int(np.sum(ratio > 1.0 + slack))
        worst_i = max(worst_i, float(np.max(ratio)))

    # propagator from t0 + r on a W-ensemble: fresh directions plus w(r)
    fresh = direction_ensemble(r, model.dim, n_fresh, seed=(seed, 1), n_intervals=64)
    own = [d.scale(1.0 / d.norm_W()) for d in unstack_directions(lin.segment(r), m)
           if d.norm_W() > 0]
    ens = fresh + own
    ens_batch = stack_directions(ens)
    _, nW_e0 = batch_norms(ens_batch, len(ens))
    prop = integrate_variational(model, ref, ens_batch, T - r, t0=t0 + r, ctrl=ctrl,
                                 check=False)
    niii = viii = 0
    worst_iii = 0.0
    for t in times:
        if t - r <= 0:
            gain = 1.0
        else:
            _, nW_e = prop.norms(t - r)
            gain = float(np.max(nW_e / nW_e0))
        nC, _ = lin.norms(t)
        ratio = _safe_ratio(nC, Cr * gain * nC_v)
        niii += m
        viii += int(np.sum(ratio > 1.0 + slack))
        worst_iii = max(worst_iii, float(np.max(ratio)))
    return InequalityReport(ni, vi, worst_i, niii, viii, worst_iii, C0, Cr)
