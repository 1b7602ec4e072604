"""Models and the nonlinear semiflow ``(t, theta, x) -> (theta.t, u(t, theta, x))``.

Model callables receive the raw torus coordinates ``th`` (an ndarray in
[0, 1)^d) rather than a :class:`Phase`, which keeps the inner loop cheap:

* ``F(th, y1, y2) -> (n,)`` with ``y1 = y(t)`` and ``y2 = y(t - tau)``
* ``D2F``, ``D3F`` with the same arguments, returning ``(n, n)``
* ``tau(th, x) -> float`` where ``x`` has ``eval(s)`` for ``s`` in [-r, 0]
* ``D2tau(th, x) -> [(s_k, w_k), ...]``, the functional
  ``phi -> sum_k w_k . phi(s_k)``
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._rk4 import DenseSolution, integrate_dense
from .driving import Phase, TorusFlow
from .errors import BlowUpError, MalformedInputError, ModelViolation
from .expr import ConstantDelay, DiscreteDelay, Var, compile_scalar, diff, parse, validate
from .segment import Segment

__all__ = [
    "SddeModel", "StepControl", "Trajectory", "OrbitPoint", "CompatibilityResult",
    "model_from_dsl", "check_compatibility", "check_derivatives", "integrate",
    "semiflow_map", "omega_limit_sample",
]

_TAU_TOL = 1e-12


@dataclass
class SddeModel:
    dim: int
    r: float
    driving: TorusFlow
    F: object
    D2F: object
    D3F: object
    tau: object
    D2tau: object
    name: str = "custom"
    params: dict = field(default_factory=dict)
    spec: dict | None = None  # DSL source, when the model came from one

    def __post_init__(self):
        if self.dim < 1:
            raise MalformedInputError("dim must be >= 1")
        if not self.r > 0:
            raise MalformedInputError("r must be positive")


@dataclass(frozen=True)
class StepControl:
    h: float | None = None        # default r/64
    fp_tol: float = 1e-12
    fp_maxiter: int = 25
    max_halvings: int = 8
    blowup_bound: float = 1e8

    def step(self, r: float) -> float:
        if self.h is None:
            return r / 64.0
        m = r / self.h
        if self.h <= 0 or abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise MalformedInputError(f"step h={self.h} does not divide r={r}")
        return r / round(m)

    def kwargs(self):
        return dict(fp_tol=self.fp_tol, fp_maxiter=self.fp_maxiter,
                    max_halvings=self.max_halvings, blowup_bound=self.blowup_bound)


# ---------------------------------------------------------------------------
# DSL models

def model_from_dsl(F, tau, r, freq, params=None, name="custom", minimal=False):
    """Build a model from component strings of F and a delay expression.

    ``tau`` is a number (constant delay) or a string in ``x0_i``/``xm_i@s``.
    Derivatives are produced symbolically.
    """
    params = dict(params or {})
    if isinstance(F, str):
        F = [F]
    n = len(F)
    flow = TorusFlow(freq, minimal=minimal)
    exprs = []
    for src in F:
        e = parse(src) if isinstance(src, str) else src
        validate(e, "F", n, flow.dim, r, params)
        exprs.append(e)
    d2 = [diff(e, Var("y1", j)) for e in exprs for j in range(1, n + 1)]
    d3 = [diff(e, Var("y2", j)) for e in exprs for j in range(1, n + 1)]
    f = compile_scalar(exprs, "state", params)
    f2 = compile_scalar(d2, "state", params)
    f3 = compile_scalar(d3, "state", params)

    def D2F(th, y1, y2):
        return f2(th, y1, y2).reshape(n, n)

    def D3F(th, y1, y2):
        return f3(th, y1, y2).reshape(n, n)

    if isinstance(tau, (int, float)):
        delay = ConstantDelay(tau)
        if not 0.0 <= delay.c <= r:
            raise ModelViolation(f"constant delay {delay.c} outside [0, {r}]")
    else:
        delay = DiscreteDelay(tau, n, r, flow.dim, params)
    spec = {"F": [str(e) for e in exprs], "tau": tau,
            "r": r, "freq": flow.freq.tolist(), "params": params}
    return SddeModel(n, float(r), flow, f, D2F, D3F, delay.tau, delay.d2tau,
                     name=name, params=params, spec=spec)


# ---------------------------------------------------------------------------
# trajectories

class Trajectory:
    """Dense solution on ``[-r, horizon]`` started from ``(theta0, x)``."""

    def __init__(self, model, theta0: Phase, x: Segment, dense: DenseSolution,
                 taus, T_requested, blown_up=False):
        self.model = model
        self.theta0 = theta0
        self.x = x
        self.dense = dense
        self.taus = np.asarray(taus, dtype=float)
        self.T_requested = float(T_requested)
        self.blown_up = bool(blown_up)

    @property
    def horizon(self) -> float:
        return self.dense.t_last

    @property
    def times(self):
        return self.dense.arrays()[0]

    @property
    def values(self):
        return self.dense.arrays()[1]

    @property
    def derivs(self):
        return self.dense.arrays()[2]

    def y(self, t):
        if np.ndim(t):
            return np.array([self.dense.value(float(s)) for s in t])
        return self.dense.value(float(t))

    def ydot_left(self, t):
        return self.dense.slope_left(float(t))

    def segment(self, t) -> Segment:
        return self.dense.segment(t)

    def phase(self, t) -> Phase:
        return self.model.driving.advance(self.theta0, t)

    def residuals(self):
        """``|y'(t_i) - F(theta0.t_i, y(t_i), y(t_i - tau_i))|`` at nodes ``t_i > 0``."""
        ts, ys, fs = self.dense.arrays()
        m = self.model
        out = np.zeros(max(ts.size - 1, 0))
        for i in range(1, ts.size):
            th = m.driving.advance_array(self.theta0.theta, ts[i])
            lag = ts[i] - self.taus[i]
            y2 = ys[i] if self.taus[i] <= _TAU_TOL else self.dense.value(lag)
            out[i - 1] = np.linalg.norm(fs[i] - m.F(th, ys[i], y2))
        return out

    def to_csv(self, path, stride: int = 1):
        ts, ys, _ = self.dense.arrays()
        n = ys.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y_{j + 1}" for j in range(n)] + ["tau_realized"])
            for i in range(0, ts.size, max(1, int(stride))):
                w.writerow([repr(float(ts[i]))] + [repr(float(v)) for v in ys[i]]
                           + [repr(float(self.taus[i]))])


class _LiveSegment:
    """The current segment ``s -> y(t + s)`` while a step is being built."""

    __slots__ = ("t", "y", "read")

    def eval(self, s):
        if s >= 0.0:
            return self.y
        return self.read(self.t + s)


def _nonlinear_rhs(model, theta0, last_tau):
    th0 = theta0.theta
    freq = model.driving.freq
    r = model.r
    F, tau_fn = model.F, model.tau
    view = _LiveSegment()

    def rhs(t, y, read):
        th = th0 + t * freq
        th = th - np.floor(th)
        view.t, view.y, view.read = t, y, read
        tau = tau_fn(th, view)
        if not (-_TAU_TOL <= tau <= r * (1 + _TAU_TOL)):
            raise ModelViolation(f"delay {tau!r} outside [0, {r}] at t={t}")
        last_tau[0] = tau
        y2 = y if tau <= _TAU_TOL else read(t - tau)
        return np.asarray(F(th, y, y2), dtype=float)

    return rhs


def _check_inputs(model, theta0, x):
    if not isinstance(theta0, Phase):
        theta0 = Phase(theta0)
    if theta0.dim != model.driving.dim:
        raise MalformedInputError(
            f"phase has dimension {theta0.dim}, driving flow has {model.driving.dim}")
    if abs(x.r - model.r) > 1e-12 * max(1.0, model.r):
        raise MalformedInputError(f"segment r={x.r} differs from model r={model.r}")
    if x.dim != model.dim:
        raise MalformedInputError(f"segment dim {x.dim} differs from model dim {model.dim}")
    return theta0


def integrate(model: SddeModel, theta0, x: Segment, T: float, ctrl: StepControl | None = None
              ) -> Trajectory:
    """Integrate on ``[0, T]``. A run exceeding ``ctrl.blowup_bound`` stops early
    and is returned with ``blown_up=True``."""
    ctrl = ctrl or StepControl()
    theta0 = _check_inputs(model, theta0, x)
    if not T > 0:
        raise MalformedInputError("T must be positive")
    h = ctrl.step(model.r)
    last_tau = [0.0]
    taus = []
    rhs = _nonlinear_rhs(model, theta0, last_tau)
    dense = DenseSolution(0.0, x)
    ok = integrate_dense(rhs, dense, float(T), h, on_node=lambda t, y, f: taus.append(last_tau[0]),
                         **ctrl.kwargs())
    return Trajectory(model, theta0, x, dense, taus, T, blown_up=not ok)


# ---------------------------------------------------------------------------
# semiflow level operations

@dataclass(frozen=True)
class CompatibilityResult:
    compatible: bool
    residual: float


def check_compatibility(model, theta, x: Segment, tol: float | None = None) -> CompatibilityResult:
    """Distance of ``(theta, x)`` from the compatibility set.

    The default ``tol`` is ``1e-6 * (1 + norm_W(x))``.
    """
    th = theta.theta if isinstance(theta, Phase) else np.asarray(theta, dtype=float)
    if tol is None:
        tol = 1e-6 * (1.0 + x.norm_W())
    tau = model.tau(th, x)
    if not (-_TAU_TOL <= tau <= model.r * (1 + _TAU_TOL)):
        raise ModelViolation(f"delay {tau!r} outside [0, {model.r}]")
    y1 = x.eval(0.0)
    y2 = x.eval(-min(max(tau, 0.0), model.r))
    res = float(np.linalg.norm(x.eval_deriv(0.0) - model.F(th, y1, y2)))
    return CompatibilityResult(res <= tol, res)


def semiflow_map(model, theta0, x: Segment, t: float, ctrl: StepControl | None = None,
                 traj: Trajectory | None = None):
    """``Pi(t, theta0, x) = (theta0.t, u(t))``; integrates if no ``traj`` is given."""
    theta0 = _check_inputs(model, theta0, x)
    if t == 0:
        return theta0, x
    if traj is None:
        traj = integrate(model, theta0, x, t, ctrl)
    if t > traj.horizon + 1e-12 * max(1.0, t):
        raise BlowUpError(f"solution left the blow-up bound at t={traj.horizon} < {t}",
                          t_blowup=traj.horizon)
    return model.driving.advance(theta0, t), traj.segment(t)


class OrbitPoint(tuple):
    """``(phase, segment)`` pair with the sampling time attached as ``.t``."""

    def __new__(cls, phase, segment, t=0.0):
        obj = super().__new__(cls, (phase, segment))
        obj.t = float(t)
        return obj

    @property
    def phase(self):
        return self[0]

    @property
    def segment(self):
        return self[1]


def omega_limit_sample(model, theta0, x: Segment, T_transient: float, T_sample: float,
                       stride: float, ctrl: StepControl | None = None, traj=None):
    """Points ``(theta0.t, u(t))`` at ``t = T_transient + k*stride``."""
    if stride <= 0:
        raise MalformedInputError("stride must be positive")
    T = T_transient + T_sample
    if traj is None:
        traj = integrate(model, theta0, x, T, ctrl)
    if traj.blown_up or traj.horizon < T - 1e-9:
        raise BlowUpError(f"trajectory unbounded: left the bound at t={traj.horizon}",
                          t_blowup=traj.horizon)
    k_max = int(np.floor(T_sample / stride + 1e-9))
    out = []
    for k in range(k_max + 1):
        t = T_transient + k * stride
        out.append(OrbitPoint(traj.phase(t), traj.segment(t), t))
    return out


# ---------------------------------------------------------------------------
# hypothesis spot checks

def check_derivatives(model, rng=None, n_probes: int = 20, scale: float = 1.0,
                      h: float = 1e-6):
    """Finite-difference spot check of D2F, D3F and D2tau.

    Returns the largest relative mismatch for each (keys ``D2F``, ``D3F``,
    ``D2tau``) and the range of tau values seen (key ``tau_range``).
    """
    rng = np.random.default_rng(rng)
    n, r = model.dim, model.r
    errs = {"D2F": 0.0, "D3F": 0.0, "D2tau": 0.0}
    taus = []
    for _ in range(n_probes):
        th = rng.random(model.driving.dim)
        y1 = scale * rng.standard_normal(n)
        y2 = scale * rng.standard_normal(n)
        A, B = model.D2F(th, y1, y2), model.D3F(th, y1, y2)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fa = (model.F(th, y1 + e, y2) - model.F(th, y1 - e, y2)) / (2 * h)
            fb = (model.F(th, y1, y2 + e) - model.F(th, y1, y2 - e)) / (2 * h)
            errs["D2F"] = max(errs["D2F"], _rel(A[:, j], fa))
            errs["D3F"] = max(errs["D3F"], _rel(B[:, j], fb))
        mesh = np.linspace(-r, 0.0, 9)
        x = Segment(r, mesh, scale * rng.standard_normal((9, n)))
        phi = Segment(r, mesh, rng.standard_normal((9, n)))
        taus.append(model.tau(th, x))
        lin = sum(float(np.dot(w, phi.eval(s))) for s, w in model.D2tau(th, x))
        fd = (model.tau(th, x + phi * h) - model.tau(th, x - phi * h)) / (2 * h)
        errs["D2tau"] = max(errs["D2tau"], abs(lin - fd) / max(1.0, abs(lin)))
    errs["tau_range"] = (float(min(taus)), float(max(taus)))
    return errs


def _rel(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a)))))
