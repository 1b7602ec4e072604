"""Upper Lyapunov exponent estimates in the C and W norms.

Every direction is propagated window by window; at each window end it is
rescaled to unit norm (in the norm under study) and the logarithm of the
scale factor is recorded. Both norms are tracked on the same run: the
cumulative logs give ``log ||w(t_k)||`` in either norm exactly, whatever
norm was used for rescaling.
"""

from __future__ import annotations

import cmath
import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, CompatibilityError, ConvergenceError, MalformedInputError, ProvenanceError
from .sdde import StepControl, check_compatibility, integrate
from .segment import Segment
from .variational import (batch_norms, direction_ensemble, estimate_C0, integrate_variational,
                          scale_batch, stack_directions)

__all__ = ["ExponentReport", "estimate_exponent", "characteristic_root_oracle",
           "exponent_norm_equality_check", "base_point_digest"]


@dataclass
class ExponentReport:
    norm: str
    lambda_C: float
    lambda_W: float
    T: float
    window: float
    n_dirs: int
    n_points: int
    tail_windows: int
    seed: object
    digest: str
    C0_hat: float
    Cr_hat: float
    per_point_C: list
    per_point_W: list
    per_point_full_C: list
    log_growth: np.ndarray = field(repr=False)   # (points, dirs, windows), norm under study
    cum_log_C: np.ndarray = field(repr=False)    # (points, dirs, windows + 1)
    cum_log_W: np.ndarray = field(repr=False)
    bound_check: dict = field(default_factory=dict)
    ineq_i: dict = field(default_factory=dict)
    per_point_shift_C: list | None = None
    per_point_shift_W: list | None = None
    n_extinct: int = 0   # directions that vanished exactly (log norm -inf)

    @property
    def lambda_hat(self) -> float:
        return self.lambda_C if self.norm == "C" else self.lambda_W

    @property
    def norm_gap(self) -> float:
        return abs(self.lambda_C - self.lambda_W)

    def to_dict(self) -> dict:
        return {
            "norm": self.norm,
            "lambda_hat": self.lambda_hat,
            "lambda_C": self.lambda_C,
            "lambda_W": self.lambda_W,
            "norm_gap": self.norm_gap,
            "T": self.T,
            "window": self.window,
            "n_dirs": self.n_dirs,
            "n_points": self.n_points,
            "tail_windows": self.tail_windows,
            "seed": self.seed,
            "digest": self.digest,
            "C0_hat": self.C0_hat,
            "Cr_hat": self.Cr_hat,
            "per_point_C": self.per_point_C,
            "per_point_W": self.per_point_W,
            "per_point_full_C": self.per_point_full_C,
            "per_point_shift_C": self.per_point_shift_C,
            "per_point_shift_W": self.per_point_shift_W,
            "bound_check": self.bound_check,
            "ineq_i": self.ineq_i,
            "n_extinct": self.n_extinct,
        }

    def write_windows_csv(self, path):
        P, M, K = self.log_growth.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id", "dir_id", "window_idx", "log_growth"])
            for p in range(P):
                for j in range(M):
                    for k in range(K):
                        w.writerow([p, j, k, repr(float(self.log_growth[p, j, k]))])


def base_point_digest(base_points, seed, n_dirs) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([repr(seed), int(n_dirs)]).encode())
    for th, x in base_points:
        h.update(np.asarray(th.theta, dtype=float).tobytes())
        h.update(x.mesh.tobytes())
        h.update(x.values.tobytes())
    return h.hexdigest()[:16]


def _run_point(model, theta, x, dirs_batch, m, K, window, norm, ctrl, with_shift):
    r = model.r
    comp = check_compatibility(model, theta, x)
    if not comp.compatible:
        raise CompatibilityError(
            f"base point fails the compatibility gate: residual {comp.residual:.3e}")
    extra = r if with_shift else 0.0
    T = K * window
    ref = integrate(model, theta, x, T + extra, ctrl)
    if ref.blown_up:
        raise BlowUpError(f"reference blew up at t={ref.horizon}", t_blowup=ref.horizon)
    C0 = estimate_C0(ref, 0.0, T + extra)
    out = _propagate(model, ref, dirs_batch, m, K, window, norm, ctrl, 0.0, C0)
    if with_shift:
        out["shift"] = _propagate(model, ref, dirs_batch, m, K, window, norm, ctrl, r, C0)
    out["C0"] = C0
    return out


def _propagate(model, ref, batch, m, K, window, norm, ctrl, t0, C0):
    r = model.r
    nC, nW = batch_norms(batch, m)
    scale = nC if norm == "C" else nW
    if np.any(scale <= 0):
        raise MalformedInputError("zero direction in the ensemble")
    cur = scale_batch(batch, m, 1.0 / scale)
    offset = np.zeros(m)  # log of the accumulated rescaling
    cumC = np.zeros((m, K + 1))
    cumW = np.zeros((m, K + 1))
    c0, w0 = batch_norms(cur, m)
    cumC[:, 0] = np.log(c0)
    cumW[:, 0] = np.log(w0)
    Cr = 0.0
    n_i = v_i = 0
    worst_i = 0.0
    for k in range(K):
        lin = integrate_variational(model, ref, cur, window, t0=t0 + k * window, ctrl=ctrl,
                                    check=False)
        if k == 0:
            _, wr = lin.norms(r)
            Cr = float(np.max(wr / c0))
        end = lin.segment(window)
        eC, eW = batch_norms(end, m)
        with np.errstate(divide="ignore"):
            # a direction that vanishes exactly keeps log norm -inf from then on
            cumC[:, k + 1] = offset + np.log(eC)
            cumW[:, k + 1] = offset + np.log(eW)
        # smoothing inequality at the window end (t >= r)
        sup_c = lin.window_sup_C(window, 2 * r)
        ratio = np.where(sup_c > 0, eW / ((1.0 + C0) * np.where(sup_c > 0, sup_c, 1.0)),
                         np.where(eW > 0, np.inf, 0.0))
        n_i += m
        v_i += int(np.sum(ratio > 1.0 + 1e-6))
        worst_i = max(worst_i, float(np.max(ratio)))
        s = eC if norm == "C" else eW
        dead = s == 0
        with np.errstate(divide="ignore"):
            offset = offset + np.log(s)
        cur = scale_batch(end, m, 1.0 / np.where(dead, 1.0, s))
    return {"cumC": cumC, "cumW": cumW, "Cr": Cr,
            "ineq_i": {"n_checked": n_i, "violations": v_i, "worst_ratio": worst_i}}


def _tail_rates(cum, Kt, window):
    with np.errstate(invalid="ignore"):
        rate = (cum[..., -1] - cum[..., -1 - Kt]) / (Kt * window)
    # -inf - (-inf): the direction had already died out
    return np.where(np.isnan(rate), -np.inf, rate)


def estimate_exponent(model, base_points, T: float, ensemble=32, window: float | None = None,
                      norm: str = "C", seed=0, ctrl: StepControl | None = None,
                      with_shift: bool = False, margin: float = 0.05, workers: int = 1
                      ) -> ExponentReport:
    """Estimate the upper exponent over ``base_points`` (list of ``(Phase, Segment)``).

    ``ensemble`` is a number of seeded random directions or an explicit list
    of segments. With ``with_shift`` the same directions are also started at
    ``Pi(r, .)`` of every base point.
    """
    if norm not in ("C", "W"):
        raise MalformedInputError(f"norm must be 'C' or 'W', got {norm!r}")
    r = model.r
    window = r if window is None else float(window)
    if window < r - 1e-12:
        raise MalformedInputError(f"window {window} shorter than r={r}")
    K = int(round(T / window))
    if K < 2 or abs(K * window - T) > 1e-9 * max(1.0, T):
        raise MalformedInputError(f"T={T} is not a multiple (>= 2) of the window {window}")
    base_points = [(th, x) for th, x in base_points]
    if not base_points:
        raise MalformedInputError("no base points")
    if isinstance(ensemble, int):
        dirs = direction_ensemble(r, model.dim, ensemble, seed=seed)
    else:
        dirs = list(ensemble)
    m = len(dirs)
    batch = stack_directions(dirs)

    def job(p):
        th, x = p
        return _run_point(model, th, x, batch, m, K, window, norm, ctrl, with_shift)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, base_points))
    else:
        results = [job(p) for p in base_points]

    Kt = int(math.ceil(T / (2 * window)))
    cumC = np.stack([res["cumC"] for res in results])
    cumW = np.stack([res["cumW"] for res in results])
    rC = _tail_rates(cumC, Kt, window)
    rW = _tail_rates(cumW, Kt, window)
    cum = cumC if norm == "C" else cumW
    with np.errstate(invalid="ignore"):
        log_growth = np.diff(cum, axis=-1)
    log_growth = np.where(np.isnan(log_growth), -np.inf, log_growth)
    n_extinct = int(np.sum(np.isneginf(cum[..., -1])))

    # estimated global bound: fit k_mu on the first half, verify on all windows
    lam = float(np.max(rC if norm == "C" else rW))
    mu = lam + margin
    t = window * np.arange(K + 1)
    half = K // 2
    if math.isfinite(lam):
        excess = cum - cum[..., :1] - mu * t  # -inf for extinct directions
        log_k = max(0.0, float(np.max(excess[..., :half + 1])))
        viol = int(np.sum(excess > log_k + 1e-9))
    else:
        excess, log_k, viol = cum, 0.0, 0   # every direction died out
    bound = {"mu": mu, "margin": margin, "k_mu": float(math.exp(log_k)),
             "fit_windows": half + 1, "n_checked": int(excess.size), "violations": viol}

    ineq = {"n_checked": sum(res["ineq_i"]["n_checked"] for res in results),
            "violations": sum(res["ineq_i"]["violations"] for res in results),
            "worst_ratio": max(res["ineq_i"]["worst_ratio"] for res in results)}

    shiftC = shiftW = None
    if with_shift:
        shiftC = [float(np.max(_tail_rates(res["shift"]["cumC"], Kt, window))) for res in results]
        shiftW = [float(np.max(_tail_rates(res["shift"]["cumW"], Kt, window))) for res in results]

    return ExponentReport(
        norm=norm,
        lambda_C=float(np.max(rC)),
        lambda_W=float(np.max(rW)),
        T=float(T), window=window, n_dirs=m, n_points=len(base_points), tail_windows=Kt,
        seed=seed if isinstance(seed, (int, str)) or seed is None else repr(seed),
        digest=base_point_digest(base_points, seed, m),
        C0_hat=max(res["C0"] for res in results),
        Cr_hat=max(res["Cr"] for res in results),
        per_point_C=[float(v) for v in np.max(rC, axis=1)],
        per_point_W=[float(v) for v in np.max(rW, axis=1)],
        per_point_full_C=[float(v) for v in np.max((cumC[..., -1] - cumC[..., 0]) / T, axis=1)],
        log_growth=log_growth, cum_log_C=cumC, cum_log_W=cumW,
        bound_check=bound, ineq_i=ineq,
        per_point_shift_C=shiftC, per_point_shift_W=shiftW, n_extinct=n_extinct,
    )


def exponent_norm_equality_check(report_C: ExponentReport, report_W: ExponentReport,
                                 tol: float) -> bool:
    """``|lambda_C - lambda_W| <= tol`` plus the per-point one-sided versions.

    Per point: ``lambda_W <= lambda_C + tol`` and, when the W report carries
    exponents started at ``Pi(r, .)``, ``lambda_C <= lambda_W(shifted) + tol``.
    """
    if report_C.seed != report_W.seed or report_C.digest != report_W.digest:
        raise ProvenanceError(
            f"reports differ in provenance: seed {report_C.seed!r} vs {report_W.seed!r}, "
            f"digest {report_C.digest} vs {report_W.digest}")
    ok = abs(report_C.lambda_C - report_W.lambda_W) <= tol
    for lc, lw in zip(report_C.per_point_C, report_W.per_point_W):
        ok = ok and lw <= lc + tol
    if report_W.per_point_shift_W is not None:
        for lc, lws in zip(report_C.per_point_C, report_W.per_point_shift_W):
            ok = ok and lc <= lws + tol
    return bool(ok)


# ---------------------------------------------------------------------------
# characteristic roots of z' = -a z(t) - b z(t - tau)

def characteristic_root_oracle(a: float, b: float, tau: float, n_re: int = 16,
                               n_im: int = 41) -> complex:
    """Rightmost root of ``s + a + b exp(-s tau) = 0`` (returned with Im >= 0).

    Newton iteration from a grid of seeds; near a multiple root the iteration
    switches to Newton on ``f / f'``.
    """
    if not tau > 0:
        raise MalformedInputError("tau must be positive")
    roots = []
    for re in np.linspace(-10.0 / tau, 5.0 / tau, n_re):
        for im in np.linspace(0.0, 20.0 * math.pi / tau, n_im):
            s = _newton(complex(re, im), a, b, tau)
            if s is not None:
                roots.append(complex(s.real, abs(s.imag)))
    if not roots:
        raise ConvergenceError("Newton iteration failed from every seed")
    best = max(roots, key=lambda s: (round(s.real, 9), -s.imag))
    return best


def _newton(s, a, b, tau, maxiter=200):
    for _ in range(maxiter):
        e = cmath.exp(-s * tau)
        f = s + a + b * e
        fp = 1.0 - b * tau * e
        fpp = b * tau * tau * e
        if abs(fp) < 1e-4:
            # Newton on f/f' keeps quadratic convergence at double roots
            den = fp * fp - f * fpp
            if den == 0:
                return None
            step = f * fp / den
        else:
            step = f / fp
        s = s - step
        if not (abs(s.real) < 1e6 and abs(s.imag) < 1e6):
            return None
        if abs(step) <= 1e-15 * (1.0 + abs(s)):
            break
    e = cmath.exp(-s * tau)
    if abs(s + a + b * e) > 1e-9 * (1.0 + abs(s)):
        return None
    return s
