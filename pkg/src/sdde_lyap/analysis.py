"""Sampling-based certificates built on the semiflow and its linearization:
stability probes, fiber (cover) counting, basin probes, almost-periodicity
diagnostics and the smallness profile of the linearization remainder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .driving import Phase, phase_distance
from .errors import CompatibilityError, InsufficientDataError, MalformedInputError
from .sdde import StepControl, check_compatibility, integrate
from .segment import Segment, combine
from .variational import direction_ensemble, frozen_along

__all__ = [
    "StabilityCertificate", "CoverReport", "BasinResult", "APReport",
    "stability_probe", "cover_detect", "basin_probe", "almost_periodicity_diagnostic",
    "smallness_profile", "log_linear_fit",
]


def log_linear_fit(t, v):
    """Least squares ``log v = c + slope * t``; returns ``(slope, c, R^2)``."""
    t = np.asarray(t, dtype=float)
    y = np.log(np.maximum(np.asarray(v, dtype=float), 1e-300))
    slope, c = np.polyfit(t, y, 1)
    res = y - (c + slope * t)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss if ss > 0 else 1.0
    return float(slope), float(c), r2


# ---------------------------------------------------------------------------
# stability

@dataclass
class StabilityCertificate:
    lambda_hat: float
    beta_fit: float          # C norm, worst sample
    beta_fit_W: float
    k1_fit: float
    k2_fit: float
    r2_C: float              # worst sample
    r2_W: float
    delta_used: float
    beta_target: float
    stable_C: bool
    stable_W: bool
    n_samples: int
    n_blown_up: int
    verdict: str
    n_extinct: int = 0
    per_sample: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def stability_probe(model, K_sample, delta=None, beta_target=None, T: float = 20.0,
                    lambda_hat=None, n_pert: int = 4, seed=0, ctrl: StepControl | None = None,
                    n_fit: int = 64, r2_gate: float = 0.98) -> StabilityCertificate:
    """Perturb every sampled point by ``delta * v`` and fit the decay of the
    difference segments over ``[T/4, T]`` in both norms.

    ``delta`` defaults to ``1e-3 * (1 + norm_W(xbar))`` per point and
    ``beta_target`` to ``0.8 * (-lambda_hat)``. If ``lambda_hat`` is not given
    it is estimated on the first three sample points.
    """
    K_sample = [(th, x) for th, x in K_sample]
    if not K_sample:
        raise MalformedInputError("empty sample")
    if delta is not None and not delta > 0:
        raise MalformedInputError("delta must be positive")
    for th, x in K_sample:
        comp = check_compatibility(model, th, x)
        if not comp.compatible:
            raise CompatibilityError(f"sample point not compatible: residual {comp.residual:.3e}")
    if lambda_hat is None:
        from .lyapunov import estimate_exponent
        K = max(2, int(round(T / model.r)))
        lambda_hat = estimate_exponent(model, K_sample[:3], K * model.r, 8, seed=seed,
                                       ctrl=ctrl).lambda_C
    if beta_target is None:
        beta_target = 0.8 * (-lambda_hat)
    dirs = direction_ensemble(model.r, model.dim, n_pert, seed=seed)
    times = np.linspace(T / 4, T, n_fit)
    rows = []
    blown = extinct = 0
    deltas = []
    for i, (th, xb) in enumerate(K_sample):
        d = delta if delta is not None else 1e-3 * (1.0 + xb.norm_W())
        deltas.append(d)
        ref = integrate(model, th, xb, T, ctrl)
        if ref.blown_up:
            raise MalformedInputError(f"reference point {i} blew up")
        for j, v in enumerate(dirs):
            x0 = combine(1.0, xb, d, v)
            pert = integrate(model, th, x0, T, ctrl)
            if pert.blown_up:
                blown += 1
                rows.append({"point": i, "dir": j, "blown_up": True, "extinct": False,
                             "t_blowup": pert.horizon})
                continue
            diffs = [combine(1.0, pert.segment(t), -1.0, ref.segment(t)) for t in times]
            nC = [s.norm_C() for s in diffs]
            nW = [s.norm_W() for s in diffs]
            if max(nC) == 0.0 and max(nW) == 0.0:
                # the perturbation never reached the solution: faster than any
                # exponential, nothing to fit
                extinct += 1
                rows.append({"point": i, "dir": j, "blown_up": False, "extinct": True})
                continue
            sC, cC, r2C = log_linear_fit(times, nC)
            sW, cW, r2W = log_linear_fit(times, nW)
            dv = combine(1.0, x0, -1.0, xb)
            rows.append({"point": i, "dir": j, "blown_up": False, "extinct": False,
                         "beta_C": -sC, "beta_W": -sW, "r2_C": r2C, "r2_W": r2W,
                         "k1": math.exp(cC) / dv.norm_C(), "k2": math.exp(cW) / dv.norm_W()})
    ok = [r for r in rows if not r["blown_up"] and not r["extinct"]]
    if ok:
        beta = min(r["beta_C"] for r in ok)
        beta_W = min(r["beta_W"] for r in ok)
        r2C = min(r["r2_C"] for r in ok)
        r2W = min(r["r2_W"] for r in ok)
        k1 = max(r["k1"] for r in ok)
        k2 = max(r["k2"] for r in ok)
    else:
        beta = beta_W = -math.inf
        r2C = r2W = 0.0
        k1 = k2 = math.inf
    stable_C = bool(ok) and beta > 0 and r2C >= r2_gate and beta >= beta_target
    stable_W = bool(ok) and beta_W > 0 and r2W >= r2_gate and math.isfinite(k2)
    if lambda_hat < 0 and stable_C and stable_W and blown == 0:
        verdict = "stable-consistent"
    elif lambda_hat > 0 and (blown > 0 or beta < 0):
        verdict = "unstable-consistent"
    else:
        verdict = "inconclusive"
    return StabilityCertificate(
        lambda_hat=float(lambda_hat), beta_fit=float(beta), beta_fit_W=float(beta_W),
        k1_fit=float(k1), k2_fit=float(k2), r2_C=float(r2C), r2_W=float(r2W),
        delta_used=float(max(deltas)), beta_target=float(beta_target),
        stable_C=stable_C, stable_W=stable_W, n_samples=len(rows), n_blown_up=blown,
        verdict=verdict, n_extinct=extinct, per_sample=rows)


# ---------------------------------------------------------------------------
# covers

@dataclass
class CoverReport:
    k: int
    diameters: list
    sizes: list
    min_separation: float
    return_tol: float
    cluster_tol: float
    n_samples: int
    l_estimate: int
    well_separated: bool

    def to_dict(self):
        return asdict(self)


def _runs(orbit_samples):
    samples = list(orbit_samples)
    if samples and isinstance(samples[0], list):
        return samples
    return [samples]


def cover_detect(model, theta_probe, orbit_samples, return_tol: float, cluster_tol: float
                 ) -> CoverReport:
    """Count the segments over ``theta_probe`` among the orbit samples.

    ``orbit_samples`` is one list of ``(Phase, Segment)`` or a list of such
    lists (one per initial condition). ``l_estimate`` counts groups of runs
    that share a cluster, an estimate of the number of minimal sets seen.
    """
    probe = theta_probe if isinstance(theta_probe, Phase) else Phase(theta_probe)
    picked, owner = [], []
    for run_id, run in enumerate(_runs(orbit_samples)):
        for th, x in run:
            if phase_distance(th, probe) <= return_tol:
                picked.append(x)
                owner.append(run_id)
    if not picked:
        raise InsufficientDataError(
            f"no samples within phase distance {return_tol} of {probe.tolist()}")
    N = len(picked)
    D = np.zeros((N, N))
    for i in range(N):
        for j in range(i + 1, N):
            D[i, j] = D[j, i] = combine(1.0, picked[i], -1.0, picked[j]).norm_C()
    if N == 1:
        labels = np.array([1])
    else:
        labels = fcluster(linkage(squareform(D, checks=False), "single"), cluster_tol,
                          criterion="distance")
    ks = sorted(set(labels.tolist()))
    diam, sizes = [], []
    for c in ks:
        idx = np.flatnonzero(labels == c)
        diam.append(float(D[np.ix_(idx, idx)].max()) if idx.size > 1 else 0.0)
        sizes.append(int(idx.size))
    sep = math.inf
    for a in range(len(ks)):
        for b in range(a + 1, len(ks)):
            ia = np.flatnonzero(labels == ks[a])
            ib = np.flatnonzero(labels == ks[b])
            sep = min(sep, float(D[np.ix_(ia, ib)].min()))
    # runs sharing a cluster belong to the same minimal set
    parent = list(range(len(_runs(orbit_samples))))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for c in ks:
        rs = sorted({owner[i] for i in np.flatnonzero(labels == c)})
        for other in rs[1:]:
            parent[find(other)] = find(rs[0])
    l_est = len({find(o) for o in set(owner)})
    return CoverReport(k=len(ks), diameters=diam, sizes=sizes, min_separation=sep,
                       return_tol=return_tol, cluster_tol=cluster_tol, n_samples=N,
                       l_estimate=l_est,
                       well_separated=all(d < cluster_tol / 2 for d in diam))


# ---------------------------------------------------------------------------
# basins

@dataclass
class BasinResult:
    attracted: bool
    t_entry: float | None
    rate: float | None
    final_distance: float
    phase_mismatch: float
    blown_up: bool = False

    def to_dict(self):
        return asdict(self)


def basin_probe(model, M_sample, probes, T: float, eps_match: float,
                search_horizon: float = 0.0, sample_dt: float | None = None,
                ctrl: StepControl | None = None):
    """Decide for each probe whether it is drawn onto the sampled set.

    The matched reference starts from the candidate whose phase is closest
    to the probe's: the sample points themselves, plus (if
    ``search_horizon > 0``) points along the orbit of the first sample at
    grid times up to ``search_horizon``. A probe is attracted iff the
    W-distance to the matched reference stays below ``eps_match`` over the
    final quarter of ``[0, T]``; ``t_entry`` is the first sampled time from
    which it stays below.
    """
    M_sample = [(th, x) for th, x in M_sample]
    if not M_sample:
        raise MalformedInputError("empty sample of the minimal set")
    h = StepControl().step(model.r) if ctrl is None else ctrl.step(model.r)
    dt = model.r / 4 if sample_dt is None else sample_dt
    times = np.arange(0.0, T + 1e-9, dt)
    search = None
    if search_horizon > 0:
        search = integrate(model, M_sample[0][0], M_sample[0][1], search_horizon, ctrl)
    out = []
    for th, x in probes:
        best = min(range(len(M_sample)), key=lambda j: phase_distance(M_sample[j][0], th))
        start = M_sample[best]
        mismatch = phase_distance(start[0], th)
        if search is not None and mismatch > 0:
            grid = np.arange(0.0, search.horizon + 1e-12, h)
            ph = model.driving.orbit(search.theta0, grid)
            d = np.abs(ph - th.theta[None, :])
            d = np.max(np.minimum(d, 1.0 - d), axis=1)
            k = int(np.argmin(d))
            if d[k] < mismatch:
                mismatch = float(d[k])
                start = (search.phase(grid[k]), search.segment(grid[k]))
        ref = integrate(model, start[0], start[1], T, ctrl)
        pr = integrate(model, th, x, T, ctrl)
        if pr.blown_up or ref.blown_up:
            out.append(BasinResult(False, None, None, math.inf, mismatch, blown_up=True))
            continue
        dist = np.array([combine(1.0, pr.segment(t), -1.0, ref.segment(t)).norm_W()
                         for t in times])
        tail = times >= 0.75 * T - 1e-12
        attracted = bool(np.all(dist[tail] < eps_match))
        t_entry = None
        rate = None
        if attracted:
            above = np.flatnonzero(dist >= eps_match)
            k0 = 0 if above.size == 0 else int(above[-1]) + 1
            t_entry = float(times[k0])
            sel = (times >= t_entry) & (dist > 1e-13)
            if np.count_nonzero(sel) >= 3:
                rate = -log_linear_fit(times[sel], dist[sel])[0]
        out.append(BasinResult(attracted, t_entry, rate, float(dist[-1]), float(mismatch)))
    return out


# ---------------------------------------------------------------------------
# almost periodicity

@dataclass
class APReport:
    deltas: list
    sup_diff: list         # max over candidate almost-periods, per delta
    best_diff: list        # min over candidate almost-periods, per delta
    n_candidates: list
    best_period: list
    consistent: bool       # sup_diff non-increasing as delta shrinks

    def to_dict(self):
        return asdict(self)


def almost_periodicity_diagnostic(traj, freq=None, deltas=(0.05, 0.02, 0.01),
                                  t_start: float | None = None, max_period: float | None = None
                                  ) -> APReport:
    """Compare ``y(t + P)`` with ``y(t)`` for candidate periods ``P`` on the
    step grid at which the driving phase returns within ``delta``.

    ``t_start`` (default a quarter of the horizon) discards the transient; the
    comparison window is ``[t_start, horizon - P]``; ``max_period`` defaults
    to half of what is left after the transient.
    """
    freq = traj.model.driving.freq if freq is None else np.atleast_1d(np.asarray(freq, float))
    ts, ys, _ = traj.dense.arrays()
    H = ts[-1]
    t_start = 0.25 * H if t_start is None else t_start
    max_period = 0.5 * (H - t_start) if max_period is None else max_period
    if max_period <= 0 or H - t_start - max_period <= 0:
        raise InsufficientDataError("trajectory too short for the requested window")
    h = ts[1] - ts[0]
    i0 = int(np.searchsorted(ts, t_start - 1e-12))
    kmax = int(math.floor(max_period / h + 1e-9))
    ks = np.arange(1, kmax + 1)
    P = ts[ks] - ts[0]
    ph = (P[:, None] * freq[None, :]) % 1.0
    pd = np.max(np.minimum(ph, 1.0 - ph), axis=1)
    sup_diff, best_diff, n_cand, best_p = [], [], [], []
    cache = {}
    for delta in deltas:
        cand = ks[pd < delta]
        if cand.size == 0:
            raise InsufficientDataError(f"no phase return within {delta} up to period {max_period}")
        vals = []
        for k in cand:
            if k not in cache:
                a = ys[i0:ys.shape[0] - k]
                b = ys[i0 + k:]
                cache[k] = float(np.max(np.linalg.norm(b - a, axis=1)))
            vals.append(cache[k])
        vals = np.array(vals)
        sup_diff.append(float(vals.max()))
        best_diff.append(float(vals.min()))
        n_cand.append(int(cand.size))
        best_p.append(float(ts[cand[int(np.argmin(vals))]] - ts[0]))
    consistent = all(sup_diff[i + 1] <= sup_diff[i] for i in range(len(sup_diff) - 1))
    return APReport(list(map(float, deltas)), sup_diff, best_diff, n_cand, best_p, consistent)


# ---------------------------------------------------------------------------
# smallness of the linearization error along perturbed orbits

def smallness_profile(model, theta, xbar: Segment, v: Segment, deltas, T: float,
                      sample_dt: float | None = None, ctrl: StepControl | None = None,
                      min_diff: float = 1e-7):
    """For each ``delta`` run ``x = xbar + delta v`` next to ``xbar`` and return,
    as ratios to ``||u(t) - ubar(t)||_C``:

    * ``bracket``: ``|ybar(t - tau(u)) - ybar(t - tau(ubar)) + ybar'(t - tau(ubar)) D2tau(ubar)(u - ubar)|``
    * ``lagdiff``: ``|ytilde(t - tau(u)) - ytilde(t - tau(ubar))|`` with ``ytilde = y - ybar``
    * ``g``: the linearization remainder

    each split into ``t`` in ``[0, r]`` (keys ``*_early``) and ``[r, T]``.
    Times where ``||u(t) - ubar(t)||_C < min_diff * (1 + ||ubar(t)||_C)`` are
    skipped: there the ratios only measure rounding error.
    """
    r = model.r
    dt = r / 8 if sample_dt is None else sample_dt
    times = np.arange(dt, T + 1e-9, dt)
    ref = integrate(model, theta, xbar, T, ctrl)
    out = {"deltas": [], "bracket": [], "lagdiff": [], "g": [], "lagdiff_early": [],
           "g_early": [], "D3F_sup": 0.0, "n_skipped": 0}
    d3_sup = 0.0
    skipped = 0
    for delta in deltas:
        pert = integrate(model, theta, combine(1.0, xbar, delta, v), T, ctrl)
        if pert.blown_up:
            raise MalformedInputError(f"perturbed run blew up at delta={delta}")
        rec = {"bracket": [0.0, 0.0], "lagdiff": [0.0, 0.0], "g": [0.0, 0.0]}
        for t in times:
            u = pert.segment(t)
            ub = ref.segment(t)
            diff = combine(1.0, u, -1.0, ub)
            nd = diff.norm_C()
            if nd < min_diff * (1.0 + ub.norm_C()):
                skipped += 1
                continue
            L = frozen_along(ref, float(t))
            d3_sup = max(d3_sup, float(np.linalg.norm(L.B, 2)))
            th = L.theta
            tau_u = model.tau(th, u)
            tau_b = L.tau
            yb = ref.dense
            ell = sum(float(np.dot(w, diff.eval(s))) for s, w in L.ell)
            br = yb.value(t - tau_u) - yb.value(t - tau_b) + L.d * ell
            yt_u = pert.dense.value(t - tau_u) - yb.value(t - tau_u)
            yt_b = pert.dense.value(t - tau_b) - yb.value(t - tau_b)
            f_u = model.F(th, u.eval(0.0), u.eval(-tau_u))
            f_b = model.F(th, ub.eval(0.0), ub.eval(-tau_b))
            g = f_u - f_b - L.apply(diff)
            slot = 0 if t <= r + 1e-12 else 1
            for key, val in (("bracket", br), ("lagdiff", yt_u - yt_b), ("g", g)):
                rec[key][slot] = max(rec[key][slot], float(np.linalg.norm(val)) / nd)
        out["deltas"].append(float(delta))
        out["bracket"].append(rec["bracket"][1])
        out["lagdiff"].append(rec["lagdiff"][1])
        out["g"].append(rec["g"][1])
        out["lagdiff_early"].append(rec["lagdiff"][0])
        out["g_early"].append(rec["g"][0])
    out["D3F_sup"] = d3_sup
    out["n_skipped"] = skipped
    return out
