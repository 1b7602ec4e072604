"""Linear flows on the d-torus used as the driving (base) flow."""

from __future__ import annotations

import numpy as np

from .errors import MalformedInputError

__all__ = ["Phase", "TorusFlow", "advance", "phase_distance"]


def _wrap(x):
    x = np.asarray(x, dtype=float)
    y = x - np.floor(x)
    # floor-based reduction can round up to exactly 1.0 for tiny negatives
    return np.where(y >= 1.0, 0.0, y)


class Phase:
    """A point on the torus, stored as coordinates in [0, 1)."""

    __slots__ = ("_theta",)

    def __init__(self, theta):
        th = _wrap(np.atleast_1d(np.asarray(theta, dtype=float)))
        if th.ndim != 1 or th.size == 0:
            raise MalformedInputError("phase must be a non-empty 1-d vector")
        if not np.all(np.isfinite(th)):
            raise MalformedInputError("phase coordinates must be finite")
        th.setflags(write=False)
        self._theta = th

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @property
    def dim(self) -> int:
        return self._theta.size

    def __len__(self):
        return self._theta.size

    def __eq__(self, other):
        if not isinstance(other, Phase):
            return NotImplemented
        return np.array_equal(self._theta, other._theta)

    def __hash__(self):
        return hash(self._theta.tobytes())

    def __repr__(self):
        return f"Phase({self._theta.tolist()})"

    def tolist(self):
        return self._theta.tolist()


class TorusFlow:
    """The flow ``theta -> theta + t * freq (mod 1)`` on the ``dim``-torus.

    ``minimal`` records the model builder's claim that the frequencies are
    rationally independent; it is never checked.
    """

    def __init__(self, freq, minimal: bool = False):
        f = np.atleast_1d(np.asarray(freq, dtype=float))
        if f.ndim != 1 or f.size == 0:
            raise MalformedInputError("frequency vector must be non-empty and 1-d")
        if not np.all(np.isfinite(f)):
            raise MalformedInputError("frequencies must be finite")
        f.setflags(write=False)
        self.freq = f
        self.minimal = bool(minimal)

    @property
    def dim(self) -> int:
        return self.freq.size

    def advance(self, theta: Phase, t: float) -> Phase:
        return advance(self, theta, t)

    def advance_array(self, theta: np.ndarray, t: float) -> np.ndarray:
        """Fast path on raw coordinate arrays (no validation)."""
        return _wrap(theta + t * self.freq)

    def orbit(self, theta: Phase, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return _wrap(theta.theta[None, :] + times[:, None] * self.freq[None, :])

    def __repr__(self):
        return f"TorusFlow(freq={self.freq.tolist()}, minimal={self.minimal})"


def advance(flow: TorusFlow, theta: Phase, t: float) -> Phase:
    """Flow map: ``(theta + t*freq) mod 1``. Negative ``t`` is allowed."""
    if theta.dim != flow.dim:
        raise MalformedInputError(
            f"phase has dimension {theta.dim}, flow has {flow.dim}")
    return Phase(theta.theta + float(t) * flow.freq)


def phase_distance(a, b) -> float:
    """Max over coordinates of the circular distance ``min(|d|, 1-|d|)``."""
    ta = a.theta if isinstance(a, Phase) else _wrap(np.atleast_1d(a))
    tb = b.theta if isinstance(b, Phase) else _wrap(np.atleast_1d(b))
    if ta.shape != tb.shape:
        raise MalformedInputError(
            f"phase dimension mismatch: {ta.size} vs {tb.size}")
    d = np.abs(ta - tb)
    return float(np.max(np.minimum(d, 1.0 - d)))
