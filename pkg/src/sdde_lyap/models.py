"""Preset models M0 to M4 (all with r = 1).

``th_i`` in the expressions is the angle ``2*pi*theta_i``.
"""

from __future__ import annotations

import math

from .errors import ConfigError
from .sdde import model_from_dsl

__all__ = ["PRESETS", "get_preset", "preset_names"]

GOLDEN = 0.6180339887

PRESETS = {
    # pure decay, the delay plays no role
    "m0": dict(F=["-a*y1_1"], tau=1.0, freq=[1.0], params={"a": 1.0}),
    # linear, constant delay
    "m1": dict(F=["-b*y2_1"], tau=1.0, freq=[1.0], params={"b": 1.0 / math.e}),
    # linear vector field, state-dependent delay; zero is an equilibrium
    "m2": dict(F=["-a*y1_1 - b*y2_1"], tau="0.5*(1 + tanh(x0_1))", freq=[1.0],
               params={"a": 1.0, "b": 0.25}),
    # quasi-periodically forced, state-dependent delay
    "m3": dict(F=["-(a + 0.3*sin(th2))*y1_1 - b*tanh(y2_1) + c*sin(th1)"],
               tau="0.5*(1 + 0.5*tanh(x0_1))", freq=[1.0, GOLDEN],
               params={"a": 2.0, "b": 0.5, "c": 0.5}, minimal=True),
    # two symmetric attracting branches near +-(1 + 0.3 sin th1)
    "m4": dict(F=["-y1_1*(y1_1^2 - (1 + e*sin(th1))^2)"], tau=0.5, freq=[1.0],
               params={"e": 0.3}),
}


def preset_names():
    return sorted(PRESETS)


def get_preset(name: str, params=None, freq=None):
    """Model for preset ``name``; ``params`` override the defaults."""
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError("model.preset", f"unknown preset {name!r} (have {preset_names()})")
    spec = PRESETS[key]
    p = dict(spec["params"])
    for k, v in (params or {}).items():
        if k not in p:
            raise ConfigError(f"model.params.{k}", f"preset {key} has no parameter {k!r}")
        p[k] = float(v)
    return model_from_dsl(spec["F"], spec["tau"], 1.0, spec["freq"] if freq is None else freq,
                          p, name=key, minimal=spec.get("minimal", False))
