"""Positive PI control laws, closed-loop equilibria and reference signals.

Controllers here are pure functions of the tracking errors and the integrator
states; integrating ``dI/dt = e`` is the caller's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .moments import NormalizedPlantParams, PlantParams

__all__ = [
    "ScalarPIGains",
    "MimoPIGains",
    "Setpoint",
    "RefSegment",
    "ReferenceSignal",
    "NonUniqueEquilibriumError",
    "InadmissibleSetpointError",
    "clip",
    "positive_pi_scalar",
    "positive_pi_mimo",
    "mean_closed_loop_equilibrium",
    "mimo_closed_loop_equilibrium",
    "normalized_mean_equilibrium",
    "normalized_mimo_equilibrium",
    "evaluate_reference",
    "DEFAULT_RAMP_DURATION",
]

# duration of a reference ramp when a config does not give one
DEFAULT_RAMP_DURATION = 500.0


class NonUniqueEquilibriumError(ValueError):
    pass


class InadmissibleSetpointError(ValueError):
    pass


def _finite(name, v):
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite, got {v}")


@dataclass(frozen=True)
class ScalarPIGains:
    k1: float
    k2: float

    def __post_init__(self):
        _finite("k1", self.k1)
        _finite("k2", self.k2)


@dataclass(frozen=True)
class MimoPIGains:
    """Gains of the two-channel PI law.

    ``u1`` uses ``k1..k4`` and ``u2`` uses ``k5..k8`` on ``(e1, I1, e2, I2)``.
    """

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    k5: float = 0.0
    k6: float = 0.0
    k7: float = 0.0
    k8: float = 0.0

    def __post_init__(self):
        for i, v in enumerate(self.as_array(), start=1):
            _finite(f"k{i}", v)

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.k4, self.k5, self.k6, self.k7, self.k8])

    @property
    def coupling_determinant(self) -> float:
        """``k2*k8 - k4*k6``; zero means the integrator equilibrium is not unique."""
        return self.k2 * self.k8 - self.k4 * self.k6

    @property
    def integral_matrix(self) -> np.ndarray:
        return np.array([[self.k2, self.k4], [self.k6, self.k8]])


@dataclass(frozen=True)
class Setpoint:
    mu: float
    var: float | None = None

    def __post_init__(self):
        _finite("mu", self.mu)
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.var is not None:
            _finite("var", self.var)
            if self.var <= 0:
                raise ValueError(f"var must be > 0, got {self.var}")


def clip(x):
    """The on-off nonlinearity ``max(0, x)``; works on scalars and arrays."""
    if isinstance(x, np.ndarray):
        return np.maximum(x, 0.0)
    return x if x > 0.0 else 0.0


def positive_pi_scalar(g: ScalarPIGains, mu: float, x2: float, integral: float) -> float:
    e = mu - x2
    v = g.k1 * e + g.k2 * integral
    if math.isnan(v):
        raise ValueError("PI law evaluated to NaN")
    return clip(v)


def positive_pi_mimo(g: MimoPIGains, e1, i1, e2, i2) -> tuple:
    v1 = g.k1 * e1 + g.k2 * i1 + g.k3 * e2 + g.k4 * i2
    v2 = g.k5 * e1 + g.k6 * i1 + g.k7 * e2 + g.k8 * i2
    if math.isnan(v1) or math.isnan(v2):
        raise ValueError("PI law evaluated to NaN")
    return clip(v1), clip(v2)


def mean_closed_loop_equilibrium(plant: PlantParams, mu: float, g: ScalarPIGains) -> dict:
    """Equilibrium ``(x1, x2, u, I)`` of the mean loop driven through ``k_r``."""
    if g.k2 == 0:
        raise NonUniqueEquilibriumError("k2 = 0: the integrator equilibrium is not unique")
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    u = mu * plant.gamma_p * plant.gamma_r / plant.k_p
    return {"x1": mu * plant.gamma_p / plant.k_p, "x2": mu, "u": u, "I": u / g.k2}


def _mimo_integrals(g: MimoPIGains, u1, u2):
    if g.coupling_determinant == 0:
        raise NonUniqueEquilibriumError(
            "equilibrium not unique: k2*k8 - k4*k6 = 0"
        )
    return np.linalg.solve(g.integral_matrix, [u1, u2])


def mimo_closed_loop_equilibrium(plant: PlantParams, sp: Setpoint, g: MimoPIGains) -> dict:
    """Equilibrium of the bilinear mean/variance loop (inputs ``k_r``, ``gamma_r``).

    Only ``k_p`` and ``gamma_p`` of ``plant`` are used.
    """
    mu, var = sp.mu, sp.var
    if var is None:
        raise ValueError("setpoint needs a variance target")
    if not var > mu:
        raise InadmissibleSetpointError(f"variance target {var} must exceed mean target {mu}")
    kp, gp = plant.k_p, plant.gamma_p
    u2 = -gp + kp * mu / (var - mu)
    u1 = gp / kp * mu * u2
    i1, i2 = _mimo_integrals(g, u1, u2)
    x1 = gp * mu / kp
    return {
        "x": np.array([x1, mu, x1, gp * mu / (gp + u2), var, i1, i2]),
        "u1": u1,
        "u2": u2,
    }


def normalized_mean_equilibrium(params: NormalizedPlantParams, mu: float, g: ScalarPIGains) -> dict:
    """Equilibrium of the normalized mean loop; all normalized means equal ``mu``."""
    if g.k2 == 0:
        raise NonUniqueEquilibriumError("k2 = 0: the integrator equilibrium is not unique")
    u = params.gamma_r0 * (mu - 1.0) / params.b
    return {"x1": mu, "x2": mu, "u": u, "I": u / g.k2}


def normalized_mimo_equilibrium(params: NormalizedPlantParams, sp: Setpoint, g: MimoPIGains) -> dict:
    """Equilibrium of the normalized mean/variance loop.

    With total mRNA degradation ``gamma_r0 + u2`` the stationary normalized
    covariance is ``(gamma_r0+gamma_p) mu / (gamma_r0+gamma_p+u2)`` and the
    protein variance ``(mu + (alpha-1) x4) / alpha``; both are inverted here.
    """
    mu, var = sp.mu, sp.var
    if var is None:
        raise ValueError("setpoint needs a variance target")
    a = params.alpha
    g0, gp = params.gamma_r0, params.gamma_p
    if not var * a > mu:
        raise InadmissibleSetpointError(
            f"variance target {var} must exceed the minimal variance {mu / a}"
        )
    x4 = (a * var - mu) / (a - 1.0)
    u2 = (g0 + gp) * (mu / x4 - 1.0)
    u1 = ((g0 + u2) * mu - g0) / params.b
    i1, i2 = _mimo_integrals(g, u1, u2)
    return {"x": np.array([mu, mu, mu, x4, var, i1, i2]), "u1": u1, "u2": u2}


@dataclass(frozen=True)
class RefSegment:
    """Starting at ``start``, go to ``target`` by a jump or a linear ramp."""

    start: float
    kind: str
    target: float
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in ("step", "ramp"):
            raise ValueError(f"segment kind must be 'step' or 'ramp', got {self.kind!r}")
        if self.kind == "ramp" and not self.duration > 0:
            raise ValueError("ramp duration must be > 0")
        _finite("start", self.start)
        _finite("target", self.target)


@dataclass(frozen=True)
class ReferenceSignal:
    initial: float
    segments: tuple = field(default_factory=tuple)

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.start:
                raise ValueError("reference segments must be time-ordered")

    @classmethod
    def constant(cls, value: float) -> "ReferenceSignal":
        return cls(float(value), ())

    def breakpoints(self) -> list:
        """Times where the signal or its slope changes."""
        pts = []
        for s in self.segments:
            pts.append(s.start)
            if s.kind == "ramp":
                pts.append(s.start + s.duration)
        return sorted(set(pts))

    def plateaus(self, t_end: float) -> list:
        """``(t0, t1, value)`` intervals on which the signal is constant."""
        edges = [0.0] + [p for p in self.breakpoints() if 0.0 < p < t_end] + [t_end]
        out = []
        for a, b in zip(edges, edges[1:]):
            if b <= a:
                continue
            va = evaluate_reference(self, a)
            vb = evaluate_reference(self, math.nextafter(b, -math.inf))
            vm = evaluate_reference(self, 0.5 * (a + b))
            if va == vb == vm:
                out.append((a, b, va))
        return out

    def __call__(self, t: float) -> float:
        return evaluate_reference(self, t)


def _segment_value(s: RefSegment, base: float, t: float) -> float:
    if s.kind == "step":
        return s.target
    frac = min(1.0, (t - s.start) / s.duration)
    return base + frac * (s.target - base)


def evaluate_reference(sig: ReferenceSignal, t: float) -> float:
    # each segment starts from the signal value at its own start time
    value = sig.initial
    segs = sig.segments
    for i, s in enumerate(segs):
        if t < s.start:
            break
        nxt = segs[i + 1].start if i + 1 < len(segs) else math.inf
        value = _segment_value(s, value, min(t, nxt))
        if t < nxt:
            break
    return value
