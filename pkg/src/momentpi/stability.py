"""Closed-form stability, robustness and admissibility checks.

Mean loop (input ``k_r``): local conditions from Routh-Hurwitz on the 3x3
augmented matrix, global conditions from a Popov multiplier, and constant
input disturbance bounds.

Mean/variance loop (inputs ``k_r`` and ``gamma_r``): admissible setpoints,
the 7x7 Jacobian at the unique equilibrium, and the first-order splitting of
its double zero eigenvalue under small integral gains.

All inequalities are strict; equality counts as failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import (
    InadmissibleSetpointError,
    MimoPIGains,
    ScalarPIGains,
    Setpoint,
)
from .moments import NormalizedPlantParams, PlantParams

__all__ = [
    "STABLE_MARGIN",
    "BOUNDARY_TOL",
    "EigenvalueError",
    "MissingBoundError",
    "ParameterBox",
    "PopovCertificate",
    "JacobianReport",
    "eigenvalues",
    "is_hurwitz",
    "mean_loop_matrix",
    "local_nominal_condition",
    "local_nominal_threshold",
    "local_robust_condition",
    "global_nominal_condition",
    "global_robust_condition",
    "popov_coefficients",
    "popov_frequency_response",
    "popov_certificate",
    "disturbance_bound",
    "robust_disturbance_bound",
    "normalized_disturbance_bound",
    "coefficient_of_variation",
    "admissible_interval",
    "admissible_region_check",
    "normalized_admissible_check",
    "minimal_normalized_variance",
    "mimo_jacobian",
    "jacobian_matrix",
    "jacobian_determinant_closed_form",
    "perturbation_matrix",
    "reduced_perturbation_matrix",
    "direction_is_stabilizing",
    "universal_direction_bound",
    "direction_ratio",
]

# real parts must be below -STABLE_MARGIN to count as stable
STABLE_MARGIN = 1e-10
# |real part| below this counts as on the imaginary axis
BOUNDARY_TOL = 1e-6
MAX_EIG_DIM = 16


class EigenvalueError(RuntimeError):
    pass


class MissingBoundError(ValueError):
    pass


def eigenvalues(matrix) -> np.ndarray:
    """Full spectrum of a small dense real matrix (LAPACK ``geev``)."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_EIG_DIM:
        raise ValueError(f"matrix dimension {a.shape[0]} exceeds {MAX_EIG_DIM}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    try:
        return np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise EigenvalueError(f"eigenvalue iteration did not converge: {exc}") from exc


def is_hurwitz(matrix, margin: float = STABLE_MARGIN) -> bool:
    return bool(eigenvalues(matrix).real.max() < -margin)


@dataclass(frozen=True)
class ParameterBox:
    """Bounds on ``(k_p, gamma_p, gamma_r)``; ``None`` means unbounded."""

    kp_lo: Optional[float] = None
    kp_hi: Optional[float] = None
    gp_lo: Optional[float] = None
    gp_hi: Optional[float] = None
    gr_lo: Optional[float] = None
    gr_hi: Optional[float] = None

    def __post_init__(self):
        for name in ("kp", "gp", "gr"):
            lo, hi = getattr(self, name + "_lo"), getattr(self, name + "_hi")
            if lo is not None and not lo > 0:
                raise ValueError(f"{name}_lo must be > 0, got {lo}")
            if hi is not None and not hi > 0:
                raise ValueError(f"{name}_hi must be > 0, got {hi}")
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"{name}_lo > {name}_hi")

    @classmethod
    def around(cls, plant: PlantParams, rel: float = 0.0) -> "ParameterBox":
        """Box of relative half-width ``rel`` centred on ``plant``."""
        lo, hi = 1.0 - rel, 1.0 + rel
        return cls(plant.k_p * lo, plant.k_p * hi, plant.gamma_p * lo,
                   plant.gamma_p * hi, plant.gamma_r * lo, plant.gamma_r * hi)

    def require(self, *names) -> tuple:
        vals = []
        for n in names:
            v = getattr(self, n)
            if v is None or not math.isfinite(v):
                raise MissingBoundError(f"parameter box needs a finite {n}")
            vals.append(v)
        return tuple(vals)

    def contains(self, plant: PlantParams) -> bool:
        checks = ((plant.k_p, self.kp_lo, self.kp_hi),
                  (plant.gamma_p, self.gp_lo, self.gp_hi),
                  (plant.gamma_r, self.gr_lo, self.gr_hi))
        return all((lo is None or v >= lo) and (hi is None or v <= hi) for v, lo, hi in checks)


# ---------------------------------------------------------------- mean loop

def mean_loop_matrix(plant: PlantParams, g: ScalarPIGains) -> np.ndarray:
    """State matrix of ``(x1, x2, I)`` for the unclipped PI loop."""
    return np.array([
        [-plant.gamma_r, -g.k1, g.k2],
        [plant.k_p, -plant.gamma_p, 0.0],
        [0.0, -1.0, 0.0],
    ])


def local_nominal_threshold(plant: PlantParams, k2: float) -> float:
    """Smallest ``k1`` (exclusive) giving local stability at integral gain ``k2``."""
    gp, gr = plant.gamma_p, plant.gamma_r
    return k2 / (gp + gr) - gp * gr / plant.k_p


def local_nominal_condition(plant: PlantParams, g: ScalarPIGains) -> bool:
    return g.k2 > 0 and g.k1 > local_nominal_threshold(plant, g.k2)


def local_robust_condition(box: ParameterBox, g: ScalarPIGains) -> bool:
    kp_hi, gp_lo, gr_lo = box.require("kp_hi", "gp_lo", "gr_lo")
    # threshold is increasing in k_p and decreasing in both degradation rates
    return g.k2 > 0 and g.k1 > g.k2 / (gp_lo + gr_lo) - gr_lo * gp_lo / kp_hi


def global_nominal_condition(plant: PlantParams, g: ScalarPIGains) -> bool:
    return g.k2 > 0 and g.k1 > g.k2 / plant.gamma_p


def global_robust_condition(box: ParameterBox, g: ScalarPIGains) -> bool:
    (gp_lo,) = box.require("gp_lo")
    return g.k2 > 0 and g.k1 > g.k2 / gp_lo


@dataclass(frozen=True)
class PopovCertificate:
    q: float
    z0: float
    z1: float
    grid_min: float
    grid_points: int
    omega_range: tuple

    @property
    def grid_ok(self) -> bool:
        return self.grid_min > 0.0

    @property
    def ok(self) -> bool:
        return self.z0 > 0.0 and self.z1 > 0.0 and self.grid_ok


def popov_coefficients(plant: PlantParams, g: ScalarPIGains) -> tuple:
    """Affine forms ``z0(q) = a0 + b0 q`` and ``z1(q) = a1 + b1 q``.

    ``Z(w2) = w2**2 + z1(q) w2 + z0(q)`` is the numerator of
    ``Re[(1 + j q w) H(j w)] + 1`` with ``w2 = w**2``.
    Returns ``(a0, b0, a1, b1)``.
    """
    kp, gp, gr = plant.k_p, plant.gamma_p, plant.gamma_r
    k1, k2 = g.k1, g.k2
    a0 = gr**2 * gp**2 + kp * (gr * gp * k1 - k2 * (gr + gp))
    b0 = kp * gr * gp * k2
    a1 = gp**2 + gr**2 - kp * k1
    b1 = kp * (k1 * (gp + gr) - k2)
    return a0, b0, a1, b1


def popov_frequency_response(plant: PlantParams, g: ScalarPIGains, q: float, omega) -> np.ndarray:
    """``Re[(1 + j q w) H(j w)]`` evaluated directly from the loop transfer function."""
    s = 1j * np.asarray(omega, dtype=float)
    H = plant.k_p * (g.k1 * s + g.k2) / (s * (s + plant.gamma_r) * (s + plant.gamma_p))
    return np.real((1.0 + q * s) * H)


def _popov_q(a0, b0, a1, b1):
    # feasible set: q >= 0, q > lower, q < upper  (b0 > 0 assumed)
    lower = -a0 / b0
    upper = math.inf
    if b1 > 0:
        lower = max(lower, -a1 / b1)
    elif b1 < 0:
        upper = -a1 / b1
    elif a1 <= 0:
        return None
    if lower < 0:
        return 0.0 if upper > 0 else None
    if upper <= lower:
        return None
    if math.isinf(upper):
        return 2.0 * lower if lower > 0 else 1.0
    return 0.5 * (lower + upper)


def popov_certificate(plant: PlantParams, g: ScalarPIGains,
                      grid_points: int = 10_000, decades: float = 6.0) -> Optional[PopovCertificate]:
    """Find a Popov multiplier ``q >= 0`` making both ``z0`` and ``z1`` positive.

    With both coefficients positive, ``Z`` has no positive root (Descartes), so
    the Popov inequality holds at every frequency. The result is confirmed on a
    log-spaced frequency grid spanning ``10**+-decades * max(gamma_r, gamma_p)``.
    Returns ``None`` when no such ``q`` exists; that is not a proof of
    instability.
    """
    if not g.k2 > 0:
        raise ValueError("Popov analysis requires k2 > 0")
    a0, b0, a1, b1 = popov_coefficients(plant, g)
    q = _popov_q(a0, b0, a1, b1)
    if q is None:
        return None
    z0, z1 = a0 + b0 * q, a1 + b1 * q
    if not (z0 > 0 and z1 > 0):
        return None
    scale = max(plant.gamma_r, plant.gamma_p)
    omega = scale * np.logspace(-decades, decades, grid_points)
    F = popov_frequency_response(plant, g, q, omega)
    return PopovCertificate(q=q, z0=z0, z1=z1, grid_min=float(np.min(F + 1.0)),
                            grid_points=grid_points,
                            omega_range=(float(omega[0]), float(omega[-1])))


def disturbance_bound(plant: PlantParams, mu: float) -> float:
    """Largest constant input disturbance the clipped PI loop can reject."""
    if mu < 0:
        raise ValueError("mu must be >= 0")
    return plant.gamma_p * plant.gamma_r / plant.k_p * mu


def robust_disturbance_bound(box: ParameterBox, mu: float) -> float:
    """``gamma_p+ gamma_r+ mu / k_p-``, evaluated as stated for the uncertain case.

    Note this uses the upper degradation bounds and the lower translation
    bound, i.e. the corner that maximizes the nominal bound.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    gp_hi, gr_hi, kp_lo = box.require("gp_hi", "gr_hi", "kp_lo")
    return gp_hi * gr_hi / kp_lo * mu


def normalized_disturbance_bound(params: NormalizedPlantParams, mu: float) -> float:
    """Disturbance bound for the normalized mean loop (input gain ``b``, basal ``gamma_r0``).

    The stationary controller output is ``gamma_r0 (mu - 1) / b``; a larger
    additive disturbance would require a negative output.
    """
    return params.gamma_r0 * (mu - 1.0) / params.b


def coefficient_of_variation(plant: PlantParams, mu: float) -> float:
    if not mu > 0:
        raise ValueError("mu must be > 0")
    return math.sqrt(1.0 + plant.k_p / (plant.gamma_p + plant.gamma_r)) / math.sqrt(mu)


# ------------------------------------------------------- mean/variance loop

def admissible_interval(plant: PlantParams, mu: float) -> tuple:
    """Open interval of reachable variance targets for mean target ``mu``."""
    return mu, (1.0 + plant.k_p / plant.gamma_p) * mu


def admissible_region_check(plant: PlantParams, mu: float, var: float) -> bool:
    if not (math.isfinite(mu) and math.isfinite(var)) or not mu > 0:
        return False
    lo, hi = admissible_interval(plant, mu)
    return lo < var < hi


def normalized_admissible_check(params: NormalizedPlantParams, mu: float, var: float) -> bool:
    """Admissibility of a normalized ``(mu, var)`` target with ``u1, u2 > 0``.

    ``u2 > 0`` requires ``mu / alpha < var < mu``; ``u1 > 0`` requires the
    transcription demand ``(gamma_r0 + u2) mu`` to exceed the basal rate.
    """
    if not (math.isfinite(mu) and math.isfinite(var)) or not mu > 0:
        return False
    a = params.alpha
    if not mu / a < var < mu:
        return False
    x4 = (a * var - mu) / (a - 1.0)
    u2 = (params.gamma_r0 + params.gamma_p) * (mu / x4 - 1.0)
    return (params.gamma_r0 + u2) * mu > params.gamma_r0


def minimal_normalized_variance(params: NormalizedPlantParams, mu: float) -> float:
    if not mu > 0:
        raise ValueError("mu must be > 0")
    s = params.gamma_r0 + params.gamma_p
    return s / (s + params.k_p) * mu


def mimo_jacobian(plant: PlantParams, sp: Setpoint, g: MimoPIGains) -> np.ndarray:
    """Jacobian of the bilinear mean/variance loop at its equilibrium.

    State order ``(x1, x2, x3, x4, x5, I1, I2)``; the clip is inactive there.
    """
    mu, var = sp.mu, sp.var
    if var is None:
        raise ValueError("setpoint needs a variance target")
    d = mu - var
    if d == 0:
        raise ZeroDivisionError("variance target equals mean target")
    kp, gp = plant.k_p, plant.gamma_p
    k1, k2, k3, k4, k5, k6, k7, k8 = g.as_array()
    c = gp * mu / kp  # x1* = x3*
    r = kp * mu / d   # equals -(gamma_p + u2*)
    row_u = [-k1 + k5 * c, -k3 + k7 * c, k2 - k6 * c, k4 - k8 * c]
    e = gp * d / kp   # equals -x4*
    return np.array([
        [gp + r, row_u[0], 0.0, 0.0, row_u[1], row_u[2], row_u[3]],
        [kp, -gp, 0.0, 0.0, 0.0, 0.0, 0.0],
        [-gp - r, row_u[0], 2.0 * (gp + r), 0.0, row_u[1], row_u[2], row_u[3]],
        [0.0, -k5 * e, kp, r, -k7 * e, k6 * e, k8 * e],
        [kp, gp, 0.0, 2.0 * kp, -2.0 * gp, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0],
    ])


def jacobian_determinant_closed_form(plant: PlantParams, sp: Setpoint, g: MimoPIGains) -> float:
    kp, gp = plant.k_p, plant.gamma_p
    return 4.0 * gp * kp * g.coupling_determinant * (sp.mu * (kp + gp) - gp * sp.var)


@dataclass(frozen=True)
class JacobianReport:
    matrix: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    determinant: float
    determinant_closed_form: float
    stable: bool
    delta: float
    representative: bool
    notes: tuple = ()

    @property
    def max_real(self) -> float:
        return float(self.eigenvalues.real.max())

    @property
    def determinant_rel_error(self) -> float:
        ref = self.determinant_closed_form
        if ref == 0:
            return abs(self.determinant)
        return abs(self.determinant - ref) / abs(ref)


def jacobian_matrix(plant: PlantParams, sp: Setpoint, g: MimoPIGains) -> JacobianReport:
    """Linearize the mean/variance loop and classify its equilibrium."""
    if sp.var is not None and sp.var == sp.mu:
        raise ZeroDivisionError("variance target equals mean target (delta = 0)")
    A = mimo_jacobian(plant, sp, g)
    lam = eigenvalues(A)
    notes = []
    representative = g.coupling_determinant != 0
    if not representative:
        notes.append("zero eigenvalue, Jacobian not representative (k2*k8 - k4*k6 = 0)")
    if not admissible_region_check(plant, sp.mu, sp.var):
        notes.append("setpoint outside the admissible region")
    stable = bool(lam.real.max() < -STABLE_MARGIN)
    return JacobianReport(
        matrix=A,
        eigenvalues=lam,
        determinant=float(np.linalg.det(A)),
        determinant_closed_form=jacobian_determinant_closed_form(plant, sp, g),
        stable=stable,
        delta=sp.mu - sp.var,
        representative=representative,
        notes=tuple(notes),
    )


def _require_admissible(plant, sp):
    if sp.var is None or not admissible_region_check(plant, sp.mu, sp.var):
        lo, hi = admissible_interval(plant, sp.mu)
        raise InadmissibleSetpointError(
            f"setpoint ({sp.mu}, {sp.var}) not admissible; variance must lie in ({lo}, {hi})"
        )


def perturbation_matrix(plant: PlantParams, sp: Setpoint, d2: float, d8: float) -> np.ndarray:
    """Reduced 2x2 matrix governing the split of the double zero eigenvalue.

    For gains ``k2 = eps*d2``, ``k8 = eps*d8`` (all others zero) the two
    critical eigenvalues of the Jacobian are ``eps * eig(M) + o(eps)``.
    """
    _require_admissible(plant, sp)
    kp, gp = plant.k_p, plant.gamma_p
    mu, var = sp.mu, sp.var
    d = mu - var
    psi = d / (gp * d + kp * mu)
    return psi * np.array([
        [kp * d2 / gp, -d8 * mu],
        [kp * var * d2 / (gp * mu), d8 * (gp * d * d / (kp * mu) + mu - 2.0 * var)],
    ])


def reduced_perturbation_matrix(plant: PlantParams, sp: Setpoint, directions) -> np.ndarray:
    """Project the gain perturbation onto the zero eigenspace numerically.

    ``directions`` is a length-8 vector ``d``. Right eigenvectors of the
    zero-gain Jacobian are the two integrator axes; the left ones are computed
    and normalized against them.
    """
    _require_admissible(plant, sp)
    d = np.asarray(directions, dtype=float)
    A0 = mimo_jacobian(plant, sp, MimoPIGains())
    Ad = mimo_jacobian(plant, sp, MimoPIGains(*d)) - A0
    right = np.zeros((7, 2))
    right[5, 0] = right[6, 1] = 1.0
    lam, vecs = np.linalg.eig(A0.T)
    idx = np.argsort(np.abs(lam))[:2]
    left = vecs[:, idx].real.T
    left = np.linalg.solve(left @ right, left)
    return left @ Ad @ right


def direction_ratio(plant: PlantParams, mu: float, var: float) -> float:
    """``gamma_p (mu - var)^2 / (k_p mu var)``."""
    return plant.gamma_p * (mu - var) ** 2 / (plant.k_p * mu * var)


def direction_is_stabilizing(plant: PlantParams, sp: Setpoint, d2: float, d8: float) -> bool:
    """Whether integral directions ``(d2, d8)`` shift both zero eigenvalues left."""
    if not admissible_region_check(plant, sp.mu, sp.var):
        return False
    if not d2 * d8 < 0:
        return False
    return d2 > d8 * (2.0 - direction_ratio(plant, sp.mu, sp.var))


def universal_direction_bound(plant: PlantParams) -> float:
    """Supremum of :func:`direction_ratio` over the admissible region."""
    return plant.k_p / (plant.gamma_p + plant.k_p)
