"""Deterministic integration of open- and closed-loop moment systems.

The clip ``max(0, .)`` is evaluated inside the right-hand side. Integration is
restarted at every reference or disturbance breakpoint so the adaptive
stepper never straddles a jump.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from .control import (
    InadmissibleSetpointError,
    MimoPIGains,
    ReferenceSignal,
    ScalarPIGains,
    Setpoint,
    clip,
    mimo_closed_loop_equilibrium,
    normalized_mimo_equilibrium,
)
from .moments import (
    MomentODE,
    NormalizedPlantParams,
    PlantParams,
    build_affine_moment_system,
    gene_expression_network,
    normalized_model,
)
from .stability import admissible_interval, admissible_region_check, normalized_admissible_check

__all__ = [
    "SolverSettings",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "simulate_mean_control",
    "simulate_mean_var_control",
    "plateau_report",
    "read_trajectory_csv",
]

Signal = Union[float, ReferenceSignal]


class IntegrationError(RuntimeError):
    """Step size collapsed (typically stiffness); carries the failure time."""

    def __init__(self, t: float, message: str):
        super().__init__(f"integration failed at t={t!r}: {message}")
        self.t = t


@dataclass(frozen=True)
class SolverSettings:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    n_points: int = 2000
    dt_out: Optional[float] = None
    method: str = "DOP853"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be > 0")
        if not self.max_step > 0:
            raise ValueError("max_step must be > 0")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.dt_out is not None and not self.dt_out > 0:
            raise ValueError("dt_out must be > 0")

    def grid(self, t0: float, t1: float) -> np.ndarray:
        if self.dt_out is not None:
            n = int(math.floor((t1 - t0) / self.dt_out + 1e-9))
            g = t0 + self.dt_out * np.arange(n + 1)
            return g if g[-1] == t1 else np.append(g, t1)
        return np.linspace(t0, t1, self.n_points)


@dataclass
class Trajectory:
    """Sampled solution: ``data[:, j]`` is column ``names[j]`` at times ``t``."""

    t: np.ndarray
    data: np.ndarray
    names: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.data = np.asarray(self.data, dtype=float).reshape(len(self.t), len(self.names))
        self.names = tuple(self.names)
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("time grid must be strictly increasing")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __len__(self):
        return len(self.t)

    @property
    def input_names(self) -> tuple:
        return tuple(n for n in self.names if n.startswith("u"))

    def final(self) -> dict:
        return dict(zip(self.names, self.data[-1]))

    def at(self, time: float) -> dict:
        """Row nearest to ``time``."""
        i = int(np.argmin(np.abs(self.t - time)))
        return dict(zip(self.names, self.data[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + self.names)
            for ti, row in zip(self.t, self.data):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    arr = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return Trajectory(arr[:, 0], arr[:, 1:], tuple(header[1:]))


def _as_signal(v: Signal) -> ReferenceSignal:
    return v if isinstance(v, ReferenceSignal) else ReferenceSignal.constant(float(v))


def _solve(fun, x0, t_span, settings: SolverSettings, breakpoints=()):
    """Piecewise ``solve_ivp`` on ``settings.grid``; returns ``(t, X)``."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    grid = settings.grid(t0, t1)
    cuts = [t0] + sorted(b for b in set(breakpoints) if t0 < b < t1) + [t1]
    out = np.empty((len(grid), len(x0)))
    x = x0
    for a, b in zip(cuts, cuts[1:]):
        last = b == t1
        mask = (grid >= a) & ((grid <= b) if last else (grid < b))
        t_eval = grid[mask]
        if not last:
            t_eval = np.append(t_eval, b)
        sol = solve_ivp(fun, (a, b), x, method=settings.method, rtol=settings.rtol,
                        atol=settings.atol, max_step=settings.max_step, t_eval=t_eval)
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if sol.t.size else a
            raise IntegrationError(t_fail, sol.message)
        if last:
            out[mask] = sol.y.T
        else:
            out[mask] = sol.y[:, :-1].T
            x = sol.y[:, -1]
    return grid, out


def integrate(ode: MomentODE, x0, t_span, settings: SolverSettings = SolverSettings(),
              inputs: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
              breakpoints=()) -> Trajectory:
    """Integrate a moment system, optionally under open-loop inputs ``u(t, x)``."""
    if ode.n_inputs and inputs is None:
        zero = np.zeros(ode.n_inputs)
        inputs = lambda t, x: zero  # noqa: E731

    if inputs is None:
        fun = lambda t, x: ode.rhs(t, x, None)  # noqa: E731
    else:
        fun = lambda t, x: ode.rhs(t, x, inputs(t, x))  # noqa: E731

    t, X = _solve(fun, x0, t_span, settings, breakpoints)
    names = tuple(f"x{i + 1}" for i in range(ode.dim))
    if inputs is not None:
        U = np.array([np.atleast_1d(inputs(ti, xi)) for ti, xi in zip(t, X)])
        X = np.hstack([X, U])
        names += tuple(f"u{i + 1}" for i in range(U.shape[1]))
    return Trajectory(t, X, names, {"settings": asdict(settings)})


def _plant_input_matrices(plant: PlantParams):
    # gene expression moments are A x + B k_r
    A = build_affine_moment_system(gene_expression_network(replace(plant, k_r=0.0))).A
    B = build_affine_moment_system(gene_expression_network(replace(plant, k_r=1.0))).b
    return np.array(A), np.array(B)


def simulate_mean_control(plant: Union[PlantParams, NormalizedPlantParams], gains: ScalarPIGains,
                          reference: Signal, disturbance: Signal = 0.0, x0=None,
                          t_span=(0.0, 1000.0),
                          settings: SolverSettings = SolverSettings()) -> Trajectory:
    """Protein-mean PI loop acting on transcription.

    The plant receives ``clip(k1 e + k2 I) + disturbance``; ``dI/dt = e`` with
    ``e = mu(t) - x2``. State ``(x1..x5, I1)``; default ``x0`` is the
    uncontrolled basal state (zeros for ``PlantParams``, ones for the
    normalized model) with a zero integrator.
    """
    ref = _as_signal(reference)
    dist = _as_signal(disturbance)
    k1, k2 = gains.k1, gains.k2

    if isinstance(plant, NormalizedPlantParams):
        nrhs = normalized_model(plant).rhs

        def plant_rhs(t, x, u):
            return nrhs(t, x, (u, 0.0))

        default_x0 = np.r_[np.ones(5), 0.0]
    else:
        A, B = _plant_input_matrices(plant)

        def plant_rhs(t, x, u):
            return A @ x + B * u

        default_x0 = np.zeros(6)

    def controller(t, z):
        return clip(k1 * (ref(t) - z[1]) + k2 * z[5])

    def fun(t, z):
        u = controller(t, z)
        dz = np.empty(6)
        dz[:5] = plant_rhs(t, z[:5], u + dist(t))
        dz[5] = ref(t) - z[1]
        return dz

    z0 = default_x0 if x0 is None else np.asarray(x0, dtype=float)
    if z0.shape != (6,):
        raise ValueError("mean-control state is (x1..x5, I1)")
    bps = set(ref.breakpoints()) | set(dist.breakpoints())
    t, Z = _solve(fun, z0, t_span, settings, bps)
    u = np.array([controller(ti, zi) for ti, zi in zip(t, Z)])
    mu = np.array([ref(ti) for ti in t])
    data = np.column_stack([Z, u, mu])
    names = ("x1", "x2", "x3", "x4", "x5", "I1", "u1", "ref_mu")
    meta = {"kind": "mean", "plant": asdict(plant), "gains": asdict(gains),
            "settings": asdict(settings),
            "disturbance": [dist(ti) for ti in (t[0], t[-1])]}
    return Trajectory(t, data, names, meta)


def _check_mimo_refs(plant, mu_ref: ReferenceSignal, var_ref: ReferenceSignal, times):
    normalized = isinstance(plant, NormalizedPlantParams)
    for ti in times:
        mu, var = mu_ref(ti), var_ref(ti)
        ok = (normalized_admissible_check(plant, mu, var) if normalized
              else admissible_region_check(plant, mu, var))
        if not ok:
            if normalized:
                hint = f"need {mu / plant.alpha:.6g} < var < {mu:.6g} with positive inputs"
            else:
                lo, hi = admissible_interval(plant, mu)
                hint = f"need {lo:.6g} < var < {hi:.6g}"
            raise InadmissibleSetpointError(
                f"reference (mu={mu:.6g}, var={var:.6g}) at t={ti:.6g} is not admissible; {hint}"
            )


def simulate_mean_var_control(plant: Union[PlantParams, NormalizedPlantParams], gains: MimoPIGains,
                              refs: Sequence[Signal], x0=None, t_span=(0.0, 1000.0),
                              settings: SolverSettings = SolverSettings()) -> Trajectory:
    """Mean/variance loop with inputs transcription (``u1``) and mRNA decay (``u2``).

    For ``PlantParams`` the plant is the bilinear system with ``k_r = u1`` and
    ``gamma_r = u2``; for the normalized model ``u1`` and ``u2`` enter through
    ``gamma_r0 + b u1`` and ``gamma_r0 + u2``. Default ``x0`` is the
    closed-loop equilibrium for the initial references.
    """
    mu_ref, var_ref = (_as_signal(r) for r in refs)
    bps = sorted(set(mu_ref.breakpoints()) | set(var_ref.breakpoints()))
    t0, t1 = float(t_span[0]), float(t_span[1])
    _check_mimo_refs(plant, mu_ref, var_ref, [t0] + [b for b in bps if t0 <= b <= t1]
                     + list(settings.grid(t0, t1)))
    k = gains.as_array()

    if isinstance(plant, NormalizedPlantParams):
        nrhs = normalized_model(plant).rhs

        def plant_rhs(x, u1, u2):
            return nrhs(0.0, x, (u1, u2))

        eq = normalized_mimo_equilibrium
    else:
        kp, gp = plant.k_p, plant.gamma_p

        def plant_rhs(x, u1, u2):
            x1, x2, x3, x4, x5 = x
            return np.array([
                -u2 * x1 + u1,
                kp * x1 - gp * x2,
                u2 * x1 - 2.0 * u2 * x3 + u1,
                kp * x3 - gp * x4 - u2 * x4,
                kp * x1 + gp * x2 + 2.0 * kp * x4 - 2.0 * gp * x5,
            ])

        eq = mimo_closed_loop_equilibrium

    def controller(t, z):
        e1 = mu_ref(t) - z[1]
        e2 = var_ref(t) - z[4]
        u1 = clip(k[0] * e1 + k[1] * z[5] + k[2] * e2 + k[3] * z[6])
        u2 = clip(k[4] * e1 + k[5] * z[5] + k[6] * e2 + k[7] * z[6])
        return u1, u2, e1, e2

    def fun(t, z):
        u1, u2, e1, e2 = controller(t, z)
        dz = np.empty(7)
        dz[:5] = plant_rhs(z[:5], u1, u2)
        dz[5] = e1
        dz[6] = e2
        return dz

    if x0 is None:
        z0 = eq(plant, Setpoint(mu_ref(t0), var_ref(t0)), gains)["x"]
    else:
        z0 = np.asarray(x0, dtype=float)
    if z0.shape != (7,):
        raise ValueError("mean/variance state is (x1..x5, I1, I2)")
    t, Z = _solve(fun, z0, (t0, t1), settings, bps)
    U = np.array([controller(ti, zi)[:2] for ti, zi in zip(t, Z)])
    R = np.array([(mu_ref(ti), var_ref(ti)) for ti in t])
    names = ("x1", "x2", "x3", "x4", "x5", "I1", "I2", "u1", "u2", "ref_mu", "ref_var")
    meta = {"kind": "mean_var", "plant": asdict(plant), "gains": asdict(gains),
            "settings": asdict(settings)}
    return Trajectory(t, np.column_stack([Z, U, R]), names, meta)


def _split(plateaus, cuts):
    out = []
    for a, b, v in plateaus:
        edges = [a] + sorted(c for c in set(cuts) if a < c < b) + [b]
        out += [(lo, hi, v) for lo, hi in zip(edges, edges[1:])]
    return out


def plateau_report(traj: Trajectory, reference: ReferenceSignal, column: str,
                   extra_breakpoints=()) -> list:
    """Relative tracking error at the end of every constant stretch of ``reference``.

    Stretches are also cut at ``extra_breakpoints`` (e.g. disturbance steps).
    """
    rows = []
    for a, b, target in _split(reference.plateaus(float(traj.t[-1])), extra_breakpoints):
        i = int(np.searchsorted(traj.t, b, side="right")) - 1
        if i < 0 or traj.t[i] < a:
            continue
        value = float(traj[column][i])
        err = abs(value - target) / abs(target) if target != 0 else abs(value)
        rows.append({"t_start": a, "t_end": b, "target": target, "value": value,
                     "t_sample": float(traj.t[i]), "rel_error": err})
    return rows
