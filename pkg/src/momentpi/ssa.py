"""Exact stochastic simulation (Gillespie direct method) and ensemble statistics.

Random streams
--------------
Trajectory ``i`` of an ensemble with master seed ``s`` draws from
``numpy.random.default_rng(SeedSequence(s, spawn_key=(i,)))``. The derivation
depends only on ``(s, i)``, so results do not depend on thread count or
backend. Uniforms are drawn in fixed blocks, two per attempted event. An
attempt that overshoots a grid time is discarded, which is exact because
waiting times are memoryless but means the path depends on the grid: with a
single grid time ``t``, row ``i`` equals the end of
``simulate_ssa(..., t_end=t, seed=s, spawn_key=(i,))``.

Backends
--------
``backend="numba"`` runs trajectories in parallel compiled loops,
``backend="numpy"`` advances them in vectorized lockstep. The default is
taken from ``MOMENT_PI_NUMBA``. Both give identical results.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import _kernels as K
from ._accel import apply_thread_cap, resolve_backend
from .control import MimoPIGains, ScalarPIGains, Setpoint, positive_pi_mimo, positive_pi_scalar
from .moments import ReactionNetwork

__all__ = [
    "MAX_EVENTS",
    "SsaError",
    "SsaTrajectory",
    "EnsembleMoments",
    "ClosedLoopResult",
    "trajectory_rng",
    "simulate_ssa",
    "ensemble_moments",
    "ssa_closed_loop_ensemble",
    "read_ssa_csv",
]

MAX_EVENTS = 100_000_000
# uniforms per refill; must be even so a row runs dry exactly at a block edge
BLOCK = 256


class SsaError(RuntimeError):
    pass


def trajectory_rng(seed: int, spawn_key: tuple = ()) -> np.random.Generator:
    """The generator behind one trajectory; see the module docstring."""
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(spawn_key)))


def _net_arrays(net: ReactionNetwork):
    S = np.ascontiguousarray(net.stoichiometry, dtype=np.int64)
    W = np.ascontiguousarray(net.propensity_linear, dtype=np.float64)
    w0 = np.ascontiguousarray(net.propensity_const, dtype=np.float64)
    return S, W, w0


def _initial_state(net: ReactionNetwork, x0) -> np.ndarray:
    x = np.asarray(x0)
    if x.shape != (net.species_count,):
        raise ValueError(f"x0 must have shape ({net.species_count},), got {x.shape}")
    if not np.all(np.equal(np.mod(x, 1), 0)):
        raise ValueError("x0 must be integer valued")
    if np.any(x < 0):
        raise ValueError("x0 must be componentwise nonnegative")
    return x.astype(np.int64)


def _raise_status(status: int, reaction: int, t: float, who: str = ""):
    where = f"{who}at t={t!r}"
    if status == K.NEGATIVE_PROPENSITY:
        raise SsaError(f"negative propensity for reaction R{reaction + 1} (index {reaction}) {where}")
    if status == K.EVENT_CAP:
        raise SsaError(f"event cap of {MAX_EVENTS} reached {where}")


@dataclass(frozen=True)
class SsaTrajectory:
    """One sample path. Row 0 is the initial state at ``t = 0``; every later
    row is the state right after an event."""

    times: np.ndarray
    states: np.ndarray
    seed: int
    t_end: float

    @property
    def n_events(self) -> int:
        return len(self.times) - 1

    def state_at(self, t: float) -> np.ndarray:
        if not 0.0 <= t <= self.t_end:
            raise ValueError(f"t={t} outside [0, {self.t_end}]")
        return self.states[np.searchsorted(self.times, t, side="right") - 1]

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"X{i + 1}" for i in range(n)])
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [str(int(v)) for v in row])


def read_ssa_csv(path) -> tuple:
    """Inverse of ``SsaTrajectory.to_csv``: returns ``(times, states)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "time":
        raise ValueError(f"{path}: not an SSA trajectory file")
    body = rows[1:]
    times = np.array([float(r[0]) for r in body])
    states = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.int64)
    return times, states.reshape(len(body), len(rows[0]) - 1)


def simulate_ssa(net: ReactionNetwork, x0, t_end: float, seed: int, *,
                 spawn_key: tuple = (), backend: str | None = None) -> SsaTrajectory:
    """Sample one path on ``[0, t_end]``, recording every event."""
    if not (math.isfinite(t_end) and t_end > 0):
        raise ValueError(f"t_end must be finite and > 0, got {t_end}")
    backend = resolve_backend(backend)
    kernel = K.record_row if backend == "numba" else K.record_row_py
    S, W, w0 = _net_arrays(net)
    x = _initial_state(net, x0)
    N = net.species_count
    rng = trajectory_rng(seed, spawn_key)
    u = rng.random(BLOCK)
    cap = 1024
    rec_t = np.empty(cap)
    rec_x = np.empty((cap, N), dtype=np.int64)
    t, pos, n_events, n_rec = 0.0, 0, 0, 0
    while True:
        status, t, pos, n_events, n_rec, k = kernel(x, t, float(t_end), S, W, w0, u, pos,
                                                    n_events, MAX_EVENTS, rec_t, rec_x, n_rec)
        if status == K.REACHED:
            break
        if status == K.NEED_UNIFORMS:
            rng.random(BLOCK, out=u)
            pos = 0
        elif status == K.RECORD_FULL:
            cap *= 2
            rec_t = np.resize(rec_t, cap)
            rec_x = np.resize(rec_x, (cap, N))
        else:
            _raise_status(status, k, t)
    x_init = _initial_state(net, x0)
    times = np.concatenate([[0.0], rec_t[:n_rec]])
    states = np.vstack([x_init[None, :], rec_x[:n_rec]])
    return SsaTrajectory(times=times, states=states, seed=int(seed), t_end=float(t_end))


class _Ensemble:
    """Mutable per-run state of ``n`` trajectories advanced together."""

    def __init__(self, net: ReactionNetwork, x0, n: int, master_seed: int, backend: str):
        S, W, w0 = _net_arrays(net)
        # private copies; the closed loop rewrites the rates between syncs
        self.S, self.W, self.w0 = S, W.copy(), w0.copy()
        x = _initial_state(net, x0)
        self.X = np.ascontiguousarray(np.tile(x, (n, 1)))
        self.T = np.zeros(n)
        self.pos = np.zeros(n, dtype=np.int64)
        self.n_events = np.zeros(n, dtype=np.int64)
        self.status = np.full(n, K.REACHED, dtype=np.int64)
        self.reaction = np.full(n, -1, dtype=np.int64)
        self.gens = [trajectory_rng(master_seed, (i,)) for i in range(n)]
        self.U = np.empty((n, BLOCK))
        for i, g in enumerate(self.gens):
            g.random(BLOCK, out=self.U[i])
        self.kernel = K.advance_ensemble_nb if backend == "numba" else K.advance_ensemble_np
        if backend == "numba":
            apply_thread_cap()

    def advance(self, t_stop: float) -> None:
        while True:
            self.kernel(self.X, self.T, float(t_stop), self.S, self.W, self.w0, self.U, self.pos,
                        self.n_events, MAX_EVENTS, self.status, self.reaction)
            dry = np.flatnonzero(self.status == K.NEED_UNIFORMS)
            for r in dry:
                self.gens[r].random(BLOCK, out=self.U[r])
                self.pos[r] = 0
            if dry.size:
                continue
            bad = np.flatnonzero(self.status != K.REACHED)
            if bad.size:
                r = bad[0]
                _raise_status(self.status[r], self.reaction[r], self.T[r], f"in trajectory {r} ")
            return


@dataclass(frozen=True)
class EnsembleMoments:
    """Sample statistics of an ensemble on a time grid.

    ``se_mean`` is ``sd / sqrt(n)``. ``se_cov[k, i, j]`` is the standard
    deviation of the centred products ``(X_i - m_i)(X_j - m_j)`` over ``sqrt(n)``,
    the usual large-sample standard error of a covariance estimate.
    """

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    se_mean: np.ndarray
    se_cov: np.ndarray
    n: int

    def packed(self) -> tuple:
        """``(values, standard errors)`` as ``(T, N + N(N+1)/2)`` arrays in moment-ODE order."""
        N = self.mean.shape[1]
        iu = np.triu_indices(N)
        vals = np.hstack([self.mean, self.cov[:, iu[0], iu[1]]])
        ses = np.hstack([self.se_mean, self.se_cov[:, iu[0], iu[1]]])
        return vals, ses

    def z_scores(self, reference) -> np.ndarray:
        """``(sample - reference) / se`` for packed reference moments of shape ``(T, P)``."""
        vals, ses = self.packed()
        ref = np.asarray(reference, dtype=float)
        if ref.shape != vals.shape:
            raise ValueError(f"reference shape {ref.shape} != {vals.shape}")
        diff = vals - ref
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(ses > 0, diff / ses, np.where(diff == 0, 0.0, np.inf))
        return z


def _snapshot_stats(X: np.ndarray) -> tuple:
    n = X.shape[0]
    Xf = X.astype(float)
    m = Xf.mean(axis=0)
    D = Xf - m
    prod = D[:, :, None] * D[:, None, :]
    cov = prod.sum(axis=0) / (n - 1)
    se_m = D.std(axis=0, ddof=1) / math.sqrt(n)
    se_c = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return m, cov, se_m, se_c


def _collect(times, snaps, n) -> EnsembleMoments:
    stats = [_snapshot_stats(X) for X in snaps]
    return EnsembleMoments(
        times=np.asarray(times, dtype=float),
        mean=np.array([s[0] for s in stats]),
        cov=np.array([s[1] for s in stats]),
        se_mean=np.array([s[2] for s in stats]),
        se_cov=np.array([s[3] for s in stats]),
        n=n,
    )


def _check_grid(t_grid) -> np.ndarray:
    g = np.asarray(t_grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(g)) or g[0] < 0 or np.any(np.diff(g) <= 0):
        raise ValueError("t_grid must be finite, nonnegative and strictly increasing")
    return g


def ensemble_moments(net: ReactionNetwork, x0, t_grid, n_traj: int, master_seed: int, *,
                     backend: str | None = None, return_states: bool = False):
    """Run ``n_traj`` independent paths and summarize them at each grid time.

    With ``return_states=True`` also returns the ``(T, n, N)`` array of states.
    """
    if int(n_traj) != n_traj or n_traj < 2:
        raise ValueError(f"n_traj must be an integer >= 2, got {n_traj}")
    grid = _check_grid(t_grid)
    ens = _Ensemble(net, x0, int(n_traj), master_seed, resolve_backend(backend))
    snaps = []
    for t in grid:
        ens.advance(t)
        snaps.append(ens.X.copy())
    out = _collect(grid, snaps, int(n_traj))
    if return_states:
        return out, np.array(snaps)
    return out


@dataclass(frozen=True)
class ClosedLoopResult:
    """Ensemble statistics at the sync times plus the held inputs.

    ``inputs[k]`` and ``integrals[k]`` are the values chosen at ``times[k]``
    and held until ``times[k + 1]``; the last row is the state at ``t_end``.
    """

    moments: EnsembleMoments
    inputs: np.ndarray
    integrals: np.ndarray
    input_names: tuple = field(default=("u1",))

    @property
    def times(self) -> np.ndarray:
        return self.moments.times

    def to_csv(self, path) -> None:
        m = self.moments
        N = m.mean.shape[1]
        head = ["t"] + [f"mean_X{i + 1}" for i in range(N)] + [f"var_X{i + 1}" for i in range(N)]
        head += [f"I{j + 1}" for j in range(self.integrals.shape[1])] + list(self.input_names)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            for k, t in enumerate(m.times):
                row = [t, *m.mean[k], *np.diagonal(m.cov[k]), *self.integrals[k], *self.inputs[k]]
                w.writerow([repr(float(v)) for v in row])


def ssa_closed_loop_ensemble(net: ReactionNetwork, controller: Union[ScalarPIGains, MimoPIGains],
                             setpoint: Setpoint, sync_interval: float, n_traj: int, t_end: float,
                             master_seed: int, *, x0=None, backend: str | None = None
                             ) -> ClosedLoopResult:
    """Positive PI control of a gene-expression ensemble through its moments.

    The network must have the two-species, four-reaction layout of
    ``gene_expression_network``. Inputs add to the nominal rates: ``u1`` to
    the transcription rate (reaction 0), and for the two-channel law ``u2``
    to the mRNA degradation rate (reaction 1). The measured output is the
    sample mean of species 2, and with ``MimoPIGains`` also its sample
    variance. Inputs are held constant between sync times and the integrators
    advance by forward Euler, ``I += e * dt``.
    """
    if net.species_count != 2 or net.reaction_count != 4:
        raise ValueError("closed-loop ensemble needs the 2-species, 4-reaction gene-expression layout")
    if not (math.isfinite(sync_interval) and sync_interval > 0):
        raise ValueError(f"sync_interval must be > 0, got {sync_interval}")
    if not (math.isfinite(t_end) and t_end > 0):
        raise ValueError(f"t_end must be finite and > 0, got {t_end}")
    if int(n_traj) != n_traj or n_traj < 2:
        raise ValueError(f"n_traj must be an integer >= 2, got {n_traj}")
    mimo = isinstance(controller, MimoPIGains)
    if mimo and setpoint.var is None:
        raise ValueError("the two-channel law needs a variance setpoint")
    if not mimo and not isinstance(controller, ScalarPIGains):
        raise TypeError(f"unsupported controller {type(controller).__name__}")

    n_steps = int(math.ceil(t_end / sync_interval - 1e-12))
    times = np.minimum(np.arange(n_steps + 1) * float(sync_interval), float(t_end))
    times[-1] = float(t_end)
    ens = _Ensemble(net, np.zeros(2) if x0 is None else x0, int(n_traj), master_seed,
                    resolve_backend(backend))
    W_nom, w0_nom = ens.W.copy(), ens.w0.copy()
    n_in = 2 if mimo else 1
    I = np.zeros(n_in)
    inputs = np.zeros((len(times), n_in))
    integrals = np.zeros((len(times), n_in))
    snaps = []
    for k, t in enumerate(times):
        if k:
            ens.advance(t)
        X2 = ens.X[:, 1].astype(float)
        snaps.append(ens.X.copy())
        e = np.array([setpoint.mu - X2.mean()] + ([setpoint.var - X2.var(ddof=1)] if mimo else []))
        if mimo:
            u = np.array(positive_pi_mimo(controller, e[0], I[0], e[1], I[1]))
        else:
            u = np.array([positive_pi_scalar(controller, setpoint.mu, X2.mean(), I[0])])
        inputs[k] = u
        integrals[k] = I
        if k + 1 < len(times):
            ens.w0[:] = w0_nom
            ens.W[:] = W_nom
            ens.w0[0] += u[0]
            if mimo:
                ens.W[1, 0] += u[1]
            I = I + e * (times[k + 1] - t)
    names = ("u1", "u2") if mimo else ("u1",)
    return ClosedLoopResult(_collect(times, snaps, int(n_traj)), inputs, integrals, names)
