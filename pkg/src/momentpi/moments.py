"""Exact first- and second-moment dynamics of affine-propensity reaction networks.

For propensities ``w(X) = W X + w0`` the mean ``m`` and covariance ``Sigma``
obey a closed linear system::

    dm/dt     = S W m + S w0
    dSigma/dt = S W Sigma + Sigma (S W)^T + S diag(W m + w0) S^T

States are packed as ``(m, vech(Sigma))`` with the upper triangle taken row by
row, so for two species the packed vector is ``(x1, x2, x3, x4, x5)`` =
(mRNA mean, protein mean, mRNA variance, covariance, protein variance).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

__all__ = [
    "HURWITZ_MARGIN",
    "ReactionNetwork",
    "PlantParams",
    "NormalizedPlantParams",
    "MomentState",
    "MomentODE",
    "NotHurwitzError",
    "gene_expression_network",
    "build_affine_moment_system",
    "open_loop_equilibrium",
    "stationary_mean",
    "stationary_covariance",
    "normalized_model",
    "pack_covariance",
    "unpack_covariance",
]

# max real part of the drift spectrum must lie below -HURWITZ_MARGIN
HURWITZ_MARGIN = 1e-12


class NotHurwitzError(ValueError):
    """The drift matrix S W has an eigenvalue with real part >= -HURWITZ_MARGIN."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ReactionNetwork:
    """Reaction network with affine propensities ``w(x) = W x + w0``.

    Parameters
    ----------
    stoichiometry : (N, M) integer array
        Column ``k`` is the state change caused by reaction ``k``.
    propensity_linear : (M, N) array
        The matrix ``W``.
    propensity_const : (M,) array
        The vector ``w0``.
    """

    stoichiometry: np.ndarray
    propensity_linear: np.ndarray
    propensity_const: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.stoichiometry)
        if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
            raise ValueError(f"stoichiometry must be a non-empty 2-D array, got shape {S.shape}")
        if not np.all(np.equal(np.mod(S, 1), 0)):
            raise ValueError("stoichiometry entries must be integers")
        n, m = S.shape
        W = np.asarray(self.propensity_linear, dtype=float)
        w0 = np.asarray(self.propensity_const, dtype=float)
        if W.shape != (m, n):
            raise ValueError(f"propensity_linear must have shape {(m, n)}, got {W.shape}")
        if w0.shape != (m,):
            raise ValueError(f"propensity_const must have shape {(m,)}, got {w0.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(w0))):
            raise ValueError("propensity coefficients must be finite")
        object.__setattr__(self, "stoichiometry", _frozen(S, np.int64))
        object.__setattr__(self, "propensity_linear", _frozen(W))
        object.__setattr__(self, "propensity_const", _frozen(w0))

    @property
    def species_count(self) -> int:
        return self.stoichiometry.shape[0]

    @property
    def reaction_count(self) -> int:
        return self.stoichiometry.shape[1]

    @property
    def drift_matrix(self) -> np.ndarray:
        """``S W``, the generator of the mean dynamics."""
        return self.stoichiometry @ self.propensity_linear

    def propensities(self, x) -> np.ndarray:
        return self.propensity_linear @ np.asarray(x, dtype=float) + self.propensity_const

    def with_propensity(self, W=None, w0=None) -> "ReactionNetwork":
        """Copy with replaced propensity coefficients (same stoichiometry)."""
        return ReactionNetwork(
            self.stoichiometry,
            self.propensity_linear if W is None else W,
            self.propensity_const if w0 is None else w0,
        )


@dataclass(frozen=True)
class PlantParams:
    """Rate constants of the two-stage gene expression model (per unit time)."""

    k_r: float
    gamma_r: float
    k_p: float
    gamma_p: float

    def __post_init__(self):
        for name in ("k_r", "gamma_r", "k_p", "gamma_p"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.k_r < 0:
            raise ValueError(f"k_r must be >= 0, got {self.k_r}")
        for name in ("gamma_r", "k_p", "gamma_p"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class NormalizedPlantParams:
    """Gene expression model normalized by its basal (uncontrolled) levels.

    ``alpha = 1 + k_p / (gamma_r0 + gamma_p)`` is derived, never stored.
    """

    gamma_r0: float
    gamma_p: float
    k_p: float
    b: float

    def __post_init__(self):
        for name in ("gamma_r0", "gamma_p", "k_p", "b"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and > 0, got {v}")

    @property
    def alpha(self) -> float:
        return 1.0 + self.k_p / (self.gamma_r0 + self.gamma_p)


@dataclass(frozen=True)
class MomentState:
    """Means and covariance of (mRNA, protein)."""

    x1: float
    x2: float
    x3: float
    x4: float
    x5: float

    @classmethod
    def from_array(cls, a) -> "MomentState":
        a = np.asarray(a, dtype=float)
        if a.shape[0] < 5:
            raise ValueError("need at least five entries")
        return cls(*(float(v) for v in a[:5]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4, self.x5])

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.x1, self.x2])

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.x3, self.x4], [self.x4, self.x5]])

    def violations(self, tol: float = 1e-9) -> list:
        """Names of moment constraints broken by more than ``tol``."""
        out = []
        for name in ("x1", "x2", "x3", "x5"):
            if getattr(self, name) < -tol:
                out.append(f"{name} < 0")
        if self.x4 ** 2 > self.x3 * self.x5 + tol * max(1.0, abs(self.x3 * self.x5)):
            out.append("x4^2 > x3*x5")
        return out


@dataclass(frozen=True)
class MomentODE:
    """Right-hand side of a moment system, optionally with its LTI matrices.

    ``rhs(t, x, u)`` returns ``dx/dt``; ``u`` is ignored when ``n_inputs == 0``.
    When ``A`` and ``b`` are given the system is ``dx/dt = A x + b``.
    """

    dim: int
    rhs: Callable[[float, np.ndarray, Optional[np.ndarray]], np.ndarray]
    n_inputs: int = 0
    n_species: Optional[int] = None
    A: Optional[np.ndarray] = field(default=None, repr=False)
    b: Optional[np.ndarray] = field(default=None, repr=False)

    def blocks(self) -> dict:
        """Split an LTI moment system into mean/covariance blocks."""
        if self.A is None or self.n_species is None:
            raise ValueError("system has no LTI block structure")
        n = self.n_species
        return {
            "A_ee": self.A[:n, :n],
            "A_es": self.A[:n, n:],
            "A_se": self.A[n:, :n],
            "A_ss": self.A[n:, n:],
            "B_e": self.b[:n],
            "B_s": self.b[n:],
        }


def pack_covariance(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    return sigma[np.triu_indices(sigma.shape[0])]


def unpack_covariance(packed, n: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=float)
    out = np.zeros((n, n))
    iu = np.triu_indices(n)
    out[iu] = packed
    out.T[iu] = packed
    return out


def gene_expression_network(plant: PlantParams) -> ReactionNetwork:
    """Transcription, mRNA decay, translation and protein decay."""
    S = [[1, -1, 0, 0], [0, 0, 1, -1]]
    W = [[0.0, 0.0], [plant.gamma_r, 0.0], [plant.k_p, 0.0], [0.0, plant.gamma_p]]
    w0 = [plant.k_r, 0.0, 0.0, 0.0]
    return ReactionNetwork(S, W, w0)


def _affine_moment_rhs(S, W, w0, m, sigma):
    SW = S @ W
    dm = SW @ m + S @ w0
    SWs = SW @ sigma
    dsigma = SWs + SWs.T + (S * (W @ m + w0)) @ S.T
    return dm, dsigma


def build_affine_moment_system(net: ReactionNetwork) -> MomentODE:
    """Assemble the closed mean/covariance ODE of an affine network.

    The system is linear, so its matrix is recovered exactly by applying the
    moment map to the packed unit vectors.
    """
    S = net.stoichiometry.astype(float)
    W = net.propensity_linear
    w0 = net.propensity_const
    n = net.species_count
    dim = n + n * (n + 1) // 2

    def affine_part(x):
        dm, ds = _affine_moment_rhs(S, W, w0, x[:n], unpack_covariance(x[n:], n))
        return np.concatenate([dm, pack_covariance(ds)])

    b = affine_part(np.zeros(dim))
    A = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        A[:, j] = affine_part(e) - b
    A.setflags(write=False)
    b.setflags(write=False)

    def rhs(t, x, u=None):
        return A @ x + b

    return MomentODE(dim=dim, rhs=rhs, n_inputs=0, n_species=n, A=A, b=b)


def open_loop_equilibrium(plant: PlantParams) -> MomentState:
    """Stationary means and covariance of the uncontrolled gene expression model."""
    kr, gr, kp, gp = plant.k_r, plant.gamma_r, plant.k_p, plant.gamma_p
    if gr <= 0 or gp <= 0:
        raise ValueError("degradation rates must be positive")
    return MomentState(
        x1=kr / gr,
        x2=kp * kr / (gp * gr),
        x3=kr / gr,
        x4=kp * kr / (gr * (gp + gr)),
        x5=kp * kr * (gp + kp + gr) / (gp * gr * (gp + gr)),
    )


def _require_hurwitz(SW):
    lam = np.linalg.eigvals(SW)
    if lam.size and lam.real.max() >= -HURWITZ_MARGIN:
        raise NotHurwitzError(
            f"S W is not Hurwitz (max real part {lam.real.max():.3e}); no stationary solution"
        )


def stationary_mean(net: ReactionNetwork) -> np.ndarray:
    SW = net.drift_matrix
    _require_hurwitz(SW)
    return -np.linalg.solve(SW, net.stoichiometry @ net.propensity_const)


def stationary_covariance(net: ReactionNetwork, mean) -> np.ndarray:
    """Solve ``SW C + C (SW)^T + S diag(W mean + w0) S^T = 0`` for ``C``.

    Raises
    ------
    NotHurwitzError
        If ``S W`` is not Hurwitz.
    """
    SW = net.drift_matrix
    _require_hurwitz(SW)
    S = net.stoichiometry.astype(float)
    diffusion = (S * net.propensities(mean)) @ S.T
    C = scipy.linalg.solve_continuous_lyapunov(SW, -diffusion)
    return 0.5 * (C + C.T)


def normalized_model(params: NormalizedPlantParams) -> MomentODE:
    """Five-state moment model scaled so the basal equilibrium is all ones.

    Inputs are ``u = (u1, u2)``: the transcription input enters as
    ``gamma_r0 + b*u1`` and the extra mRNA degradation ``u2`` adds to
    ``gamma_r0``.
    """
    g0, gp, b = params.gamma_r0, params.gamma_p, params.b
    alpha = params.alpha

    def rhs(t, x, u=None):
        u1, u2 = (0.0, 0.0) if u is None else (u[0], u[1])
        x1, x2, x3, x4, x5 = x[0], x[1], x[2], x[3], x[4]
        ut = g0 + b * u1
        g = g0 + u2
        return np.array([
            -g * x1 + ut,
            gp * (x1 - x2),
            g * x1 - 2.0 * g * x3 + ut,
            (g0 + gp) * x3 - (g + gp) * x4,
            gp / alpha * (x1 + x2 + 2.0 * (alpha - 1.0) * x4) - 2.0 * gp * x5,
        ])

    return MomentODE(dim=5, rhs=rhs, n_inputs=2, n_species=2)
