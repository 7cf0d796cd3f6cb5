"""Model parameters, derived scaling quantities, and validation.

Every other module consumes :class:`ModelParams`.  A parameter set describes
``d`` colonies connected by a migration-rate matrix ``W`` (blocks in colony i
move to colony j at rate ``K * W[i, j]``), within-colony pairwise coalescence
rates ``alpha``, a sample of ``N_K`` individuals split across colonies as
``L0``, and a sampling regime:

* ``critical``: N_K / K stays of order one (limit ``c``); space scale 1.
* ``large``:    N_K / K grows; space scale gamma_K = N_K / K.

Derived quantities: ``gamma_K = N_K / K``, ``s_K`` (1 or gamma_K), and
``b = gamma_K / s_K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InconsistentCountsError,
    NonPositiveRateError,
    NonPrimitiveMatrixError,
)

CRITICAL = "critical"
LARGE = "large"


@dataclass(frozen=True)
class ModelParams:
    """Validated, immutable parameter bundle.

    Construct via :func:`make_params` (or :func:`validate_params` on a raw
    instance); the derived fields are filled in there.
    """

    d: int
    W: np.ndarray
    alpha: np.ndarray
    K: float
    N_K: int
    L0: np.ndarray
    regime: str
    c: float | None = None
    beta: np.ndarray | None = None
    gamma_K: float = field(default=0.0, compare=False)
    s_K: float = field(default=1.0, compare=False)
    b: float = field(default=0.0, compare=False)

    @property
    def alpha_max(self) -> float:
        return float(np.max(self.alpha))

    @property
    def alpha_min_d(self) -> float:
        """min_i alpha_i / d**2, the lower coalescence-rate constant."""
        return float(np.min(self.alpha)) / self.d**2

    def w_out(self) -> np.ndarray:
        """Total out-migration rate per colony, sum_{j != i} W[i, j]."""
        W = offdiag(self.W)
        return W.sum(axis=1)


def offdiag(W: np.ndarray) -> np.ndarray:
    """Copy of W with the (ignored) diagonal zeroed."""
    W = np.array(W, dtype=float)
    np.fill_diagonal(W, 0.0)
    return W


def is_primitive(W: np.ndarray) -> bool:
    """Irreducibility of the off-diagonal support: (A + I)^d entrywise positive.

    A is the boolean adjacency of positive off-diagonal entries.  Sufficient
    at the small d this package targets; d = 1 is trivially accepted.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    if d == 1:
        return True
    A = (offdiag(W) > 0).astype(np.int64)
    M = A + np.eye(d, dtype=np.int64)
    P = np.linalg.matrix_power(M, d)
    return bool(np.all(P > 0))


def validate_params(p: ModelParams) -> ModelParams:
    """Check the model assumptions and return a copy with derived fields set.

    Raises :class:`NonPrimitiveMatrixError`, :class:`InconsistentCountsError`
    or :class:`NonPositiveRateError`.  ``beta`` defaults to ``L0 / N_K`` and,
    in the critical regime, ``c`` defaults to ``gamma_K``.
    """
    W = offdiag(p.W)
    alpha = np.asarray(p.alpha, dtype=float)
    L0 = np.asarray(p.L0, dtype=np.int64)
    d = int(p.d)
    if W.shape != (d, d) or alpha.shape != (d,) or L0.shape != (d,):
        raise InconsistentCountsError(
            f"shape mismatch: d={d}, W{W.shape}, alpha{alpha.shape}, L0{L0.shape}"
        )
    if np.any(W < 0):
        raise NonPositiveRateError("migration rates must be nonnegative")
    if np.any(alpha <= 0):
        raise NonPositiveRateError("coalescence rates must be positive")
    if p.K <= 0 or p.N_K <= 0:
        raise NonPositiveRateError("K and N_K must be positive")
    if not is_primitive(W):
        raise NonPrimitiveMatrixError("migration matrix support is not irreducible")
    if np.any(L0 < 0) or int(L0.sum()) != int(p.N_K):
        raise InconsistentCountsError(
            f"initial block counts sum to {int(L0.sum())}, expected N_K={p.N_K}"
        )
    if p.regime not in (CRITICAL, LARGE):
        raise NonPositiveRateError(f"unknown regime {p.regime!r}")

    gamma_K = p.N_K / p.K
    s_K = 1.0 if p.regime == CRITICAL else gamma_K
    b = gamma_K / s_K
    c = p.c
    if p.regime == CRITICAL:
        if c is None:
            c = gamma_K
        if c <= 0:
            raise NonPositiveRateError("c must be positive in the critical regime")
    beta = p.beta
    if beta is None:
        beta = L0 / p.N_K
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (d,) or np.any(beta < 0):
        raise InconsistentCountsError("beta must be a nonnegative d-vector")

    q = replace(
        p, W=W, alpha=alpha, L0=L0, c=c, beta=beta,
        gamma_K=gamma_K, s_K=s_K, b=b,
    )
    W.setflags(write=False)
    alpha.setflags(write=False)
    L0.setflags(write=False)
    beta.setflags(write=False)
    return q


def make_params(
    d: int,
    W,
    alpha,
    K: float,
    N_K: int,
    L0,
    regime: str,
    c: float | None = None,
    beta=None,
) -> ModelParams:
    """Build and validate a :class:`ModelParams` in one call."""
    return validate_params(
        ModelParams(
            d=int(d),
            W=np.asarray(W, dtype=float),
            alpha=np.asarray(alpha, dtype=float),
            K=float(K),
            N_K=int(N_K),
            L0=np.asarray(L0, dtype=np.int64),
            regime=regime,
            c=c,
            beta=None if beta is None else np.asarray(beta, dtype=float),
        )
    )


@dataclass(frozen=True)
class StationaryDistribution:
    """Unique stationary distribution of the migration dynamics."""

    xi: np.ndarray


def stationary_distribution(p: ModelParams | np.ndarray) -> StationaryDistribution:
    """Solve the balance equations sum_{j!=i} xi_j W[j,i] = xi_i sum_{j!=i} W[i,j].

    Accepts a validated parameter set or a raw matrix; the matrix must be
    primitive or :class:`NonPrimitiveMatrixError` is raised.
    """
    W = p.W if isinstance(p, ModelParams) else np.asarray(p, dtype=float)
    if not is_primitive(W):
        raise NonPrimitiveMatrixError("migration matrix support is not irreducible")
    W = offdiag(W)
    d = W.shape[0]
    if d == 1:
        return StationaryDistribution(xi=np.array([1.0]))
    Q = W - np.diag(W.sum(axis=1))
    # xi Q = 0 with sum(xi) = 1, solved as an overdetermined system
    A = np.vstack([Q.T, np.ones(d)])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    xi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return StationaryDistribution(xi=xi)


def params_from_dict(cfg: dict) -> ModelParams:
    """Read the JSON parameter schema.

    Keys: ``d``, ``W`` (row-major list of lists), ``alpha``, ``K``, ``N_K``,
    ``L0``, ``regime`` ("critical" | "large"), optional ``c``, ``beta``.
    """
    return make_params(
        d=cfg["d"],
        W=cfg["W"],
        alpha=cfg["alpha"],
        K=cfg["K"],
        N_K=cfg["N_K"],
        L0=cfg["L0"],
        regime=cfg["regime"],
        c=cfg.get("c"),
        beta=cfg.get("beta"),
    )


def params_to_dict(p: ModelParams) -> dict:
    out = {
        "d": p.d,
        "W": p.W.tolist(),
        "alpha": p.alpha.tolist(),
        "K": p.K,
        "N_K": p.N_K,
        "L0": p.L0.tolist(),
        "regime": p.regime,
    }
    if p.c is not None:
        out["c"] = p.c
    if p.beta is not None:
        out["beta"] = p.beta.tolist()
    return out
