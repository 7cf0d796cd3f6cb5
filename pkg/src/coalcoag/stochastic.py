"""Monte-Carlo engines for the stochastic representations of the limits.

Critical regime: the lattice solution satisfies
``u_i(t, n) = c * beta_i * P(Z(t) = n | one type-i particle)`` for a
continuous-time multi-type branching process in which a type-i particle
branches at rate ``c alpha_i beta_i / 2``, dies at rate ``d_i``, and switches
to type j at rate ``(beta_j / beta_i) W[j, i]``.  The representation needs
every death rate ``d_i`` to be nonnegative; the rates are exposed either way
with a validity flag.  (The derivation assumes beta at the migration
equilibrium, where the death rate reduces to the branching rate; the rates
below follow the general-beta statement and the equilibrium case is covered
by tests.)

Large regime: the measure solution is ``beta_i`` times the entrance law of
the d-type square-root (Feller) diffusion

    dZ_i = sqrt(alpha_i beta_i Z_i) dB_i
           + sum_{j != i} ( W[j,i] (beta_j / beta_i) Z_j - W[i,j] Z_i ) dt,

approximated here by full-truncation Euler steps and an explicit small-x0
extrapolation of the entrance law.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._util import replicate_rng
from .errors import (
    ExplosionGuardError,
    InsufficientSamplesError,
    RepresentationInvalidError,
    ZeroBetaError,
)
from .params import CRITICAL, ModelParams

POPULATION_CAP = 10**7


@dataclass(frozen=True)
class BranchingParams:
    """Rate table of the critical-regime branching representation."""

    branch: np.ndarray  # per-type branching rates
    death: np.ndarray  # per-type death rates (may be negative: flag below)
    migrate: np.ndarray  # (d, d) type-switch rates, zero diagonal
    valid_representation: bool

    @property
    def d(self) -> int:
        return len(self.branch)


def branching_params(p: ModelParams) -> BranchingParams:
    """Derive (branch, death, switch) rates from critical-regime parameters."""
    if p.regime != CRITICAL or p.c is None:
        raise ValueError("critical-regime parameters with c required")
    if p.beta is None or np.any(p.beta <= 0):
        raise ZeroBetaError("branching representation requires beta > 0")
    beta = p.beta
    b = 0.5 * p.c * p.alpha * beta
    m = p.W.T * (beta[None, :] / beta[:, None])  # m[i, j] = W[j,i] beta_j / beta_i
    np.fill_diagonal(m, 0.0)
    death = b - (m.sum(axis=1) - p.w_out())
    valid = bool(np.all(death >= -1e-12))
    if not valid:
        warnings.warn("some death rate is negative; representation invalid there")
    return BranchingParams(branch=b, death=death, migrate=m, valid_representation=valid)


def simulate_branching(
    bp: BranchingParams, start: int, t: float, rng: np.random.Generator
) -> np.ndarray:
    """Exact simulation of the particle counts Z(t) from one type-``start``.

    Uses aggregate per-type rates (no per-particle objects).  Raises
    :class:`RepresentationInvalidError` on negative death rates and
    :class:`ExplosionGuardError` if the population passes the hard cap.
    """
    if not bp.valid_representation:
        raise RepresentationInvalidError("negative death rate")
    d = bp.d
    per_type = bp.branch + bp.death + bp.migrate.sum(axis=1)
    Z = np.zeros(d, dtype=np.int64)
    Z[start] = 1
    now = 0.0
    while True:
        total = float(np.dot(Z, per_type))
        if total <= 0.0:
            return Z
        now += rng.exponential(1.0 / total)
        if now > t:
            return Z
        u = rng.random() * total
        acc = 0.0
        i = d - 1
        for k in range(d):
            acc += Z[k] * per_type[k]
            if u < acc:
                i = k
                break
        v = rng.random() * per_type[i]
        if v < bp.branch[i]:
            Z[i] += 1
            if Z.sum() > POPULATION_CAP:
                raise ExplosionGuardError("population cap exceeded")
        elif v < bp.branch[i] + bp.death[i]:
            Z[i] -= 1
        else:
            w = v - bp.branch[i] - bp.death[i]
            acc = 0.0
            j = d - 1
            for k in range(d):
                acc += bp.migrate[i, k]
                if w < acc:
                    j = k
                    break
            Z[i] -= 1
            Z[j] += 1


def terminal_samples(
    bp: BranchingParams, start: int, t: float, samples: int, seed: int = 0
) -> np.ndarray:
    """(samples, d) terminal states, replicate r on stream (seed, r)."""
    if samples <= 0:
        raise InsufficientSamplesError("need at least one sample")
    out = np.empty((samples, bp.d), dtype=np.int64)
    for r in range(samples):
        out[r] = simulate_branching(bp, start, t, replicate_rng(seed, r))
    return out


@dataclass(frozen=True)
class PmfEstimate:
    value: float
    std_error: float
    n_samples: int


def pmf_from_samples(samples: np.ndarray, n) -> PmfEstimate:
    n = np.asarray(n, dtype=np.int64)
    hits = int(np.all(samples == n[None, :], axis=1).sum())
    m = len(samples)
    value = hits / m
    return PmfEstimate(value=value, std_error=float(np.sqrt(value * (1 - value) / m)), n_samples=m)


def estimate_pmf(
    bp: BranchingParams, i: int, t: float, n, samples: int, seed: int = 0
) -> PmfEstimate:
    """Monte-Carlo P(Z(t) = n) from one type-i particle, with binomial SE."""
    return pmf_from_samples(terminal_samples(bp, i, t, samples, seed=seed), n)


@dataclass(frozen=True)
class DiffusionParams:
    """Coefficients of the d-type square-root diffusion."""

    diffusion: np.ndarray  # alpha_i * beta_i
    drift: np.ndarray  # (d, d): dZ = (drift @ Z) dt + noise


def diffusion_params(p: ModelParams) -> DiffusionParams:
    if p.beta is None or np.any(p.beta <= 0):
        raise ZeroBetaError("diffusion representation requires beta > 0")
    beta = p.beta
    A = p.W.T * (beta[None, :] / beta[:, None])
    np.fill_diagonal(A, 0.0)
    A = A - np.diag(p.w_out())
    return DiffusionParams(diffusion=p.alpha * beta, drift=A)


def feller_paths(
    dp: DiffusionParams,
    x0,
    t: float,
    dt: float,
    n_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full-truncation Euler scheme, vectorized over paths.

    Each step uses the clipped state in drift and diffusion and clips the
    result at zero, which preserves nonnegativity of the square root.
    Returns the (n_paths, d) terminal states.
    """
    x0 = np.asarray(x0, dtype=float)
    steps = max(1, round(t / dt))
    h = t / steps
    sqh = np.sqrt(h)
    Z = np.tile(x0, (n_paths, 1))
    for _ in range(steps):
        noise = rng.standard_normal(Z.shape) * sqh
        Z = Z + (Z @ dp.drift.T) * h + np.sqrt(dp.diffusion[None, :] * Z) * noise
        np.clip(Z, 0.0, None, out=Z)
    return Z


def euler_maruyama(
    dp: DiffusionParams, x0, t: float, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """One diffusion path's terminal value; see :func:`feller_paths`."""
    return feller_paths(dp, x0, t, dt, 1, rng)[0]


@dataclass
class WeightedSample:
    """Empirical measure with one common weight per support point."""

    points: np.ndarray  # (n, d)
    weight: float

    def laplace(self, lam) -> float:
        lam = np.asarray(lam, dtype=float)
        return float(self.weight * np.sum(1.0 - np.exp(-self.points @ lam)))

    def surviving_mass(self, tol: float = 0.0) -> float:
        return float(self.weight * np.sum(self.points.sum(axis=1) > tol))


def entrance_law_estimate(
    dp: DiffusionParams,
    i: int,
    t: float,
    x0: float,
    samples: int,
    rng: np.random.Generator,
    dt: float | None = None,
) -> WeightedSample:
    """Entrance-law approximation: law of Z(t) from x0 * e_i, weighted 1/x0.

    Valid in the small-x0 linear regime; callers should cross-check against
    x0 / 2 (the harness does).  The default step min(1e-3, x0/100) keeps the
    per-step noise well under the starting mass; a coarser step cannot
    resolve the early absorption and biases the weighted functionals upward.
    """
    if t <= 0 or x0 <= 0:
        raise ValueError("need t > 0 and x0 > 0")
    if samples <= 0:
        raise InsufficientSamplesError("need at least one sample")
    if dt is None:
        dt = min(1e-3, x0 / 100.0)
    start = np.zeros(len(dp.diffusion))
    start[i] = x0
    pts = feller_paths(dp, start, t, dt, samples, rng)
    return WeightedSample(points=pts, weight=1.0 / (x0 * samples))


def write_branching_csv(samples: np.ndarray, colony: int, path) -> None:
    """CSV columns: replicate,colony,n1|...|nd."""
    with open(path, "w") as fh:
        fh.write("replicate,colony,n\n")
        for r, row in enumerate(samples):
            n_str = "|".join(str(int(x)) for x in row)
            fh.write(f"{r},{colony},{n_str}\n")


def write_diffusion_csv(samples: np.ndarray, path) -> None:
    """CSV columns: replicate,z1,...,zd."""
    d = samples.shape[1]
    with open(path, "w") as fh:
        fh.write("replicate," + ",".join(f"z{k + 1}" for k in range(d)) + "\n")
        for r, row in enumerate(samples):
            fh.write(str(r) + "," + ",".join(f"{x:.12g}" for x in row) + "\n")
