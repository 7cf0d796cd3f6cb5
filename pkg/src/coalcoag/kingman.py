"""Kingman comparison machinery: rate sandwich, three-process coupling,
moment bound, and the emigrant upper-bound process.

The total block count of the structured coalescent is squeezed between the
block counts of two plain Kingman coalescents, one with merger rate
``alpha_max = max_i alpha[i]`` (below) and one with
``alpha_min_d = min_i alpha[i] / d**2`` (above, up to the floor d+1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import fmt
from .errors import TooFewBlocksError
from .params import ModelParams


def rate_bounds_check(ell, alpha) -> tuple[float, float, float]:
    """Deterministic sandwich of the total coalescence rate numerator.

    Returns (alpha_min_d * m(m-1), sum_i alpha_i l_i (l_i - 1),
    alpha_max * m(m-1)) for m = |l|, valid once m >= d+1.
    """
    ell = np.asarray(ell, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=float)
    d = len(ell)
    m = int(ell.sum())
    if m <= d:
        raise TooFewBlocksError(f"need at least d+1={d + 1} blocks, got {m}")
    lower = float(alpha.min()) / d**2 * m * (m - 1)
    middle = float(np.dot(alpha, ell * (ell - 1)))
    upper = float(alpha.max()) * m * (m - 1)
    tol = 1e-12 * max(1.0, upper)
    assert lower <= middle + tol and middle <= upper + tol
    return lower, middle, upper


@dataclass
class BlockCountPath:
    """Pure-death block-count path; piecewise constant, right-continuous."""

    times: np.ndarray  # jump times, starting at 0.0
    counts: np.ndarray  # value on [times[k], times[k+1])

    def value_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.counts[idx])


def kingman_simulate(
    N: int, rho: float, horizon: float, rng: np.random.Generator
) -> BlockCountPath:
    """Block-counting chain n -> n-1 at rate rho * n(n-1)/2, from N blocks.

    The whole path is a cumulative sum of independent exponentials, clipped
    to ``horizon`` (plain time; no K scaling here).
    """
    if N < 2 or rho <= 0:
        return BlockCountPath(times=np.array([0.0]), counts=np.array([N], dtype=np.int64))
    ns = np.arange(N, 1, -1, dtype=float)
    holds = rng.exponential(2.0 / (rho * ns * (ns - 1)))
    jumps = np.cumsum(holds)
    keep = jumps <= horizon
    times = np.concatenate([[0.0], jumps[keep]])
    counts = np.concatenate([[N], (ns[keep] - 1).astype(np.int64)])
    return BlockCountPath(times=times, counts=counts.astype(np.int64))


def kingman_moment_bound(N: int, rho: float, t: float, p: float) -> float:
    """Analytic bound on E[L(t)^p]: (N**(-1/p) + rho*t/(4p))**(-p)."""
    if N < 1:
        raise ValueError("need N >= 1")
    return (N ** (-1.0 / p) + rho * t / (4.0 * p)) ** (-p)


@dataclass
class CoupledPaths:
    """Joint trajectory of (Lhat, L-vector, Ltilde), recorded per event.

    Times are in rescaled units (unscaled time * K).  The coupling keeps
    Lhat <= |L| <= max(Ltilde, d+1) at every record.
    """

    times: np.ndarray
    lhat: np.ndarray
    l: np.ndarray  # (n_records, d)
    ltilde: np.ndarray
    params: ModelParams

    def l_total(self) -> np.ndarray:
        return self.l.sum(axis=1)

    def invariant_ok(self) -> bool:
        tot = self.l_total()
        upper = np.maximum(self.ltilde, self.params.d + 1)
        return bool(np.all(self.lhat <= tot) and np.all(tot <= upper))


def coupled_simulate(
    p: ModelParams, horizon: float, rng: np.random.Generator
) -> CoupledPaths:
    """Joint construction of the two Kingman bounds and the colony counts.

    One shared exponential clock at rate rho(l) + max of the three
    coalescence rates.  Migration moves only the vector l.  A coalescence
    surely decrements the state with the largest rate; the second largest
    follows with probability (second/largest), and the smallest only then,
    with probability (smallest/second).  Rate ties are broken in the fixed
    order (Lhat, L, Ltilde), which preserves the sandwich.  Once |l| < d+1
    the Ltilde component continues as an independent Kingman chain on a
    stream seeded from the main generator.
    """
    d = p.d
    K = p.K
    horizon_u = horizon / K
    w_out = p.w_out()
    alpha_max = p.alpha_max
    alpha_min_d = p.alpha_min_d

    lhat = int(p.N_K)
    ltilde = int(p.N_K)
    ell = np.asarray(p.L0, dtype=np.int64).copy()

    rec = [(0.0, lhat, ell.copy(), ltilde)]
    t_u = 0.0
    coupled = ell.sum() >= d + 1
    decouple_t = None if coupled else 0.0

    def pair(n: int) -> float:
        return n * (n - 1) / 2.0

    while True:
        rho_w = K * ell * w_out
        rho = float(rho_w.sum())
        chat = alpha_max * pair(lhat)
        cc = float(np.dot(p.alpha, ell * (ell - 1))) / 2.0
        rates = [(chat, 0), (cc, 1)]
        if coupled:
            rates.append((alpha_min_d * pair(ltilde), 2))
        cmax = max(r for r, _ in rates)
        lam = rho + cmax
        if lam <= 0:
            break
        t_u += rng.exponential(1.0 / lam)
        if t_u > horizon_u:
            break
        if rng.random() * lam < rho:
            i = _weighted_pick(rho_w, rng)
            j = _weighted_pick(p.W[i], rng)
            ell[i] -= 1
            ell[j] += 1
        else:
            order = sorted(rates, key=lambda r: -r[0])  # stable: ties keep fixed order
            lhat, ell, ltilde = _dec(order[0][1], lhat, ell, ltilde, p, rng)
            if len(order) > 1 and order[1][0] > 0 and rng.random() < order[1][0] / order[0][0]:
                lhat, ell, ltilde = _dec(order[1][1], lhat, ell, ltilde, p, rng)
                if len(order) > 2 and order[2][0] > 0 and rng.random() < order[2][0] / order[1][0]:
                    lhat, ell, ltilde = _dec(order[2][1], lhat, ell, ltilde, p, rng)
        rec.append((t_u * K, lhat, ell.copy(), ltilde))
        if coupled and ell.sum() < d + 1:
            coupled = False
            decouple_t = t_u

    if decouple_t is not None:
        tilde_rng = np.random.default_rng(int(rng.integers(2**63)))
        tail = kingman_simulate(ltilde, alpha_min_d, horizon_u - decouple_t, tilde_rng)
        rec = _merge_tilde_tail(rec, decouple_t, tail, K)

    times = np.array([r[0] for r in rec])
    return CoupledPaths(
        times=times,
        lhat=np.array([r[1] for r in rec], dtype=np.int64),
        l=np.array([r[2] for r in rec], dtype=np.int64),
        ltilde=np.array([r[3] for r in rec], dtype=np.int64),
        params=p,
    )


def _dec(which: int, lhat, ell, ltilde, p: ModelParams, rng) -> tuple:
    if which == 0:
        return lhat - 1, ell, ltilde
    if which == 2:
        return lhat, ell, ltilde - 1
    w = p.alpha * ell * (ell - 1) / 2.0
    i = _weighted_pick(w, rng)
    ell = ell.copy()
    ell[i] -= 1
    return lhat, ell, ltilde


def _weighted_pick(weights, rng: np.random.Generator) -> int:
    weights = np.asarray(weights, dtype=float)
    tot = weights.sum()
    u = rng.random() * tot
    acc = 0.0
    last = 0
    for idx, w in enumerate(weights):
        if w <= 0:
            continue
        acc += w
        last = idx
        if u < acc:
            return idx
    return last


def _merge_tilde_tail(rec, decouple_t_u, tail: BlockCountPath, K: float):
    """Interleave independent Ltilde jumps into the main record stream."""
    out = []
    tilde_events = [
        (decouple_t_u + float(t), int(c)) for t, c in zip(tail.times[1:], tail.counts[1:])
    ]
    k = 0
    cur_tilde = None
    for row in rec:
        t_scaled, lhat, ell, ltilde = row
        while k < len(tilde_events) and tilde_events[k][0] * K <= t_scaled:
            te, tc = tilde_events[k]
            prev = out[-1]
            out.append((te * K, prev[1], prev[2], tc))
            cur_tilde = tc
            k += 1
        out.append((t_scaled, lhat, ell, ltilde if cur_tilde is None else cur_tilde))
    while k < len(tilde_events):
        te, tc = tilde_events[k]
        prev = out[-1]
        out.append((te * K, prev[1], prev[2], tc))
        k += 1
    return out


@dataclass
class EmigrantBoundPath:
    """Nondecreasing counter driven by a single-type Kingman coalescent.

    ``times`` are rescaled; ``values[k]`` holds on [times[k], times[k+1]).
    ``blocks`` is the final block-size multiset of the driving coalescent.
    """

    times: np.ndarray
    values: np.ndarray
    blocks: list[int]

    def value_at(self, t_scaled: float) -> int:
        idx = int(np.searchsorted(self.times, t_scaled, side="right")) - 1
        return int(self.values[idx])

    def final(self) -> int:
        return int(self.values[-1])


def simulate_emigration_bound(
    L0_i: int,
    w_i: float,
    alpha_i: float,
    K: float,
    horizon_scaled: float,
    rng: np.random.Generator,
) -> EmigrantBoundPath:
    """Upper-bound process for emigrated home-color leaves.

    A single-type Kingman coalescent at rate ``alpha_i`` starts from
    ``L0_i`` singletons.  Independently, at rate ``w_i * K`` per block, the
    current size of a uniformly chosen block is added to the counter (the
    block itself stays, mirroring the duplication device).  The counter mean
    at rescaled time t is exactly ``w_i * L0_i * t``.
    """
    horizon_u = horizon_scaled / K
    blocks = [1] * int(L0_i)
    times = [0.0]
    values = [0]
    ehat = 0
    t_u = 0.0
    while True:
        n = len(blocks)
        coal = alpha_i * n * (n - 1) / 2.0
        count = w_i * K * n
        tot = coal + count
        if tot <= 0:
            break
        t_u += rng.exponential(1.0 / tot)
        if t_u > horizon_u:
            break
        if rng.random() * tot < count:
            ehat += blocks[int(rng.integers(n))]
            times.append(t_u * K)
            values.append(ehat)
        else:
            a = int(rng.integers(n))
            b = int(rng.integers(n - 1))
            if b >= a:
                b += 1
            blocks[a] += blocks[b]
            blocks[b] = blocks[-1]
            blocks.pop()
    return EmigrantBoundPath(
        times=np.array(times), values=np.array(values, dtype=np.int64), blocks=blocks
    )


def write_coupled_csv(paths: CoupledPaths, path) -> None:
    """CSV columns: t,lhat,l_total,ltilde."""
    tot = paths.l_total()
    with open(path, "w") as fh:
        fh.write("t,lhat,l_total,ltilde\n")
        for k in range(len(paths.times)):
            fh.write(
                f"{fmt(paths.times[k])},{paths.lhat[k]},{tot[k]},{paths.ltilde[k]}\n"
            )


def write_emigrant_csv(path_obj: EmigrantBoundPath, path) -> None:
    """CSV columns: t,ehat."""
    with open(path, "w") as fh:
        fh.write("t,ehat\n")
        for t, v in zip(path_obj.times, path_obj.values):
            fh.write(f"{fmt(t)},{v}\n")
