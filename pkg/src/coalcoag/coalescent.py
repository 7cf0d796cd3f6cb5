"""Exact continuous-time simulation of the structured coalescent.

State: per colony, a multiset of block *configurations* (a configuration is
the d-vector counting sampled leaves of each initial color carried by the
block).  Dynamics in unscaled model time:

* each block in colony i migrates to colony j at rate ``K * W[i, j]``;
* each unordered pair of blocks in colony i coalesces at rate ``alpha[i]``,
  the merged block's configuration being the coordinatewise sum.

Observables are read through the rescaled empirical measures: colony i
carries mass ``1/K`` at lattice point ``k / s_K`` per block with
configuration ``k``, observed at slowed time ``t / K``.  Public horizons are
therefore in rescaled time; ``CoalescentState.time`` stays unscaled.

All dynamics depend on configurations only, so the multiset keeps memory at
the number of distinct configurations rather than the number of blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._util import fmt
from .errors import AbsorbedError, NonPositiveLambdaError
from .params import ModelParams

Configuration = tuple[int, ...]

MIGRATION = "migration"
COALESCENCE = "coalescence"


class ColonyState:
    """Multiset of block configurations present in one colony."""

    __slots__ = ("blocks", "block_count")

    def __init__(self, blocks: dict[Configuration, int] | None = None):
        self.blocks: dict[Configuration, int] = dict(blocks) if blocks else {}
        self.block_count = sum(self.blocks.values())

    def add(self, cfg: Configuration, k: int = 1) -> None:
        self.blocks[cfg] = self.blocks.get(cfg, 0) + k
        self.block_count += k

    def remove(self, cfg: Configuration) -> None:
        n = self.blocks[cfg]
        if n == 1:
            del self.blocks[cfg]
        else:
            self.blocks[cfg] = n - 1
        self.block_count -= 1

    def copy(self) -> "ColonyState":
        return ColonyState(self.blocks)

    def sample_block(self, rng: np.random.Generator) -> Configuration:
        """One block uniformly at random (configurations weighted by count)."""
        u = int(rng.integers(self.block_count))
        acc = 0
        for cfg, cnt in self.blocks.items():
            acc += cnt
            if u < acc:
                return cfg
        raise RuntimeError("inconsistent block_count")

    def sample_pair(self, rng: np.random.Generator) -> tuple[Configuration, Configuration]:
        """An unordered pair of distinct blocks, uniform over all pairs.

        Same-configuration pairs get weight count*(count-1)/2 automatically:
        the second draw is uniform on the remaining blocks.
        """
        L = self.block_count
        u1 = int(rng.integers(L))
        acc = 0
        first = None
        first_end = 0
        for cfg, cnt in self.blocks.items():
            acc += cnt
            if u1 < acc:
                first = cfg
                first_end = acc
                break
        u2 = int(rng.integers(L - 1))
        if u2 >= first_end - 1:  # skip one unit of the first block's run
            u2 += 1
        acc = 0
        for cfg, cnt in self.blocks.items():
            acc += cnt
            if u2 < acc:
                return first, cfg
        raise RuntimeError("inconsistent block_count")


@dataclass
class Event:
    """One realized transition, at unscaled time ``time``."""

    kind: str
    time: float
    i: int
    j: int | None = None
    c1: Configuration | None = None
    c2: Configuration | None = None


@dataclass
class CoalescentState:
    """Colonies, unscaled clock, and emigrant counters.

    ``emigrants[i]`` tracks the number of color-i leaves currently carried by
    blocks outside colony i.
    """

    colonies: list[ColonyState]
    time: float = 0.0
    emigrants: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def copy(self) -> "CoalescentState":
        return CoalescentState(
            colonies=[c.copy() for c in self.colonies],
            time=self.time,
            emigrants=self.emigrants.copy(),
        )

    def block_counts(self) -> np.ndarray:
        return np.array([c.block_count for c in self.colonies], dtype=np.int64)

    def total_blocks(self) -> int:
        return int(sum(c.block_count for c in self.colonies))

    def color_totals(self) -> np.ndarray:
        """Total leaves of each color across all blocks and colonies."""
        d = len(self.colonies)
        tot = np.zeros(d, dtype=np.int64)
        for colony in self.colonies:
            for cfg, cnt in colony.blocks.items():
                tot += cnt * np.asarray(cfg, dtype=np.int64)
        return tot


def init_state(p: ModelParams) -> CoalescentState:
    """Colony i starts with ``L0[i]`` singleton blocks of configuration e_i."""
    colonies = []
    for i in range(p.d):
        e_i = tuple(1 if k == i else 0 for k in range(p.d))
        colonies.append(ColonyState({e_i: int(p.L0[i])} if p.L0[i] > 0 else {}))
    return CoalescentState(colonies=colonies, time=0.0, emigrants=np.zeros(p.d, dtype=np.int64))


def event_rates(s: CoalescentState, p: ModelParams) -> tuple[float, np.ndarray]:
    """(total migration rate, per-colony coalescence rates), unscaled time."""
    L = s.block_counts()
    mig = float(p.K * np.dot(L, p.w_out()))
    coal = p.alpha * L * (L - 1) / 2.0
    return mig, coal


def step(
    s: CoalescentState,
    p: ModelParams,
    rng: np.random.Generator,
    t_max: float | None = None,
) -> tuple[CoalescentState, Event | None]:
    """Advance by one exponential holding time and apply one event in place.

    With ``t_max`` (unscaled), a holding time overshooting it freezes the
    clock at ``t_max`` and returns no event; by memorylessness this is an
    exact observation of the chain at ``t_max``.  Raises
    :class:`AbsorbedError` when nothing can move.
    """
    L = s.block_counts()
    w_out = p.w_out()
    mig_w = p.K * L * w_out
    mig_total = float(mig_w.sum())
    coal_w = p.alpha * L * (L - 1) / 2.0
    coal_total = float(coal_w.sum())
    total = mig_total + coal_total
    if total <= 0.0:
        raise AbsorbedError("no transition has positive rate")

    dt = rng.exponential(1.0 / total)
    if t_max is not None and s.time + dt > t_max:
        s.time = t_max
        return s, None
    s.time += dt

    u = rng.random() * total
    if u < mig_total:
        # migration: colony by weight, then destination row, then block
        i = _pick(mig_w, rng.random() * mig_total)
        row = p.W[i]
        j = _pick(row, rng.random() * float(row.sum()))
        cfg = s.colonies[i].sample_block(rng)
        s.colonies[i].remove(cfg)
        s.colonies[j].add(cfg)
        s.emigrants[i] += cfg[i]
        s.emigrants[j] -= cfg[j]
        return s, Event(kind=MIGRATION, time=s.time, i=i, j=j, c1=cfg)

    i = _pick(coal_w, rng.random() * coal_total)
    c1, c2 = s.colonies[i].sample_pair(rng)
    s.colonies[i].remove(c1)
    s.colonies[i].remove(c2)
    merged = tuple(a + b for a, b in zip(c1, c2))
    s.colonies[i].add(merged)
    return s, Event(kind=COALESCENCE, time=s.time, i=i, c1=c1, c2=c2)


def _pick(weights, u: float) -> int:
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


def simulate_until(
    s: CoalescentState,
    p: ModelParams,
    t_scaled: float,
    rng: np.random.Generator,
) -> CoalescentState:
    """Run the chain to rescaled time ``t_scaled`` (unscaled ``t_scaled / K``).

    Absorption is a valid terminal state.  The result is a deterministic
    function of (state, params, t_scaled, generator state).
    """
    target = t_scaled / p.K
    if target < s.time - 1e-15:
        raise ValueError("t_scaled is in the past")
    while s.time < target:
        try:
            s, ev = step(s, p, rng, t_max=target)
        except AbsorbedError:
            s.time = target
            break
        if ev is None:
            break
    return s


@dataclass
class EmpiricalMeasure:
    """Finite atomic measure on the rescaled configuration lattice.

    Atoms are stored at exact integer lattice points ``k``; the physical
    location is ``k / s_K``.  Masses are multiples of 1/K.
    """

    atoms: dict[Configuration, float]
    s_K: float = 1.0

    def total_mass(self) -> float:
        return float(sum(self.atoms.values()))

    def points_masses(self) -> tuple[np.ndarray, np.ndarray]:
        """(n, d) array of rescaled positions and (n,) masses."""
        if not self.atoms:
            return np.zeros((0, 0)), np.zeros(0)
        pts = np.array(list(self.atoms.keys()), dtype=float) / self.s_K
        masses = np.fromiter(self.atoms.values(), dtype=float, count=len(self.atoms))
        return pts, masses

    def integrate(self, f) -> float:
        """sum over atoms of f(position) * mass; f may be vectorized over rows."""
        pts, masses = self.points_masses()
        if len(masses) == 0:
            return 0.0
        vals = _apply_rows(f, pts)
        return float(np.dot(vals, masses))

    def laplace_functional(self, lam) -> float:
        """<measure, 1 - exp(-<lam, x>)> for strictly positive lam."""
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0):
            raise NonPositiveLambdaError("lambda must be positive componentwise")
        pts, masses = self.points_masses()
        if len(masses) == 0:
            return 0.0
        return float(np.dot(1.0 - np.exp(-pts @ lam), masses))


def _apply_rows(f, pts: np.ndarray) -> np.ndarray:
    vals = np.asarray(f(pts), dtype=float)
    if vals.shape != (pts.shape[0],):
        vals = np.array([float(f(x)) for x in pts])
    return vals


def integrate(m: EmpiricalMeasure, f) -> float:
    return m.integrate(f)


def laplace_functional(m: EmpiricalMeasure, lam) -> float:
    return m.laplace_functional(lam)


def to_empirical(s: CoalescentState, p: ModelParams) -> list[EmpiricalMeasure]:
    """Rescaled empirical measures: mass count/K at lattice point k/s_K."""
    out = []
    for colony in s.colonies:
        atoms = {cfg: cnt / p.K for cfg, cnt in colony.blocks.items()}
        out.append(EmpiricalMeasure(atoms=atoms, s_K=p.s_K))
    return out


def mono_poly_split(
    s: CoalescentState, p: ModelParams
) -> tuple[list[EmpiricalMeasure], list[EmpiricalMeasure]]:
    """Home-color / foreign-color decomposition of each colony's measure.

    For a block with configuration k in colony i the mono part keeps only
    coordinate i and the poly part zeroes it, so the two atoms sum to the
    original coordinatewise (the poly atom may sit at the origin).
    """
    mono, poly = [], []
    for i, colony in enumerate(s.colonies):
        m_atoms: dict[Configuration, float] = {}
        p_atoms: dict[Configuration, float] = {}
        for cfg, cnt in colony.blocks.items():
            mass = cnt / p.K
            mk = tuple(cfg[h] if h == i else 0 for h in range(p.d))
            pk = tuple(0 if h == i else cfg[h] for h in range(p.d))
            m_atoms[mk] = m_atoms.get(mk, 0.0) + mass
            p_atoms[pk] = p_atoms.get(pk, 0.0) + mass
        mono.append(EmpiricalMeasure(atoms=m_atoms, s_K=p.s_K))
        poly.append(EmpiricalMeasure(atoms=p_atoms, s_K=p.s_K))
    return mono, poly


def _base_vector(q: list[EmpiricalMeasure], f) -> np.ndarray:
    return np.array([q[i].integrate(f[i]) for i in range(len(q))])


def evaluate_generator(q: list[EmpiricalMeasure], F, f, p: ModelParams) -> float:
    """Exact finite-K generator applied to H(q) = F(<q_1,f_1>,...,<q_d,f_d>).

    Enumerates every migration and coalescence transition of a state
    supported on the rescaled lattice, including the same-configuration
    correction weight mass*(K*mass - 1).  ``F`` must accept an (m, d) array
    of evaluation points and return (m,) values; each ``f[i]`` must accept an
    (m, d) array of lattice positions.
    """
    d = p.d
    K = p.K
    base = _base_vector(q, f)
    Fbase = float(_apply_rows(F, base[None, :])[0])
    total = 0.0

    for i in range(d):
        pts, masses = q[i].points_masses()
        n = len(masses)
        if n == 0:
            continue
        # migrations out of colony i
        for j in range(d):
            if j == i or p.W[i, j] <= 0:
                continue
            pert = np.tile(base, (n, 1))
            pert[:, j] += _apply_rows(f[j], pts) / K
            pert[:, i] -= _apply_rows(f[i], pts) / K
            weights = K * p.W[i, j] * masses
            total += float(np.dot(weights, _apply_rows(F, pert) - Fbase))
        # coalescences within colony i, all ordered pairs at once
        fX = _apply_rows(f[i], pts)
        sums = (pts[:, None, :] + pts[None, :, :]).reshape(n * n, -1)
        fS = _apply_rows(f[i], sums).reshape(n, n)
        delta = fS - fX[:, None] - fX[None, :]
        wt = (K / 2.0) * p.alpha[i] * np.outer(masses, masses)
        np.fill_diagonal(wt, 0.5 * p.alpha[i] * masses * (K * masses - 1.0))
        pert = np.tile(base, (n * n, 1))
        pert[:, i] += delta.reshape(-1) / K
        total += float(np.dot(wt.reshape(-1), _apply_rows(F, pert) - Fbase))
    return total


def evaluate_limit_generator(
    q: list[EmpiricalMeasure], F, f, p: ModelParams, grad_F=None
) -> float:
    """Limiting generator on H(q) = F(<q,f>).

    Migration part: sum over i != j of W[i,j] (<f_j,q_i> dF_j - <f_i,q_i> dF_i).
    Coalescence part: (1/2) sum_i (<f_i, q_i * q_i> - 2 <1,q_i><f_i,q_i>) dF_i,
    with * the measure convolution.  Partials of F come from ``grad_F`` or
    central differences with h = 1e-6 * max(1, |coordinate|).
    """
    d = p.d
    base = _base_vector(q, f)
    if grad_F is not None:
        dF = np.asarray(grad_F(base), dtype=float)
    else:
        dF = np.zeros(d)
        for j in range(d):
            h = 1e-6 * max(1.0, abs(base[j]))
            bp, bm = base.copy(), base.copy()
            bp[j] += h
            bm[j] -= h
            vals = _apply_rows(F, np.vstack([bp, bm]))
            dF[j] = (vals[0] - vals[1]) / (2 * h)

    mig = 0.0
    for i in range(d):
        for j in range(d):
            if j == i or p.W[i, j] <= 0:
                continue
            mig += p.W[i, j] * (q[i].integrate(f[j]) * dF[j] - q[i].integrate(f[i]) * dF[i])

    coag = 0.0
    for i in range(d):
        pts, masses = q[i].points_masses()
        if len(masses) == 0:
            continue
        n = len(masses)
        sums = (pts[:, None, :] + pts[None, :, :]).reshape(n * n, -1)
        conv = float(np.dot(np.outer(masses, masses).reshape(-1), _apply_rows(f[i], sums)))
        coag += 0.5 * (conv - 2.0 * q[i].total_mass() * q[i].integrate(f[i])) * dF[i]
    return mig + coag


def config_str(cfg: Configuration | None) -> str:
    return "" if cfg is None else "|".join(str(int(k)) for k in cfg)


def write_event_log(events: list[Event], path) -> None:
    """CSV columns: t_unscaled,kind,i,j,c1,c2 (configs as k1|k2|...|kd)."""
    with open(path, "w") as fh:
        fh.write("t_unscaled,kind,i,j,c1,c2\n")
        for ev in events:
            j = "" if ev.j is None else str(ev.j)
            fh.write(
                f"{fmt(ev.time)},{ev.kind},{ev.i},{j},{config_str(ev.c1)},{config_str(ev.c2)}\n"
            )


def write_snapshot(s: CoalescentState, path) -> None:
    """CSV columns: colony,config,count, sorted for stable bytes."""
    with open(path, "w") as fh:
        fh.write("colony,config,count\n")
        for i, colony in enumerate(s.colonies):
            for cfg in sorted(colony.blocks):
                fh.write(f"{i},{config_str(cfg)},{colony.blocks[cfg]}\n")
