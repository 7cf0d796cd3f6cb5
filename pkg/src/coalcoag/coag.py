"""Deterministic solvers for the limiting coagulation systems.

Four coupled objects, all integrated with fixed-step classical RK4 so that
outputs are byte-for-byte reproducible:

* the discrete lattice system for u_i(t, n), n in N_0^d minus the origin,

      du_i(n)/dt = alpha_i ( (u_i * u_i)(n)/2 - rho_i u_i(n) )
                   + sum_{j != i} ( W[j,i] u_j(n) - W[i,j] u_i(n) ),

  with u_i(0, n) = c beta_i at n = e_i, where * is the lattice convolution
  over ordered nonzero decompositions;
* its total-mass companion rho_i(t) (a coupled Riccati system), which also
  supplies the exact loss term above so that lattice truncation only affects
  the gain term;
* the probability-generating-function system for the branching
  representation of the critical limit;
* the Laplace-exponent system dv/dt = -psi(v) for the large-sampling limit,
  with psi the branching mechanism of the d-type square-root diffusion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import StepTooLargeError, ZeroBetaError
from .params import CRITICAL, ModelParams

NEG_FLOOR = -1e-9  # below this a step is rejected; above, clipped to zero


# ---------------------------------------------------------------------------
# lattice grid and convolution


@dataclass
class CoagGrid:
    """All lattice points n != 0 with ||n||_1 <= n_max, in lexicographic order."""

    d: int
    n_max: int
    points: np.ndarray  # (n_pts, d) int64
    index: dict[tuple, int]
    conv_a: np.ndarray  # ordered pair source indices
    conv_b: np.ndarray
    conv_t: np.ndarray  # target index of points[a] + points[b]

    @property
    def n_pts(self) -> int:
        return len(self.points)

    def convolve_values(self, u: np.ndarray) -> np.ndarray:
        """(u * u) on the grid for a value vector u, exact up to truncation."""
        return np.bincount(
            self.conv_t, weights=u[self.conv_a] * u[self.conv_b], minlength=self.n_pts
        )


def make_grid(d: int, n_max: int) -> CoagGrid:
    pts = [p for p in _lattice_points(d, n_max) if sum(p) > 0]
    pts.sort()
    points = np.array(pts, dtype=np.int64)
    index = {tuple(pt): k for k, pt in enumerate(pts)}
    a_idx, b_idx, t_idx = [], [], []
    norms = points.sum(axis=1)
    for ia, pa in enumerate(pts):
        na = norms[ia]
        for ib, pb in enumerate(pts):
            if na + norms[ib] > n_max:
                continue
            a_idx.append(ia)
            b_idx.append(ib)
            t_idx.append(index[tuple(x + y for x, y in zip(pa, pb))])
    return CoagGrid(
        d=d,
        n_max=n_max,
        points=points,
        index=index,
        conv_a=np.array(a_idx, dtype=np.int64),
        conv_b=np.array(b_idx, dtype=np.int64),
        conv_t=np.array(t_idx, dtype=np.int64),
    )


def _lattice_points(d: int, n_max: int):
    if d == 1:
        for k in range(n_max + 1):
            yield (k,)
        return
    for k in range(n_max + 1):
        for rest in _lattice_points(d - 1, n_max - k):
            yield (k,) + rest


def convolve(u: dict, n) -> float:
    """Lattice convolution (u * u)(n): sum over ordered nonzero n1 + n2 = n.

    ``u`` maps nonzero lattice tuples to values.
    """
    n = tuple(int(x) for x in n)
    out = 0.0
    for n1, v1 in u.items():
        if sum(n1) == 0:
            continue
        n2 = tuple(a - b for a, b in zip(n, n1))
        if any(x < 0 for x in n2) or sum(n2) == 0:
            continue
        out += v1 * u.get(n2, 0.0)
    return out


def rhs_discrete(u: list[dict], rho, p: ModelParams, n_max: int | None = None) -> list[dict]:
    """Right-hand side of the lattice system on dict-valued slices.

    ``rho`` is the exact total-mass vector used in the loss term.  Values are
    reported on every lattice point reachable from the supports (capped at
    ``n_max`` when given).  This is the reference route; the array solver is
    checked against it.
    """
    d = p.d
    rho = np.asarray(rho, dtype=float)
    supports = [set(ui.keys()) for ui in u]
    targets = set()
    for s in supports:
        targets |= s
        for a in s:
            for b in s:
                t = tuple(x + y for x, y in zip(a, b))
                if n_max is None or sum(t) <= n_max:
                    targets.add(t)
    out = []
    for i in range(d):
        dui = {}
        for n in sorted(targets):
            gain = 0.5 * convolve(u[i], n)
            loss = rho[i] * u[i].get(n, 0.0)
            mig = 0.0
            for j in range(d):
                if j == i:
                    continue
                mig += p.W[j, i] * u[j].get(n, 0.0) - p.W[i, j] * u[i].get(n, 0.0)
            val = p.alpha[i] * (gain - loss) + mig
            if val != 0.0:
                dui[n] = val
        out.append(dui)
    return out


# ---------------------------------------------------------------------------
# fixed-step RK4 driver


@dataclass
class OdePath:
    """Dense fixed-step trajectory; linear interpolation between nodes."""

    times: np.ndarray
    values: np.ndarray  # (n_nodes, dim)

    def value_at(self, t: float) -> np.ndarray:
        if t <= self.times[0]:
            return self.values[0]
        if t >= self.times[-1]:
            return self.values[-1]
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        h = self.times[k + 1] - self.times[k]
        w = (t - self.times[k]) / h
        return (1 - w) * self.values[k] + w * self.values[k + 1]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def _rk4_path(rhs, y0: np.ndarray, horizon: float, dt: float) -> OdePath:
    """Classical RK4 with steps of horizon / round(horizon / dt).

    Rejects the whole run (StepTooLargeError) if any component falls below
    the negativity floor; values in (floor, 0) are clipped to zero.
    """
    y0 = np.asarray(y0, dtype=float)
    if horizon == 0:
        return OdePath(times=np.array([0.0]), values=y0[None, :].copy())
    steps = max(1, round(horizon / dt))
    h = horizon / steps
    times = np.linspace(0.0, horizon, steps + 1)
    out = np.empty((steps + 1, len(y0)))
    out[0] = y0
    y = y0.copy()
    for k in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        low = y.min()
        if low < NEG_FLOOR:
            raise StepTooLargeError(f"component reached {low:.3e} at step {k + 1}")
        if low < 0:
            np.clip(y, 0.0, None, out=y)
        out[k + 1] = y
    return OdePath(times=times, values=out)


def _solve_with_retry(build_rhs, y0, horizon, dt, max_halvings: int = 6):
    for _ in range(max_halvings + 1):
        try:
            return _rk4_path(build_rhs, y0, horizon, dt), dt
        except StepTooLargeError:
            dt /= 2.0
    raise StepTooLargeError(f"still unstable after {max_halvings} halvings (dt={dt})")


# ---------------------------------------------------------------------------
# solvers


def _require_critical(p: ModelParams) -> None:
    if p.regime != CRITICAL or p.c is None or p.beta is None:
        raise ValueError("critical-regime parameters with c and beta required")


def total_mass_rhs(rho: np.ndarray, p: ModelParams) -> np.ndarray:
    """d rho_i = -alpha_i/2 rho_i^2 + sum_{j != i} (W[j,i] rho_j - W[i,j] rho_i)."""
    W = p.W
    return -0.5 * p.alpha * rho**2 + W.T @ rho - p.w_out() * rho


def solve_total_mass(p: ModelParams, horizon: float, dt: float = 1e-3) -> OdePath:
    """Total-mass companion system from rho(0) = c * beta."""
    _require_critical(p)
    y0 = p.c * p.beta
    path, _ = _solve_with_retry(lambda y: total_mass_rhs(y, p), y0, horizon, dt)
    return path


@dataclass
class DiscreteSolution:
    """Lattice solution sampled at requested times, plus its mass companion."""

    grid: CoagGrid
    times: np.ndarray
    u: np.ndarray  # (n_times, d, n_pts)
    rho: np.ndarray  # (n_times, d)
    params: ModelParams
    dt: float

    def u_at(self, t_index: int, colony: int, n) -> float:
        idx = self.grid.index.get(tuple(int(x) for x in n))
        if idx is None:
            return 0.0
        return float(self.u[t_index, colony, idx])

    def mass(self, t_index: int, colony: int) -> float:
        return float(self.u[t_index, colony].sum())

    def integrate(self, t_index: int, colony: int, f) -> float:
        vals = np.asarray(f(self.grid.points.astype(float)), dtype=float)
        return float(np.dot(vals, self.u[t_index, colony]))


def solve_discrete(
    p: ModelParams,
    horizon: float,
    n_max: int = 40,
    dt: float = 1e-3,
    t_eval=None,
    grid: CoagGrid | None = None,
) -> DiscreteSolution:
    """Integrate the truncated lattice system jointly with its mass companion.

    The loss term uses the companion rho rather than the truncated sum, so
    truncation error is confined to the gain term.  On a negativity failure
    the whole run is retried with dt halved, up to six times.
    """
    _require_critical(p)
    d = p.d
    if grid is None:
        grid = make_grid(d, n_max)
    n_pts = grid.n_pts
    u0 = np.zeros((d, n_pts))
    for i in range(d):
        e_i = tuple(1 if k == i else 0 for k in range(d))
        u0[i, grid.index[e_i]] = p.c * p.beta[i]
    y0 = np.concatenate([u0.reshape(-1), p.c * p.beta])

    W_T = p.W.T.copy()
    w_out = p.w_out()
    alpha = p.alpha

    def rhs(y: np.ndarray) -> np.ndarray:
        u = y[: d * n_pts].reshape(d, n_pts)
        rho = y[d * n_pts :]
        du = np.empty_like(u)
        for i in range(d):
            du[i] = alpha[i] * (0.5 * grid.convolve_values(u[i]) - rho[i] * u[i])
        du += W_T @ u - w_out[:, None] * u
        drho = total_mass_rhs(rho, p)
        return np.concatenate([du.reshape(-1), drho])

    path, dt_used = _solve_with_retry(rhs, y0, horizon, dt)

    if t_eval is None:
        t_eval = [horizon]
    times = np.asarray(t_eval, dtype=float)
    sel = np.array([int(np.argmin(np.abs(path.times - t))) for t in times])
    if np.max(np.abs(path.times[sel] - times)) > 1e-9 + dt_used:
        raise ValueError("t_eval must lie on the integration grid")
    vals = path.values[sel]
    u = vals[:, : d * n_pts].reshape(len(times), d, n_pts)
    rho = vals[:, d * n_pts :]
    return DiscreteSolution(grid=grid, times=times, u=u, rho=rho, params=p, dt=dt_used)


def psi(lam, p: ModelParams) -> np.ndarray:
    """Branching mechanism of the d-type square-root diffusion.

    psi_i(lam) = alpha_i beta_i lam_i^2 / 2
                 - sum_{j != i} ( W[j,i] (beta_j / beta_i) lam_j - W[i,j] lam_i ).
    """
    if p.beta is None or np.any(p.beta <= 0):
        raise ZeroBetaError("psi requires strictly positive beta")
    lam = np.asarray(lam, dtype=float)
    M = p.W.T * (p.beta[None, :] / p.beta[:, None])  # M[i, j] = W[j,i] beta_j / beta_i
    np.fill_diagonal(M, 0.0)
    return 0.5 * p.alpha * p.beta * lam**2 - (M @ lam - p.w_out() * lam)


def solve_laplace_exponent(
    p: ModelParams, lam, horizon: float, dt: float = 1e-3
) -> OdePath:
    """dv/dt = -psi(v) from v(0) = lam; componentwise nonnegative.

    Roundoff below -1e-12 triggers a warning before clipping; anything below
    the hard floor rejects the step size.
    """
    lam = np.asarray(lam, dtype=float)
    path, _ = _solve_with_retry(lambda v: -psi(v, p), lam, horizon, dt)
    low = path.values.min()
    if low < -1e-12:
        warnings.warn(f"laplace exponent dipped to {low:.3e}; clipped to 0")
    np.clip(path.values, 0.0, None, out=path.values)
    return path


def generating_function_rhs(v: np.ndarray, bp) -> np.ndarray:
    """Backward pgf equation of the branching representation.

    dv_i = b_i v_i^2 + d_i - (b_i + d_i) v_i + sum_{j != i} m_{ij} (v_j - v_i),
    with b_i the branching rate, d_i the death rate and m the type-switch
    matrix.  v = 1 is a fixed point.
    """
    b, dd, m = bp.branch, bp.death, bp.migrate
    switch = m @ v - m.sum(axis=1) * v
    return b * v**2 + dd - (b + dd) * v + switch


def solve_generating_function(
    p: ModelParams, lam, horizon: float, dt: float = 1e-3
) -> OdePath:
    """Integrate the pgf system from v(0) = lam in [0, 1]^d.

    Emits a warning when some death rate is negative (the probabilistic
    representation is then invalid, but the ODE itself is still solvable).
    """
    from .stochastic import branching_params

    bp = branching_params(p)
    if not bp.valid_representation:
        warnings.warn("some death rate is negative; pgf ODE solved anyway")
    lam = np.asarray(lam, dtype=float)
    path, _ = _solve_with_retry(lambda v: generating_function_rhs(v, bp), lam, horizon, dt)
    return path


def write_discrete_csv(sol: DiscreteSolution, path) -> None:
    """CSV columns: t,colony,n1|...|nd,u."""
    with open(path, "w") as fh:
        fh.write("t,colony,n,u\n")
        for ti, t in enumerate(sol.times):
            for i in range(sol.params.d):
                for k, pt in enumerate(sol.grid.points):
                    v = sol.u[ti, i, k]
                    if v != 0.0:
                        n_str = "|".join(str(int(x)) for x in pt)
                        fh.write(f"{t:.12g},{i},{n_str},{v:.12g}\n")


def write_mass_csv(path_obj: OdePath, d: int, path) -> None:
    """CSV columns: t,colony,rho."""
    with open(path, "w") as fh:
        fh.write("t,colony,rho\n")
        for t, row in zip(path_obj.times, path_obj.values):
            for i in range(d):
                fh.write(f"{t:.12g},{i},{row[i]:.12g}\n")


def write_exponent_csv(path_obj: OdePath, lam, path) -> None:
    """CSV columns: t,colony,lambda1|...|lambdad,v."""
    lam_str = "|".join(f"{x:.12g}" for x in np.asarray(lam, dtype=float))
    with open(path, "w") as fh:
        fh.write("t,colony,lambda,v\n")
        for t, row in zip(path_obj.times, path_obj.values):
            for i in range(len(row)):
                fh.write(f"{t:.12g},{i},{lam_str},{row[i]:.12g}\n")
