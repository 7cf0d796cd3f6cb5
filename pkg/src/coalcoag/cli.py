"""Command-line front end.

    coalcoag <simulate|solve|couple|verify> --config cfg.json --out out.csv
             [--seed N] [--threads N]

``verify`` runs one of the harness experiments and exits 0 only if every
report row passed.  ``simulate`` writes a final-state snapshot (and an event
log when the config names one), ``solve`` runs one of the deterministic
solvers, ``couple`` writes one three-process coupled path.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .coag import (
    solve_discrete,
    solve_generating_function,
    solve_laplace_exponent,
    solve_total_mass,
    write_discrete_csv,
    write_exponent_csv,
    write_mass_csv,
)
from .coalescent import init_state, step, write_event_log, write_snapshot
from .errors import AbsorbedError
from .harness import run_from_dict, write_report
from .kingman import coupled_simulate, write_coupled_csv
from .params import params_from_dict


def _load(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _rng(cfg: dict, seed_arg) -> np.random.Generator:
    seed = seed_arg if seed_arg is not None else cfg.get("seed", 0)
    return np.random.default_rng(np.random.SeedSequence(seed))


def cmd_simulate(cfg: dict, out: str, seed, threads) -> int:
    p = params_from_dict(cfg)
    rng = _rng(cfg, seed)
    horizon = cfg.get("horizon", 1.0)
    s = init_state(p)
    events = []
    target_u = horizon / p.K
    while s.time < target_u:
        try:
            s, ev = step(s, p, rng, t_max=target_u)
        except AbsorbedError:
            break
        if ev is None:
            break
        events.append(ev)
    write_snapshot(s, out)
    if cfg.get("event_log_out"):
        write_event_log(events, cfg["event_log_out"])
    return 0


def cmd_solve(cfg: dict, out: str, seed, threads) -> int:
    p = params_from_dict(cfg)
    which = cfg.get("solver", "total_mass")
    horizon = cfg.get("horizon", 1.0)
    dt = cfg.get("dt", 1e-3)
    if which == "discrete":
        sol = solve_discrete(p, horizon, n_max=cfg.get("n_max", 40), dt=dt)
        write_discrete_csv(sol, out)
    elif which == "total_mass":
        write_mass_csv(solve_total_mass(p, horizon, dt=dt), p.d, out)
    elif which == "generating_function":
        lam = cfg.get("lambda", [0.0] * p.d)
        write_exponent_csv(solve_generating_function(p, lam, horizon, dt=dt), lam, out)
    elif which == "laplace_exponent":
        lam = cfg.get("lambda", [1.0] * p.d)
        write_exponent_csv(solve_laplace_exponent(p, lam, horizon, dt=dt), lam, out)
    else:
        raise ValueError(f"unknown solver {which!r}")
    return 0


def cmd_couple(cfg: dict, out: str, seed, threads) -> int:
    p = params_from_dict(cfg)
    paths = coupled_simulate(p, cfg.get("horizon", 1.0), _rng(cfg, seed))
    write_coupled_csv(paths, out)
    return 0


def cmd_verify(cfg: dict, out: str, seed, threads) -> int:
    rows = run_from_dict(cfg, out_path=None, seed=seed, threads=threads)
    write_report(rows, out)
    n_fail = sum(1 for r in rows if not r.passed)
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.experiment} K={r.K:g} t={r.t:g} colony={r.colony} "
              f"{r.observable}: sim={r.simulated:.6g} ref={r.reference:.6g}")
    print(f"{len(rows) - n_fail}/{len(rows)} rows passed")
    return 0 if n_fail == 0 else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "couple": cmd_couple,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="coalcoag", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config path")
    ap.add_argument("--out", required=True, help="output CSV path")
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    ap.add_argument("--threads", type=int, default=None, help="replicate workers")
    args = ap.parse_args(argv)
    cfg = _load(args.config)
    return COMMANDS[args.command](cfg, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
