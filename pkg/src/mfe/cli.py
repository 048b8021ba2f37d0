"""Command-line front end.

Subcommands:

* ``stationary`` -- calibrate the arrival rate for a policy and emit the
  stationary distribution (rows round-trip as reference-pi files);
* ``solve``      -- run the adaptive equilibrium search and emit ranked
  candidates;
* ``table1``     -- solve the 15-cell benchmark grid (three reward
  functions x five resource rates) and compare against the bundled
  reference values;
* ``simulate``   -- run the finite-system simulator, optionally reporting
  the total-variation distance to a reference distribution.

Configuration comes from a single JSON document; the ``--seed`` and
``--threads`` flags override it.  Data goes to stdout (or ``--out``),
diagnostics to stderr, and every command is deterministic given its full
configuration, independent of the thread count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import ModelParams, RewardFn, ThresholdPolicy
from .chain import Truncation, calibrate_kappa, mean_occupancy, truncation_tail_mass
from .equilibrium import (
    SearchConfig,
    SearchResult,
    search,
    threshold_compactness_bound,
)
from .sim import SimConfig, simulate

# reference equilibrium values (c, n0, n1) for the benchmark grid,
# keyed by reward kind and symmetric resource rate mu
REFERENCE_GRID = {
    "inverse_sqrt_n": {
        0.1: (2.80, 1.0, 43.9),
        0.5: (2.39, 4.3, 43.8),
        1.0: (2.63, 1.0, 27.2),
        10.0: (2.37, 11.0, 18.2),
        100.0: (2.46, 11.0, 12.0),
    },
    "inverse_n": {
        0.1: (1.98, 1.0, 4.0),
        0.5: (1.72, 1.0, 4.0),
        1.0: (0.96, 1.0, 10.4),
        10.0: (0.93, 4.0, 7.1),
        100.0: (0.97, 4.0, 4.0),
    },
    "inverse_n_squared": {
        0.1: (0.14, 1.0, 7.7),
        0.5: (0.25, 1.0, 4.7),
        1.0: (0.18, 1.0, 5.0),
        10.0: (0.16, 3.0, 5.0),
        100.0: (0.80, 1.0, 8.0),
    },
}
TABLE1_REWARDS = ("inverse_sqrt_n", "inverse_n", "inverse_n_squared")
TABLE1_MUS = (0.1, 0.5, 1.0, 10.0, 100.0)


class SpecError(ValueError):
    """Configuration document failed to parse or validate."""


@dataclass
class RunSpec:
    """Fully resolved run configuration for one command invocation."""

    params: ModelParams
    policy: ThresholdPolicy
    trunc: Truncation
    tolerance: float
    search: SearchConfig
    sim_k: int
    sim_horizon: float
    sim_burn_in: float
    sim_seed: int
    sim_snapshot_interval: float | None
    sim_exclude_self_switch: bool
    reference_pi: Path | None


def _reward_from_config(doc) -> RewardFn:
    if isinstance(doc, str):
        return RewardFn(doc)
    kind = doc.get("kind", "inverse_n")
    values = doc.get("values")
    return RewardFn(kind, tuple(values) if values is not None else None)


def load_spec(path: Path | None, seed: int | None = None) -> RunSpec:
    """Build a RunSpec from a JSON config file plus flag overrides.

    Missing fields take the benchmark defaults: lambda=1, gamma=0.95,
    beta=20, reward 1/n, symmetric mu=1, nmax=200, policy window [0,50]^2.
    """
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise SpecError(f"cannot read config {path}: {err}") from err
    try:
        p = doc.get("params", {})
        params = ModelParams(
            lam=float(p.get("lambda", 1.0)),
            gamma=float(p.get("gamma", 0.95)),
            beta=float(p.get("beta", 20.0)),
            mu01=float(p.get("mu01", 1.0)),
            mu10=float(p.get("mu10", 1.0)),
            reward=_reward_from_config(p.get("reward", "inverse_n")),
        )
        pol = doc.get("policy", {})
        policy = ThresholdPolicy(
            n0=float(pol.get("n0", 0.0)), n1=float(pol.get("n1", 0.0))
        )
        nmax = int(doc.get("nmax", 200))
        tolerance = float(doc.get("tolerance", 1e-6))
        s = doc.get("search", {})
        cfg = SearchConfig(
            policy_hi=float(s.get("policy_hi", 50.0)),
            resolution=float(s.get("resolution", 1.0)),
            c_max=None if s.get("c_max") is None else float(s["c_max"]),
            c_resolution=(
                None if s.get("c_resolution") is None else float(s["c_resolution"])
            ),
            levels=int(s.get("levels", 3)),
            refine_factor=int(s.get("refine_factor", 5)),
            top_q=int(s.get("top_q", 5)),
            tolerance=tolerance,
            nmax=nmax,
            max_report=int(s.get("max_report", 25)),
        )
        sim = doc.get("sim", {})
        spec = RunSpec(
            params=params,
            policy=policy,
            trunc=Truncation(nmax),
            tolerance=tolerance,
            search=cfg,
            sim_k=int(sim.get("k", 50)),
            sim_horizon=float(sim.get("horizon", 5000.0)),
            sim_burn_in=float(sim.get("burn_in", 1000.0)),
            sim_seed=int(sim.get("seed", 0)),
            sim_snapshot_interval=(
                None
                if sim.get("snapshot_interval") is None
                else float(sim["snapshot_interval"])
            ),
            sim_exclude_self_switch=bool(sim.get("exclude_self_switch", True)),
            reference_pi=(
                Path(doc["reference_pi"]) if doc.get("reference_pi") else None
            ),
        )
    except (TypeError, ValueError, KeyError) as err:
        raise SpecError(f"invalid config: {err}") from err
    if seed is not None:
        spec.sim_seed = seed
    return spec


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def read_reference_pi(path: Path) -> np.ndarray:
    """Read a reference distribution from a CSV with columns z, n, prob."""
    entries = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            entries.append((int(rec["z"]), int(rec["n"]), float(rec["prob"])))
    if not entries:
        raise SpecError(f"reference pi file {path} has no rows")
    width = max(n for _, n, _ in entries) + 1
    pi = np.zeros((2, width))
    for z, n, prob in entries:
        pi[z, n] = prob
    return pi


def cmd_stationary(spec: RunSpec):
    """Calibrated arrival rate and stationary distribution for the policy."""
    kappa, pi = calibrate_kappa(spec.params, spec.policy, spec.trunc, spec.tolerance)
    mean = mean_occupancy(pi)
    print(
        f"kappa={kappa:.8g} mean_occupancy={mean:.8g} "
        f"truncation_tail_mass={truncation_tail_mass(pi):.3e}",
        file=sys.stderr,
    )
    columns = ["z", "n", "prob", "kappa", "mean_occupancy"]
    rows = [
        (z, n, float(pi[z, n]), kappa, mean)
        for z in (0, 1)
        for n in range(pi.shape[1])
    ]
    payload = {
        "kappa": kappa,
        "mean_occupancy": mean,
        "pi": [{"z": z, "n": n, "prob": float(pi[z, n])} for z, n, *_ in rows],
    }
    return columns, rows, payload, False


def _candidate_rows(result: SearchResult, flag: str):
    columns = [
        "rank", "n0", "n1", "c", "kappa", "c_tilde", "dist", "d",
        "lo0", "hi0", "lo1", "hi1", "flag",
    ]
    rows = []
    objs = []
    for rank, cand in enumerate(result.candidates, start=1):
        rows.append(
            (
                rank, cand.policy.n0, cand.policy.n1, cand.c, cand.kappa,
                cand.c_tilde, cand.dist, cand.d,
                cand.box.lo[0], cand.box.hi[0], cand.box.lo[1], cand.box.hi[1],
                flag,
            )
        )
        objs.append(
            {
                "rank": rank,
                "n0": cand.policy.n0,
                "n1": cand.policy.n1,
                "c": cand.c,
                "kappa": cand.kappa,
                "c_tilde": cand.c_tilde,
                "dist": cand.dist,
                "d": cand.d,
                "box": {"lo": list(cand.box.lo), "hi": list(cand.box.hi)},
                "flag": flag,
            }
        )
    return columns, rows, objs


def cmd_solve(spec: RunSpec, threads: int = 1, progress: bool = True):
    """Ranked equilibrium candidates for the configured model."""
    result = search(spec.params, spec.search, threads=threads, progress=progress)
    if not result.candidates:
        raise RuntimeError("search produced no candidates (all cells skipped)")
    m_bound = threshold_compactness_bound(spec.params)
    print(
        f"payoff bounds: [{result.c_under:.6g}, {result.c_bar:.6g}]; "
        f"theoretical threshold bound: {m_bound:g} "
        f"(search window [0, {spec.search.policy_hi:g}]^2)",
        file=sys.stderr,
    )
    flag = "degenerate" if spec.params.reward(1) == 0 else ""
    columns, rows, objs = _candidate_rows(result, flag)
    for n0, n1, msg in result.skipped:
        print(f"skipped cell ({n0:g}, {n1:g}): {msg}", file=sys.stderr)
    payload = {
        "c_bar": result.c_bar,
        "c_under": result.c_under,
        "candidates": objs,
        "skipped": [
            {"n0": n0, "n1": n1, "error": msg} for n0, n1, msg in result.skipped
        ],
    }
    return columns, rows, payload, False


def cmd_table1(spec: RunSpec, threads: int = 1, progress: bool = True):
    """Solve the benchmark grid and report deviations from reference values."""
    columns = [
        "reward", "mu", "c_ref", "n0_ref", "n1_ref", "c", "n0", "n1",
        "dev_c", "dev_n0", "dev_n1", "d", "status",
    ]
    rows = []
    objs = []
    had_error = False
    for kind in TABLE1_REWARDS:
        for mu in TABLE1_MUS:
            c_ref, n0_ref, n1_ref = REFERENCE_GRID[kind][mu]
            params = replace(
                spec.params, mu01=mu, mu10=mu, reward=RewardFn(kind)
            )
            if progress:
                print(f"solving {kind} mu={mu:g} ...", file=sys.stderr, flush=True)
            try:
                result = search(params, spec.search, threads=threads, progress=progress)
                if not result.candidates:
                    raise RuntimeError("no candidates")
                best = result.best
                rows.append(
                    (
                        kind, mu, c_ref, n0_ref, n1_ref,
                        best.c, best.policy.n0, best.policy.n1,
                        abs(best.c - c_ref),
                        abs(best.policy.n0 - n0_ref),
                        abs(best.policy.n1 - n1_ref),
                        best.d, "ok",
                    )
                )
                objs.append(
                    {
                        "reward": kind,
                        "mu": mu,
                        "reference": {"c": c_ref, "n0": n0_ref, "n1": n1_ref},
                        "computed": {
                            "c": best.c,
                            "n0": best.policy.n0,
                            "n1": best.policy.n1,
                            "d": best.d,
                        },
                        "status": "ok",
                    }
                )
            except Exception as err:  # keep the sweep going on per-cell failures
                had_error = True
                msg = f"error: {err}"
                rows.append(
                    (kind, mu, c_ref, n0_ref, n1_ref, "", "", "", "", "", "", "", msg)
                )
                objs.append(
                    {"reward": kind, "mu": mu, "status": msg}
                )
    return columns, rows, {"cells": objs}, had_error


def cmd_simulate(spec: RunSpec):
    """Run the finite-system simulator and emit its time-averaged statistics."""
    cfg = SimConfig(
        params=spec.params,
        policy=spec.policy,
        k=spec.sim_k,
        horizon=spec.sim_horizon,
        burn_in=spec.sim_burn_in,
        seed=spec.sim_seed,
        snapshot_interval=spec.sim_snapshot_interval,
        exclude_self_switch=spec.sim_exclude_self_switch,
    )
    result = simulate(cfg)
    tv = None
    if spec.reference_pi is not None:
        tv = result.tv_to(read_reference_pi(spec.reference_pi))

    emp = result.empirical_dist
    occupied = np.nonzero(emp.sum(axis=0) > 0)[0]
    top = int(occupied[-1]) + 1 if occupied.size else 1
    columns = ["record", "z", "n", "value"]
    rows = [
        ("pi", z, n, float(emp[z, n])) for z in (0, 1) for n in range(top)
    ]
    rows.append(("mean_reward_per_epoch", "", "", result.mean_reward_per_epoch))
    rows.append(("total_welfare_rate", "", "", result.total_welfare_rate))
    if tv is not None:
        rows.append(("tv_to_reference", "", "", tv))
    for name, count in result.event_counts.items():
        rows.append((f"count_{name}", "", "", count))
    payload = {
        "mean_reward_per_epoch": result.mean_reward_per_epoch,
        "total_welfare_rate": result.total_welfare_rate,
        "tv_to_reference": tv,
        "event_counts": result.event_counts,
        "pi": [
            {"z": z, "n": n, "prob": float(emp[z, n])}
            for z in (0, 1)
            for n in range(top)
        ],
    }
    return columns, rows, payload, False


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfe",
        description="Mean field equilibrium solver and finite-system simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("stationary", "emit the calibrated stationary distribution"),
        ("solve", "search for approximate equilibria"),
        ("table1", "reproduce the benchmark equilibrium grid"),
        ("simulate", "run the finite-system event simulator"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", type=Path, help="JSON configuration document")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out", type=Path, help="write data here instead of stdout")
        p.add_argument("--seed", type=int, help="override the simulation seed")
        p.add_argument(
            "--threads",
            type=int,
            help="worker processes for grid sweeps (default: MFE_THREADS or 1)",
        )
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("MFE_THREADS", "1"))

    try:
        spec = load_spec(args.config, seed=args.seed)
        if args.command == "stationary":
            columns, rows, payload, had_error = cmd_stationary(spec)
        elif args.command == "solve":
            columns, rows, payload, had_error = cmd_solve(spec, threads=threads)
        elif args.command == "table1":
            columns, rows, payload, had_error = cmd_table1(spec, threads=threads)
        else:
            columns, rows, payload, had_error = cmd_simulate(spec)
    except Exception as err:
        print(f"mfe {args.command}: {err}", file=sys.stderr)
        return 1

    text = (
        render_csv(columns, rows) if args.format == "csv" else render_json(payload)
    )
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 1 if had_error else 0


if __name__ == "__main__":
    sys.exit(main())
