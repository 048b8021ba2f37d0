"""Fixed-point search for mean field equilibria.

An equilibrium couples a threshold policy, an arrival rate kappa, a
stationary distribution pi, and a switch payoff C so that (i) the policy
is a best response to itself, (ii) pi is stationary under it, (iii) the
mean occupancy equals the agent density, and (iv) C equals the expected
value of relocating to a pi-distributed location.  The search sweeps a
grid over (n0, n1, C), scores every cell by

    d(n0, n1, C) = |C - C_tilde| + dist((n0, n1), threshold box)

and adaptively refines around the best cells; d near zero certifies an
approximate equilibrium.  kappa and pi depend only on (n0, n1), so each
cell is calibrated once and swept over all C values in a batch.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, ThresholdPolicy
from .chain import CalibrationError, Truncation, calibrate_kappa
from .stopping import (
    MONOTONICITY_SLACK,
    ThresholdBox,
    ValueFunction,
    _box_edges,
    _value_iterate_batch,
    value_iterate,
)

TOL_EQ_SCALE = 1e-7  # indifference band, as a fraction of the payoff ceiling

_RECORD_DTYPE = np.dtype(
    [
        ("n0", "f8"),
        ("n1", "f8"),
        ("c", "f8"),
        ("kappa", "f8"),
        ("c_tilde", "f8"),
        ("dist", "f8"),
        ("d", "f8"),
        ("lo0", "f8"),
        ("hi0", "f8"),
        ("lo1", "f8"),
        ("hi1", "f8"),
        ("level", "i4"),
    ]
)


def bounds(params: ModelParams) -> tuple[float, float]:
    """Ceiling and floor (c_bar, c_under) confining equilibrium payoffs.

    c_bar is the discounted best case f(1)/(1-gamma); c_under is the value
    of the event chain "arrive alone at an empty location, see the resource
    come up, collect f(1)" under the worst admissible arrival rate.
    """
    f1 = params.reward(1)
    c_bar = f1 / (1.0 - params.gamma)
    lam, beta = params.lam, params.beta
    c_under = (
        (lam / (lam + params.mu10 + beta * lam))
        * (params.mu01 / (lam + params.mu01 + beta * lam))
        * math.exp(-beta / (1.0 - params.gamma))
        * f1
    )
    return c_bar, c_under


def g_bound(params: ModelParams, n: int) -> float:
    """Decreasing upper bound on the value of staying at an n-crowded location.

    Defined for n >= 3 so every term is finite; the reward is evaluated at
    the integer floor(sqrt(n)/2) clamped to >= 1, the loosest choice
    consistent with a non-increasing reward on the positive integers.
    """
    if n < 3:
        raise ValueError(f"g_bound requires n >= 3, got {n}")
    g = params.gamma
    root = math.sqrt(n)
    f_arg = max(1, math.floor(root / 2.0))
    k = math.floor(math.sqrt(math.log(n)))
    return (
        params.reward(f_arg) + math.exp(-root / 8.0) + 2.0 / math.sqrt(math.log(n))
    ) / (1.0 - g) + g**k / (1.0 - g) * params.reward(1)


def threshold_compactness_bound(params: ModelParams, limit: int = 10**12) -> float:
    """Smallest n with g_bound(n) below (1-gamma) * c_under; inf if above limit.

    Purely diagnostic: for realistic densities c_under is so small that the
    bound is astronomically large, and the practical search window is used
    instead.
    """
    _, c_under = bounds(params)
    target = (1.0 - params.gamma) * c_under
    if target <= 0 or g_bound(params, limit) >= target:
        return math.inf
    lo, hi = 3, limit
    while lo < hi:
        mid = (lo + hi) // 2
        if g_bound(params, mid) < target:
            hi = mid
        else:
            lo = mid + 1
    return float(lo)


def c_tilde(pi: np.ndarray, vf: ValueFunction) -> float:
    """Expected value of relocating to a pi-distributed location.

    pi is indexed [z, n] for n in {0..nmax-1}; arriving raises the local
    occupancy by one, so the value collected is Vhat(z, n+1), whose array
    index coincides with n.
    """
    if pi.shape != vf.vhat.shape:
        raise ValueError(f"shape mismatch: pi {pi.shape} vs vhat {vf.vhat.shape}")
    return float((pi * vf.vhat).sum())


@dataclass(frozen=True)
class SearchConfig:
    """Grid-search settings; defaults reproduce the benchmark computations."""

    policy_hi: float = 50.0
    resolution: float = 1.0
    c_max: float | None = None  # payoff ceiling c_bar when None
    c_resolution: float | None = None  # c_max / 100 when None
    levels: int = 3
    refine_factor: int = 5
    top_q: int = 5
    tolerance: float = 1e-6
    nmax: int = 200
    max_sweeps: int = 10**6
    max_report: int = 25

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.refine_factor < 2:
            raise ValueError("refine_factor must be >= 2")


@dataclass(frozen=True)
class EquilibriumCandidate:
    """One scored grid cell; d = |c - c_tilde| + dist by definition."""

    policy: ThresholdPolicy
    c: float
    kappa: float
    c_tilde: float
    dist: float
    d: float
    box: ThresholdBox | None = None
    pi: np.ndarray | None = None
    vf: ValueFunction | None = None


@dataclass
class SearchResult:
    candidates: list[EquilibriumCandidate]
    records: np.ndarray  # all evaluated cells, sorted ascending by d
    skipped: list[tuple[float, float, str]]
    config: SearchConfig
    c_bar: float
    c_under: float

    @property
    def best(self) -> EquilibriumCandidate:
        return self.candidates[0]

    def landscape_near(self, n0: float, n1: float, radius: float = 2.0) -> np.ndarray:
        """Evaluated cells within the given policy radius, ascending by d."""
        r = self.records
        mask = (np.abs(r["n0"] - n0) <= radius) & (np.abs(r["n1"] - n1) <= radius)
        return r[mask]


def _eval_cell(task):
    """Worker: calibrate one (n0, n1) cell and score every C in its batch.

    Returns (key, kappa, per-C record columns, error message or None);
    calibration or convergence failures mark the whole cell skipped.
    """
    (params, n0, n1, cs, nmax, tol, tol_eq, max_sweeps) = task
    policy = ThresholdPolicy(n0, n1)
    trunc = Truncation(nmax)
    try:
        kappa, pi = calibrate_kappa(params, policy, trunc, tol)
        vhat_b, _, pending, _, _ = _value_iterate_batch(
            params, policy, kappa, cs, trunc, tol, max_sweeps
        )
    except (CalibrationError, FloatingPointError, ValueError) as err:
        return (n0, n1), math.nan, None, f"{type(err).__name__}: {err}"

    ncs = len(cs)
    out = np.full((ncs, 7), np.nan)  # c_tilde, dist, d, lo0, hi0, lo1, hi1
    err = None
    for ci in range(ncs):
        if pending[ci]:
            err = f"value iteration hit the sweep cap at c={cs[ci]:.6g}"
            continue
        vh = vhat_b[ci]
        if max(np.diff(vh[0]).max(), np.diff(vh[1]).max()) > MONOTONICITY_SLACK:
            err = f"monotonicity violation at c={cs[ci]:.6g}"
            continue
        ct = float((pi * vh).sum())
        lo0, hi0 = _box_edges(vh[0], cs[ci], tol_eq, nmax)
        lo1, hi1 = _box_edges(vh[1], cs[ci], tol_eq, nmax)
        g0 = max(lo0 - n0, n0 - hi0, 0.0)
        g1 = max(lo1 - n1, n1 - hi1, 0.0)
        dist = math.sqrt(g0 * g0 + g1 * g1)
        out[ci] = (ct, dist, abs(cs[ci] - ct) + dist, lo0, hi0, lo1, hi1)
    return (n0, n1), kappa, out, err


def _round_grid(values) -> np.ndarray:
    return np.round(np.asarray(values, dtype=float), 9)


def _window(center: float, step: float, factor: int, lo: float, hi: float):
    offs = np.arange(-factor, factor + 1, dtype=float) * step
    vals = _round_grid(center + offs)
    return np.unique(vals[(vals >= lo - 1e-12) & (vals <= hi + 1e-12)])


def _run_cells(tasks, threads, progress):
    if threads <= 1 or len(tasks) <= 1:
        results = []
        t0 = time.time()
        for i, task in enumerate(tasks):
            results.append(_eval_cell(task))
            if progress and (i + 1) % 50 == 0:
                rate = (i + 1) / (time.time() - t0)
                print(
                    f"  {i + 1}/{len(tasks)} cells ({rate:.1f}/s)",
                    file=sys.stderr,
                    flush=True,
                )
        return results
    import multiprocessing as mp

    chunk = max(1, len(tasks) // (threads * 8))
    with mp.get_context("fork").Pool(threads) as pool:
        results = []
        t0 = time.time()
        for i, res in enumerate(pool.imap(_eval_cell, tasks, chunksize=chunk)):
            results.append(res)
            if progress and (i + 1) % 50 == 0:
                rate = (i + 1) / (time.time() - t0)
                print(
                    f"  {i + 1}/{len(tasks)} cells ({rate:.1f}/s)",
                    file=sys.stderr,
                    flush=True,
                )
    return results


def _warm_kernel(params, nmax):
    """Compile the value-iteration kernel before any worker forks."""
    policy = ThresholdPolicy(0.0, 0.0)
    value_iterate(params, policy, params.beta * params.lam, 1.0, Truncation(max(4, min(nmax, 8))), tol=1e-3, max_iter=10**4)


def search(
    params: ModelParams,
    cfg: SearchConfig = SearchConfig(),
    threads: int = 1,
    progress: bool = False,
) -> SearchResult:
    """Adaptive grid search for approximate mean field equilibria.

    Level 0 sweeps the full (n0, n1) window at the coarse resolution and
    the full C mesh; each later level re-grids around the current top-q
    cells with the mesh divided by the refinement factor.  Cells are pure
    functions of their coordinates, so the sweep parallelizes over
    processes without affecting the output.  Candidates come back sorted
    ascending by d with lexicographic (n0, n1, c) tie-breaking.
    """
    c_bar, c_under = bounds(params)
    c_max = cfg.c_max if cfg.c_max is not None else (c_bar if c_bar > 0 else 1.0)
    c_res = cfg.c_resolution if cfg.c_resolution is not None else c_max / 100.0
    tol_eq = TOL_EQ_SCALE * (c_bar if c_bar > 0 else 1.0)
    _warm_kernel(params, cfg.nmax)

    n_grid = _window(0.0, cfg.resolution, int(round(cfg.policy_hi / cfg.resolution)), 0.0, cfg.policy_hi)
    n_c = int(round((c_max - c_res) / c_res)) + 1
    c_grid = _round_grid(c_res + c_res * np.arange(max(n_c, 1)))
    c_grid = c_grid[c_grid <= c_max + 1e-12]

    evaluated: set[tuple[float, float, float]] = set()
    level_records: list[np.ndarray] = []
    skipped: list[tuple[float, float, str]] = []
    r_n, r_c = cfg.resolution, c_res

    for level in range(cfg.levels):
        if level == 0:
            cells = [(a, b, tuple(c_grid)) for a in n_grid for b in n_grid]
        else:
            merged = np.concatenate(level_records) if level_records else None
            if merged is None or merged.size == 0:
                break
            order = np.lexsort((merged["c"], merged["n1"], merged["n0"], merged["d"]))
            seeds = []
            seen_cells = set()
            for idx in order:
                key = (merged["n0"][idx], merged["n1"][idx])
                if key not in seen_cells:
                    seen_cells.add(key)
                    seeds.append(merged[idx])
                if len(seeds) >= cfg.top_q:
                    break
            r_n /= cfg.refine_factor
            r_c /= cfg.refine_factor
            cell_cs: dict[tuple[float, float], set[float]] = {}
            for s in seeds:
                n0s = _window(s["n0"], r_n, cfg.refine_factor, 0.0, cfg.policy_hi)
                n1s = _window(s["n1"], r_n, cfg.refine_factor, 0.0, cfg.policy_hi)
                css = _window(s["c"], r_c, cfg.refine_factor, r_c, c_max)
                for a in n0s:
                    for b in n1s:
                        cell_cs.setdefault((a, b), set()).update(css)
            cells = [
                (a, b, tuple(sorted(cs))) for (a, b), cs in sorted(cell_cs.items())
            ]
        # drop already-evaluated triples
        tasks = []
        for a, b, cs in cells:
            new_cs = tuple(c for c in cs if (a, b, c) not in evaluated)
            if new_cs:
                tasks.append((params, a, b, new_cs, cfg.nmax, cfg.tolerance, tol_eq, cfg.max_sweeps))
                evaluated.update((a, b, c) for c in new_cs)
        if progress:
            print(
                f"level {level}: {len(tasks)} cells (n-step {r_n:g}, c-step {r_c:g})",
                file=sys.stderr,
                flush=True,
            )
        if not tasks:
            continue
        results = _run_cells(tasks, threads, progress)

        n_rows = sum(len(t[3]) for t in tasks)
        recs = np.zeros(n_rows, dtype=_RECORD_DTYPE)
        row = 0
        for task, (key, kappa, out, err) in zip(tasks, results):
            a, b, cs = task[1], task[2], task[3]
            if err is not None:
                skipped.append((a, b, err))
            if out is None:
                continue
            for ci, cval in enumerate(cs):
                if np.isnan(out[ci, 2]):
                    continue
                recs[row] = (
                    a, b, cval, kappa,
                    out[ci, 0], out[ci, 1], out[ci, 2],
                    out[ci, 3], out[ci, 4], out[ci, 5], out[ci, 6],
                    level,
                )
                row += 1
        level_records.append(recs[:row])

    records = np.concatenate(level_records) if level_records else np.zeros(0, _RECORD_DTYPE)
    order = np.lexsort((records["c"], records["n1"], records["n0"], records["d"]))
    records = records[order]

    candidates = _finalize_candidates(params, cfg, records, tol_eq)
    return SearchResult(
        candidates=candidates,
        records=records,
        skipped=skipped,
        config=cfg,
        c_bar=c_bar,
        c_under=c_under,
    )


def _finalize_candidates(params, cfg, records, tol_eq) -> list[EquilibriumCandidate]:
    """Re-solve the top records to attach distributions and value functions."""
    head = records[: cfg.max_report]
    trunc = Truncation(cfg.nmax)
    cache: dict[tuple[float, float], tuple[float, np.ndarray]] = {}
    out = []
    for rec in head:
        key = (float(rec["n0"]), float(rec["n1"]))
        policy = ThresholdPolicy(*key)
        if key not in cache:
            cache[key] = calibrate_kappa(params, policy, trunc, cfg.tolerance)
        kappa, pi = cache[key]
        vf = value_iterate(
            params, policy, kappa, float(rec["c"]), trunc, cfg.tolerance, cfg.max_sweeps
        )
        box = ThresholdBox(
            lo=(float(rec["lo0"]), float(rec["lo1"])),
            hi=(float(rec["hi0"]), float(rec["hi1"])),
            nmax=cfg.nmax,
        )
        out.append(
            EquilibriumCandidate(
                policy=policy,
                c=float(rec["c"]),
                kappa=float(kappa),
                c_tilde=float(rec["c_tilde"]),
                dist=float(rec["dist"]),
                d=float(rec["d"]),
                box=box,
                pi=pi,
                vf=vf,
            )
        )
    return out
