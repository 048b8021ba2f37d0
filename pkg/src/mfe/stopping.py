"""The agent's optimal-stopping problem on the focal location chain.

At every transition of the location chain, the next event seen from state
(z, n) is one of five kinds (own decision epoch, another agent exiting,
another agent surviving a decision, a resource flip, an arrival) with
probabilities proportional to their rates; the common denominator is
n*lam + mu_{z,1-z} + kappa.  Value iteration on the embedded chain solves
the pair (V, Vhat):

    V(z,n)    = z f(n) + gamma * max(Vhat(z,n), C)
    Vhat(z,n) = P_dec V(z,n) + [P_exit + P_sur * s(z,n)] Vhat(z,n-1)
                + P_sur (1 - s(z,n)) Vhat(z,n) + P_res Vhat(1-z,n)
                + P_arr Vhat(z,n+1)

with s the switch probability of the other agents' policy.  Iterates start
from Vhat = 0 and are swept Jacobi-style (all V from the current Vhat,
then all new Vhat), preserving monotonicity in both n and the iteration
index.  The occupancy grid is reflected at nmax: the arrival term there
reuses Vhat(z, nmax).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import ModelParams, ThresholdPolicy, switch_probability
from .chain import Truncation

MONOTONICITY_SLACK = 1e-9


class ConvergenceError(RuntimeError):
    """Value iteration failed to meet its residual tolerance within the cap."""


class MonotonicityError(RuntimeError):
    """A value function violated the non-increasing-in-n invariant."""


@dataclass(frozen=True)
class EventProbs:
    """Embedded-chain event probabilities at one state (z, n)."""

    p_dec: float
    p_exit: float
    p_sur: float
    p_res: float
    p_arr: float

    def total(self) -> float:
        return self.p_dec + self.p_exit + self.p_sur + self.p_res + self.p_arr


@dataclass(frozen=True)
class ValueFunction:
    """Solution pair of the stopping problem on {0,1} x {1..nmax}.

    Arrays are indexed [z, n-1].  ``residual`` is the final sup-norm
    change between successive Vhat sweeps.
    """

    v: np.ndarray
    vhat: np.ndarray
    nmax: int
    iterations: int
    residual: float


@dataclass(frozen=True)
class ThresholdBox:
    """Product of per-resource-level intervals of admissible thresholds.

    lo[z] is the largest occupancy at which staying is strictly better
    than switching (0 if none), hi[z] the smallest at which switching is
    strictly better (nmax if none); everything between is indifferent to
    working tolerance.  A product of intervals is convex by construction.
    """

    lo: tuple[float, float]
    hi: tuple[float, float]
    nmax: int

    def __post_init__(self):
        for z in (0, 1):
            if self.lo[z] > self.hi[z]:
                raise ValueError(f"degenerate box: lo {self.lo} exceeds hi {self.hi}")

    def contains(self, policy: ThresholdPolicy) -> bool:
        return all(
            self.lo[z] <= policy.threshold(z) <= self.hi[z] for z in (0, 1)
        )


def event_probs(params: ModelParams, kappa: float, z: int, n: int) -> EventProbs:
    """Probabilities of the five event kinds out of state (z, n), n >= 1."""
    if n < 1:
        raise ValueError(f"event probabilities require n >= 1, got {n}")
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    mu = params.mu(z)
    denom = n * params.lam + mu + kappa
    return EventProbs(
        p_dec=params.lam / denom,
        p_exit=(n - 1) * params.lam * (1.0 - params.gamma) / denom,
        p_sur=(n - 1) * params.lam * params.gamma / denom,
        p_res=mu / denom,
        p_arr=kappa / denom,
    )


def _transition_arrays(params, policy, kappa, trunc):
    """Precompute the sweep coefficients as (2, nmax) arrays indexed [z, n-1].

    pdown bundles the two ways the occupancy drops (an exit, or a survivor
    who switches); pstay is the survivor-stays weight.
    """
    nmax = trunc.nmax
    n = np.arange(1, nmax + 1, dtype=float)
    pdec = np.empty((2, nmax))
    pdown = np.empty((2, nmax))
    pstay = np.empty((2, nmax))
    pres = np.empty((2, nmax))
    parr = np.empty((2, nmax))
    for z in (0, 1):
        mu = params.mu(z)
        denom = n * params.lam + mu + kappa
        p_exit = (n - 1) * params.lam * (1.0 - params.gamma) / denom
        p_sur = (n - 1) * params.lam * params.gamma / denom
        s = np.array([switch_probability(policy, z, k) for k in range(1, nmax + 1)])
        pdec[z] = params.lam / denom
        pdown[z] = p_exit + p_sur * s
        pstay[z] = p_sur * (1.0 - s)
        pres[z] = mu / denom
        parr[z] = kappa / denom
    zf = np.zeros((2, nmax))
    zf[1] = params.reward.table_array(nmax)
    return pdec, pdown, pstay, pres, parr, zf


@njit(cache=True)
def _vi_kernel(vhat, pdec, pdown, pstay, pres, parr, zf, cs, gamma, tol, max_iter):
    """Jacobi value-iteration sweeps for a batch of termination payoffs.

    vhat has shape (nc, 2, nmax) and is updated in place; each payoff's
    trajectory freezes as soon as its own sup-norm change drops to tol, so
    results are independent of what else is in the batch.  Returns
    (iterations, pending, final_diff) per batch entry; pending entries hit
    the sweep cap before converging.
    """
    nc = vhat.shape[0]
    nmax = vhat.shape[2]
    vnew = np.empty((2, nmax))
    iters = np.zeros(nc, np.int64)
    diffs = np.zeros(nc, np.float64)
    pending = np.ones(nc, np.bool_)
    n_active = nc
    for m in range(max_iter):
        if n_active == 0:
            break
        for ci in range(nc):
            if not pending[ci]:
                continue
            c = cs[ci]
            diff = 0.0
            for z in range(2):
                row = vhat[ci, z]
                other = vhat[ci, 1 - z]
                # n = 1: the down-coefficient is exactly zero
                vh = row[0]
                v = zf[z, 0] + gamma * (vh if vh > c else c)
                nv = (
                    pdec[z, 0] * v
                    + pdown[z, 0] * 0.0
                    + pstay[z, 0] * vh
                    + pres[z, 0] * other[0]
                    + parr[z, 0] * row[1]
                )
                vnew[z, 0] = nv
                d = nv - vh
                if d < 0.0:
                    d = -d
                if d > diff:
                    diff = d
                # interior occupancies
                for j in range(1, nmax - 1):
                    vh = row[j]
                    v = zf[z, j] + gamma * (vh if vh > c else c)
                    nv = (
                        pdec[z, j] * v
                        + pdown[z, j] * row[j - 1]
                        + pstay[z, j] * vh
                        + pres[z, j] * other[j]
                        + parr[z, j] * row[j + 1]
                    )
                    vnew[z, j] = nv
                    d = nv - vh
                    if d < 0.0:
                        d = -d
                    if d > diff:
                        diff = d
                # n = nmax: reflecting boundary reuses the top value
                j = nmax - 1
                vh = row[j]
                v = zf[z, j] + gamma * (vh if vh > c else c)
                nv = (
                    pdec[z, j] * v
                    + pdown[z, j] * row[j - 1]
                    + pstay[z, j] * vh
                    + pres[z, j] * other[j]
                    + parr[z, j] * vh
                )
                vnew[z, j] = nv
                d = nv - vh
                if d < 0.0:
                    d = -d
                if d > diff:
                    diff = d
            for z in range(2):
                for j in range(nmax):
                    vhat[ci, z, j] = vnew[z, j]
            iters[ci] = m + 1
            diffs[ci] = diff
            if diff <= tol:
                pending[ci] = False
                n_active -= 1
    return iters, pending, diffs


def _sweep_reference(vhat, pdec, pdown, pstay, pres, parr, zf, c, gamma):
    """One Jacobi sweep in plain numpy; mirrors _vi_kernel's arithmetic.

    Used by tests to cross-check the kernel and to inspect individual
    iterates.
    """
    v = zf + gamma * np.maximum(vhat, c)
    down = np.zeros_like(vhat)
    down[:, 1:] = vhat[:, :-1]
    up = np.empty_like(vhat)
    up[:, :-1] = vhat[:, 1:]
    up[:, -1] = vhat[:, -1]
    return pdec * v + pdown * down + pstay * vhat + pres * vhat[::-1] + parr * up


def _value_iterate_batch(params, policy, kappa, cs, trunc, tol, max_iter):
    """Run value iteration for every termination payoff in cs.

    Returns (vhat_batch, iterations, pending, diffs); vhat_batch has shape
    (len(cs), 2, nmax).
    """
    trunc.validate_for(policy)
    arrays = _transition_arrays(params, policy, kappa, trunc)
    cs = np.ascontiguousarray(np.asarray(cs, dtype=float))
    vhat = np.zeros((cs.size, 2, trunc.nmax))
    iters, pending, diffs = _vi_kernel(
        vhat, *arrays, cs, params.gamma, tol, max_iter
    )
    return vhat, iters, pending, diffs, arrays[-1]


def value_iterate(
    params: ModelParams,
    policy: ThresholdPolicy,
    kappa: float,
    c: float,
    trunc: Truncation,
    tol: float = 1e-6,
    max_iter: int = 10**6,
) -> ValueFunction:
    """Solve the stopping problem for termination payoff c by value iteration.

    Iterates start at Vhat = 0; the returned pair satisfies the fixed-point
    equations with sup-norm self-consistency residual at most tol.  Raises
    ConvergenceError if the residual does not fall below tol within max_iter
    sweeps.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if not c > 0:
        raise ValueError("termination payoff c must be > 0")
    vhat, iters, pending, diffs, zf = _value_iterate_batch(
        params, policy, kappa, [c], trunc, tol, max_iter
    )
    if pending[0]:
        raise ConvergenceError(
            f"value iteration residual {diffs[0]:.3e} > tol {tol:.3e} "
            f"after {max_iter} sweeps"
        )
    vh = vhat[0]
    v = zf + params.gamma * np.maximum(vh, c)
    return ValueFunction(
        v=v, vhat=vh, nmax=trunc.nmax, iterations=int(iters[0]),
        residual=float(diffs[0]),
    )


def _box_edges(vhat_z: np.ndarray, c: float, tol_eq: float, nmax: int):
    above = np.nonzero(vhat_z > c + tol_eq)[0]
    below = np.nonzero(vhat_z < c - tol_eq)[0]
    lo = float(above[-1] + 1) if above.size else 0.0
    hi = float(below[0] + 1) if below.size else float(nmax)
    return lo, hi


def optimal_thresholds(vf: ValueFunction, c: float, tol_eq: float) -> ThresholdBox:
    """Interval box of thresholds consistent with the solved value function.

    For each z, lo is the largest n with Vhat(z,n) > c + tol_eq (0 if none)
    and hi the smallest n with Vhat(z,n) < c - tol_eq (nmax if none).
    Raises MonotonicityError when Vhat increases in n beyond the numerical
    slack, which would indicate a value-iteration defect.
    """
    lo = [0.0, 0.0]
    hi = [0.0, 0.0]
    for z in (0, 1):
        arr = vf.vhat[z]
        rises = np.diff(arr)
        if rises.size and rises.max() > MONOTONICITY_SLACK:
            raise MonotonicityError(
                f"Vhat({z}, n) increases by {rises.max():.3e} at "
                f"n={int(np.argmax(rises)) + 1}"
            )
        lo[z], hi[z] = _box_edges(arr, c, tol_eq, vf.nmax)
    return ThresholdBox(lo=(lo[0], lo[1]), hi=(hi[0], hi[1]), nmax=vf.nmax)


def threshold_distance(policy: ThresholdPolicy, box: ThresholdBox) -> float:
    """Euclidean distance from the policy to the box (0 when inside)."""
    total = 0.0
    for z in (0, 1):
        t = policy.threshold(z)
        gap = max(box.lo[z] - t, t - box.hi[z], 0.0)
        total += gap * gap
    return float(np.sqrt(total))
