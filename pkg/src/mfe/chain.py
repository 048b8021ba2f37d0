"""Per-location continuous-time Markov chains and their stationary analysis.

Two generators are built from a threshold policy and an arrival rate kappa:

* the focal chain, on occupancies {1..nmax}, where all agents except one
  follow the policy (departure rate lam*(n-1)*(1-gamma+gamma*switch));
* the all-agents chain, on occupancies {0..nmax-1}, where every agent
  follows it (departure rate lam*n*(1-gamma+gamma*switch)).

The truncation boundary is reflecting: the birth transition out of the
top occupancy is suppressed, which keeps the generator conservative.
``calibrate_kappa`` bisects kappa inside [beta*lam*(1-gamma), beta*lam]
until the stationary mean occupancy matches the agent density beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ModelParams, ThresholdPolicy, switch_probability

STATIONARY_RESIDUAL_TOL = 1e-10


class CalibrationError(RuntimeError):
    """Raised when the kappa bracket cannot straddle the target density."""


@dataclass(frozen=True)
class Truncation:
    """Exclusive upper bound on the per-location occupancy grid."""

    nmax: int = 200

    def __post_init__(self):
        if self.nmax < 2:
            raise ValueError("nmax must be >= 2")

    def validate_for(self, policy: ThresholdPolicy) -> None:
        """Require each threshold to sit strictly inside the grid, so the
        switch region is represented, or at/above nmax (a never-switch
        coordinate whose boundary lies outside the truncated space)."""
        for t in (policy.n0, policy.n1):
            if t >= self.nmax:
                continue
            if not self.nmax > np.ceil(t) + 1:
                raise ValueError(
                    f"nmax={self.nmax} too small for policy "
                    f"({policy.n0}, {policy.n1}); need nmax > {np.ceil(t) + 1:.0f}"
                )


@dataclass(frozen=True)
class Generator:
    """Sparse rate matrix over states (z, n), n in {n_lo .. n_lo + size/2 - 1}.

    State (z, n) maps to matrix index 2*(n - n_lo) + z; rows sum to zero.
    """

    matrix: sp.csr_matrix
    n_lo: int
    nmax: int

    def index(self, z: int, n: int) -> int:
        return 2 * (n - self.n_lo) + z

    def rate(self, z: int, n: int, z2: int, n2: int) -> float:
        return self.matrix[self.index(z, n), self.index(z2, n2)]

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def occupancies(self) -> np.ndarray:
        """Occupancy n for each matrix index."""
        return np.repeat(np.arange(self.n_lo, self.n_lo + self.n_states // 2), 2)


def _build_generator(params, policy, kappa, n_lo, n_hi, death_count):
    """Shared birth-death-flip assembly; death_count(n) gives the number of
    agents whose departure clock is active in occupancy n."""
    size = 2 * (n_hi - n_lo + 1)
    rows, cols, vals = [], [], []

    def idx(z, n):
        return 2 * (n - n_lo) + z

    def add(i, j, r):
        if r != 0.0:
            rows.append(i)
            cols.append(j)
            vals.append(r)

    for n in range(n_lo, n_hi + 1):
        for z in (0, 1):
            i = idx(z, n)
            out = 0.0
            # resource flip
            r = params.mu(z)
            add(i, idx(1 - z, n), r)
            out += r
            # arrival, suppressed at the reflecting top boundary
            if n < n_hi:
                add(i, idx(z, n + 1), kappa)
                out += kappa
            # departure
            if n > n_lo:
                m = death_count(n)
                if m > 0:
                    sw = switch_probability(policy, z, n)
                    r = params.lam * m * (1.0 - params.gamma + params.gamma * sw)
                    add(i, idx(z, n - 1), r)
                    out += r
            add(i, i, -out)

    mat = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    return Generator(matrix=mat, n_lo=n_lo, nmax=n_hi if n_lo == 1 else n_hi + 1)


def build_generator_focal(
    params: ModelParams, policy: ThresholdPolicy, kappa: float, trunc: Truncation
) -> Generator:
    """Location chain seen by one agent while the other n-1 follow the policy.

    State space {0,1} x {1..nmax}; the focal agent never leaves, so the
    departure rate at occupancy n counts n-1 deciders.
    """
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    trunc.validate_for(policy)
    return _build_generator(params, policy, kappa, 1, trunc.nmax, lambda n: n - 1)


def build_generator_all(
    params: ModelParams, policy: ThresholdPolicy, kappa: float, trunc: Truncation
) -> Generator:
    """Location chain when every agent follows the policy.

    State space {0,1} x {0..nmax-1}; all n agents hold departure clocks.
    """
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    trunc.validate_for(policy)
    return _build_generator(params, policy, kappa, 0, trunc.nmax - 1, lambda n: n)


def _solve_with_normalization_row(gen: Generator, r: int) -> np.ndarray:
    """Solve the balance equations with equation r replaced by sum(pi) = 1."""
    size = gen.n_states
    coo = gen.matrix.tocoo()
    # balance equations are rows of Q^T: entry (i, j) of Q lands in row j
    keep = coo.col != r
    rows = np.concatenate([coo.col[keep], np.full(size, r)])
    cols = np.concatenate([coo.row[keep], np.arange(size)])
    vals = np.concatenate([coo.data[keep], np.ones(size)])
    a = sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
    b = np.zeros(size)
    b[r] = 1.0
    return spla.spsolve(a, b)


def stationary(gen: Generator) -> np.ndarray:
    """Stationary distribution pi with pi^T Q = 0, sum(pi) = 1.

    Solved directly: one balance equation is replaced by the normalization
    row (the dropped equation is implied by the rest, since the rows of Q
    sum to zero).  Returns pi as an array of shape (2, n_levels) indexed
    [z, n - n_lo].
    """
    size = gen.n_states
    last_err = None
    # candidate rows to replace; retried only if the solve degenerates
    for r in (min(size - 1, 2 * (size // 20)), size // 2, 0, size - 1):
        try:
            pi = _solve_with_normalization_row(gen, r)
            if not np.all(np.isfinite(pi)):
                raise FloatingPointError("stationary solve produced non-finite entries")
            if pi.min() < -1e-12:
                raise FloatingPointError(
                    f"stationary solve produced negative mass {pi.min():.3e}"
                )
            pi = np.maximum(pi, 0.0)
            pi = pi / pi.sum()
            resid = np.abs(pi @ gen.matrix).max()
            if resid > STATIONARY_RESIDUAL_TOL:
                raise FloatingPointError(
                    f"stationary residual {resid:.3e} exceeds tolerance"
                )
            return pi.reshape(-1, 2).T.copy()
        except FloatingPointError as err:  # pragma: no cover - retry path
            last_err = err
    raise last_err


def mean_occupancy(pi: np.ndarray, n_lo: int = 0) -> float:
    """Expected occupancy sum_{z,n} n * pi(z, n)."""
    ns = np.arange(n_lo, n_lo + pi.shape[1])
    return float((pi.sum(axis=0) * ns).sum())


def calibrate_kappa(
    params: ModelParams,
    policy: ThresholdPolicy,
    trunc: Truncation,
    tol: float = 1e-6,
    max_bisections: int = 200,
) -> tuple[float, np.ndarray]:
    """Arrival rate kappa at which the all-agents chain has mean occupancy beta.

    The departure rate per agent lies between lam*(1-gamma) and lam, so the
    mean occupancy at the bracket endpoints [beta*lam*(1-gamma), beta*lam]
    under/overshoots beta; bisection then converges monotonically.  If
    truncation loss breaks the bracket, nmax is doubled once before giving up.

    Returns (kappa, pi) with pi the stationary distribution at kappa.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")

    def attempt(tr: Truncation):
        lo = params.beta * params.lam * (1.0 - params.gamma)
        hi = params.beta * params.lam

        def mean_at(k):
            pi = stationary(build_generator_all(params, policy, k, tr))
            return mean_occupancy(pi), pi

        m_lo, pi_lo = mean_at(lo)
        if abs(m_lo - params.beta) <= tol:
            return lo, pi_lo
        m_hi, pi_hi = mean_at(hi)
        if abs(m_hi - params.beta) <= tol:
            return hi, pi_hi
        if m_lo > params.beta or m_hi < params.beta:
            raise CalibrationError(
                f"bracket [{lo:.6g}, {hi:.6g}] gives means [{m_lo:.6g}, {m_hi:.6g}] "
                f"not straddling beta={params.beta} (nmax={tr.nmax})"
            )
        k_lo, k_hi = lo, hi
        for _ in range(max_bisections):
            k = 0.5 * (k_lo + k_hi)
            m, pi = mean_at(k)
            if abs(m - params.beta) <= tol:
                return k, pi
            if m < params.beta:
                k_lo = k
            else:
                k_hi = k
        return k, pi

    try:
        return attempt(trunc)
    except CalibrationError:
        return attempt(Truncation(nmax=2 * trunc.nmax))


def truncation_tail_mass(pi: np.ndarray) -> float:
    """Mass at the top occupancy level: a diagnostic for truncation adequacy."""
    return float(pi[:, -1].sum())
