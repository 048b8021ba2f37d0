"""Model primitives: exogenous rates, reward functions, threshold policies.

Everything here is an immutable value object; the other modules build
location chains, stopping problems and equilibrium searches on top of
these types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_REWARD_KINDS = ("inverse_n", "inverse_n_squared", "inverse_sqrt_n", "table")


@dataclass(frozen=True)
class RewardFn:
    """Per-agent reward f(n) earned at a resource-rich location with n agents.

    f must be non-increasing in n and vanish as n grows.  The built-in
    kinds are 1/n, 1/n^2 and 1/sqrt(n); ``table`` carries an explicit
    finite sequence of values, with f(n) = 0 beyond the end of the
    sequence so the vanishing tail is structural rather than assumed.
    """

    kind: str
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.kind == "table":
            if self.values is None:
                raise ValueError("table reward requires explicit values")
            vals = tuple(float(v) for v in self.values)
            if any(v < 0 for v in vals):
                raise ValueError("table reward values must be nonnegative")
            if any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError("table reward values must be non-increasing")
            object.__setattr__(self, "values", vals)
        elif self.values is not None:
            raise ValueError(f"values only apply to table rewards, not {self.kind!r}")

    @staticmethod
    def inverse_n() -> "RewardFn":
        return RewardFn("inverse_n")

    @staticmethod
    def inverse_n_squared() -> "RewardFn":
        return RewardFn("inverse_n_squared")

    @staticmethod
    def inverse_sqrt_n() -> "RewardFn":
        return RewardFn("inverse_sqrt_n")

    @staticmethod
    def table(values) -> "RewardFn":
        return RewardFn("table", tuple(values))

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError(f"reward is defined for n >= 1, got {n}")
        if self.kind == "inverse_n":
            return 1.0 / n
        if self.kind == "inverse_n_squared":
            return 1.0 / (n * n)
        if self.kind == "inverse_sqrt_n":
            return 1.0 / math.sqrt(n)
        return self.values[n - 1] if n <= len(self.values) else 0.0

    def table_array(self, nmax: int) -> np.ndarray:
        """Vector of f(1), ..., f(nmax)."""
        return np.array([self(n) for n in range(1, nmax + 1)])


@dataclass(frozen=True)
class ModelParams:
    """Exogenous rates of the location-competition model.

    lam    -- decision-epoch rate of each agent (events per unit time)
    gamma  -- per-epoch survival probability
    beta   -- agent density (mean agents per location)
    mu01   -- resource 0 -> 1 flip rate
    mu10   -- resource 1 -> 0 flip rate
    reward -- per-agent reward function f
    """

    lam: float
    gamma: float
    beta: float
    mu01: float
    mu10: float
    reward: RewardFn

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not (self.mu01 > 0 and self.mu10 > 0):
            raise ValueError("resource flip rates must be > 0")

    def mu(self, z: int) -> float:
        """Flip rate out of resource level z."""
        return self.mu01 if z == 0 else self.mu10

    def z_marginal(self) -> float:
        """Stationary probability of resource level 1 (two-state chain)."""
        return self.mu01 / (self.mu01 + self.mu10)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Stay/switch thresholds (n0, n1), one per resource level.

    At a location with resource level z and n agents, an agent stays if
    n < floor(n_z), switches if n > n_z, and stays with probability
    n_z - floor(n_z) when n == floor(n_z).  Fractional thresholds encode
    the mixing needed at indifference states.
    """

    n0: float
    n1: float

    def __post_init__(self):
        for v in (self.n0, self.n1):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"thresholds must be finite and >= 0, got {v}")

    def threshold(self, z: int) -> float:
        return self.n0 if z == 0 else self.n1


def reward_eval(f: RewardFn, z: int, n: int) -> float:
    """Reward z * f(n) collected by an agent at a location in state (z, n).

    n counts every agent present, including the one collecting, so n = 0
    is a contract violation.
    """
    if n < 1:
        raise ValueError(f"reward requires n >= 1 (the recipient is present), got {n}")
    if z not in (0, 1):
        raise ValueError(f"resource level must be 0 or 1, got {z}")
    return z * f(n)


def switch_probability(policy: ThresholdPolicy, z: int, n: int) -> float:
    """Probability that an agent leaves a location in state (z, n) given she survives.

    Equals the indicator expression 1{n > n_z} + (n + 1 - n_z) * 1{n == floor(n_z)}
    that appears in the location chain's departure rate.
    """
    if n < 1:
        raise ValueError(f"switch probability requires n >= 1, got {n}")
    nz = policy.threshold(z)
    if n > nz:
        return 1.0
    if n == math.floor(nz):
        return math.floor(nz) + 1.0 - nz
    return 0.0
