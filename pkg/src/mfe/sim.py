"""Discrete-event simulator of the finite system of locations and agents.

K locations each carry a two-state resource that flips after exponential
holding times; N = round(beta*K) agents carry independent Poisson decision
clocks.  At an epoch the agent collects z*f(n) at her location (n counts
her too), departs with probability 1-gamma (respawning under the same
label at a uniformly random location, so the population is conserved),
and otherwise stays or switches according to the threshold policy; a
switch targets a uniformly random *other* location by default.

The engine samples the global next event from the superposition of all
clocks (total rate N*lam + sum of flip rates) and attributes it
categorically; this is exact because rates only change at events.  All
statistics are time-weighted over locations after the burn-in, and every
run is reproducible bit-for-bit from (seed, config) via an inline
xoshiro256** generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import ModelParams, ThresholdPolicy

_U64 = np.uint64
_DMAX = 1.0 / 9007199254740992.0  # 2^-53


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    policy: ThresholdPolicy
    k: int
    horizon: float
    burn_in: float = 0.0
    seed: int = 0
    snapshot_interval: float | None = None
    exclude_self_switch: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one location")
        if self.n_agents < 1:
            raise ValueError("beta * k rounds to zero agents")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if not 0 <= self.burn_in < self.horizon:
            raise ValueError("burn_in must lie in [0, horizon)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.snapshot_interval is not None and not self.snapshot_interval > 0:
            raise ValueError("snapshot_interval must be > 0")

    @property
    def n_agents(self) -> int:
        return int(round(self.params.beta * self.k))


@dataclass
class SimResult:
    """Time-averaged statistics of one run (post burn-in)."""

    empirical_dist: np.ndarray  # [z, n] occupancy/resource frequencies
    mean_reward_per_epoch: float
    total_welfare_rate: float  # reward collected per unit time, per location
    event_counts: dict
    snapshot_times: np.ndarray
    snapshot_z1_share: np.ndarray
    config: SimConfig

    def tv_to(self, pi: np.ndarray) -> float:
        """Total-variation distance to a reference distribution over (z, n)."""
        width = max(self.empirical_dist.shape[1], pi.shape[1])
        emp = np.zeros((2, width))
        ref = np.zeros((2, width))
        emp[:, : self.empirical_dist.shape[1]] = self.empirical_dist
        ref[:, : pi.shape[1]] = pi
        return float(0.5 * np.abs(emp - ref).sum())


@njit(cache=True, inline="always")
def _rotl(x, k):
    return _U64((x << _U64(k)) | (x >> _U64(64 - k)))


@njit(cache=True, inline="always")
def _next_u64(s):
    out = _U64(_rotl(_U64(s[1] * _U64(5)), 7) * _U64(9))
    t = _U64(s[1] << _U64(17))
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return out


@njit(cache=True, inline="always")
def _unif(s):
    """Uniform double in [0, 1)."""
    return float(_next_u64(s) >> _U64(11)) * _DMAX


@njit(cache=True, inline="always")
def _unif_pos(s):
    """Uniform double in (0, 1], safe under log."""
    return float((_next_u64(s) >> _U64(11)) + _U64(1)) * _DMAX


@njit(cache=True)
def _seed_state(seed):
    s = np.empty(4, _U64)
    x = _U64(seed)
    for i in range(4):
        x = _U64(x + _U64(0x9E3779B97F4A7C15))
        z = x
        z = _U64((z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9))
        z = _U64((z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB))
        s[i] = _U64(z ^ (z >> _U64(31)))
    if s[0] | s[1] | s[2] | s[3] == _U64(0):
        s[0] = _U64(1)
    return s


@njit(cache=True)
def _sim_kernel(
    seed,
    k_locs,
    n_agents,
    lam,
    gamma,
    mu01,
    mu10,
    z_marginal,
    n0,
    n1,
    fvals,
    horizon,
    burn_in,
    exclude_self,
    snap_interval,
    n_snaps,
):
    rng = _seed_state(seed)

    # initial state: resources from their stationary law, agents placed iid
    z = np.zeros(k_locs, np.int8)
    for k in range(k_locs):
        if _unif(rng) < z_marginal:
            z[k] = 1
    loc = np.empty(n_agents, np.int64)
    occ = np.zeros(k_locs, np.int64)
    for i in range(n_agents):
        k = int(_unif(rng) * k_locs)
        loc[i] = k
        occ[k] += 1

    # partition of location ids by resource class, for O(1) flip sampling
    class_ids = np.empty(k_locs, np.int64)
    pos = np.empty(k_locs, np.int64)
    count0 = 0
    for k in range(k_locs):
        if z[k] == 0:
            class_ids[count0] = k
            pos[k] = count0
            count0 += 1
    fill = count0
    for k in range(k_locs):
        if z[k] == 1:
            class_ids[fill] = k
            pos[k] = fill
            fill += 1

    hist = np.zeros((2, n_agents + 1))
    last_t = np.zeros(k_locs)
    snap_t = np.zeros(n_snaps)
    snap_z1 = np.zeros(n_snaps)
    snap_i = 0

    agent_rate = n_agents * lam
    floor_n0 = np.floor(n0)
    floor_n1 = np.floor(n1)

    t = 0.0
    reward_sum = 0.0
    n_epochs_post = 0
    epochs = 0
    departures = 0
    switches = 0
    stays = 0
    flips = 0

    while True:
        flip_rate = count0 * mu01 + (k_locs - count0) * mu10
        total = agent_rate + flip_rate
        t_next = t + (-np.log(_unif_pos(rng)) / total)
        # snapshots fall strictly between events, on the held state
        while snap_i < n_snaps and snap_interval * (snap_i + 1) < min(t_next, horizon):
            snap_t[snap_i] = snap_interval * (snap_i + 1)
            snap_z1[snap_i] = (k_locs - count0) / k_locs
            snap_i += 1
        if t_next >= horizon:
            break
        t = t_next

        if _unif(rng) * total < agent_rate:
            # one agent's decision epoch
            i = int(_unif(rng) * n_agents)
            here = loc[i]
            zz = z[here]
            n_here = occ[here]
            epochs += 1
            if t >= burn_in:
                reward_sum += zz * fvals[n_here]
                n_epochs_post += 1
            if _unif(rng) < 1.0 - gamma:
                departures += 1
                target = int(_unif(rng) * k_locs)
                if target != here:
                    if t > burn_in:
                        lo = last_t[here] if last_t[here] > burn_in else burn_in
                        hist[zz, n_here] += t - lo
                        lo = last_t[target] if last_t[target] > burn_in else burn_in
                        hist[z[target], occ[target]] += t - lo
                    last_t[here] = t
                    last_t[target] = t
                    occ[here] -= 1
                    occ[target] += 1
                    loc[i] = target
            else:
                nz = n1 if zz == 1 else n0
                fl = floor_n1 if zz == 1 else floor_n0
                if n_here > nz:
                    sw = 1.0
                elif n_here == fl:
                    sw = fl + 1.0 - nz
                else:
                    sw = 0.0
                do_switch = False
                if sw >= 1.0:
                    do_switch = True
                elif sw > 0.0:
                    do_switch = _unif(rng) < sw
                if do_switch and k_locs > 1:
                    switches += 1
                    if exclude_self:
                        target = int(_unif(rng) * (k_locs - 1))
                        if target >= here:
                            target += 1
                    else:
                        target = int(_unif(rng) * k_locs)
                    if target != here:
                        if t > burn_in:
                            lo = last_t[here] if last_t[here] > burn_in else burn_in
                            hist[zz, n_here] += t - lo
                            lo = last_t[target] if last_t[target] > burn_in else burn_in
                            hist[z[target], occ[target]] += t - lo
                        last_t[here] = t
                        last_t[target] = t
                        occ[here] -= 1
                        occ[target] += 1
                        loc[i] = target
                else:
                    stays += 1
        else:
            # resource flip; pick the class, then a location within it
            flips += 1
            if _unif(rng) * flip_rate < count0 * mu01:
                k = class_ids[int(_unif(rng) * count0)]
            else:
                k = class_ids[count0 + int(_unif(rng) * (k_locs - count0))]
            if t > burn_in:
                lo = last_t[k] if last_t[k] > burn_in else burn_in
                hist[z[k], occ[k]] += t - lo
            last_t[k] = t
            # move k across the class partition boundary
            p = pos[k]
            if z[k] == 0:
                other = class_ids[count0 - 1]
                class_ids[p] = other
                pos[other] = p
                class_ids[count0 - 1] = k
                pos[k] = count0 - 1
                count0 -= 1
                z[k] = 1
            else:
                other = class_ids[count0]
                class_ids[p] = other
                pos[other] = p
                class_ids[count0] = k
                pos[k] = count0
                count0 += 1
                z[k] = 0

    # close every location's interval at the horizon
    for k in range(k_locs):
        lo = last_t[k] if last_t[k] > burn_in else burn_in
        if horizon > lo:
            hist[z[k], occ[k]] += horizon - lo

    return (
        hist,
        reward_sum,
        n_epochs_post,
        epochs,
        departures,
        switches,
        stays,
        flips,
        snap_t[:snap_i],
        snap_z1[:snap_i],
    )


def simulate(cfg: SimConfig) -> SimResult:
    """Run one exact event-driven simulation and gather time-averaged stats."""
    p = cfg.params
    n_agents = cfg.n_agents
    fvals = np.zeros(n_agents + 1)
    fvals[1:] = p.reward.table_array(n_agents)
    snap_interval = cfg.snapshot_interval or cfg.horizon
    n_snaps = int(np.floor(cfg.horizon / snap_interval)) + 1

    (
        hist,
        reward_sum,
        n_epochs_post,
        epochs,
        departures,
        switches,
        stays,
        flips,
        snap_t,
        snap_z1,
    ) = _sim_kernel(
        np.uint64(cfg.seed),
        cfg.k,
        n_agents,
        p.lam,
        p.gamma,
        p.mu01,
        p.mu10,
        p.z_marginal(),
        cfg.policy.n0,
        cfg.policy.n1,
        fvals,
        cfg.horizon,
        cfg.burn_in,
        cfg.exclude_self_switch,
        snap_interval,
        n_snaps,
    )

    window = cfg.horizon - cfg.burn_in
    empirical = hist / (window * cfg.k)
    return SimResult(
        empirical_dist=empirical,
        mean_reward_per_epoch=reward_sum / n_epochs_post if n_epochs_post else 0.0,
        total_welfare_rate=reward_sum / (window * cfg.k),
        event_counts={
            "decision_epochs": int(epochs),
            "departures": int(departures),
            "switches": int(switches),
            "stays": int(stays),
            "resource_flips": int(flips),
        },
        snapshot_times=snap_t,
        snapshot_z1_share=snap_z1,
        config=cfg,
    )


def welfare(result: SimResult) -> float:
    """Reward collected per unit time divided by the number of locations."""
    return result.total_welfare_rate
