"""Independent reference computations used by the tests.

Everything here deliberately avoids the implementation paths it checks:
stationary laws come from closed-form birth-death results, and stopping
values from exhaustive policy enumeration with dense linear solves.
"""

import numpy as np
from scipy.special import gammaln

from mfe.model import switch_probability
from mfe.stopping import event_probs


def truncated_poisson(rate: float, width: int) -> np.ndarray:
    """Poisson(rate) pmf truncated and renormalized to {0, ..., width-1}."""
    n = np.arange(width)
    logp = n * np.log(rate) - rate - gammaln(n + 1)
    p = np.exp(logp)
    return p / p.sum()


def product_chain_law(params, rate: float, width: int) -> np.ndarray:
    """Stationary law of a policy-free location: independent z and Poisson n."""
    pn = truncated_poisson(rate, width)
    z1 = params.z_marginal()
    return np.vstack([(1.0 - z1) * pn, z1 * pn])


def enumerate_stopping_values(params, policy, kappa, c, nmax) -> np.ndarray:
    """Optimal stopping values by exhaustive enumeration of threshold rules.

    Every integer stationary stopping rule "stay iff n <= s_z" is evaluated
    exactly via a dense linear solve of its fixed-point equations; the
    optimal value function is the elementwise maximum over all rules.
    Returns Vhat as a (2, nmax) array indexed [z, n-1].
    """
    size = 2 * nmax

    def idx(z, n):
        return 2 * (n - 1) + z

    best = None
    for s0 in range(nmax + 1):
        for s1 in range(nmax + 1):
            a = np.zeros((size, size))
            b = np.zeros(size)
            for n in range(1, nmax + 1):
                for z in (0, 1):
                    i = idx(z, n)
                    ep = event_probs(params, kappa, z, n)
                    sw = switch_probability(policy, z, n)
                    stay = n <= (s0 if z == 0 else s1)
                    a[i, i] += 1.0
                    b[i] += ep.p_dec * (z * params.reward(n))
                    if stay:
                        a[i, i] -= ep.p_dec * params.gamma
                    else:
                        b[i] += ep.p_dec * params.gamma * c
                    if n > 1:
                        a[i, idx(z, n - 1)] -= ep.p_exit + ep.p_sur * sw
                        a[i, i] -= ep.p_sur * (1.0 - sw)
                    a[i, idx(1 - z, n)] -= ep.p_res
                    a[i, idx(z, min(n + 1, nmax))] -= ep.p_arr
            vhat = np.linalg.solve(a, b)
            best = vhat if best is None else np.maximum(best, vhat)
    return best.reshape(-1, 2).T.copy()
