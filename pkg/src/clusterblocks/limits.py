"""Closed-form MMA(1) limit constants and Z-process Monte Carlo.

For X_j = c0 xi_j v c1 xi_{j+1} with Pareto(alpha) innovations the
candidate extremal index and every limit constant used by the rate
experiments have closed forms in theta = (c0 v c1)^a / (c0^a + c1^a).
Cluster indices of general functionals are estimated as theta * E[H(Z)]
by sampling the conditioned tail process Z.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .functionals import ClusterFunctional
from .models import ModelSpec, ZSampler, marginal_tail


def mma1_constants(c0: float, c1: float, alpha: float) -> tuple[float, float]:
    """(theta, P(Y_1 > 1)) for the MMA(1) model; the two sum to one."""
    if alpha <= 0:
        raise ModelError("alpha must be positive")
    if max(c0, c1) <= 0:
        raise ModelError("both coefficients are zero")
    s = c0 ** alpha + c1 ** alpha
    theta = max(c0, c1) ** alpha / s
    p_y1 = min(c0, c1) ** alpha / s
    return theta, p_y1


def cluster_index_mc(h: ClusterFunctional, spec: ModelSpec, samples: int,
                     seed: int) -> tuple[float, float]:
    """Monte Carlo cluster index theta * E[H(Z)] with its standard error.

    Z windows are realized as (Z_0, Z_1) since Z_j = 0 for j >= 2 in
    MMA(1); theta enters exactly, the randomness is only in E[H(Z)].
    """
    if samples < 1000:
        raise ModelError("need at least 1000 Monte Carlo samples")
    base = spec.base
    if base.kind not in ("mma1", "iid"):
        raise ModelError("cluster_index_mc supports MMA(1)-type models only")
    c = list(base.coeffs) + [0.0] * (2 - len(base.coeffs))
    theta, _ = mma1_constants(c[0], c[1], base.alpha)
    sampler = ZSampler(spec, seed)
    z0, z1 = sampler.sample_z_many(samples)
    vals = np.empty(samples)
    for i in range(samples):
        vals[i] = h.evaluator(np.array((z0[i], z1[i])))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(samples))
    return theta * mean, theta * se


def expected_l_z_minus_one(c0: float, c1: float, alpha: float) -> float:
    """E[L(Z) - 1] = P(Z_1 > 1); for MMA(1) it equals P(Y_1 > 1)/theta."""
    theta, p_y1 = mma1_constants(c0, c1, alpha)
    return p_y1 / theta


@dataclass(frozen=True)
class LimitTable:
    """All limit constants for one (model, functional, gamma) choice."""

    c0: float
    c1: float
    alpha: float
    functional: str
    gamma: float
    theta: float
    p_y1: float
    nu_ic: float
    nu_bc: float
    nu_ic_se: float
    nu_bc_se: float
    small_block_pa1a2: float
    large_block_pa1a2: float
    clusterlength_moment: float
    joint_length_moment: float
    gap_constant: float
    ic_large_constant: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self) -> list[tuple[str, float]]:
        order = ["theta", "p_y1", "nu_ic", "nu_bc", "small_block_pa1a2",
                 "large_block_pa1a2", "clusterlength_moment",
                 "joint_length_moment", "gap_constant", "ic_large_constant"]
        return [(k, getattr(self, k)) for k in order]


def limit_table(spec: ModelSpec, h: ClusterFunctional, gamma: float = 1.0,
                samples: int = 20000, seed: int = 0) -> LimitTable:
    """Fill the limit constants, using Monte Carlo only where no closed
    form is available for the given functional."""
    base = spec.base
    if base.kind not in ("mma1", "iid"):
        raise ModelError("limit tables are available for MMA(1)-type models only")
    c = list(base.coeffs) + [0.0] * (2 - len(base.coeffs))
    c0, c1, alpha = c[0], c[1], base.alpha
    theta, p_y1 = mma1_constants(c0, c1, alpha)

    if h.name == "indicator":
        nu_ic, nu_bc = p_y1, -p_y1          # theta * E[L(Z)-1] and its negative
        se_ic = se_bc = 0.0
    elif h.name == "count":
        nu_ic = nu_bc = 0.0                 # linear functional
        se_ic = se_bc = 0.0
    else:
        from .functionals import induced_functional

        nu_ic, se_ic = cluster_index_mc(induced_functional(h, "ic"), spec, samples, seed)
        nu_bc, se_bc = cluster_index_mc(induced_functional(h, "bc"), spec, samples,
                                        seed + 1)

    g = float(gamma)
    moment = theta ** 2 / ((g + 1.0) * (g + 2.0))
    joint = (2.0 ** (g + 2.0) - 1.0) / ((g + 1.0) * (g + 2.0)) * theta ** 2
    return LimitTable(
        c0=c0, c1=c1, alpha=alpha, functional=h.name, gamma=g,
        theta=theta, p_y1=p_y1,
        nu_ic=nu_ic, nu_bc=nu_bc, nu_ic_se=se_ic, nu_bc_se=se_bc,
        small_block_pa1a2=theta * expected_l_z_minus_one(c0, c1, alpha),
        large_block_pa1a2=theta ** 2,
        clusterlength_moment=moment,
        joint_length_moment=joint,
        gap_constant=theta ** 2 / 6.0,
        ic_large_constant=theta ** 2 / 6.0,
    )


def joint_exceedance(spec: ModelSpec, u: float, lag: int) -> float:
    """Exact P(X_0 > u, X_lag > u) for moving-maxima models.

    Each innovation slot receives the largest coefficient constraining it;
    lags beyond the model order factor into the product of marginals.
    """
    base = spec.base
    if spec.kind == "piecewise":
        raise ModelError("no closed-form joint law across piecewise blocks")
    q = len(base.coeffs) - 1
    if u < max(base.coeffs):
        raise ModelError("threshold below model support")
    if lag < 1:
        raise ModelError("lag must be >= 1")
    w = marginal_tail(base, u)
    if lag > q:
        return w * w
    f_marg = 1.0 - w
    f_joint = 1.0
    for s in range(0, lag + q + 1):
        cap = 0.0
        if s <= q:
            cap = max(cap, base.coeffs[s])
        if lag <= s <= lag + q:
            cap = max(cap, base.coeffs[s - lag])
        if cap > 0:
            f_joint *= 1.0 - (cap / u) ** base.alpha
    return 1.0 - 2.0 * f_marg + f_joint


def anticlustering_sum(spec: ModelSpec, r: int, u: float, gamma: float,
                       ell: int) -> float:
    """Lag-weighted joint exceedance sum (1/w) sum_{i=ell}^r i^gamma P(X_0>u, X_i>u).

    Exact for moving-maxima models; lags above the model order contribute
    only the independent w^2 terms.
    """
    if not 1 <= ell <= r:
        raise ModelError("need 1 <= ell <= r")
    w = marginal_tail(spec, u)
    total = 0.0
    for i in range(ell, r + 1):
        total += i ** float(gamma) * joint_exceedance(spec, u, i)
    return total / w
