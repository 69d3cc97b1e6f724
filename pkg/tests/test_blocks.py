import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterblocks import (BlockConfig, ConfigError, MagnitudeSeries,
                           ModelSpec, block_values, disjoint_stat,
                           empirical_cluster_measure, gen_series,
                           get_functional, sliding_stat, sliding_values,
                           threshold_for_w)

WORKED = MagnitudeSeries(values=np.array([0.5, 2.0, 0.3, 0.4, 1.5, 0.2]))
CFG = BlockConfig(r=2, u=1.0, w=0.1)
IND = get_functional("indicator")


def test_disjoint_worked_example():
    assert disjoint_stat(WORKED, CFG, IND) == pytest.approx(10 / 3, rel=1e-12)


def test_sliding_worked_example():
    assert np.array_equal(sliding_values(WORKED, CFG, IND), [1, 1, 0, 1, 1])
    assert sliding_stat(WORKED, CFG, IND) == pytest.approx(10 / 3, rel=1e-12)


def test_subthreshold_series_gives_zero():
    s = MagnitudeSeries(values=np.full(30, 0.5))
    cfg = BlockConfig(r=5, u=1.0, w=0.1)
    for name in ("indicator", "length", "count"):
        assert disjoint_stat(s, cfg, get_functional(name)) == 0.0
        assert sliding_stat(s, cfg, get_functional(name)) == 0.0


def test_constant_series_above_threshold():
    n, r, w = 40, 5, 0.2
    s = MagnitudeSeries(values=np.full(n, 3.0))
    cfg = BlockConfig(r=r, u=1.0, w=w)
    assert sliding_stat(s, cfg, IND) == pytest.approx((n - r + 1) / (n * r * w))


def test_config_validation():
    with pytest.raises(ConfigError):
        BlockConfig(r=1, u=1.0, w=0.1)
    with pytest.raises(ConfigError):
        BlockConfig(r=4, u=1.0, w=1.5)
    with pytest.raises(ConfigError):
        disjoint_stat(WORKED, BlockConfig(r=7, u=1.0, w=0.1), IND)


def test_interior_variants():
    cfg = BlockConfig(r=2, u=1.0, w=0.1, interior_only=True)
    # only block 2 ([0.3, 0.4]) is interior: no exceedance
    assert disjoint_stat(WORKED, cfg, IND) == 0.0
    # interior sliding: windows starting in block 2 -> starts 3, 4
    assert sliding_stat(WORKED, cfg, IND) == pytest.approx(1 / (6 * 2 * 0.1))


def test_iid_disjoint_estimates_one():
    spec = ModelSpec.iid_pareto(1.0)
    n, r, w = 10 ** 6, 20, 1e-3
    s = gen_series(spec, n, seed=31)
    cfg = BlockConfig(r=r, u=threshold_for_w(spec, w), w=w)
    val = disjoint_stat(s, cfg, IND)
    assert abs(val - 1.0) <= 0.1


def test_ecm_single_exceedance():
    values = np.full(24, 0.5)
    values[7] = 5.0
    s = MagnitudeSeries(values=values)
    cfg = BlockConfig(r=4, u=1.0, w=0.01)
    m = 6
    assert empirical_cluster_measure(s, cfg, IND) == pytest.approx(
        1 / (m * 4 * 0.01))


def test_ecm_mma1_estimates_theta():
    # r=16 keeps the 1/(2r) finite-block bias inside the 10% band
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    n, r = 10 ** 6, 16
    w = n ** -0.6
    s = gen_series(spec, n, seed=77)
    cfg = BlockConfig(r=r, u=threshold_for_w(spec, w), w=w)
    val = empirical_cluster_measure(s, cfg, IND)
    assert abs(val - 0.5) <= 0.05


def test_ecm_monotone_in_threshold():
    s = gen_series(ModelSpec.mma1(1.0, 1.0, 1.0), 4000, seed=13)
    vals = []
    for u in (5.0, 10.0, 20.0, 40.0):
        cfg = BlockConfig(r=8, u=u, w=0.01)  # fixed w: compare raw averages
        vals.append(empirical_cluster_measure(s, cfg, IND))
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1 / (8 * 0.01) for v in vals)


def test_scale_equivariance_power_of_two():
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    s = gen_series(spec, 5000, seed=3)
    w = 0.01
    u = threshold_for_w(spec, w)
    cfg = BlockConfig(r=10, u=u, w=w)
    for c in (2.0 ** -4, 2.0 ** 10):
        scaled = MagnitudeSeries(values=s.values * c)
        cfg_c = BlockConfig(r=10, u=u * c, w=w)
        for name in ("indicator", "length", "count"):
            h = get_functional(name)
            assert disjoint_stat(scaled, cfg_c, h) == disjoint_stat(s, cfg, h)
            assert sliding_stat(scaled, cfg_c, h) == sliding_stat(s, cfg, h)


@given(st.lists(st.floats(min_value=0.0, max_value=3.0, allow_nan=False),
                min_size=8, max_size=60),
       st.integers(min_value=2, max_value=7))
@settings(max_examples=150, deadline=None)
def test_vectorized_paths_match_bruteforce(values, r):
    if len(values) < r:
        return
    s = MagnitudeSeries(values=np.asarray(values))
    cfg = BlockConfig(r=r, u=1.0, w=0.3)
    for name in ("indicator", "length", "count", "length^2"):
        h = get_functional(name)
        fast = sliding_values(s, cfg, h)
        slow = np.array([h.evaluator(s.values[i:i + r])
                         if np.any(s.values[i:i + r] > 1.0) else 0.0
                         for i in range(len(values) - r + 1)])
        assert np.array_equal(fast, slow)
        bfast = block_values(s, cfg, h)
        bslow = np.array([h.evaluator(s.values[j * r:(j + 1) * r])
                          if np.any(s.values[j * r:(j + 1) * r] > 1.0) else 0.0
                          for j in range(len(values) // r)])
        assert np.array_equal(bfast, bslow)


def test_disjoint_sliding_same_mean():
    # replicate means agree within 3 pooled SEs
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    w = 0.01
    u = threshold_for_w(spec, w)
    cfg = BlockConfig(r=10, u=u, w=w)
    dj, sl = [], []
    for k in range(200):
        s = gen_series(spec, 2000, seed=1000 + k)
        dj.append(disjoint_stat(s, cfg, IND))
        sl.append(sliding_stat(s, cfg, IND))
    dj, sl = np.array(dj), np.array(sl)
    pooled_se = math.sqrt(dj.var(ddof=1) / 200 + sl.var(ddof=1) / 200)
    assert abs(dj.mean() - sl.mean()) <= 3 * pooled_se
