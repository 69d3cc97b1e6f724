import json

import numpy as np
import pytest

from clusterblocks import (BlockConfig, ConfigError, MagnitudeSeries,
                           ModelSpec, block_bookkeeping,
                           boundary_cluster_stat, exceedance_pattern,
                           expansion_report, gen_series, get_functional,
                           internal_cluster_stat, remainder_stat,
                           threshold_for_w)
from clusterblocks.expansion import path_deviations, sliding_block_sum

IND = get_functional("indicator")
LEN = get_functional("length")
CNT = get_functional("count")


def series_from(values):
    return MagnitudeSeries(values=np.asarray(values, dtype=float))


def place(n, positions, hi=2.0, lo=0.5):
    values = np.full(n, lo)
    for p in positions:
        values[p - 1] = hi
    return series_from(values)


def test_bookkeeping_worked_example():
    s = series_from([0.5, 2.0, 0.3, 0.4, 1.5, 0.2])
    book = block_bookkeeping(s, BlockConfig(r=2, u=1.0, w=0.1))
    assert book.m == 3
    assert list(book.counts) == [1, 0, 1]
    assert list(book.active) == [True, False, True]
    assert book.times(1).tolist() == [2]
    assert book.times(3).tolist() == [5]


def test_bookkeeping_saturated_and_empty():
    cfg = BlockConfig(r=3, u=1.0, w=0.1)
    full = series_from(np.full(12, 2.0))
    book = block_bookkeeping(full, cfg)
    assert np.all(book.counts == 3)
    assert all(book.last[j] - book.first[j] + 1 == 3 for j in range(4))
    empty = series_from(np.full(12, 0.5))
    book = block_bookkeeping(empty, cfg)
    assert not book.active.any()
    with pytest.raises(ConfigError):
        block_bookkeeping(series_from(np.ones(5)), cfg)


def test_gap_convention_sums_to_r():
    # sum of gaps including the t_j(0), t_j(N_j+1) conventions is r
    rng = np.random.default_rng(4)
    s = series_from(rng.uniform(0, 2, size=60))
    book = block_bookkeeping(s, BlockConfig(r=6, u=1.0, w=0.1))
    for j in range(1, book.m + 1):
        t = [(j - 1) * 6] + book.times(j).tolist() + [j * 6]
        gaps = np.diff(t)
        assert gaps.sum() == 6


def test_internal_cluster_examples():
    # exceedances at positions 15 and 19 inside block 2 (r=10, m=4)
    s = place(40, [15, 19])
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    total, per = internal_cluster_stat(book, IND)
    assert per == {2: 4.0}
    assert total == 4.0
    # single exceedance: IC_j = 0
    s = place(40, [15])
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    total, per = internal_cluster_stat(book, IND)
    assert total == 0.0 and per == {2: 0.0}
    # linear functional: always zero
    s = place(40, [15, 19, 17])
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    assert internal_cluster_stat(book, CNT)[0] == 0.0


def test_internal_cluster_piecewise_mode_drops_neighbour_indicators():
    # exceedances in adjacent blocks suppress standard IC but not piecewise
    s = place(40, [12, 15, 25])
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    assert internal_cluster_stat(book, IND, mode="standard")[0] == 0.0
    total, per = internal_cluster_stat(book, IND, mode="piecewise")
    assert per[2] == 3.0 and per[3] == 0.0
    ref_total, ref_per = internal_cluster_stat(book, IND, mode="piecewise",
                                               path="reference")
    assert ref_per == per and ref_total == total


def test_boundary_cluster_examples():
    # straddling cluster: last exceedance of block 2 at 20, first of block 3 at 21
    s = place(50, [19, 21], hi=3.0)
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    parts = boundary_cluster_stat(book, IND)
    [pair] = parts.per_pair
    assert pair["j"] == 2
    assert pair["bc1"] == -10.0
    assert pair["bc2"] == 21 - 19  # t_{j+1}(N_{j+1}) - t_j(1)
    assert pair["joint_length"] == 3 and pair["short"]
    # count functional: linearity kills both parts
    parts = boundary_cluster_stat(book, CNT)
    assert parts.total == 0.0
    # no adjacent pair: nothing fires
    s = place(50, [15, 35])
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    assert boundary_cluster_stat(book, IND).per_pair == []


def test_boundary_long_joint_cluster_uses_direct_path():
    # joint length 12 >= r=10: overline part, direct path only
    s = place(50, [12, 23], hi=3.0)
    book = block_bookkeeping(s, BlockConfig(r=10, u=1.0, w=0.01))
    parts = boundary_cluster_stat(book, IND)
    [pair] = parts.per_pair
    assert pair["joint_length"] == 12 and not pair["short"]
    assert parts.bc2_tilde == 0.0
    # indicator closed form valid for long clusters too:
    # (t3(N3)-t2(1)) - (gap - r)_+ = 11 - 1 = 10
    assert pair["bc2"] == 10.0
    assert boundary_cluster_stat(book, IND, path="reference").total == parts.total


def test_remainder_examples():
    cfg = BlockConfig(r=10, u=1.0, w=0.01)
    # all exceedances inside block 3 of 6: pure internal cluster
    s = place(60, [25, 27])
    rep = expansion_report(s, cfg, IND)
    assert rep.r_op == 0.0 and (rep.r_ic, rep.r_bc, rep.r_nc) == (0, 0, 0)
    # blocks 3,4,5 all active: only the run remainder fires; by hand,
    # S_2 = 5, T_3 = T_4 = 0, T_5 = 3 - 10, so r_nc = -2
    s = place(60, [25, 35, 43])
    rep = expansion_report(s, cfg, IND)
    assert rep.r_nc == -2.0
    assert rep.r_op == rep.r_ic + rep.r_bc + rep.r_nc
    assert rep.r_ic == 0.0 and rep.r_bc == 0.0
    # exceedance only in block 1: sample-boundary internal term
    s = place(60, [5])
    rep = expansion_report(s, cfg, IND)
    assert rep.r_op == rep.r_ic != 0.0
    assert rep.r_bc == 0.0 and rep.r_nc == 0.0


def test_remainder_operational_identity():
    rng = np.random.default_rng(8)
    cfg = BlockConfig(r=5, u=1.0, w=0.05)
    for _ in range(30):
        s = series_from(rng.uniform(0, 1.4, size=100))
        book = block_bookkeeping(s, cfg)
        for h in (IND, LEN, CNT):
            rep = expansion_report(s, cfg, h)
            r_op, r_ic, r_bc, r_nc = remainder_stat(
                book, h, rep.sb, rep.db, rep.ic, rep.bc)
            assert r_op == rep.r_op
            assert r_op == r_ic + r_bc + r_nc


def test_report_residuals_zero_on_seeded_instances():
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    w = 0.02
    u = threshold_for_w(spec, w)
    cfg = BlockConfig(r=8, u=u, w=w)
    for seed in range(20):
        s = gen_series(spec, 1600, seed=seed)
        for h in (IND, LEN, CNT):
            rep = expansion_report(s, cfg, h)
            assert rep.residual_identity == 0.0
            assert rep.residual_paper == 0.0
            assert rep.ic_path_deviation == 0.0
            assert rep.bc_path_deviation == 0.0


def test_count_functional_reduces_to_remainder():
    spec = ModelSpec.mma1(1.0, 2.0, 1.0)
    w = 0.03
    cfg = BlockConfig(r=6, u=threshold_for_w(spec, w), w=w)
    s = gen_series(spec, 600, seed=4)
    rep = expansion_report(s, cfg, CNT)
    assert rep.ic == 0.0 and rep.bc == 0.0
    assert rep.sb - rep.db == rep.r_op


def test_sb_event_identities():
    # one-sided event identities: direct window sums equal the
    # gap-weighted cluster sums when the left (resp. right) block is empty
    rng = np.random.default_rng(21)
    cfg = BlockConfig(r=7, u=1.0, w=0.05)
    hs = [IND, LEN, CNT, get_functional("length^2")]
    checked = 0
    for _ in range(120):
        s = series_from(rng.uniform(0, 1.35, size=7 * 8))
        book = block_bookkeeping(s, cfg)
        scaled = book.scaled
        for j in range(2, book.m):
            times = book.times(j)
            for h in hs:
                if not book.active[j - 2]:          # empty left neighbour
                    direct = sliding_block_sum(book, h, j - 1)
                    t = [(j - 1) * 7] + times.tolist() + [j * 7]
                    fast = sum((t[i + 1] - t[i]) *
                               h.evaluator(scaled[t[1] - 1:t[i]])
                               for i in range(1, len(t) - 1))
                    assert direct == fast
                    checked += 1
                if j + 1 <= book.m and not book.active[j]:  # empty right neighbour
                    direct = sliding_block_sum(book, h, j)
                    t = [(j - 1) * 7] + times.tolist() + [j * 7]
                    fast = sum((t[i + 1] - t[i]) *
                               h.evaluator(scaled[t[i + 1] - 1:t[-2]])
                               for i in range(0, len(t) - 2))
                    assert direct == fast
                    checked += 1
    assert checked > 100


def test_indicator_ic_recomputed_from_patterns():
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    w = 0.05
    cfg = BlockConfig(r=6, u=threshold_for_w(spec, w), w=w)
    s = gen_series(spec, 1200, seed=9)
    book = block_bookkeeping(s, cfg)
    total, per = internal_cluster_stat(book, IND)
    alt = 0.0
    for j in range(2, book.m):
        if book.active[j - 1] and not book.active[j - 2] and not book.active[j]:
            pat = exceedance_pattern(book.block_window(j))
            alt += pat.length - 1
    assert total == alt


def test_merged_pair_fast_path_forced_events():
    # force boundary clusters with random exceedance layouts near the
    # block seam, across block sizes; fast merged-gap form must equal the
    # direct window sums whenever the joint cluster stays below r
    rng = np.random.default_rng(71)
    hs = [IND, LEN, CNT, get_functional("length^2")]
    hits = 0
    for _ in range(200):
        r = int(rng.integers(5, 41))
        m = 5
        values = np.full(m * r, 0.5)
        # clusters inside blocks 2 and 3 only
        k2 = int(rng.integers(1, 4))
        k3 = int(rng.integers(1, 4))
        pos2 = rng.choice(np.arange(r + 1, 2 * r + 1), size=k2, replace=False)
        pos3 = rng.choice(np.arange(2 * r + 1, 3 * r + 1), size=k3, replace=False)
        values[np.concatenate([pos2, pos3]) - 1] = rng.uniform(1.5, 9.0, k2 + k3)
        book = block_bookkeeping(MagnitudeSeries(values=values),
                                 BlockConfig(r=r, u=1.0, w=0.01))
        for h in hs:
            parts_fast = boundary_cluster_stat(book, h, path="fast")
            parts_ref = boundary_cluster_stat(book, h, path="reference")
            [pf] = parts_fast.per_pair
            [pr] = parts_ref.per_pair
            assert pf["joint_length"] == pr["joint_length"]
            if h.integer_valued:
                assert pf["bc1"] == pr["bc1"] and pf["bc2"] == pr["bc2"]
            else:
                assert pf["bc1"] == pytest.approx(pr["bc1"], abs=1e-9)
                assert pf["bc2"] == pytest.approx(pr["bc2"], abs=1e-9)
            hits += 1
    assert hits == 800


def test_path_deviations_zero():
    rng = np.random.default_rng(30)
    cfg = BlockConfig(r=5, u=1.0, w=0.05)
    for _ in range(40):
        s = series_from(rng.uniform(0, 1.5, size=90))
        book = block_bookkeeping(s, cfg)
        for h in (IND, LEN, CNT, get_functional("length^1.5")):
            ic_dev, bc_dev = path_deviations(book, h)
            assert ic_dev <= 1e-12 and bc_dev <= 1e-12


def test_real_valued_functional_residual_tolerance(tmp_path):
    # length^1.5 exercises the float tolerance route of residual_paper
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    w = 0.03
    cfg = BlockConfig(r=7, u=threshold_for_w(spec, w), w=w)
    h = get_functional("length^1.5")
    for seed in range(10):
        s = gen_series(spec, 840, seed=seed)
        rep = expansion_report(s, cfg, h, counterexample_dir=tmp_path)
        scale = max(1.0, abs(rep.sb - rep.db), abs(rep.ic), abs(rep.bc))
        assert abs(rep.residual_identity) <= 1e-9 * scale
        assert abs(rep.residual_paper) <= 1e-9 * scale
        assert rep.ic_path_deviation <= 1e-9 * scale
        assert rep.bc_path_deviation <= 1e-9 * scale
    assert list(tmp_path.iterdir()) == []


def test_report_json_schema():
    s = place(60, [25, 27])
    rep = expansion_report(s, BlockConfig(r=10, u=1.0, w=0.01), IND,
                           verbose=True)
    data = json.loads(rep.to_json(verbose=True))
    for key in ("db", "sb", "ic", "bc1", "bc2_tilde", "bc2_overline", "r_op",
                "r_ic", "r_bc", "r_nc", "residual_identity", "residual_paper",
                "ic_norm", "bc_norm", "gap_scaled", "per_block"):
        assert key in data
    assert json.loads(rep.to_json())  # non-verbose drops per-block arrays
    assert "per_block" not in json.loads(rep.to_json())


def test_three_block_minimum():
    s = place(6, [2, 5])
    rep = expansion_report(s, BlockConfig(r=2, u=1.0, w=0.1), IND)
    assert rep.residual_identity == 0.0 and rep.residual_paper == 0.0
    with pytest.raises(ConfigError):
        expansion_report(place(4, [2]), BlockConfig(r=2, u=1.0, w=0.1), IND)


def test_counterexample_artifact_not_written_when_clean(tmp_path):
    s = place(60, [25, 27])
    expansion_report(s, BlockConfig(r=10, u=1.0, w=0.01), IND,
                     counterexample_dir=tmp_path)
    assert list(tmp_path.iterdir()) == []


def test_scale_equivariance_of_report():
    spec = ModelSpec.mma1(1.0, 1.0, 1.0)
    w = 0.02
    u = threshold_for_w(spec, w)
    s = gen_series(spec, 800, seed=12)
    base = expansion_report(s, BlockConfig(r=8, u=u, w=w), IND)
    for c in (0.25, 1024.0):  # powers of two rescale exactly
        scaled = MagnitudeSeries(values=s.values * c)
        rep = expansion_report(scaled, BlockConfig(r=8, u=u * c, w=w), IND)
        assert rep.sb == base.sb and rep.db == base.db
        assert rep.ic == base.ic and rep.bc == base.bc
        assert rep.disjoint_stat == base.disjoint_stat
