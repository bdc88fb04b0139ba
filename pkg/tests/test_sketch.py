import math
from bisect import bisect_right

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kll import KLLSketch, MergeError, Params, compact_buffer, merge
from kll.bounds import height_bound
from kll.params import sampler_target_height


def brute_rank(data, x):
    return sum(1 for y in data if y <= x)


def stream(n, seed):
    return (np.random.default_rng(seed).permutation(n) + 1.0).tolist()


def state(sk):
    return sk.n, sk.H, [list(b) for _, b in sk.compactors], sk.sampler


# -- construction -------------------------------------------------------------

def test_new_sketch_is_empty():
    sk = KLLSketch(Params(200), seed=1)
    assert (sk.n, sk.H, sk.stored_count()) == (0, 1, 0)
    assert sk.sampler.height == 0
    assert sk.compactors == [(1, [])]


def test_new_sketch_requires_params():
    with pytest.raises(TypeError):
        KLLSketch(200)


# -- compaction ---------------------------------------------------------------

@pytest.mark.parametrize("u, emitted", [(0.1, [1, 3, 5]), (0.3, [2, 4, 6]),
                                        (0.6, [1, 3, 5]), (0.9, [2, 4, 6])])
def test_compact_even_buffer(u, emitted):
    buf = [1, 3, 5, 2, 4, 6]
    withheld, out = compact_buffer(buf, u)
    assert withheld == [] and out == emitted
    assert len(out) * 2 == 6


@pytest.mark.parametrize("u, withheld, emitted", [
    (0.1, [1], [2, 4, 6]), (0.3, [1], [3, 5, 7]),
    (0.6, [7], [1, 3, 5]), (0.9, [7], [2, 4, 6]),
])
def test_compact_odd_buffer_withholds_an_end(u, withheld, emitted):
    kept, out = compact_buffer([7, 1, 6, 2, 5, 3, 4], u)
    assert kept == withheld and out == emitted


@given(st.lists(st.integers(-20, 20), min_size=2, max_size=40), st.integers(-25, 25))
def test_compaction_changes_rank_by_at_most_one_weight(buf, x):
    # ranks measured in units of the level weight w; emitted items weigh 2w
    before = brute_rank(buf, x)
    by_end = {}
    for u in (0.1, 0.3, 0.6, 0.9):
        kept, out = compact_buffer(list(buf), u)
        after = brute_rank(kept, x) + 2 * brute_rank(out, x)
        assert after - before in (-1, 0, 1)
        by_end.setdefault(u >= 0.5, []).append(after - before)
        assert len(kept) + 2 * len(out) == len(buf)
    # for each withheld end the two parities move the rank by opposite amounts
    for deltas in by_end.values():
        assert sum(deltas) == 0


def test_query_below_buffer_unaffected():
    for u in (0.1, 0.3, 0.6, 0.9):
        kept, out = compact_buffer([5, 6, 7, 8, 9], u)
        assert brute_rank(kept, 0) + 2 * brute_rank(out, 0) == 0


# -- update -------------------------------------------------------------------

def test_single_update():
    sk = KLLSketch(Params(200))
    sk.update(5.0)
    assert sk.n == 1 and sk.compactors == [(1, [5.0])]


def test_small_k_compacts_and_conserves_weight():
    sk = KLLSketch(Params(4), seed=3)
    for x in [1.0, 2.0, 3.0, 4.0, 5.0]:
        sk.update(x)
    assert sum(sk.compaction_counts) >= 1
    assert sk.stored_weight() == 5


@given(st.lists(st.integers(0, 50), min_size=1, max_size=60), st.integers(0, 2**64 - 1))
def test_exact_when_k_covers_stream(values, seed):
    sk = KLLSketch(Params(max(4, len(values))), seed)
    sk.extend(values)
    assert sum(sk.compaction_counts) == 0
    for x in range(-1, 52):
        assert sk.rank(x) == brute_rank(values, x)


def test_exact_rank_small_example():
    sk = KLLSketch(Params(200))
    sk.extend([10, 20, 30])
    assert sk.rank(25) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 24), st.lists(st.integers(0, 30), min_size=0, max_size=1500),
       st.integers(0, 2**32))
def test_weight_conserved_after_every_update(k, values, seed):
    sk = KLLSketch(Params(k), seed)
    for x in values:
        sk.update(x)
        assert sk.stored_weight() == sk.n
        assert sk.stored_count() == sum(len(b) for _, b in sk.compactors) + (sk.sampler.weight > 0)
        assert 0 <= sk.sampler.weight < (1 << sk.sampler.height) or sk.sampler.weight == 0


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([Params(4), Params(9, "0.6"), Params(30), Params(8, mode="fixedtop", s=2)]),
       st.integers(0, 4000), st.integers(0, 2**32), st.integers(1, 97))
def test_extend_matches_repeated_update(params, n, seed, chunk):
    data = stream(n, seed)
    a = KLLSketch(params, seed)
    for x in data:
        a.update(x)
    b = KLLSketch(params, seed)
    for i in range(0, n, chunk):
        b.extend(data[i:i + chunk])
    assert state(a) == state(b)
    assert a.max_stored == b.max_stored
    assert a.compaction_counts == b.compaction_counts


def test_determinism():
    data = stream(20000, 4)
    a, b = KLLSketch(Params(16), 77), KLLSketch(Params(16), 77)
    a.extend(data)
    b.extend(data)
    assert state(a) == state(b)
    c = KLLSketch(Params(16), 78)
    c.extend(data)
    assert state(c) != state(a)


def test_n_overflow_is_checked():
    sk = KLLSketch(Params(8))
    sk.n = 2**64 - 1
    with pytest.raises(OverflowError):
        sk.update(1.0)
    with pytest.raises(OverflowError):
        sk.extend([1.0])


# -- growth and the sampler ---------------------------------------------------

def test_grow_reinterprets_capacities():
    sk = KLLSketch(Params(16), seed=2)
    seen = set()
    for x in stream(5000, 2):
        sk.update(x)
        seen.add(sk.H)
        if sk.H == 3:
            assert sk.capacity(3) == 17
        if sk.H == 4:
            assert sk.capacity(3) == 12
    assert {3, 4} <= seen


def test_sampler_activation_retires_level_one():
    p = Params(4)
    sk = KLLSketch(p, seed=5)
    for x in stream(3000, 5):
        before = sk.sampler.height
        sk.update(x)
        if before == 0 and sk.sampler.height == 1:
            assert sk.compactors[0][0] == 2
            assert sk._levels[0] == []
            assert sk.stored_weight() == sk.n
            break
    else:
        pytest.fail("sampler never activated")
    assert sampler_target_height(p, sk.H) == 1


def test_sampler_tracks_target_height():
    p = Params(8)
    sk = KLLSketch(p, seed=1)
    for x in stream(50000, 1):
        sk.update(x)
        assert sk.sampler.height == sampler_target_height(p, sk.H)


def test_compaction_events_meet_final_capacity():
    for params in (Params(4), Params(32), Params(16, "0.8"), Params(12, mode="fixedtop", s=2)):
        sk = KLLSketch(params, seed=9)
        sk.extend(stream(100000, 9))
        c = float(params.c)
        for h in range(1, sk.H + 1):
            if sk.compaction_counts[h - 1]:
                assert sk.min_compaction_sizes[h - 1] >= params.k * c ** (sk.H - h)


def test_compaction_hook_sees_every_event():
    sk = KLLSketch(Params(8), seed=1)
    events = []
    sk.on_compact = lambda h, size, H: events.append((h, size, H))
    sk.extend(stream(3000, 1))
    assert len(events) == sum(sk.compaction_counts)
    assert all(size >= sk.params.k * float(sk.params.c) ** (H - h) for h, size, H in events)


@pytest.mark.parametrize("k, n", [(4, 50000), (16, 200000), (64, 200000)])
def test_height_and_space_bounds_hold(k, n):
    p = Params(k)
    sk = KLLSketch(p, seed=k)
    for x in stream(n, k):
        sk.update(x)
        if sk.H >= 2:
            assert sk.H <= math.log2(sk.n / (float(p.c) * k)) + 2
    assert sk.H <= height_bound(n, k, p.c)
    assert sk.max_stored <= k / (1 - float(p.c)) + 2 * sk.H + 1


def test_stored_count_high_water_at_one_million():
    sk = KLLSketch(Params(200), seed=1)
    sk.extend(stream(10**6, 1))
    assert sk.max_stored <= 3 * 200 + 2 * math.ceil(math.log2(10**6)) + 1


def test_stored_count_exact_without_compaction():
    sk = KLLSketch(Params(50))
    sk.extend(range(50))
    assert sk.stored_count() == 50


# -- queries ------------------------------------------------------------------

def test_empty_queries():
    sk = KLLSketch(Params(8))
    assert sk.rank(3.0) == 0
    assert sk.cdf([1.0, 2.0]) == [0, 0]
    with pytest.raises(ValueError, match="empty"):
        sk.quantile(0.5)


def test_quantile_examples():
    sk = KLLSketch(Params(8))
    sk.update(7.0)
    assert sk.quantile(0.5) == 7.0
    sk = KLLSketch(Params(100))
    sk.extend(float(i) for i in range(1, 101))
    assert sk.quantile(0.5) == 50.0
    assert sk.quantile(0.0) == 1.0
    assert sk.quantile(1.0) == 100.0
    with pytest.raises(ValueError):
        sk.quantile(1.5)


def test_quantile_returns_stream_items():
    data = stream(30000, 8)
    sk = KLLSketch(Params(20), 8)
    sk.extend(data)
    members = set(data)
    for q in np.linspace(0, 1, 41):
        assert sk.quantile(q) in members
    assert sk.quantile(1.0) == max(x for _, b in sk.compactors for x in b)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.lists(st.integers(-100, 100), max_size=3000),
       st.lists(st.integers(-110, 110), max_size=30), st.integers(0, 1000))
def test_cdf_matches_rank_and_is_monotone(k, values, queries, seed):
    sk = KLLSketch(Params(k), seed)
    sk.extend(values)
    xs = sorted(queries)
    ranks = sk.cdf(xs)
    assert ranks == [sk.rank(x) for x in xs]
    assert ranks == sorted(ranks)
    if values:
        assert sk.cdf([min(values) - 1, max(values) + 1]) == [0, sk.n]


def test_cdf_rejects_unsorted():
    sk = KLLSketch(Params(8))
    with pytest.raises(ValueError, match="sorted"):
        sk.cdf([2.0, 1.0])


def test_rank_counts_sampler_item():
    sk = KLLSketch(Params(4), seed=2)
    sk.extend(stream(777, 2))
    assert sk.sampler.height >= 1
    assert sk.rank(float("inf")) == sk.stored_weight() == 777


@pytest.mark.parametrize("k", [8, 64])
def test_rank_unbiased(k):
    n, seeds = 2000, 600
    qs = [100.0, 700.0, 1000.0, 1500.0, 1900.0]
    errs = []
    for seed in range(seeds):
        sk = KLLSketch(Params(k), seed)
        sk.extend(stream(n, 1000 + seed))
        errs.append([r - q for r, q in zip(sk.cdf(qs), qs)])
    errs = np.array(errs, dtype=float)
    se = errs.std(axis=0, ddof=1) / math.sqrt(seeds)
    assert np.all(np.abs(errs.mean(axis=0)) <= 4 * se)


# -- merge --------------------------------------------------------------------

def test_merge_with_empty_is_identity():
    s = KLLSketch(Params(16), 3)
    s.extend(stream(5000, 3))
    e = KLLSketch(Params(16), 4)
    qs = [float(x) for x in range(0, 5002, 7)]
    for m in (merge(e, s), merge(s, e)):
        assert m.cdf(qs) == s.cdf(qs)
        assert m.n == s.n


def test_merge_counts_add():
    a, b = KLLSketch(Params(32), 1), KLLSketch(Params(32), 2)
    a.extend(stream(1000, 1))
    b.extend(stream(2000, 2))
    m = merge(a, b)
    assert m.n == 3000
    assert (a.n, b.n) == (1000, 2000)


def test_merge_params_mismatch():
    with pytest.raises(MergeError):
        merge(KLLSketch(Params(16)), KLLSketch(Params(32)))
    with pytest.raises(MergeError):
        KLLSketch(Params(16)).merge(KLLSketch(Params(16, "0.7")))


def test_merge_leaves_inputs_untouched():
    a, b = KLLSketch(Params(8), 1), KLLSketch(Params(8), 2)
    a.extend(stream(3000, 1))
    b.extend(stream(500, 2))
    sa, sb = state(a), state(b)
    merge(a, b)
    assert state(a) == sa and state(b) == sb


@pytest.mark.parametrize("params", [Params(4), Params(10), Params(8, mode="fixedtop", s=1)])
def test_merged_sketch_satisfies_invariants(params):
    rng = np.random.default_rng(0)
    for trial in range(20):
        parts = []
        for i in range(3):
            sk = KLLSketch(params, trial * 10 + i)
            sk.extend(rng.random(int(rng.integers(0, 5000))).tolist())
            parts.append(sk)
        m = merge(merge(parts[0], parts[1], 5), parts[2], 6)
        assert m.n == sum(p.n for p in parts)
        assert m.sampler.height == max(sampler_target_height(params, m.H),
                                       max(p.sampler.height for p in parts))
        assert 0 <= m.sampler.weight < (1 << m.sampler.height) or m.sampler.weight == 0
        for h, buf in m.compactors:
            assert len(buf) < m.capacity(h)
        assert m.stored_count() <= m.space_bound()


def test_merge_conserves_weight_in_expectation():
    # sizes vary so the two sampler items overflow their window in many trials
    p = Params(4)
    diffs = []
    for seed in range(1500):
        nb = 400 + seed % 300
        a, b = KLLSketch(p, seed), KLLSketch(p, seed + 10**6)
        a.extend(range(1237))
        b.extend(range(nb))
        diffs.append(merge(a, b, seed).stored_weight() - (1237 + nb))
    diffs = np.array(diffs, dtype=float)
    assert np.count_nonzero(diffs) > 100
    se = diffs.std(ddof=1) / math.sqrt(len(diffs))
    assert abs(diffs.mean()) <= 4 * se


def test_merge_rank_unbiased():
    p = Params(6)
    qs = [50.0, 333.0, 600.0, 900.0]
    data = stream(1000, 42)
    errs = []
    for seed in range(1200):
        a, b = KLLSketch(p, seed), KLLSketch(p, seed + 10**6)
        a.extend(data[:300])
        b.extend(data[300:])
        m = merge(b, a, seed)
        errs.append([r - q for r, q in zip(m.cdf(qs), qs)])
    errs = np.array(errs, dtype=float)
    se = errs.std(axis=0, ddof=1) / math.sqrt(len(errs))
    assert np.all(np.abs(errs.mean(axis=0)) <= 4 * se)


def test_merge_accounting_is_associative():
    p = Params(12)
    s = [KLLSketch(p, i) for i in range(3)]
    for i, sk in enumerate(s):
        sk.extend(stream(1000 * (i + 1), i))
    left = merge(merge(s[0], s[1]), s[2])
    right = merge(s[0], merge(s[1], s[2]))
    assert (left.n, left.params) == (right.n, right.params) == (6000, p)


def test_merge_default_seed_is_deterministic():
    a, b = KLLSketch(Params(8), 1), KLLSketch(Params(8), 2)
    a.extend(stream(4000, 1))
    b.extend(stream(4000, 2))
    assert state(merge(a, b)) == state(merge(a, b))
