from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivefeedback.errors import ValidationError
from drivefeedback.evaluation import (
    DegenerateVarianceError,
    NoSignalError,
    paired_t_test,
    pairwise_results,
    pearson_r,
    survey_correlation,
    wilcoxon_signed_rank,
)

from oracles import mp_paired_t, mp_pearson, signed_rank_enumeration


def pairs_of(b, i):
    return list(zip(b, i))


def test_paired_t_example_against_high_precision():
    b, i = [5, 7, 6, 9], [3, 4, 5, 8]
    r = paired_t_test(pairs_of(b, i))
    t, p = mp_paired_t(b, i)
    assert r.statistic == pytest.approx(float(t), abs=1e-9)
    assert r.p_value == pytest.approx(float(p), abs=1e-9)
    assert r.n_effective == 4


def test_one_sided_is_half():
    pairs = pairs_of([5, 7, 6, 9], [3, 4, 5, 8])
    two, one = paired_t_test(pairs), paired_t_test(pairs, "one")
    assert one.p_value == two.p_value / 2


def test_paired_t_errors():
    with pytest.raises(DegenerateVarianceError):
        paired_t_test(pairs_of([2, 3, 4, 5], [1, 2, 3, 4]))
    with pytest.raises(ValidationError):
        paired_t_test([(1.0, 2.0)])
    with pytest.raises(ValidationError):
        paired_t_test([(1.0, float("nan")), (1.0, 2.0)])
    with pytest.raises(ValidationError):
        paired_t_test(pairs_of([1, 2], [0, 0]), sides="left")


def test_wilcoxon_examples():
    with pytest.raises(NoSignalError):
        wilcoxon_signed_rank(pairs_of([1, 2, 3], [1, 2, 3]))
    r = wilcoxon_signed_rank(pairs_of([1, 2, 3], [0, 0, 0]))
    assert (r.statistic, r.p_value, r.method_note) == (0.0, 0.25, "exact")


def test_zero_differences_dropped():
    r = wilcoxon_signed_rank(pairs_of([1, 2, 3, 4, 5], [1, 2, 0, 0, 0]))
    assert r.n_effective == 3


def test_normal_approx_boundary():
    d = [float(k) * (1 if k % 2 else -1) for k in range(1, 22)]
    assert wilcoxon_signed_rank(pairs_of(d, [0] * 21)).method_note == "normal-approx"
    rng = random.Random(5)
    for _ in range(20):
        mags = [rng.randint(1, 30) for _ in range(20)]
        signs = [1] * 10 + [-1] * 10
        rng.shuffle(signs)
        pairs = pairs_of([m * s for m, s in zip(mags, signs)], [0] * 20)
        exact = wilcoxon_signed_rank(pairs)
        approx = wilcoxon_signed_rank(pairs, method="approx")
        assert exact.method_note == "exact" and approx.method_note == "normal-approx"
        assert abs(exact.p_value - approx.p_value) <= 0.02


def test_pearson_examples():
    x = [1.0, 2.0, 3.0, 4.0]
    assert pearson_r(x, [2 * v + 1 for v in x]).statistic == 1.0
    r = pearson_r([1, 2, 3], [1, 2, 3.0001])
    mr, mp_ = mp_pearson([1, 2, 3], [1, 2, 3.0001])
    assert r.statistic == pytest.approx(float(mr), abs=1e-12)
    assert r.p_value == pytest.approx(float(mp_), abs=1e-9)
    with pytest.raises(DegenerateVarianceError):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValidationError):
        pearson_r([1, 2], [1, 2])


def stats_fixture(seed: int):
    rng = random.Random(seed)
    n = rng.randint(3, 12)
    base = [round(rng.uniform(0, 20), rng.choice([0, 1, 2])) for _ in range(n)]
    post = [round(max(0.0, b - rng.uniform(-3, 6)), rng.choice([0, 1])) for b in base]
    if len({b - p for b, p in zip(base, post)}) == 1:
        post[0] += 1.0
    return base, post


def check_fixture(seed: int) -> None:
    """Every statistic on one random fixture against its independent oracle."""
    base, post = stats_fixture(seed)
    pairs = pairs_of(base, post)
    t, p = mp_paired_t(base, post)
    r = paired_t_test(pairs)
    assert abs(r.statistic - float(t)) <= 1e-9
    assert abs(r.p_value - float(p)) <= 1e-9
    diffs = [b - i for b, i in pairs]
    if any(diffs):
        w = wilcoxon_signed_rank(pairs)
        assert w.p_value == float(signed_rank_enumeration(diffs))
    if len(set(base)) > 1 and len(set(post)) > 1:
        pr = pearson_r(base, post)
        mr, mp_ = mp_pearson(base, post)
        assert abs(pr.statistic - float(mr)) <= 1e-12
        assert abs(pr.p_value - float(mp_)) <= 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_fixtures_against_oracles(seed):
    check_fixture(seed)


diffs_st = st.lists(st.integers(-6, 6), min_size=2, max_size=12).filter(any)


@settings(max_examples=200, deadline=None)
@given(diffs_st)
def test_exact_matches_enumeration(diffs):
    r = wilcoxon_signed_rank(pairs_of(diffs, [0] * len(diffs)))
    assert r.p_value == float(signed_rank_enumeration(diffs))
    assert 0.0 <= r.p_value <= 1.0 and r.n_effective <= len(diffs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=3, max_size=25))
def test_swap_symmetry(pairs):
    swapped = [(i, b) for b, i in pairs]
    try:
        t1, t2 = paired_t_test(pairs), paired_t_test(swapped)
    except DegenerateVarianceError:
        t1 = None
    if t1 is not None:
        assert t2.statistic == -t1.statistic
        assert t2.p_value == pytest.approx(t1.p_value, abs=1e-12)
    try:
        w1 = wilcoxon_signed_rank(pairs)
    except NoSignalError:
        return
    w2 = wilcoxon_signed_rank(swapped)
    assert (w1.statistic, w1.p_value) == (w2.statistic, w2.p_value)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=3, max_size=15), st.lists(st.integers(-50, 50), min_size=3, max_size=15),
       st.floats(0.5, 10), st.floats(-100, 100))
def test_pearson_affine_invariance(xs, ys, a, c):
    n = min(len(xs), len(ys))
    x, y = [float(v) for v in xs[:n]], [float(v) for v in ys[:n]]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    r1 = pearson_r(x, y)
    r2 = pearson_r([a * v + c for v in x], y)
    assert r2.statistic == pytest.approx(r1.statistic, abs=1e-9)
    assert -1.0 <= r1.statistic <= 1.0 and 0.0 <= r1.p_value <= 1.0


def test_pairwise_results_and_survey():
    base = {("d1", "Speeding"): 6.0, ("d2", "Speeding"): 4.0, ("d3", "Speeding"): 5.0,
            ("d1", "Swerving"): 1.0, ("d2", "Swerving"): 1.0, ("d3", "Swerving"): 1.0}
    post = {("d1", "Speeding"): 3.0, ("d2", "Speeding"): 3.5, ("d3", "Speeding"): 1.0,
            ("d1", "Swerving"): 1.0, ("d2", "Swerving"): 1.0, ("d3", "Swerving"): 1.0}
    rows = pairwise_results(base, post)
    assert [(r.group, r.test) for r in rows] == [
        ("Speeding", "paired-t"), ("Speeding", "wilcoxon"),
        ("Swerving", "paired-t"), ("Swerving", "wilcoxon"),
        ("all", "paired-t"), ("all", "wilcoxon"),
    ]
    assert rows[2].method.startswith("n/a") and rows[3].method.startswith("n/a")
    assert rows[0].statistic > 0
    row = survey_correlation(base, post, {"d1": 2.0, "d2": 1.0, "d3": 4.0})
    assert row.n == 3 and row.statistic is not None
