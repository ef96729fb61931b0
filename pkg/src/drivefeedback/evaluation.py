"""Pre/post comparison tests on per-driver event rates.

Differences are taken as baseline minus intervention, so a reduction in
unsafe events gives a positive statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from scipy.special import betainc, ndtr

from .errors import DriveFeedbackError, ValidationError

EXACT_LIMIT = 20


class DegenerateVarianceError(DriveFeedbackError):
    pass


class NoSignalError(DriveFeedbackError):
    pass


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    n_effective: int
    method_note: str


def _check_pairs(pairs: Sequence[tuple[float, float]]) -> list[float]:
    if len(pairs) < 2:
        raise ValidationError("need at least 2 pairs")
    diffs = []
    for b, i in pairs:
        if not (math.isfinite(b) and math.isfinite(i)):
            raise ValidationError("pair values must be finite")
        diffs.append(b - i)
    return diffs


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(pairs: Sequence[tuple[float, float]], sides: str = "two") -> TestResult:
    d = _check_pairs(pairs)
    n = len(d)
    mean = math.fsum(d) / n
    var = math.fsum((x - mean) ** 2 for x in d) / (n - 1)
    if var == 0.0:
        raise DegenerateVarianceError("differences have zero variance")
    t = mean / math.sqrt(var / n)
    p2 = student_t_sf2(t, n - 1)
    if sides == "two":
        p = p2
    elif sides == "one":
        # alternative: baseline exceeds intervention
        p = p2 / 2.0 if t > 0 else 1.0 - p2 / 2.0
    else:
        raise ValidationError(f"sides must be 'two' or 'one', got {sides!r}")
    return TestResult(t, min(max(p, 0.0), 1.0), n, f"paired-t df={n - 1} sides={sides}")


def midranks(values: Sequence[float]) -> list[Fraction]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks: list[Fraction] = [Fraction(0)] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = Fraction(i + 1 + j + 1, 2)
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _exact_signed_rank_p(doubled: Sequence[int], w2: int) -> Fraction:
    """P(min(W+, W-) <= W_obs) over all 2^n equally likely sign assignments.

    Ranks are doubled so mid-ranks stay integral; counts of each attainable
    W+ are accumulated by subset-sum convolution, which tallies every
    assignment exactly once.
    """
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    reach = 0
    for r in doubled:
        reach += r
        for s in range(reach, r - 1, -1):
            counts[s] += counts[s - r]
    hits = sum(c for s, c in enumerate(counts) if min(s, total - s) <= w2)
    return Fraction(hits, 2 ** len(doubled))


def wilcoxon_signed_rank(pairs: Sequence[tuple[float, float]], method: str = "auto") -> TestResult:
    """Signed-rank test; exact up to 20 non-zero differences, else normal approximation."""
    d = [x for x in _check_pairs(pairs) if x != 0.0]
    n = len(d)
    if n == 0:
        raise NoSignalError("all differences are zero")
    ranks = midranks([abs(x) for x in d])
    w_plus = sum((r for r, x in zip(ranks, d) if x > 0), Fraction(0))
    w_minus = sum((r for r, x in zip(ranks, d) if x < 0), Fraction(0))
    w = min(w_plus, w_minus)
    exact = n <= EXACT_LIMIT if method == "auto" else method == "exact"
    if exact:
        p = _exact_signed_rank_p([int(2 * r) for r in ranks], int(2 * w))
        return TestResult(float(w), float(min(p, Fraction(1))), n, "exact")

    mu = n * (n + 1) / 4.0
    tie_sizes: dict[Fraction, int] = {}
    for r in ranks:
        tie_sizes[r] = tie_sizes.get(r, 0) + 1
    tie_term = sum(t**3 - t for t in tie_sizes.values()) / 48.0
    sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sigma == 0.0:
        raise DegenerateVarianceError("signed-rank variance is zero")
    z = max(abs(float(w) - mu) - 0.5, 0.0) / sigma
    p = min(1.0, 2.0 * float(ndtr(-z)))
    return TestResult(float(w), p, n, "normal-approx")


def pearson_r(x: Sequence[float], y: Sequence[float]) -> TestResult:
    if len(x) != len(y):
        raise ValidationError("x and y must have equal length")
    n = len(x)
    if n < 3:
        raise ValidationError("need at least 3 points")
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(v * v for v in dx)
    syy = math.fsum(v * v for v in dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVarianceError("constant input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
        p = student_t_sf2(t, df)
    return TestResult(r, p, n, f"pearson df={df}")


@dataclass(frozen=True)
class EvalRow:
    group: str
    test: str
    n: int
    statistic: float | None
    p_value: float | None
    method: str


def _run(group: str, test: str, n: int, fn) -> EvalRow:
    try:
        r = fn()
    except (ValidationError, DegenerateVarianceError, NoSignalError) as exc:
        return EvalRow(group, test, n, None, None, f"n/a: {exc}")
    return EvalRow(group, test, r.n_effective, r.statistic, r.p_value, r.method_note)


def _driver_totals(rates: dict[tuple[str, str], float]) -> dict[str, float]:
    totals: dict[str, float] = {}
    for (driver, _), rate in rates.items():
        totals[driver] = totals.get(driver, 0.0) + rate
    return totals


def pairwise_results(
    baseline: dict[tuple[str, str], float],
    intervention: dict[tuple[str, str], float],
    sides: str = "two",
) -> list[EvalRow]:
    """Paired t and Wilcoxon per event kind and for the per-driver total.

    Rows are keyed (driver_id, kind); only drivers present in both periods
    are paired. Groups that cannot be tested get a row explaining why.
    """
    rows: list[EvalRow] = []
    kinds = sorted({k for _, k in baseline} | {k for _, k in intervention})
    groups = [(k, [(baseline[key], intervention[key]) for key in sorted(baseline) if key[1] == k and key in intervention]) for k in kinds]
    b_tot, i_tot = _driver_totals(baseline), _driver_totals(intervention)
    groups.append(("all", [(b_tot[d], i_tot[d]) for d in sorted(b_tot) if d in i_tot]))
    for group, pairs in groups:
        rows.append(_run(group, "paired-t", len(pairs), lambda: paired_t_test(pairs, sides)))
        rows.append(_run(group, "wilcoxon", len(pairs), lambda: wilcoxon_signed_rank(pairs)))
    return rows


def survey_correlation(
    baseline: dict[tuple[str, str], float],
    intervention: dict[tuple[str, str], float],
    survey: dict[str, float],
) -> EvalRow:
    """Pearson r between a self-reported score and each driver's total rate reduction."""
    b_tot, i_tot = _driver_totals(baseline), _driver_totals(intervention)
    drivers = sorted(d for d in survey if d in b_tot and d in i_tot)
    x = [survey[d] for d in drivers]
    y = [b_tot[d] - i_tot[d] for d in drivers]
    return _run("survey", "pearson", len(drivers), lambda: pearson_r(x, y))
