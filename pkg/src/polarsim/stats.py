"""Rank tests, correlation and power-law fitting used by the analysis.

Only the tail probabilities of the reference distributions (normal,
chi-square, Student t) come from scipy; statistics, tie handling, the exact
Mann-Whitney null distribution and the power-law estimators live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy import special
from scipy import stats as sps
from scipy.optimize import minimize_scalar

from .errors import FitError

EXACT_MAX_N = 8


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # exact | normal_approx | chi_square_approx
    n_per_group: tuple[int, ...]
    z: float | None = None

    @property
    def low_power(self) -> bool:
        return min(self.n_per_group) < 5


@dataclass(frozen=True)
class Correlation:
    value: float | None
    p_value: float | None
    n: int
    degenerate: bool = False


@dataclass(frozen=True)
class PowerLawFit:
    """Fitted exponent in the density convention ``p(x) ~ x ** -alpha``.

    ``alpha_ccdf`` is the matching exponent of ``P(X >= x)``, i.e. ``alpha - 1``.
    """

    alpha: float
    fit_method: str  # loglog_lsq | mle
    x_min: float
    goodness: float  # R^2 for loglog_lsq, log-likelihood for mle
    sample_count: int
    discrete: bool = False
    convention: str = field(default="density")

    @property
    def alpha_ccdf(self) -> float:
        return self.alpha - 1.0


def rankdata(values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Midranks (1-based) and the sizes of the tie groups."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=float)
    ties = []
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        ties.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(ties, dtype=float)


def _u_null_counts(n_a: int, n_b: int) -> list[int]:
    """Number of rank assignments giving each U in 0..n_a*n_b (tie-free null)."""
    # split on whether the largest pooled value belongs to a:
    # f(a, b, u) = f(a - 1, b, u - b) + f(a, b - 1, u)
    memo: dict[tuple[int, int], list[int]] = {}

    def f(a: int, b: int) -> list[int]:
        if (a, b) in memo:
            return memo[(a, b)]
        if a == 0 or b == 0:
            res = [1]
        else:
            left = f(a - 1, b)
            right = f(a, b - 1)
            res = [0] * (a * b + 1)
            for u, c in enumerate(left):
                res[u + b] += c
            for u, c in enumerate(right):
                res[u] += c
        memo[(a, b)] = res
        return res

    return f(n_a, n_b)


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float],
                   alternative: str = "two_sided", method: str = "auto",
                   continuity: bool = True) -> TestResult:
    """Two-sided Mann-Whitney U test; the statistic is U of ``sample_a``.

    ``method="auto"`` uses the exact null distribution when both groups have
    at most 8 observations and the pooled data are tie-free, otherwise the
    normal approximation with tie correction (and continuity correction unless
    disabled).
    """
    if alternative not in ("two_sided", "two-sided"):
        raise ValueError("only the two-sided alternative is supported")
    a = [float(v) for v in sample_a]
    b = [float(v) for v in sample_b]
    n_a, n_b = len(a), len(b)
    if n_a == 0 or n_b == 0:
        raise ValueError("both samples must be non-empty")
    ranks, ties = rankdata(a + b)
    u_a = float(ranks[:n_a].sum()) - n_a * (n_a + 1) / 2.0
    tie_free = bool(np.all(ties == 1))
    if method == "auto":
        method = "exact" if (max(n_a, n_b) <= EXACT_MAX_N and tie_free) else "normal"
    if method == "exact":
        if not tie_free:
            raise ValueError("exact method requires tie-free data")
        counts = _u_null_counts(n_a, n_b)
        total = sum(counts)
        u = int(round(u_a))
        lower = sum(counts[:u + 1])
        upper = sum(counts[u:])
        p = min(1.0, 2.0 * min(lower, upper) / total)
        return TestResult(u_a, p, "exact", (n_a, n_b))
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    n = n_a + n_b
    mu = n_a * n_b / 2.0
    tie_term = float((ties ** 3 - ties).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return TestResult(u_a, 1.0, "normal_approx", (n_a, n_b), z=0.0)
    dev = abs(u_a - mu)
    if continuity:
        dev = max(0.0, dev - 0.5)
    z = dev / math.sqrt(var)
    p = min(1.0, 2.0 * float(sps.norm.sf(z)))
    return TestResult(u_a, p, "normal_approx", (n_a, n_b), z=z)


def kruskal_wallis(groups: Sequence[Sequence[float]], posthoc: bool = False
                   ) -> tuple[TestResult, np.ndarray | None]:
    """Kruskal-Wallis H with tie correction and chi-square p-value.

    With ``posthoc`` also returns the symmetric matrix of pairwise two-sided
    Mann-Whitney p-values, Bonferroni-adjusted (``min(1, p * n_pairs)``), with
    ones on the diagonal.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    data = [[float(v) for v in g] for g in groups]
    if any(len(g) == 0 for g in data):
        raise ValueError("every group must be non-empty")
    sizes = [len(g) for g in data]
    n = sum(sizes)
    ranks, ties = rankdata([v for g in data for v in g])
    h = 0.0
    pos = 0
    for size in sizes:
        r = float(ranks[pos:pos + size].sum())
        h += r * r / size
        pos += size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    correction = 1.0 - float((ties ** 3 - ties).sum()) / (n ** 3 - n) if n > 1 else 0.0
    if correction <= 0:
        h, p = 0.0, 1.0
    else:
        h /= correction
        p = float(sps.chi2.sf(h, len(data) - 1))
    result = TestResult(h, min(1.0, p), "chi_square_approx", tuple(sizes))
    if not posthoc:
        return result, None
    k = len(data)
    n_pairs = k * (k - 1) // 2
    mat = np.ones((k, k))
    for i, j in combinations(range(k), 2):
        pij = mann_whitney_u(data[i], data[j]).p_value
        mat[i, j] = mat[j, i] = min(1.0, pij * n_pairs)
    return result, mat


def pearson(x: Sequence[float], y: Sequence[float]) -> Correlation:
    """Product-moment correlation with a two-sided t-distribution p-value.

    Zero variance in either variable yields a ``degenerate`` result.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape:
        raise ValueError("x and y must have equal length")
    n = len(xa)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        return Correlation(None, None, n, degenerate=True)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return Correlation(None, None, n, degenerate=True)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * float(sps.t.sf(abs(t), n - 2))
    return Correlation(r, min(1.0, p), n)


# -- power laws -----------------------------------------------------------------

def _as_values(values: Sequence[float] | Mapping[object, float] | np.ndarray) -> np.ndarray:
    if isinstance(values, Mapping):
        values = list(values.values())
    return np.asarray(values, dtype=float)


def empirical_ccdf(values: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct values and ``P(X >= x)`` at each."""
    x = np.sort(np.asarray(values, dtype=float))
    uniq, first = np.unique(x, return_index=True)
    return uniq, (len(x) - first) / len(x)


def fit_ccdf_loglog(x: Sequence[float], ccdf: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through (log x, log P(X >= x)); returns slope, intercept, R^2."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(ccdf, dtype=float))
    if len(lx) < 2:
        raise FitError("need at least two tail points")
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _discrete_mle(tail: np.ndarray, x_min: float) -> tuple[float, float]:
    n = len(tail)
    sum_log = float(np.log(tail).sum())

    def nll(alpha: float) -> float:
        return n * math.log(float(special.zeta(alpha, x_min))) + alpha * sum_log

    res = minimize_scalar(nll, bounds=(1.0 + 1e-6, 30.0), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), -float(res.fun)


def _continuous_mle(tail: np.ndarray, x_min: float) -> tuple[float, float]:
    n = len(tail)
    s = float(np.log(tail / x_min).sum())
    if s <= 0:
        raise FitError("all tail values equal x_min")
    alpha = 1.0 + n / s
    loglik = n * math.log((alpha - 1.0) / x_min) - alpha * s
    return alpha, loglik


def _ks_distance(tail: np.ndarray, x_min: float, alpha: float, discrete: bool) -> float:
    x, emp = empirical_ccdf(tail)
    if discrete:
        model = special.zeta(alpha, x) / special.zeta(alpha, x_min)
    else:
        model = (x / x_min) ** (1.0 - alpha)
    return float(np.max(np.abs(emp - model)))


MIN_TAIL = 30


def fit_power_law(values: Sequence[float] | Mapping[object, float] | np.ndarray,
                  x_min: float | str | None = None, method: str = "mle",
                  discrete: bool | None = None, min_ccdf: float | None = None) -> PowerLawFit:
    """Fit ``p(x) ~ x ** -alpha`` to the observations at or above ``x_min``.

    ``x_min=None`` uses the smallest observation; ``"auto"`` scans candidate
    cutoffs and keeps the one minimizing the Kolmogorov-Smirnov distance of
    the MLE fit. ``discrete`` defaults to True when every value is integral.

    ``loglog_lsq`` regresses the empirical ``log P(X >= x)`` on ``log x``;
    ``min_ccdf`` (default ``10 / n``) drops the sparse extreme tail where the
    empirical CCDF is a handful of points. The slope is converted to the
    density exponent (``alpha = 1 - slope``).
    """
    data = _as_values(values)
    data = data[np.isfinite(data) & (data > 0)]
    if discrete is None:
        discrete = bool(len(data)) and bool(np.all(data == np.round(data)))
    if isinstance(x_min, str):
        if x_min != "auto":
            raise ValueError(f"unknown x_min {x_min!r}")
        x_min = _scan_x_min(data, discrete)
    elif x_min is None:
        if len(data) == 0:
            raise FitError("no positive observations")
        x_min = float(data.min())
    tail = data[data >= x_min]
    if len(tail) < MIN_TAIL:
        raise FitError(f"{len(tail)} observations >= x_min={x_min}; need {MIN_TAIL}")
    if method == "mle":
        alpha, ll = _discrete_mle(tail, x_min) if discrete else _continuous_mle(tail, x_min)
        return PowerLawFit(alpha, "mle", float(x_min), ll, len(tail), discrete)
    if method == "loglog_lsq":
        x, cc = empirical_ccdf(tail)
        floor = (10.0 / len(tail)) if min_ccdf is None else min_ccdf
        keep = cc >= floor
        if keep.sum() < 2:
            raise FitError("too few distinct tail points for a log-log fit")
        slope, _, r2 = fit_ccdf_loglog(x[keep], cc[keep])
        return PowerLawFit(1.0 - slope, "loglog_lsq", float(x_min), r2, len(tail), discrete)
    raise ValueError(f"unknown method {method!r}")


def _scan_x_min(data: np.ndarray, discrete: bool) -> float:
    candidates = np.unique(data)
    best, best_d = None, math.inf
    for xm in candidates:
        tail = data[data >= xm]
        if len(tail) < MIN_TAIL:
            break
        try:
            alpha = (_discrete_mle(tail, xm) if discrete else _continuous_mle(tail, xm))[0]
        except FitError:
            continue
        d = _ks_distance(tail, xm, alpha, discrete)
        if d < best_d:
            best, best_d = float(xm), d
    if best is None:
        raise FitError(f"fewer than {MIN_TAIL} observations for any x_min")
    return best


def sample_discrete_power_law(alpha: float, size: int, x_min: int = 1,
                              rng: np.random.Generator | None = None,
                              stratified: bool = False) -> np.ndarray:
    """Exact inverse-transform draws from ``P(X=x) ∝ x ** -alpha`` for x >= x_min.

    With ``stratified`` one uniform is drawn in each of ``size`` equal strata
    of [0, 1) and the results are shuffled, so the sample's empirical law
    tracks the target closely even for small ``size``.
    """
    rng = rng or np.random.default_rng()
    if stratified:
        u = rng.permutation((np.arange(size) + rng.random(size)) / size)
    else:
        u = rng.random(size)
    u = np.maximum(u, np.finfo(float).tiny)
    norm = special.zeta(alpha, x_min)

    def sf(x: np.ndarray) -> np.ndarray:  # P(X >= x)
        return special.zeta(alpha, x) / norm

    # the draw is the largest x with P(X >= x) >= u; bracket it from the
    # continuous approximation, then bisect
    guess = np.floor((x_min - 0.5) * (1.0 - u) ** (-1.0 / (alpha - 1.0)) + 0.5)
    lo = np.full(size, float(x_min))
    hi = np.maximum(guess, x_min) + 1.0
    ok = sf(hi) >= u
    while ok.any():  # widen until sf(hi) < u everywhere
        lo[ok] = hi[ok]
        hi[ok] *= 2.0
        ok = sf(hi) >= u
    near = np.maximum(guess - 1.0, x_min)
    near_ok = (near > lo) & (near < hi) & (sf(near) >= u)
    lo[near_ok] = near[near_ok]
    while True:  # invariant: sf(lo) >= u > sf(hi)
        gap = hi - lo > 1.0
        if not gap.any():
            break
        mid = np.floor((lo + hi) / 2.0)
        up = gap & (sf(mid) >= u)
        down = gap & ~up
        lo[up] = mid[up]
        hi[down] = mid[down]
    x = lo
    return x.astype(np.int64)
