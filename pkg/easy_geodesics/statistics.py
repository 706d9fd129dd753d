"""
The statistical battery behind the cohort analysis.
"""
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from easy_geodesics.exceptions import DegenerateInputError


@dataclass(frozen=True)
class FitResult:
    """
    Ordinary least squares line with 95% confidence intervals, each a
    ``(lower, point, upper)`` triple.
    """
    slope: tuple
    intercept: tuple
    n: int

    def as_row(self):
        return {
            'slope_lo': self.slope[0], 'slope': self.slope[1],
            'slope_hi': self.slope[2],
            'intercept_lo': self.intercept[0], 'intercept': self.intercept[1],
            'intercept_hi': self.intercept[2],
            'n': self.n,
        }

    def as_dict(self):
        return asdict(self)


def linfit_ci(points, confidence=0.95):
    """
    Fit ``y = slope * t + intercept`` through ``(t, y)`` points.

    Confidence intervals use the standard errors of the estimates and the
    Student-t quantile with ``n - 2`` degrees of freedom.
    """
    data = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(data)
    if n < 3:
        raise DegenerateInputError(
            "A line fit with intervals needs 3 points, got {0}".format(n))
    t, y = data[:, 0], data[:, 1]
    t_mean, y_mean = t.mean(), y.mean()
    sxx = np.sum((t - t_mean) ** 2)
    if sxx == 0:
        raise DegenerateInputError("All points share the same time")
    slope = np.sum((t - t_mean) * (y - y_mean)) / sxx
    intercept = y_mean - slope * t_mean
    residuals = y - (intercept + slope * t)
    s2 = np.sum(residuals ** 2) / (n - 2)
    slope_se = np.sqrt(s2 / sxx)
    intercept_se = np.sqrt(s2 * (1.0 / n + t_mean ** 2 / sxx))
    quantile = stats.t.ppf(0.5 + confidence / 2, n - 2)
    return FitResult(
        slope=(slope - quantile * slope_se, slope, slope + quantile * slope_se),
        intercept=(intercept - quantile * intercept_se, intercept,
                   intercept + quantile * intercept_se),
        n=n)


def spearman(x, y):
    """
    Spearman rank correlation (average ranks for ties) and its two-sided
    p-value from ``t = rho sqrt((n - 2) / (1 - rho^2))``, an approximation
    for small samples.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInputError("Spearman needs two equally long lists")
    n = len(x)
    if n < 3:
        raise DegenerateInputError("Spearman needs at least 3 pairs")
    rx = stats.rankdata(x) - (n + 1) / 2.0
    ry = stats.rankdata(y) - (n + 1) / 2.0
    denominator = np.sqrt(np.sum(rx ** 2) * np.sum(ry ** 2))
    if denominator == 0:
        raise DegenerateInputError("Spearman is undefined for constant input")
    rho = float(np.clip(np.sum(rx * ry) / denominator, -1.0, 1.0))
    if abs(rho) == 1.0:
        return rho, 0.0
    statistic = rho * np.sqrt((n - 2) / (1.0 - rho ** 2))
    return rho, float(2 * stats.t.sf(abs(statistic), n - 2))


def benjamini_hochberg(pvals, q):
    """
    Flag the discoveries of the Benjamini-Hochberg procedure at false
    discovery rate ``q``, in input order.
    """
    pvals = np.asarray(pvals, dtype=np.float64)
    n = len(pvals)
    if n == 0:
        return []
    ordered = np.sort(pvals)
    passing = np.nonzero(ordered <= q * np.arange(1, n + 1) / n)[0]
    if not len(passing):
        return [False] * n
    threshold = ordered[passing[-1]]
    return [bool(p <= threshold) for p in pvals]


def paired_t_test(a, b):
    """
    One-sided paired t-test of ``mean(a - b) > 0``.

    Returns the statistic and ``P(T >= t)`` with ``n - 1`` degrees of
    freedom. Identical samples give ``(0, 0.5)``.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = len(d)
    if n < 2:
        raise DegenerateInputError("A paired t-test needs 2 pairs")
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 0.5
        raise DegenerateInputError(
            "Differences have zero variance and a nonzero mean")
    statistic = mean / (sd / np.sqrt(n))
    return float(statistic), float(stats.t.sf(statistic, n - 1))


def wilcoxon_signed_rank(a, b):
    """
    One-sided Wilcoxon signed-rank test of ``a > b``.

    Zero differences are dropped, ties get average ranks. The statistic is
    the rank sum of the positive differences; the p-value comes from the
    tie-corrected normal approximation with a continuity correction.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateInputError("All paired differences are zero")
    ranks = stats.rankdata(np.abs(d))
    statistic = float(ranks[d > 0].sum())
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    variance = (n * (n + 1) * (2 * n + 1) / 24.0
                - np.sum(counts ** 3 - counts) / 48.0)
    if variance <= 0:
        raise DegenerateInputError("Signed-rank variance vanished")
    z = (statistic - mean - 0.5) / np.sqrt(variance)
    return statistic, float(stats.norm.sf(z))


def percentiles(values, requested):
    """
    Linearly interpolated percentiles of ``values``.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if not len(values):
        raise DegenerateInputError("No values to take percentiles of")
    return [float(v) for v in np.percentile(values, list(requested))]


def top_fraction(values, fraction):
    """
    Indices of the ``fraction`` of entries largest in magnitude, largest
    first (at least one entry).
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    count = max(1, int(np.ceil(fraction * len(values))))
    order = np.argsort(-np.abs(values), kind='stable')
    return order[:count]
