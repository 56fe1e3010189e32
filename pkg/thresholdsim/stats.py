"""Error bars and distances for comparing Monte Carlo tallies with analytic laws."""

import math

import numpy as np
from scipy import stats

from thresholdsim.errors import DomainError


def binomial_stderr(successes, trials):
    """Standard error sqrt(p(1-p)/n) of the observed fraction."""
    if trials <= 0:
        return math.nan
    p = successes / trials
    return math.sqrt(p * (1.0 - p) / trials)


def expected_stderr(p, trials):
    """Standard error of a fraction over n trials when its true value is p."""
    return math.sqrt(max(p * (1.0 - p), 0.0) / trials)


def z_score(observed, expected, trials):
    """(observed - expected) in units of the binomial standard error at the expected value."""
    se = expected_stderr(expected, trials)
    if se == 0.0:
        return 0.0 if observed == expected else math.inf
    return (observed - expected) / se


def within_sigmas(observed, expected, trials, sigmas=3.0):
    return abs(z_score(observed, expected, trials)) <= sigmas


def empirical_cdf(samples, total, at):
    """
    Fraction of `total` trials whose value is <= each point of `at`. Trials
    that never hit are absent from `samples`, so the cdf may stay below 1.
    """
    ordered = np.sort(np.asarray(samples, dtype=np.float64))
    return np.searchsorted(ordered, np.asarray(at, dtype=np.float64), side="right") / total


def ks_distance(samples, cdf, total=None, horizon=None):
    """
    sup_t |F_n(t) - F(t)| for the empirical cdf of `samples` out of `total`
    trials against the (possibly defective) analytic cdf F, evaluated at
    both sides of every jump and, when given, at the horizon past the last one.
    """
    ordered = np.sort(np.asarray(samples, dtype=np.float64))
    n = ordered.size if total is None else int(total)
    if n <= 0 or ordered.size > n:
        raise DomainError(f"{ordered.size} samples cannot come from {n} trials")
    tail = 0.0 if horizon is None else abs(ordered.size / n - float(cdf(np.array([horizon]))[0]))
    if ordered.size == 0:
        return tail
    model = np.asarray(cdf(ordered), dtype=np.float64)
    above = np.arange(1, ordered.size + 1) / n - model
    below = model - np.arange(ordered.size) / n
    return float(max(np.max(above), np.max(below), tail))


def ks_critical(trials, alpha=0.01):
    """Critical one-sample KS distance at significance alpha."""
    return float(stats.kstwo.isf(alpha, int(trials)))
