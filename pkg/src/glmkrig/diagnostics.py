"""Scoring rules for validating predictions against held-out truth.

All scores are averages over a validation set: squared/absolute/relative
point errors, the continuous ranked probability score estimated from
predictive samples, the interval score and empirical coverage of
prediction intervals, and the Brier score for binary data.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "rmspe",
    "mae",
    "mape",
    "crps_empirical",
    "interval_score",
    "coverage",
    "brier",
]


class ScoreError(ValueError):
    pass


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise ScoreError("truth and prediction lengths differ")
    return truth, pred


def rmspe(truth, pred) -> float:
    """Root-mean-squared prediction error."""
    truth, pred = _pair(truth, pred)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(truth, pred) -> float:
    """Mean absolute error."""
    truth, pred = _pair(truth, pred)
    return float(np.mean(np.abs(pred - truth)))


def mape(truth, pred) -> float:
    """Mean absolute percentage error; requires nonzero truth everywhere."""
    truth, pred = _pair(truth, pred)
    zero = np.nonzero(truth == 0.0)[0]
    if zero.size:
        raise ScoreError(
            f"relative error undefined at zero truth (locations {zero[:10].tolist()}"
            f"{'...' if zero.size > 10 else ''})"
        )
    return float(np.mean(np.abs((pred - truth) / truth)))


def crps_empirical(truth, samples) -> float:
    """Averaged CRPS of the empirical predictive distribution.

    Uses the order-statistics form of the sample estimator,
    mean|X - z| - E|X - X'| / 2, evaluated per location from that
    location's sample row and averaged over locations.
    """
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] != truth.shape[0]:
        raise ScoreError("one sample row per validation location required")
    n = samples.shape[1]
    if n < 2:
        raise ScoreError("CRPS needs at least two samples per location")
    srt = np.sort(samples, axis=1)
    j = np.arange(n)
    # sum_{i,j} |x_i - x_j| = 2 * sum_j x_(j) (2j - n + 1), 0-based sorted
    pair_sum = 2.0 * np.sum(srt * (2.0 * j - n + 1.0), axis=1)
    term1 = np.mean(np.abs(samples - truth[:, None]), axis=1)
    per_loc = term1 - pair_sum / (2.0 * n * n)
    return float(np.mean(per_loc))


def interval_score(truth, lower, upper, alpha: float) -> float:
    """Averaged interval score of (1 - alpha) prediction intervals.

    Width plus 2/alpha times the miss distance whenever the truth falls
    outside the interval.
    """
    if not 0.0 < alpha < 1.0:
        raise ScoreError("alpha must lie strictly inside (0, 1)")
    truth = np.asarray(truth, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ScoreError("lower bounds exceed upper bounds")
    width = upper - lower
    below = np.maximum(lower - truth, 0.0)
    above = np.maximum(truth - upper, 0.0)
    return float(np.mean(width + (2.0 / alpha) * (below + above)))


def coverage(truth, lower, upper) -> float:
    """Fraction of locations with lower <= truth <= upper."""
    truth = np.asarray(truth, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return float(np.mean((truth >= lower) & (truth <= upper)))


def brier(truth, prob) -> float:
    """Mean squared difference between binary outcomes and probabilities."""
    truth = np.asarray(truth, dtype=float)
    prob = np.asarray(prob, dtype=float)
    if not np.all((truth == 0.0) | (truth == 1.0)):
        raise ScoreError("Brier score needs binary truth")
    if np.any(prob < 0.0) or np.any(prob > 1.0):
        raise ScoreError("probabilities must lie in [0, 1]")
    return float(np.mean((truth - prob) ** 2))
