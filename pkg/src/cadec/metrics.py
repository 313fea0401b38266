"""Decoding accuracy metrics for the 24-bin position task."""

import numpy as np

from .errors import EmptyInput, InvalidArgument


def hit_n(predictions, truths, n: int = 1) -> float:
    """Percentage of frames decoded within the symmetric n-sample neighborhood.

    ``n`` must be odd: hit_n counts ``|pred - truth| <= (n - 1) / 2``, so
    n=1 is the exact-match rate and n=3 allows one bin of slack either way.
    """
    if n < 1 or n % 2 == 0:
        raise InvalidArgument(f"hit_n needs an odd positive n, got {n}")
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise InvalidArgument("predictions and truths must have equal length")
    if predictions.size == 0:
        raise EmptyInput("hit_n of empty sequences")
    radius = (n - 1) // 2
    return 100.0 * float(np.mean(np.abs(predictions - truths) <= radius))


def mean_error(predictions, truths) -> float:
    """Mean absolute bin distance between decoded and true positions."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise InvalidArgument("predictions and truths must have equal length")
    if predictions.size == 0:
        raise EmptyInput("mean_error of empty sequences")
    return float(np.mean(np.abs(predictions - truths)))
