"""Prediction accuracy metrics."""
import numpy as np

from .errors import DomainError, ShapeError


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error, in percent."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"lengths differ: {y_true.size} vs {y_pred.size}")
    if y_true.size == 0:
        raise ShapeError("MAPE needs at least one value")
    if np.any(y_true == 0):
        raise DomainError("MAPE is undefined when a true value is 0")
    return float(100.0 * np.mean(np.abs((y_true - y_pred) / y_true)))
