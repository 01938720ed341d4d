"""Baseline regressors: lasso (coordinate descent) and Minkowski kNN."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DomainError, LoadError, ShapeError

FORMAT_VERSION = 1


@dataclass
class LassoModel:
    weights: np.ndarray
    intercept: float
    lam: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    converged: bool = True
    n_sweeps: int = 0
    objectives: list = field(default_factory=list, repr=False)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.weights.shape[0]:
            raise ShapeError(f"expected {self.weights.shape[0]} features, got {X.shape[1]}")
        return ((X - self.x_mean) / self.x_scale) @ self.weights + self.intercept

    def to_json(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "lasso",
                "weights": self.weights.tolist(), "intercept": self.intercept,
                "lam": self.lam, "x_mean": self.x_mean.tolist(),
                "x_scale": self.x_scale.tolist(), "converged": self.converged,
                "n_sweeps": self.n_sweeps}


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def fit_lasso(X, y, lam, max_iters=1000, tol=1e-10, scale=False) -> LassoModel:
    """Minimise ``0.5*||y - Xw - b||^2/N + lam*||w||_1`` by coordinate descent.

    The intercept is unpenalised (handled by centring).  With ``scale=True``
    features are also divided by their population std before fitting.
    Non-convergence within ``max_iters`` sweeps sets ``converged=False`` and
    emits a ``RuntimeWarning``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if lam < 0:
        raise DomainError("lam must be non-negative")
    if X.shape[0] != y.shape[0]:
        raise ShapeError("X and y have different numbers of rows")
    if X.shape[0] < 2:
        raise DomainError("lasso needs at least 2 rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("X and y must be finite")
    x_mean = X.mean(axis=0)
    x_scale = np.ones(X.shape[1])
    if scale:
        sd = X.std(axis=0)
        x_scale = np.where(sd > 0, sd, 1.0)
    Xc = np.asfortranarray((X - x_mean) / x_scale)
    y_mean = float(y.mean())
    yc = np.ascontiguousarray(y - y_mean)
    w, sweeps, converged, objectives = kernels.lasso_cd(
        Xc, yc, float(lam), int(max_iters), float(tol), np.zeros(X.shape[1]))
    w = np.asarray(w, dtype=float)
    if not converged:
        warnings.warn(f"lasso did not converge in {max_iters} sweeps", RuntimeWarning, stacklevel=2)
    return LassoModel(w, y_mean, float(lam), x_mean, x_scale, converged, sweeps, list(objectives))


def lasso_lambda_max(X, y) -> float:
    """Smallest penalty at which every weight is exactly zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xc = X - X.mean(axis=0)
    return float(np.max(np.abs(Xc.T @ (y - y.mean()))) / X.shape[0])


@dataclass
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int = 5
    p: float = 2.0

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        if self.X.shape[0] == 0:
            raise DomainError("kNN model needs at least one training row")
        if not 1 <= self.k <= self.X.shape[0]:
            raise DomainError(f"k must lie in [1, {self.X.shape[0]}]")
        if self.p < 1:
            raise DomainError("Minkowski exponent p must be >= 1")

    def predict(self, queries) -> np.ndarray:
        Q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        if Q.shape[1] != self.X.shape[1]:
            raise ShapeError(f"expected {self.X.shape[1]} features, got {Q.shape[1]}")
        return np.asarray(kernels.knn_predict(self.X, self.y, Q, int(self.k), float(self.p)))

    def to_json(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "knn", "k": self.k, "p": self.p,
                "X": self.X.tolist(), "y": self.y.tolist()}


def fit_knn(X, y, k=5, p=2.0) -> KnnModel:
    return KnnModel(np.asarray(X, dtype=float), np.asarray(y, dtype=float).ravel(), int(k), float(p))


def predict_knn(model: KnnModel, x_query) -> float:
    """Prediction for a single query vector."""
    return float(model.predict(np.asarray(x_query, dtype=float)[None, :])[0])


def select_lasso(X_tr, y_tr, X_va, y_va, n_grid=12, scale=True) -> LassoModel:
    """Pick lam on a log grid below ``lam_max`` by validation squared error."""
    top = lasso_lambda_max(X_tr / np.where(X_tr.std(axis=0) > 0, X_tr.std(axis=0), 1.0), y_tr) \
        if scale else lasso_lambda_max(X_tr, y_tr)
    grid = [0.0] + list(np.geomspace(top * 1e-4, top, n_grid))
    best, best_err = None, np.inf
    for lam in grid:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = fit_lasso(X_tr, y_tr, lam, max_iters=2000, tol=1e-8, scale=scale)
        err = float(np.mean((model.predict(X_va) - y_va) ** 2))
        if err < best_err:
            best, best_err = model, err
    return best


def select_knn(X_tr, y_tr, X_va, y_va, ks=(1, 3, 5, 10, 20, 40), p=2.0) -> KnnModel:
    best, best_err = None, np.inf
    for k in ks:
        if k > X_tr.shape[0]:
            continue
        model = fit_knn(X_tr, y_tr, k, p)
        err = float(np.mean((model.predict(X_va) - y_va) ** 2))
        if err < best_err:
            best, best_err = model, err
    return best


def save_baseline(model, path):
    Path(path).write_text(json.dumps(model.to_json()) + "\n", encoding="utf-8")


def load_baseline(path):
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if raw.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"unsupported baseline format_version {raw.get('format_version')!r}")
    if raw["kind"] == "lasso":
        return LassoModel(np.array(raw["weights"]), float(raw["intercept"]), float(raw["lam"]),
                          np.array(raw["x_mean"]), np.array(raw["x_scale"]),
                          bool(raw["converged"]), int(raw["n_sweeps"]))
    if raw["kind"] == "knn":
        return KnnModel(np.array(raw["X"]), np.array(raw["y"]), int(raw["k"]), float(raw["p"]))
    raise LoadError(f"unknown baseline kind {raw['kind']!r}")
