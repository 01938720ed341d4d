"""Pure-Python/numpy versions of the compiled kernels."""
import numpy as np


def _objective(r, w, lam):
    return 0.5 * float(r @ r) / r.shape[0] + lam * float(np.abs(w).sum())


def lasso_cd(X, y, lam, max_iters, tol, w0):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    w = np.array(w0, dtype=float, copy=True)
    r = np.asarray(y, dtype=float) - X @ w
    col_sq = (X * X).sum(axis=0) / n
    objectives = [_objective(r, w, lam)]
    converged = False
    sweep = 0
    while sweep < max_iters:
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            rho = float(X[:, j] @ r) / n + col_sq[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            delta = new - w[j]
            if delta != 0.0:
                r -= X[:, j] * delta
                w[j] = new
            max_delta = max(max_delta, abs(delta))
        sweep += 1
        objectives.append(_objective(r, w, lam))
        if max_delta < tol:
            converged = True
            break
    return w, sweep, converged, objectives


def knn_predict(train, targets, queries, k, p, chunk=256):
    train = np.asarray(train, dtype=float)
    targets = np.asarray(targets, dtype=float)
    queries = np.asarray(queries, dtype=float)
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], chunk):
        block = queries[start:start + chunk]
        diff = np.abs(block[:, None, :] - train[None, :, :])
        dist = (diff * diff).sum(axis=2) if p == 2.0 else (diff ** p).sum(axis=2)
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        out[start:start + chunk] = targets[nearest].sum(axis=1) / k
    return out
