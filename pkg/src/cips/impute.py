"""Fully conditional specification multiple imputation (chained equations).

Each incomplete column gets its own conditional model, chosen by the column
kind:

* continuous: Bayesian linear regression (normal-inverse-gamma posterior
  under a flat prior);
* ordinal: the same linear model on the category index, rounded and clipped;
* binary: logistic regression, parameters drawn from the asymptotic normal
  around the penalised MLE;
* nominal: multinomial logit discriminant, drawn the same way.

One Gibbs sweep visits the incomplete columns in schema order, draws the
column parameters given the current fills of every other column, then
redraws that column's missing cells.  Already-updated columns are used
within the sweep.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, concat_rows, load_dataset, save_dataset
from .errors import DomainError, ImputationError, ShapeError
from .numeric.rng import child_seed, rng_stream

RIDGE = 1e-4
_COND_LIMIT = 1e12


@dataclass
class ConditionalModel:
    """Fitted and drawn parameters of one column's imputation model."""

    target: int
    kind: str  # "linear", "logistic" or "multinomial"
    coef: np.ndarray  # (p,) or (K-1, p) for multinomial
    residual_var: float = 1.0
    ridged: bool = False


@dataclass
class ChainState:
    source: Dataset
    values: np.ndarray
    iteration: int = 0
    columns: tuple[int, ...] = ()
    models: dict = field(default_factory=dict)


@dataclass
class ImputedSet:
    datasets: list
    source_mask: np.ndarray
    provenance: dict

    @property
    def M(self) -> int:
        return len(self.datasets)


@dataclass
class PredictionResult:
    mean: np.ndarray
    stderr: np.ndarray
    M: int
    single_imputation: bool = False

    def __len__(self):
        return len(self.mean)


def _columns(ds: Dataset, columns):
    cols = tuple(range(len(ds.schema))) if columns is None else tuple(sorted(columns))
    for j in cols:
        if not 0 <= j < len(ds.schema):
            raise ShapeError(f"column index {j} out of range")
    return cols


def _design(ds: Dataset, values: np.ndarray, target: int, columns) -> np.ndarray:
    """Intercept plus encoded predictors (every working column but ``target``)."""
    parts = [np.ones((values.shape[0], 1))]
    for j in columns:
        if j == target:
            continue
        spec = ds.schema[j]
        col = values[:, j]
        if spec.kind == "nominal":
            k = len(spec.categories)
            onehot = (col[:, None] == np.arange(1, k)[None, :]).astype(float)
            parts.append(onehot)
        else:
            parts.append(col[:, None])
    return np.hstack(parts)


def _stable_inverse(gram: np.ndarray):
    """Inverse of a Gram/Hessian matrix, ridged when near singular."""
    ridged = False
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 0 or eig[-1] / eig[0] > _COND_LIMIT:
        gram = gram + RIDGE * np.eye(gram.shape[0])
        ridged = True
    return np.linalg.inv(gram), ridged


def _chol(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def _draw_linear(X, y, target, rng) -> ConditionalModel:
    n, p = X.shape
    inv, ridged = _stable_inverse(X.T @ X)
    beta_hat = inv @ (X.T @ y)
    resid = y - X @ beta_hat
    df = max(n - p, 1)
    sigma2 = float(resid @ resid) / rng.chisquare(df)
    sigma2 = max(sigma2, 1e-12)
    beta = beta_hat + np.sqrt(sigma2) * (_chol(inv) @ rng.standard_normal(p))
    return ConditionalModel(target, "linear", beta, sigma2, ridged)


def _fit_logistic(X, y, iters=25):
    p = X.shape[1]
    beta = np.zeros(p)
    for _ in range(iters):
        prob = 1.0 / (1.0 + np.exp(-np.clip(X @ beta, -35, 35)))
        w = prob * (1 - prob)
        hess = (X * w[:, None]).T @ X + RIDGE * np.eye(p)
        step = np.linalg.solve(hess, X.T @ (y - prob) - RIDGE * beta)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-8:
            break
    prob = 1.0 / (1.0 + np.exp(-np.clip(X @ beta, -35, 35)))
    hess = (X * (prob * (1 - prob))[:, None]).T @ X + RIDGE * np.eye(p)
    return beta, hess


def _draw_logistic(X, y, target, rng) -> ConditionalModel:
    beta_hat, hess = _fit_logistic(X, y)
    cov, ridged = _stable_inverse(hess)
    beta = beta_hat + _chol(cov) @ rng.standard_normal(X.shape[1])
    return ConditionalModel(target, "logistic", beta, 1.0, ridged)


def _softmax_ref(eta):
    """Class probabilities with class 0 as reference; ``eta`` is (n, K-1)."""
    full = np.hstack([np.zeros((eta.shape[0], 1)), eta])
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def _draw_multinomial(X, y, k, target, rng, iters=25) -> ConditionalModel:
    n, p = X.shape
    onehot = (y[:, None] == np.arange(1, k)[None, :]).astype(float)
    beta = np.zeros((k - 1, p))
    size = (k - 1) * p
    for _ in range(iters):
        prob = _softmax_ref(X @ beta.T)[:, 1:]
        grad = ((onehot - prob).T @ X).ravel() - RIDGE * beta.ravel()
        hess = _multinomial_hessian(X, prob) + RIDGE * np.eye(size)
        step = np.linalg.solve(hess, grad)
        beta = beta + step.reshape(k - 1, p)
        if np.max(np.abs(step)) < 1e-8:
            break
    prob = _softmax_ref(X @ beta.T)[:, 1:]
    cov, ridged = _stable_inverse(_multinomial_hessian(X, prob) + RIDGE * np.eye(size))
    draw = beta.ravel() + _chol(cov) @ rng.standard_normal(size)
    return ConditionalModel(target, "multinomial", draw.reshape(k - 1, p), 1.0, ridged)


def _multinomial_hessian(X, prob):
    km1 = prob.shape[1]
    p = X.shape[1]
    hess = np.empty((km1 * p, km1 * p))
    for a in range(km1):
        for b in range(km1):
            w = prob[:, a] * ((a == b) - prob[:, b])
            hess[a * p:(a + 1) * p, b * p:(b + 1) * p] = (X * w[:, None]).T @ X
    return hess


def _fit_and_draw(ds: Dataset, values, j, columns, rng) -> ConditionalModel:
    spec = ds.schema[j]
    obs = ds.mask[:, j]
    X = _design(ds, values[obs], j, columns)
    y = values[obs, j]
    if spec.kind in ("continuous", "ordinal"):
        return _draw_linear(X, y, j, rng)
    if spec.kind == "binary":
        return _draw_logistic(X, y, j, rng)
    return _draw_multinomial(X, y, len(spec.categories), j, rng)


def _draw_cells(ds: Dataset, model: ConditionalModel, X, rng) -> np.ndarray:
    spec = ds.schema[model.target]
    n = X.shape[0]
    if model.kind == "linear":
        draws = X @ model.coef + np.sqrt(model.residual_var) * rng.standard_normal(n)
        if spec.kind == "ordinal":
            draws = np.clip(np.round(draws), 0, len(spec.categories) - 1)
        return draws
    if model.kind == "logistic":
        prob = 1.0 / (1.0 + np.exp(-np.clip(X @ model.coef, -35, 35)))
        return (rng.random(n) < prob).astype(float)
    prob = _softmax_ref(X @ model.coef.T)
    u = rng.random(n)[:, None]
    return np.minimum((u > np.cumsum(prob, axis=1)).sum(axis=1), prob.shape[1] - 1).astype(float)


def init_chain(ds: Dataset, seed: int, columns=None) -> ChainState:
    """Fill every missing cell with a draw from its column's observed values."""
    cols = _columns(ds, columns)
    rng = rng_stream(seed, "init")
    values = np.array(ds.values, copy=True)
    for j in cols:
        obs = ds.mask[:, j]
        missing = ~obs
        if not missing.any():
            continue
        if not obs.any():
            raise ImputationError(f"column {ds.schema[j].name!r} has no observed values")
        values[missing, j] = rng.choice(ds.values[obs, j], size=int(missing.sum()), replace=True)
    return ChainState(ds, values, 0, cols, {})


def gibbs_sweep(state: ChainState, rng) -> ChainState:
    """One pass of parameter and fill draws over the incomplete columns."""
    ds = state.source
    values = state.values.copy()
    models = dict(state.models)
    for j in state.columns:
        missing = ~ds.mask[:, j]
        if not missing.any():
            continue
        model = _fit_and_draw(ds, values, j, state.columns, rng)
        X_mis = _design(ds, values[missing], j, state.columns)
        values[missing, j] = _draw_cells(ds, model, X_mis, rng)
        models[j] = model
    return ChainState(ds, values, state.iteration + 1, state.columns, models)


def _filled_mask(ds: Dataset, columns):
    mask = ds.mask.copy()
    mask[:, list(columns)] = True
    return mask


def _run_chain(ds, seed, k, burn_in, columns):
    chain_seed = child_seed(seed, "chain", k)
    state = init_chain(ds, chain_seed, columns)
    rng = rng_stream(chain_seed, "gibbs")
    for _ in range(burn_in):
        state = gibbs_sweep(state, rng)
    return ds.replace(values=state.values, mask=_filled_mask(ds, columns))


def multiple_impute(ds: Dataset, M=5, burn_in=10, seed=0, columns=None, jobs=1) -> ImputedSet:
    """Run ``M`` independent chains for ``burn_in`` sweeps each.

    Only ``columns`` (default: all) take part, as predictors and as targets.
    The completed copies have an all-true mask over the imputed columns.
    """
    if M < 1 or burn_in < 1:
        raise DomainError("M and burn_in must both be at least 1")
    cols = _columns(ds, columns)
    if ds.mask[:, list(cols)].all():
        done = [ds for _ in range(M)]
    else:
        run = lambda k: _run_chain(ds, seed, k, burn_in, cols)  # noqa: E731
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                done = list(pool.map(run, range(M)))
        else:
            done = [run(k) for k in range(M)]
    prov = {"method": "fcs", "seed": int(seed), "burn_in": int(burn_in), "M": int(M),
            "columns": [ds.schema[j].name for j in cols]}
    return ImputedSet(done, ds.mask.copy(), prov)


def single_mean_impute(ds: Dataset, columns=None) -> Dataset:
    """Fill with the observed mean (continuous) or mode (categorical)."""
    cols = _columns(ds, columns)
    values = np.array(ds.values, copy=True)
    for j in cols:
        obs = ds.mask[:, j]
        if obs.all():
            continue
        if not obs.any():
            raise ImputationError(f"column {ds.schema[j].name!r} has no observed values")
        spec = ds.schema[j]
        if spec.is_categorical:
            counts = np.bincount(ds.values[obs, j].astype(int), minlength=len(spec.categories))
            fill = float(np.argmax(counts))
        else:
            fill = float(ds.values[obs, j].mean())
        values[~obs, j] = fill
    return ds.replace(values=values, mask=_filled_mask(ds, cols))


def pool_predictions(per_imputation_preds) -> PredictionResult:
    """Across-imputation mean and sample standard deviation per subject."""
    preds = [np.asarray(p, dtype=float) for p in per_imputation_preds]
    if not preds:
        raise ShapeError("at least one prediction vector is required")
    if len({p.shape for p in preds}) != 1 or preds[0].ndim != 1:
        raise ShapeError("prediction vectors must be 1-d and of equal length")
    stack = np.vstack(preds)
    m = stack.shape[0]
    if m == 1:
        return PredictionResult(stack[0].copy(), np.zeros(stack.shape[1]), 1, True)
    return PredictionResult(stack.mean(axis=0), stack.std(axis=0, ddof=1), m, False)


class Imputer:
    """Completes query rows by imputing them pooled with a training table.

    ``method`` is ``"fcs"`` (``M`` chained-equation draws) or ``"smi"`` (one
    mean/mode fill).  Only confounder columns are imputed and used as
    predictors; treatments and adjustments are interventions and external
    inputs, not evidence about the subject's features.
    """

    def __init__(self, pool: Dataset, method="fcs", M=5, burn_in=10, jobs=1):
        if method not in ("fcs", "smi"):
            raise DomainError(f"unknown imputation method {method!r}")
        if M < 1 or burn_in < 1:
            raise DomainError("M and burn_in must both be at least 1")
        self.pool = pool
        self.method = method
        self.M = M
        self.burn_in = burn_in
        self.jobs = jobs

    def complete(self, query: Dataset, seed=0) -> list:
        if query.schema != self.pool.schema:
            raise ShapeError("query schema differs from the imputation pool")
        cols = query.role_indices("confounder")
        if query.n_rows == 0 or query.mask[:, cols].all():
            return [query]
        stacked = concat_rows([self.pool, query])
        tail = np.arange(self.pool.n_rows, stacked.n_rows)
        if self.method == "smi":
            return [single_mean_impute(stacked, cols).take(tail)]
        iset = multiple_impute(stacked, self.M, self.burn_in, seed, cols, self.jobs)
        return [d.take(tail) for d in iset.datasets]


def save_imputed(iset: ImputedSet, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(1, len(str(iset.M - 1)))
    files = []
    for k, ds in enumerate(iset.datasets):
        name = f"imputation_{k:0{width}d}.csv"
        save_dataset(ds, directory / name)
        files.append(name)
    prov = dict(iset.provenance)
    prov["files"] = files
    prov["column_order"] = list(iset.datasets[0].names)
    prov["source_mask"] = iset.source_mask.astype(int).tolist()
    (directory / "provenance.json").write_text(json.dumps(prov, indent=2) + "\n", encoding="utf-8")


def load_imputed(directory, schema) -> ImputedSet:
    directory = Path(directory)
    prov = json.loads((directory / "provenance.json").read_text(encoding="utf-8"))
    datasets = [load_dataset(directory / f, schema=schema) for f in prov.pop("files")]
    mask = np.array(prov.pop("source_mask"), dtype=bool)
    prov.pop("column_order", None)
    return ImputedSet(datasets, mask, prov)
