"""Interventional outcome prediction E[y | x, m, do(t)] with a trained model.

For each subject: complete the confounders (``M`` imputations), fill the
unknown outcome with the auxiliary mean q(y | x, m, t), encode
q(z | x, t, y_hat) under the intervened treatment, average the outcome mean
over ``L`` latent draws, then pool across imputations.  The latent noise of
a row comes from the stream ``(seed, "latent", row_id)`` and is shared by
all of that row's imputations.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractError, DomainError
from .impute import Imputer, PredictionResult, pool_predictions
from .numeric.rng import child_seed, rng_stream
from .scm_vae import VaeModel, auxiliary_y, encode, outcome_head

DEFAULT_L = 64
DEFAULT_M = 5


@dataclass
class DoQuery:
    """One subject: raw confounders (NaN = missing), adjustments and the
    intervened treatment, each in schema column order."""

    x: np.ndarray
    m: np.ndarray
    t: np.ndarray
    L: int = DEFAULT_L
    M: int = DEFAULT_M

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.m = np.asarray(self.m, dtype=float).ravel()
        self.t = np.asarray(self.t, dtype=float).ravel()
        if self.L < 1 or self.M < 1:
            raise DomainError("L and M must both be >= 1")
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.t))):
            raise DomainError("treatment and adjustment values must be fully specified")

    def to_dataset(self, schema) -> Dataset:
        values = np.zeros((1, len(schema)))
        mask = np.ones((1, len(schema)), dtype=bool)
        for role, vec in (("confounder", self.x), ("adjustment", self.m), ("treatment", self.t)):
            cols = [j for j, v in enumerate(schema) if v.role == role]
            if len(cols) != vec.size:
                raise DomainError(f"{role} block has {vec.size} values, schema has {len(cols)}")
            values[0, cols] = vec
        mask[0] = np.isfinite(values[0])
        return Dataset(schema, values, mask)


def with_treatment(ds: Dataset, t_values) -> Dataset:
    """Copy of ``ds`` with the treatment block replaced (a do() assignment)."""
    values = ds.values.copy()
    cols = ds.role_indices("treatment")
    values[:, cols] = np.asarray(t_values, dtype=float).reshape(ds.n_rows, len(cols))
    return ds.replace(values=values)


def _latent_noise(seed, row_ids, L, dz):
    return np.stack([rng_stream(seed, "latent", int(r)).standard_normal((L, dz)) for r in row_ids]) \
        if len(row_ids) else np.empty((0, L, dz))


def _predict_completion(model: VaeModel, ds: Dataset, noise, k, seed, sample_aux):
    arr = model.design(ds)
    n, L, dz = noise.shape
    q_y = auxiliary_y(model, arr["x"], arr["m"], arr["t"])
    y_hat = q_y.mean
    if sample_aux:
        draws = np.array([rng_stream(seed, "aux", int(r), k).standard_normal() for r in ds.row_ids])
        y_hat = y_hat + np.sqrt(q_y.variance) * draws[:, None]
    q_z = encode(model, arr["x"], arr["t"], y_hat)
    z = q_z.mean[:, None, :] + np.sqrt(q_z.variance)[:, None, :] * noise
    out = outcome_head(model, np.repeat(arr["m"], L, axis=0), np.repeat(arr["t"], L, axis=0),
                       z.reshape(n * L, dz))
    mean_scaled = out.mean.reshape(n, L).mean(axis=1)
    loc, scale = model.outcome_scale
    return mean_scaled * scale + loc


def predict_do_batch(model: VaeModel, imputer: Imputer | None, dataset: Dataset, L=DEFAULT_L,
                     M=None, seed=0, sample_aux=False, jobs=1) -> PredictionResult:
    """Row-wise interventional predictions in original outcome units.

    The treatment columns of ``dataset`` are taken as the intervention and its
    outcome column is ignored.  ``M`` overrides the imputer's count.
    """
    if not isinstance(model, VaeModel) or not model.params:
        raise ContractError("a trained VaeModel is required")
    model.check_compatible(dataset)
    if L < 1 or (M is not None and M < 1):
        raise DomainError("L and M must both be >= 1")
    if dataset.n_rows == 0:
        return PredictionResult(np.empty(0), np.empty(0), 0, True)
    conf = dataset.role_indices("confounder")
    if dataset.mask[:, conf].all():
        completions = [dataset]
    else:
        if imputer is None:
            raise ContractError("incomplete confounders need an imputer")
        if M is not None and M != imputer.M:
            imputer = Imputer(imputer.pool, imputer.method, M, imputer.burn_in, imputer.jobs)
        completions = imputer.complete(dataset, child_seed(seed, "impute"))
    noise = _latent_noise(seed, dataset.row_ids, L, model.config.latent_dim)
    run = lambda k: _predict_completion(model, completions[k], noise, k, seed, sample_aux)  # noqa: E731
    if jobs > 1 and len(completions) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            preds = list(pool.map(run, range(len(completions))))
    else:
        preds = [run(k) for k in range(len(completions))]
    return pool_predictions(preds)


def predict_do(model: VaeModel, imputer: Imputer | None, query: DoQuery, seed=0, sample_aux=False) -> PredictionResult:
    """Prediction for a single subject (a one-row batch)."""
    ds = query.to_dataset(model.schema)
    return predict_do_batch(model, imputer, ds, query.L, query.M, seed, sample_aux)


def write_predictions(path, row_ids, result: PredictionResult, L, M, seed):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "y_pred_mean", "y_pred_stderr", "L", "M", "seed"])
        for rid, mu, se in zip(row_ids, result.mean, result.stderr):
            writer.writerow([int(rid), repr(float(mu)), repr(float(se)), L, M, seed])
