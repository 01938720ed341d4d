"""Synthetic structural causal model with exact interventional oracles.

Generative process (rows are i.i.d.)::

    z ~ N(0, I)                                   hidden confounder
    x = z A^T + proxy_noise * e_x                 proxies (confounder columns)
    t ~ Bernoulli(sigmoid(gamma * z w^T))         biased assignment
        (or t = gamma * z w^T + e_t for continuous treatments)
    m ~ N(0, I)                                   external factors, independent
    y = b0 + z.beta_z + t.beta_t + m.beta_m + (t.beta_tm) * mean(m)
        [+ beta_quad * |z|^2]  + outcome_noise * e_y

Because z | x is Gaussian, E[y | x, m, do(t)] is available in closed form for
the linear outcome, and by Monte Carlo over the exact posterior otherwise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, VariableSpec, split
from .errors import ConfigError, DomainError, ShapeError
from .metrics import mape
from .numeric.rng import rng_stream


@dataclass(frozen=True)
class ScmConfig:
    latent_dim: int = 2
    proxy_dim: int = 10
    treatment_dim: int = 1
    adjustment_dim: int = 3
    gamma: float = 2.0
    beta_z: tuple | None = None
    beta_t: tuple | None = None
    beta_m: tuple | None = None
    beta_tm: tuple | None = None
    beta_quad: float = 0.0
    intercept: float = 10.0
    proxy_noise: float = 1.0
    outcome_noise: float = 0.5
    n_rows: int = 5000
    treatment_kind: str = "binary"
    outcome_form: str = "linear"
    seed: int = 0

    def __post_init__(self):
        for name in ("beta_z", "beta_t", "beta_m", "beta_tm"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(a) for a in np.ravel(v)))
        if min(self.latent_dim, self.proxy_dim, self.treatment_dim, self.adjustment_dim) < 1:
            raise ConfigError("all dimensions must be >= 1")
        if self.n_rows < 1:
            raise ConfigError("n_rows must be >= 1")
        if not (self.proxy_noise > 0 and self.outcome_noise > 0):
            raise ConfigError("noise scales must be > 0")
        if self.treatment_kind not in ("binary", "continuous"):
            raise ConfigError(f"unknown treatment_kind {self.treatment_kind!r}")
        if self.outcome_form not in ("linear", "quadratic"):
            raise ConfigError(f"unknown outcome_form {self.outcome_form!r}")
        for name, dim in (("beta_z", self.latent_dim), ("beta_t", self.treatment_dim),
                          ("beta_m", self.adjustment_dim), ("beta_tm", self.treatment_dim)):
            v = getattr(self, name)
            if v is not None and len(v) != dim:
                raise ConfigError(f"{name} has length {len(v)}, expected {dim}")

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_json(cls, raw: dict) -> "ScmConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ScmConfig keys {sorted(unknown)}")
        return cls(**raw)

    def coefficients(self) -> dict:
        """Outcome coefficients with defaults filled in."""
        dz = self.latent_dim
        default_z = [1.5 * (-1.0) ** j for j in range(dz)]
        return {
            "beta_z": np.array(self.beta_z if self.beta_z is not None else default_z),
            "beta_t": np.array(self.beta_t if self.beta_t is not None else [3.0] * self.treatment_dim),
            "beta_m": np.array(self.beta_m if self.beta_m is not None else [0.5] * self.adjustment_dim),
            "beta_tm": np.array(self.beta_tm if self.beta_tm is not None else [3.0] * self.treatment_dim),
        }


def save_scm_config(cfg: ScmConfig, path):
    Path(path).write_text(json.dumps(cfg.to_json(), indent=2) + "\n", encoding="utf-8")


def load_scm_config(path) -> ScmConfig:
    return ScmConfig.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def scm_schema(cfg: ScmConfig) -> tuple[VariableSpec, ...]:
    specs = [VariableSpec(f"x_{j}", "confounder") for j in range(cfg.proxy_dim)]
    for j in range(cfg.treatment_dim):
        if cfg.treatment_kind == "binary":
            specs.append(VariableSpec(f"t_{j}", "treatment", "binary", ("0", "1")))
        else:
            specs.append(VariableSpec(f"t_{j}", "treatment"))
    specs += [VariableSpec(f"m_{j}", "adjustment") for j in range(cfg.adjustment_dim)]
    specs.append(VariableSpec("y", "outcome"))
    return tuple(specs)


@dataclass
class OracleHandle:
    config: ScmConfig
    loadings: np.ndarray  # A, (proxy_dim, latent_dim)
    assignment: np.ndarray  # w, (treatment_dim, latent_dim)
    coef: dict
    z: np.ndarray = field(repr=False)
    posterior_cov: np.ndarray = field(repr=False)

    def posterior_mean(self, x) -> np.ndarray:
        """E[z | x] for raw proxy rows."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.config.proxy_dim:
            raise ShapeError(f"x has {x.shape[1]} columns, expected {self.config.proxy_dim}")
        return x @ self.loadings @ self.posterior_cov / self.config.proxy_noise ** 2

    def outcome_mean(self, z, t, m) -> np.ndarray:
        """Noise-free structural outcome f_y(z, t, m)."""
        z, t, m = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (z, t, m))
        c = self.coef
        out = (self.config.intercept + z @ c["beta_z"] + t @ c["beta_t"] + m @ c["beta_m"]
               + (t @ c["beta_tm"]) * m.mean(axis=1))
        if self.config.outcome_form == "quadratic":
            out = out + self.config.beta_quad * (z * z).sum(axis=1)
        return out


def _structure(cfg: ScmConfig):
    rng = rng_stream(cfg.seed, "scm", "structure")
    A = rng.standard_normal((cfg.proxy_dim, cfg.latent_dim))
    w = rng.standard_normal((cfg.treatment_dim, cfg.latent_dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return A, w


def generate(cfg: ScmConfig = ScmConfig()):
    """Sample a dataset from the SCM; returns ``(Dataset, OracleHandle)``."""
    A, w = _structure(cfg)
    coef = cfg.coefficients()
    n = cfg.n_rows
    z = rng_stream(cfg.seed, "scm", "z").standard_normal((n, cfg.latent_dim))
    x = z @ A.T + cfg.proxy_noise * rng_stream(cfg.seed, "scm", "x").standard_normal((n, cfg.proxy_dim))
    logit = cfg.gamma * (z @ w.T)
    t_rng = rng_stream(cfg.seed, "scm", "t")
    if cfg.treatment_kind == "binary":
        t = (t_rng.random(logit.shape) < 0.5 * (1.0 + np.tanh(0.5 * logit))).astype(float)
    else:
        t = logit + t_rng.standard_normal(logit.shape)
    m = rng_stream(cfg.seed, "scm", "m").standard_normal((n, cfg.adjustment_dim))
    cov = np.linalg.inv(np.eye(cfg.latent_dim) + A.T @ A / cfg.proxy_noise ** 2)
    handle = OracleHandle(cfg, A, w, coef, z, cov)
    y = handle.outcome_mean(z, t, m) + cfg.outcome_noise * rng_stream(cfg.seed, "scm", "y").standard_normal(n)
    values = np.hstack([x, t, m, y[:, None]])
    ds = Dataset(scm_schema(cfg), values, np.ones(values.shape, dtype=bool))
    return ds, handle


def split_blocks(ds: Dataset):
    """Raw (x, t, m) matrices of a dataset produced by :func:`generate`."""
    def block(role):
        return ds.values[:, ds.role_indices(role)]
    return block("confounder"), block("treatment"), block("adjustment")


def oracle_do(handle: OracleHandle, x, m, t) -> np.ndarray:
    """Exact E[y | x, m, do(t)] for the linear outcome (one value per row)."""
    if handle.config.outcome_form != "linear":
        raise DomainError("no closed form for a nonlinear outcome; use oracle_do_mc")
    return handle.outcome_mean(handle.posterior_mean(x), t, m)


def oracle_do_mc(handle: OracleHandle, x, m, t, samples=10_000, seed=0, chunk=200_000) -> np.ndarray:
    """Monte Carlo E[y | x, m, do(t)] over the exact posterior of z given x."""
    if samples < 1:
        raise DomainError("samples must be >= 1")
    x, m, t = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, m, t))
    mu = handle.posterior_mean(x)
    chol = np.linalg.cholesky(handle.posterior_cov)
    rng = rng_stream(seed, "scm", "oracle_mc")
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        total, done = 0.0, 0
        while done < samples:
            k = min(chunk, samples - done)
            z = mu[i] + rng.standard_normal((k, mu.shape[1])) @ chol.T
            total += handle.outcome_mean(z, np.repeat(t[i:i + 1], k, 0), np.repeat(m[i:i + 1], k, 0)).sum()
            done += k
        out[i] = total / samples
    return out


def intervention_draw(cfg: ScmConfig, n: int, seed: int) -> np.ndarray:
    """Treatments assigned independently of everything (a randomised do())."""
    rng = rng_stream(seed, "scm", "do")
    if cfg.treatment_kind == "binary":
        return (rng.random((n, cfg.treatment_dim)) < 0.5).astype(float)
    return rng.standard_normal((n, cfg.treatment_dim))


def confounding_self_check(cfg: ScmConfig = ScmConfig()) -> dict:
    """Compare a naive observational regression with an oracle-informed one.

    Both regress y on the same treatment/adjustment terms (including the
    t * mean(m) interaction); the naive one uses the proxies x, the informed
    one the true z.  Both are scored against ``oracle_do`` on a held-out
    split under randomised treatments.
    """
    ds, h = generate(cfg)
    train, _, test = split(ds, 0.6, 0.2, cfg.seed)
    x_tr, t_tr, m_tr = split_blocks(train)
    y_tr = train.values[:, train.outcome_index]
    x_te, _, m_te = split_blocks(test)
    t_do = intervention_draw(cfg, test.n_rows, cfg.seed)

    def design(feat, t, m):
        inter = t * m.mean(axis=1, keepdims=True)
        return np.hstack([np.ones((feat.shape[0], 1)), feat, t, m, inter])

    naive = np.linalg.lstsq(design(x_tr, t_tr, m_tr), y_tr, rcond=None)[0]
    informed = np.linalg.lstsq(design(h.z[np.searchsorted(ds.row_ids, train.row_ids)], t_tr, m_tr),
                               y_tr, rcond=None)[0]
    truth = oracle_do(h, x_te, m_te, t_do) if cfg.outcome_form == "linear" \
        else oracle_do_mc(h, x_te, m_te, t_do, 2000, cfg.seed)
    keep = np.abs(truth) >= 1e-6
    naive_pred = design(x_te, t_do, m_te) @ naive
    informed_pred = design(h.posterior_mean(x_te), t_do, m_te) @ informed
    n_mape = mape(truth[keep], naive_pred[keep])
    i_mape = mape(truth[keep], informed_pred[keep])
    return {"naive_mape": n_mape, "informed_mape": i_mape, "ratio": n_mape / i_mape}
