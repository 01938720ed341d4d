"""Variational-autoencoder structural causal model.

Networks (all fully connected, ELU hidden layers, linear output):

* encoder ``g1``: (t, x, y) -> mean and variance of q(z | x, t, y);
* auxiliary ``g2``: (x, m, t) -> mean and variance of q(y | x, m, t);
* decoders: z -> per-feature distributions of x and of t;
* outcome ``f``: (m, t, z) -> mean and variance of p(y | m, t, z).

Variance outputs are ``softplus(raw) + 1e-6``.  The encoder never sees the
adjustment variables ``m``, and the auxiliary network shares no parameters
with the decoders or the outcome network.

The training objective per subject is::

    E_q[log p(x, t | z) + log p(y | m, t, z)] - KL(q(z | x, t, y) || N(0, I))
        + log q(y | x, m, t)

estimated with one reparameterised draw of z and averaged over the batch.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import Dataset, ScalingParams, VariableSpec, apply_scaling, schema_fingerprint, standardize
from .errors import ContractError, DomainError, LoadError, NumericError, ShapeError, TrainingError
from .layout import RoleLayout
from .numeric import VARIANCE_FLOOR, Adam, DiagGaussian, Graph, evaluate, forward_backward
from .numeric.rng import rng_stream

FORMAT_VERSION = 1
NETWORKS = ("enc", "aux", "dec_x", "dec_t", "out")


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 8
    encoder_hidden: tuple[int, ...] = (64, 64)
    aux_hidden: tuple[int, ...] = (64, 64)
    decoder_hidden: tuple[int, ...] = (64, 64)
    outcome_hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("encoder_hidden", "aux_hidden", "decoder_hidden", "outcome_hidden"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
            if any(w < 1 for w in getattr(self, name)):
                raise DomainError(f"{name} widths must be >= 1")
        if self.latent_dim < 1:
            raise DomainError("latent_dim must be >= 1")
        if self.learning_rate < 0:
            raise DomainError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise DomainError("batch_size and patience must be >= 1, epochs >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_json(cls, raw: dict) -> "VaeConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown VaeConfig keys {sorted(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class Layouts:
    x: RoleLayout
    t: RoleLayout
    m: RoleLayout

    @classmethod
    def from_schema(cls, schema) -> "Layouts":
        return cls(RoleLayout.from_schema(schema, "confounder"),
                   RoleLayout.from_schema(schema, "treatment"),
                   RoleLayout.from_schema(schema, "adjustment"))


@dataclass
class ElboReport:
    """Batch-averaged ELBO terms; ``total = recon_x + recon_t + recon_y - kl + aux``."""

    total: float
    recon_x: float
    recon_t: float
    recon_y: float
    kl: float
    aux: float
    n: int

    @property
    def elbo(self) -> float:
        """The variational bound alone (objective without the auxiliary term)."""
        return self.recon_x + self.recon_t + self.recon_y - self.kl


@dataclass
class VaeModel:
    config: VaeConfig
    schema: tuple[VariableSpec, ...]
    scaling: ScalingParams
    params: dict
    fingerprint: str = ""
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        if not self.fingerprint:
            self.fingerprint = schema_fingerprint(self.schema)
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"parameter {name!r} is not finite")

    @property
    def layouts(self) -> Layouts:
        return Layouts.from_schema(self.schema)

    @property
    def outcome_scale(self) -> tuple[float, float]:
        name = self.schema[[v.role for v in self.schema].index("outcome")].name
        return self.scaling.stats[name]

    def check_compatible(self, ds: Dataset):
        if schema_fingerprint(ds.schema) != self.fingerprint:
            raise ContractError("dataset schema does not match the model's training schema")

    def design(self, ds: Dataset, scaled=False) -> dict:
        """Scaled and encoded role blocks ``{"x", "t", "m", "y"}`` of a dataset."""
        self.check_compatible(ds)
        if not scaled:
            ds = apply_scaling(ds, self.scaling)
        return design_arrays(ds)


def design_arrays(ds: Dataset) -> dict:
    lay = Layouts.from_schema(ds.schema)
    return {"x": lay.x.encode(ds.values), "t": lay.t.encode(ds.values),
            "m": lay.m.encode(ds.values), "y": ds.values[:, [ds.outcome_index]].copy()}


# ----------------------------------------------------------------------------
# graph construction


def _mlp(g: Graph, prefix: str, inp: int, hidden) -> int:
    h = inp
    for layer in range(len(hidden) + 1):
        w = g.param(f"{prefix}.W{layer}")
        b = g.param(f"{prefix}.b{layer}")
        h = g.add(g.matmul(h, w), b)
        if layer < len(hidden):
            h = g.elu(h)
    return h


def _mlp_shapes(prefix, in_dim, hidden, out_dim) -> dict:
    dims = [in_dim, *hidden, out_dim]
    shapes = {}
    for layer in range(len(dims) - 1):
        shapes[f"{prefix}.W{layer}"] = (dims[layer], dims[layer + 1])
        shapes[f"{prefix}.b{layer}"] = (1, dims[layer + 1])
    return shapes


def _gauss_head(g: Graph, out: int, start: int, n: int):
    mean = g.slice_cols(out, start, start + n)
    var = g.add_const(g.softplus(g.slice_cols(out, start + n, start + 2 * n)), VARIANCE_FLOOR)
    return mean, var


def param_shapes(layouts: Layouts, cfg: VaeConfig) -> dict:
    dz = cfg.latent_dim
    x, t, m = layouts.x, layouts.t, layouts.m
    shapes = {}
    shapes.update(_mlp_shapes("enc", t.width + x.width + 1, cfg.encoder_hidden, 2 * dz))
    shapes.update(_mlp_shapes("aux", x.width + m.width + t.width, cfg.aux_hidden, 2))
    if x.head_width:
        shapes.update(_mlp_shapes("dec_x", dz, cfg.decoder_hidden, x.head_width))
    if t.head_width:
        shapes.update(_mlp_shapes("dec_t", dz, cfg.decoder_hidden, t.head_width))
    shapes.update(_mlp_shapes("out", m.width + t.width + dz, cfg.outcome_hidden, 2))
    return shapes


def build_encoder(g, cfg, x, t, y):
    out = _mlp(g, "enc", g.concat_cols(t, x, y), cfg.encoder_hidden)
    return _gauss_head(g, out, 0, cfg.latent_dim)


def build_aux(g, cfg, x, m, t):
    out = _mlp(g, "aux", g.concat_cols(x, m, t), cfg.aux_hidden)
    return _gauss_head(g, out, 0, 1)


def build_outcome(g, cfg, m, t, z):
    out = _mlp(g, "out", g.concat_cols(m, t, z), cfg.outcome_hidden)
    return _gauss_head(g, out, 0, 1)


def build_decoder_loglik(g, cfg, prefix, lay: RoleLayout, z, target):
    """(n, 1) log-likelihood of the encoded ``target`` block under the decoder."""
    if lay.head_width == 0:
        return None
    out = _mlp(g, prefix, z, cfg.decoder_hidden)
    terms = []
    nc, nb = lay.n_cont, lay.n_bin
    if nc:
        mean, var = _gauss_head(g, out, 0, nc)
        terms.append(g.sum_cols(g.gaussian_log_pdf(g.slice_cols(target, 0, nc), mean, var)))
    if nb:
        logits = g.slice_cols(out, 2 * nc, 2 * nc + nb)
        tb = g.slice_cols(target, nc, nc + nb)
        terms.append(g.sum_cols(g.sub(g.mul(tb, logits), g.softplus(logits))))
    head, col = 2 * nc + nb, nc + nb
    for _, k in lay.categorical:
        logp = g.log_softmax(g.slice_cols(out, head, head + k))
        onehot = g.slice_cols(target, col, col + k)
        terms.append(g.sum_cols(g.mul(onehot, logp)))
        head += k
        col += k
    total = terms[0]
    for term in terms[1:]:
        total = g.add(total, term)
    return total


@lru_cache(maxsize=32)
def training_graph(layouts: Layouts, cfg: VaeConfig):
    """Graph of the batch-mean objective; the loss node is ``-total``."""
    g = Graph()
    x, t, m, y, eps = (g.input(n) for n in ("x", "t", "m", "y", "eps"))
    mu, var = build_encoder(g, cfg, x, t, y)
    z = g.add(mu, g.mul(g.sqrt(var), eps), name="z")
    kl = g.mean(g.kl_std_normal(mu, var), name="kl")
    zero = g.const(0.0)
    rx = build_decoder_loglik(g, cfg, "dec_x", layouts.x, z, x)
    rt = build_decoder_loglik(g, cfg, "dec_t", layouts.t, z, t)
    rx = g.mean(rx if rx is not None else zero, name="recon_x")
    rt = g.mean(rt if rt is not None else zero, name="recon_t")
    y_mean, y_var = build_outcome(g, cfg, m, t, z)
    ry = g.mean(g.gaussian_log_pdf(y, y_mean, y_var), name="recon_y")
    a_mean, a_var = build_aux(g, cfg, x, m, t)
    aux = g.mean(g.gaussian_log_pdf(y, a_mean, a_var), name="aux")
    total = g.add(g.sub(g.add(g.add(rx, rt), ry), kl), aux, name="total")
    g.set_loss(g.scale(total, -1.0, name="neg_total"))
    nodes = {"kl": kl, "recon_x": rx, "recon_t": rt, "recon_y": ry, "aux": aux, "total": total}
    return g, nodes


@lru_cache(maxsize=32)
def _encoder_graph(cfg):
    g = Graph()
    x, t, y = g.input("x"), g.input("t"), g.input("y")
    return g, build_encoder(g, cfg, x, t, y)


@lru_cache(maxsize=32)
def _aux_graph(cfg):
    g = Graph()
    x, m, t = g.input("x"), g.input("m"), g.input("t")
    return g, build_aux(g, cfg, x, m, t)


@lru_cache(maxsize=32)
def _outcome_graph(cfg):
    g = Graph()
    m, t, z = g.input("m"), g.input("t"), g.input("z")
    return g, build_outcome(g, cfg, m, t, z)


@lru_cache(maxsize=32)
def _decoder_graph(cfg, prefix):
    g = Graph()
    z = g.input("z")
    return g, _mlp(g, prefix, z, cfg.decoder_hidden)


def init_params(layouts: Layouts, cfg: VaeConfig, seed: int) -> dict:
    """Glorot-uniform weights, zero biases, drawn from the seed's init stream."""
    rng = rng_stream(seed, "vae", "init")
    params = {}
    for name, shape in param_shapes(layouts, cfg).items():
        if ".W" in name:
            limit = np.sqrt(6.0 / (shape[0] + shape[1])) if shape[0] else 0.0
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


# ----------------------------------------------------------------------------
# model components


def _rows(a, width, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != width:
        raise ShapeError(f"{name} has {a.shape[1]} columns, expected {width}")
    return a


def _bind(model, **arrays):
    b = dict(model.params)
    b.update(arrays)
    return b


def encode(model: VaeModel, x, t, y) -> DiagGaussian:
    """q(z | x, t, y) for scaled, encoded inputs."""
    lay = model.layouts
    x = _rows(x, lay.x.width, "x")
    t = _rows(t, lay.t.width, "t")
    y = _rows(np.reshape(y, (-1, 1)), 1, "y")
    if not x.shape[0] == t.shape[0] == y.shape[0]:
        raise ShapeError("x, t and y row counts differ")
    g, (mu, var) = _encoder_graph(model.config)
    mean, variance = evaluate(g, _bind(model, x=x, t=t, y=y), outputs=[mu, var])
    return DiagGaussian(mean, variance)


def auxiliary_y(model: VaeModel, x, m, t) -> DiagGaussian:
    """q(y | x, m, t): 1-d Gaussian per row, in scaled outcome units."""
    lay = model.layouts
    x = _rows(x, lay.x.width, "x")
    m = _rows(m, lay.m.width, "m")
    t = _rows(t, lay.t.width, "t")
    g, (mu, var) = _aux_graph(model.config)
    mean, variance = evaluate(g, _bind(model, x=x, m=m, t=t), outputs=[mu, var])
    return DiagGaussian(mean, variance)


def outcome_head(model: VaeModel, m, t, z) -> DiagGaussian:
    """p(y | m, t, z): 1-d Gaussian per row, in scaled outcome units."""
    lay = model.layouts
    m = _rows(m, lay.m.width, "m")
    t = _rows(t, lay.t.width, "t")
    z = _rows(z, model.config.latent_dim, "z")
    g, (mu, var) = _outcome_graph(model.config)
    mean, variance = evaluate(g, _bind(model, m=m, t=t, z=z), outputs=[mu, var])
    return DiagGaussian(mean, variance)


@dataclass
class DecodedBlock:
    gaussian: DiagGaussian | None
    bernoulli: np.ndarray  # (n, n_bin) probabilities
    categorical: list  # one (n, K) probability matrix per categorical column


def _split_head(out, lay: RoleLayout) -> DecodedBlock:
    nc, nb = lay.n_cont, lay.n_bin
    gauss = None
    if nc:
        gauss = DiagGaussian(out[:, :nc], np.logaddexp(0.0, out[:, nc:2 * nc]) + VARIANCE_FLOOR)
    logits = out[:, 2 * nc:2 * nc + nb]
    probs = 0.5 * (1.0 + np.tanh(0.5 * logits))
    cats, pos = [], 2 * nc + nb
    for _, k in lay.categorical:
        block = out[:, pos:pos + k]
        e = np.exp(block - block.max(axis=1, keepdims=True))
        cats.append(e / e.sum(axis=1, keepdims=True))
        pos += k
    return DecodedBlock(gauss, probs, cats)


def decode(model: VaeModel, z):
    """Per-feature distributions of x and t given latent rows ``z``."""
    z = _rows(z, model.config.latent_dim, "z")
    lay = model.layouts
    blocks = []
    for prefix, block in (("dec_x", lay.x), ("dec_t", lay.t)):
        if block.head_width == 0:
            blocks.append(DecodedBlock(None, np.empty((z.shape[0], 0)), []))
            continue
        g, out = _decoder_graph(model.config, prefix)
        blocks.append(_split_head(evaluate(g, _bind(model, z=z), outputs=[out])[0], block))
    return tuple(blocks)


def elbo_batch(model: VaeModel, batch, rng=None, eps=None, params=None):
    """Objective terms and gradients (of the batch-mean objective) for one batch.

    ``batch`` is a dict of scaled, encoded blocks (see :meth:`VaeModel.design`)
    or a complete scaled :class:`Dataset`.  Pass ``eps`` to freeze the latent
    noise, otherwise it is drawn from ``rng``.  Gradients are of the objective
    (ascent direction), keyed by parameter name.
    """
    if isinstance(batch, Dataset):
        batch = design_arrays(batch)
    n = batch["y"].shape[0]
    if n == 0:
        raise DomainError("empty batch")
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required")
        eps = rng.standard_normal((n, model.config.latent_dim))
    eps = _rows(eps, model.config.latent_dim, "eps")
    g, nodes = training_graph(model.layouts, model.config)
    bindings = dict(params if params is not None else model.params)
    bindings.update(batch)
    bindings["eps"] = eps
    values = evaluate(g, bindings)
    _, grads = forward_backward(g, bindings, values=values)
    grads = {k: -v for k, v in grads.items()}
    report = ElboReport(n=n, **{k: float(np.sum(values[i])) for k, i in nodes.items()})
    return report, grads


def _batch_objective(g, nodes, params, batch, eps):
    bindings = dict(params)
    bindings.update(batch)
    bindings["eps"] = eps
    vals = evaluate(g, bindings)
    return {k: float(np.sum(vals[i])) for k, i in nodes.items()}


# ----------------------------------------------------------------------------
# training


def _take(arrays, idx):
    return {k: v[idx] for k, v in arrays.items()}


def _fit(model, train_arr, valid_arr, cfg, lr):
    g, nodes = training_graph(model.layouts, cfg)
    rng = rng_stream(cfg.seed, "vae", "train")
    valid_eps = rng_stream(cfg.seed, "vae", "valid").standard_normal(
        (valid_arr["y"].shape[0], cfg.latent_dim))
    opt = Adam(lr)
    params = dict(model.params)
    best = dict(params)
    best_valid = -np.inf
    stale = 0
    history = []
    n = train_arr["y"].shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = _take(train_arr, idx)
            bindings = dict(params)
            bindings.update(batch)
            bindings["eps"] = rng.standard_normal((idx.size, cfg.latent_dim))
            loss, grads = forward_backward(g, bindings)
            acc -= loss * idx.size
            params = opt.step(params, grads)
        entry = {"epoch": epoch, "train_total": acc / n}
        if valid_arr["y"].shape[0]:
            vt = _batch_objective(g, nodes, params, valid_arr, valid_eps)["total"]
            entry["valid_total"] = vt
            if not np.isfinite(vt):
                raise NumericError(f"non-finite validation objective at epoch {epoch}")
            if vt > best_valid:
                best_valid, best, stale = vt, dict(params), 0
            else:
                stale += 1
        else:
            best = dict(params)
        history.append(entry)
        if stale >= cfg.patience:
            break
    if cfg.epochs == 0 or not valid_arr["y"].shape[0]:
        best = dict(params)
    return best, history


def train(ds_complete: Dataset, valid: Dataset | None, cfg: VaeConfig = VaeConfig()) -> VaeModel:
    """Fit the model by minibatch gradient ascent on the objective.

    Continuous columns are standardised on ``ds_complete``.  The parameters
    with the best validation objective are kept (early stopping with
    ``cfg.patience``).  A non-finite loss restarts training with the learning
    rate halved, at most twice.
    """
    if not ds_complete.is_complete:
        raise DomainError("training data must be complete; impute first")
    if valid is not None and not valid.is_complete:
        raise DomainError("validation data must be complete")
    scaled, scaling = standardize(ds_complete)
    model = VaeModel(cfg, ds_complete.schema, scaling,
                     init_params(Layouts.from_schema(ds_complete.schema), cfg, cfg.seed))
    train_arr = design_arrays(scaled)
    if valid is not None:
        model.check_compatible(valid)
        valid_arr = design_arrays(apply_scaling(valid, scaling))
    else:
        valid_arr = {k: v[:0] for k, v in train_arr.items()}
    lr = cfg.learning_rate
    for attempt in range(3):
        try:
            params, history = _fit(model, train_arr, valid_arr, cfg, lr)
            break
        except NumericError as exc:
            if attempt == 2:
                raise TrainingError(f"training diverged after halving the learning rate twice: {exc}") from exc
            lr /= 2.0
    return VaeModel(cfg, model.schema, scaling, params, model.fingerprint, history)


def select_vae(ds_complete: Dataset, valid: Dataset, configs) -> VaeModel:
    """Train each config and keep the model with the best validation objective."""
    best, best_val = None, -np.inf
    for cfg in configs:
        model = train(ds_complete, valid, cfg)
        score = max(h.get("valid_total", -np.inf) for h in model.history) if model.history else -np.inf
        if best is None or score > best_val:
            best, best_val = model, score
    return best


# ----------------------------------------------------------------------------
# serialisation


def model_to_json(model: VaeModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "schema_fingerprint": model.fingerprint,
        "schema": [v.to_json() for v in model.schema],
        "config": model.config.to_json(),
        "scaling": model.scaling.to_json(),
        "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                   for k, v in sorted(model.params.items())},
        "history": model.history,
    }


def model_from_json(raw: dict, expected_fingerprint: str | None = None) -> VaeModel:
    if raw.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"unsupported model format_version {raw.get('format_version')!r}")
    schema = tuple(VariableSpec(e["name"], e["role"], e["kind"], tuple(e["categories"]))
                   for e in raw["schema"])
    fp = schema_fingerprint(schema)
    if fp != raw.get("schema_fingerprint"):
        raise LoadError("stored schema fingerprint does not match the stored schema")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise LoadError("model was trained on a different schema")
    params = {k: np.array(v["values"], dtype=float).reshape(v["shape"]) for k, v in raw["params"].items()}
    return VaeModel(VaeConfig.from_json(raw["config"]), schema,
                    ScalingParams.from_json(raw["scaling"]), params, fp, raw.get("history", []))


def save_model(model: VaeModel, path):
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n", encoding="utf-8")


def load_model(path, expected_fingerprint=None) -> VaeModel:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read model {path}: {exc}") from exc
    return model_from_json(raw, expected_fingerprint)


def with_params(model: VaeModel, params: dict) -> VaeModel:
    return replace(model, params=params)
