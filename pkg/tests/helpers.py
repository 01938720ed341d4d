"""Small builders shared by several test modules."""
from pathlib import Path

import numpy as np

from cips.data import Dataset, VariableSpec
from cips.numeric import Graph

UNARY = ("elu", "softplus", "sigmoid", "square", "exp_small", "log_pos", "sqrt_pos", "log_softmax")
BINARY = ("add", "sub", "mul", "div_pos")


def random_graph(rng, max_params=100):
    """A random differentiable graph: matmul layers mixed with random elementwise ops.

    Returns ``(graph, bindings, param_names)`` with at most ``max_params`` scalar parameters.
    """
    g = Graph()
    n = int(rng.integers(2, 5))
    d_in = int(rng.integers(1, 4))
    x = g.input("x")
    bindings = {"x": rng.standard_normal((n, d_in))}
    h, width, used = x, d_in, 0
    layers = int(rng.integers(1, 4))
    for layer in range(layers):
        out = int(rng.integers(1, 4))
        if used + width * out + out > max_params:
            break
        w, b = g.param(f"W{layer}"), g.param(f"b{layer}")
        bindings[f"W{layer}"] = 0.7 * rng.standard_normal((width, out))
        bindings[f"b{layer}"] = 0.3 * rng.standard_normal((1, out))
        used += width * out + out
        h = g.add(g.matmul(h, w), b)
        width = out
        op = UNARY[int(rng.integers(len(UNARY)))]
        if op == "exp_small":
            h = g.exp(g.scale(h, 0.3))
        elif op == "log_pos":
            h = g.log(g.add_const(g.softplus(h), 0.5))
        elif op == "sqrt_pos":
            h = g.sqrt(g.add_const(g.softplus(h), 0.5))
        else:
            h = getattr(g, op)(h)
        if width > 1 and rng.random() < 0.5:
            cut = int(rng.integers(1, width))
            left, right = g.slice_cols(h, 0, cut), g.slice_cols(h, cut, width)
            h = g.concat_cols(right, left)
        op2 = BINARY[int(rng.integers(len(BINARY)))]
        if op2 == "div_pos":
            h = g.div(h, g.add_const(g.softplus(h), 1.0))
        else:
            h = getattr(g, op2)(h, g.sigmoid(h))
    loss = g.mean(h) if rng.random() < 0.5 else g.sum(g.sum_cols(h))
    g.set_loss(loss)
    return g, bindings, [k for k in bindings if k != "x"]


def mixed_schema():
    """Schema with every variable kind among the confounders."""
    return (
        VariableSpec("t", "treatment", "binary", ("no", "yes")),
        VariableSpec("c1", "confounder", "continuous", ()),
        VariableSpec("c2", "confounder", "continuous", ()),
        VariableSpec("b1", "confounder", "binary", ("0", "1")),
        VariableSpec("o1", "confounder", "ordinal", ("low", "mid", "high")),
        VariableSpec("n1", "confounder", "nominal", ("a", "b", "c")),
        VariableSpec("m1", "adjustment", "continuous", ()),
        VariableSpec("y", "outcome", "continuous", ()),
    )


def mixed_dataset(n, seed, missing_rate=0.0):
    """Correlated mixed-type data; confounder cells masked MCAR at ``missing_rate``."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    c1 = z + 0.5 * rng.standard_normal(n)
    c2 = -z + 0.5 * rng.standard_normal(n)
    b1 = (rng.random(n) < 1 / (1 + np.exp(-2 * z))).astype(float)
    o1 = np.clip(np.round(z + 1 + 0.5 * rng.standard_normal(n)), 0, 2)
    n1 = rng.integers(0, 3, n).astype(float)
    t = (rng.random(n) < 0.5).astype(float)
    m1 = rng.standard_normal(n)
    y = 2 * z + t + m1 + 0.3 * rng.standard_normal(n) + 10
    values = np.c_[t, c1, c2, b1, o1, n1, m1, y]
    mask = np.ones(values.shape, dtype=bool)
    conf = [1, 2, 3, 4, 5]
    if missing_rate > 0:
        block = rng.random((n, len(conf))) >= missing_rate
        for j in range(len(conf)):  # keep at least two observed values per column
            if block[:, j].sum() < 2:
                block[:2, j] = True
        mask[:, conf] = block
    return Dataset(mixed_schema(), values, mask)


REPO = Path(__file__).resolve().parents[1]
QUICK = REPO / "configs" / "quick.json"

# simulate -> impute -> train (plain and per-imputation) -> predict -> evaluate
PIPELINE = (
    ["simulate"],
    ["impute"],
    ["train"],
    ["train", "--set", "imputed=\"imputed\"", "--set", "data=null", "--out", "model_mi"],
    ["predict"],
    ["evaluate"],
)


def run_pipeline(root, jobs, monkeypatch):
    """Run every subcommand under ``root``; returns {relative path: bytes} of all outputs."""
    from cips.cli import main

    monkeypatch.setenv("CIPS_OUTPUT_ROOT", str(root))
    for step in PIPELINE:
        code = main([*step, "--config", str(QUICK), "--jobs", str(jobs)])
        assert code == 0, step
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}
