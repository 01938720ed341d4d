import json

import numpy as np
import pytest

from cips import scm_vae
from cips.data import Dataset, VariableSpec, apply_scaling
from cips.errors import ContractError, LoadError, NumericError, ShapeError, TrainingError
from cips.metrics import mape
from cips.numeric import Graph, forward_backward
from cips.scm_vae import (
    VaeConfig,
    auxiliary_y,
    build_aux,
    build_outcome,
    decode,
    design_arrays,
    elbo_batch,
    encode,
    load_model,
    model_to_json,
    outcome_head,
    param_shapes,
    save_model,
    train,
    with_params,
)

from conftest import SMALL
from helpers import mixed_dataset
from oracles import central_fd, rel_err


def _arrays(model, ds, rows=slice(None)):
    arr = model.design(ds)
    return {k: v[rows] for k, v in arr.items()}


def test_component_shapes_and_determinism(mixed_model):
    model, ds = mixed_model
    a = _arrays(model, ds, slice(0, 7))
    dz = model.config.latent_dim
    q = encode(model, a["x"], a["t"], a["y"])
    assert q.mean.shape == (7, dz) and np.all(q.variance >= 1e-6)
    q2 = encode(model, a["x"], a["t"], a["y"])
    assert np.array_equal(q.mean, q2.mean) and np.array_equal(q.variance, q2.variance)
    aux = auxiliary_y(model, a["x"], a["m"], a["t"])
    assert aux.mean.shape == (7, 1) and np.all(aux.variance > 0)
    out = outcome_head(model, a["m"], a["t"], q.mean)
    assert out.mean.shape == (7, 1) and np.all(out.variance >= 1e-6)
    np.testing.assert_array_equal(out.mean, outcome_head(model, a["m"], a["t"], q.mean).mean)
    with pytest.raises(ShapeError):
        encode(model, a["x"][:, :-1], a["t"], a["y"])
    with pytest.raises(ShapeError):
        outcome_head(model, a["m"], a["t"], np.zeros((7, dz + 1)))


def test_decoder_distributions_are_valid(mixed_model):
    model, _ = mixed_model
    z = np.random.default_rng(0).standard_normal((9, model.config.latent_dim)) * 3
    dx, dt = decode(model, z)
    assert dx.gaussian.mean.shape == (9, 2) and np.all(dx.gaussian.variance > 0)
    assert dx.bernoulli.shape == (9, 1) and np.all((dx.bernoulli > 0) & (dx.bernoulli < 1))
    assert len(dx.categorical) == 2
    for probs in dx.categorical:
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert dt.gaussian is None and dt.bernoulli.shape == (9, 1)


def test_encoder_never_sees_adjustments(mixed_model):
    model, _ = mixed_model
    names = {n.name for n in scm_vae._encoder_graph(model.config)[0].nodes if n.kind == "input"}
    assert names == {"x", "t", "y"}
    assert param_shapes(model.layouts, model.config)["enc.W0"][0] == model.layouts.x.width + model.layouts.t.width + 1


def test_outcome_mean_gradient_in_z_matches_fd(scm_world):
    model = scm_world["model"]
    a = _arrays(model, scm_world["test"], slice(0, 3))
    z0 = np.random.default_rng(1).standard_normal((3, model.config.latent_dim))
    g = Graph()
    m, t, z = g.input("m"), g.input("t"), g.param("zz")
    mean, _ = build_outcome(g, model.config, m, t, z)
    g.set_loss(g.sum(mean))
    b = dict(model.params, m=a["m"], t=a["t"], zz=z0)
    _, grads = forward_backward(g, b)
    fd = central_fd(lambda zz: float(outcome_head(model, a["m"], a["t"], zz).mean.sum()), z0)
    assert rel_err(grads["zz"], fd, floor=1e-7) < 1e-4


def test_elbo_report_bookkeeping(scm_world):
    model = scm_world["model"]
    a = _arrays(model, scm_world["train"], slice(0, 50))
    rep, grads = elbo_batch(model, a, rng=np.random.default_rng(0))
    assert rep.kl >= 0
    assert abs(rep.recon_x + rep.recon_t + rep.recon_y - rep.kl + rep.aux - rep.total) < 1e-9
    assert rep.elbo == pytest.approx(rep.total - rep.aux, abs=1e-9)
    assert set(grads) == set(model.params)


def test_kl_zero_when_encoder_outputs_prior(scm_world):
    model = scm_world["model"]
    params = {k: v.copy() for k, v in model.params.items()}
    last = max(int(k[len("enc.W"):]) for k in params if k.startswith("enc.W"))
    dz = model.config.latent_dim
    params[f"enc.W{last}"][:] = 0.0
    params[f"enc.b{last}"][:] = 0.0
    params[f"enc.b{last}"][0, dz:] = np.log(np.expm1(1.0 - 1e-6))  # softplus(raw) + 1e-6 == 1
    a = _arrays(model, scm_world["train"], slice(0, 20))
    rep, _ = elbo_batch(with_params(model, params), a, eps=np.zeros((20, dz)))
    assert abs(rep.kl) < 1e-12


def test_elbo_gradients_match_fd_two_subjects(scm_world):
    model = scm_world["model"]
    a = _arrays(model, scm_world["train"], slice(0, 2))
    eps = np.random.default_rng(2).standard_normal((2, model.config.latent_dim))
    _, grads = elbo_batch(model, a, eps=eps)
    rng = np.random.default_rng(3)
    for name in ("enc.W0", "aux.b1", "dec_x.W1", "dec_t.b1", "out.W0"):
        base = model.params[name]
        # spot-check a random subset of entries to keep this fast
        idx = rng.choice(base.size, size=min(6, base.size), replace=False)
        for i in idx:
            def f(v, i=i):
                p = dict(model.params)
                arr = base.copy().reshape(-1)
                arr[i] = v
                p[name] = arr.reshape(base.shape)
                return elbo_batch(model, a, eps=eps, params=p)[0].total
            fd = central_fd(lambda v: f(float(v[0])), np.array([base.reshape(-1)[i]]))[0]
            assert rel_err(grads[name].reshape(-1)[i], fd, floor=1e-6) < 1e-3


def test_aux_term_is_isolated_from_decoders(scm_world):
    model = scm_world["model"]
    g = Graph()
    build_aux(g, model.config, g.input("x"), g.input("m"), g.input("t"))
    assert all(name.startswith("aux.") for name in g.params)
    a = _arrays(model, scm_world["train"], slice(0, 30))
    eps = np.zeros((30, model.config.latent_dim))
    _, g1 = elbo_batch(model, a, eps=eps)
    p = {k: (v + 0.3 if k.startswith("aux.") else v) for k, v in model.params.items()}
    _, g2 = elbo_batch(model, a, eps=eps, params=p)
    for k in g1:
        if not k.startswith("aux."):
            np.testing.assert_array_equal(g1[k], g2[k])


def test_training_is_deterministic_and_improves():
    ds = mixed_dataset(300, 4)
    cfg = VaeConfig(latent_dim=2, epochs=5, **SMALL)
    a = train(ds, None, cfg)
    b = train(ds, None, cfg)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    hist = [h["train_total"] for h in a.history]
    span = max(hist) - min(hist)
    assert all(h2 >= h1 - 0.01 * span for h1, h2 in zip(hist, hist[1:]))
    assert hist[-1] > hist[0]


def test_zero_learning_rate_keeps_initial_parameters():
    ds = mixed_dataset(100, 5)
    cfg = VaeConfig(latent_dim=2, epochs=3, learning_rate=0.0, **SMALL)
    model = train(ds, None, cfg)
    init = scm_vae.init_params(model.layouts, cfg, cfg.seed)
    for k in init:
        assert np.array_equal(model.params[k], init[k])


def test_divergence_retries_then_raises(monkeypatch):
    seen = []

    def boom(model, tr, va, cfg, lr):
        seen.append(lr)
        raise NumericError("synthetic blow-up")

    monkeypatch.setattr(scm_vae, "_fit", boom)
    with pytest.raises(TrainingError):
        train(mixed_dataset(50, 1), None, VaeConfig(epochs=1, learning_rate=0.004, **SMALL))
    assert seen == [0.004, 0.002, 0.001]


def test_training_rejects_incomplete_data():
    with pytest.raises(Exception, match="impute"):
        train(mixed_dataset(50, 1, missing_rate=0.2), None, VaeConfig(epochs=1, **SMALL))


def test_auxiliary_head_learns_linear_toy():
    rng = np.random.default_rng(0)
    x = rng.uniform(1.0, 3.0, 1200)
    y = 3 * x + 0.1 * rng.standard_normal(1200)
    schema = (VariableSpec("x", "confounder"), VariableSpec("y", "outcome"))
    ds = Dataset(schema, np.c_[x, y], np.ones((1200, 2), dtype=bool))
    tr, te = ds.take(np.arange(1000)), ds.take(np.arange(1000, 1200))
    model = train(tr, None, VaeConfig(latent_dim=1, epochs=20, **SMALL))
    a = model.design(te)
    pred = auxiliary_y(model, a["x"], a["m"], a["t"]).mean[:, 0]
    loc, scale = model.outcome_scale
    assert mape(te.values[:, 1], pred * scale + loc) < 10.0


def test_model_json_round_trip_and_guards(tmp_path, mixed_model):
    model, ds = mixed_model
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
    assert back.config == model.config and back.fingerprint == model.fingerprint
    raw = model_to_json(model)
    raw["format_version"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(raw))
    with pytest.raises(LoadError):
        load_model(tmp_path / "bad.json")
    with pytest.raises(LoadError):
        load_model(tmp_path / "m.json", expected_fingerprint="0" * 16)
    other = Dataset((VariableSpec("a", "confounder"), VariableSpec("y", "outcome")),
                    np.zeros((2, 2)), np.ones((2, 2), bool))
    with pytest.raises(ContractError):
        model.design(other)


def test_design_arrays_layout(mixed_model):
    model, ds = mixed_model
    arr = design_arrays(apply_scaling(ds, model.scaling))
    # x block: 2 continuous + 1 binary + 3 ordinal + 3 nominal one-hot
    assert arr["x"].shape == (ds.n_rows, 9)
    assert arr["t"].shape == (ds.n_rows, 1) and arr["m"].shape == (ds.n_rows, 1)
    np.testing.assert_array_equal(arr["x"][:, 3:6].sum(axis=1), 1.0)
