import numpy as np
import pytest

from cips.errors import ConfigError, DomainError
from cips.synthcausal import (
    ScmConfig,
    confounding_self_check,
    generate,
    intervention_draw,
    load_scm_config,
    oracle_do,
    oracle_do_mc,
    save_scm_config,
    split_blocks,
)


def _corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


def test_same_config_same_dataset():
    cfg = ScmConfig(n_rows=300, seed=3)
    a, _ = generate(cfg)
    b, _ = generate(cfg)
    assert a.equals(b)
    c, _ = generate(ScmConfig(n_rows=300, seed=4))
    assert not a.equals(c)


def test_gamma_zero_gives_unconfounded_assignment():
    ds, h = generate(ScmConfig(gamma=0.0, n_rows=10_000, seed=1))
    _, t, m = split_blocks(ds)
    for j in range(h.z.shape[1]):
        assert abs(_corr(t[:, 0], h.z[:, j])) < 0.03
    for j in range(m.shape[1]):
        assert abs(_corr(m[:, j], h.z[:, 0])) < 0.03
        assert abs(_corr(m[:, j], t[:, 0])) < 0.03


def test_default_assignment_is_confounded():
    ds, h = generate(ScmConfig(n_rows=5000, seed=0))
    _, t, _ = split_blocks(ds)
    score = h.z @ h.assignment.T
    assert _corr(t[:, 0], score[:, 0]) > 0.4


def test_noise_free_limit_recovers_outcome_function():
    cfg = ScmConfig(n_rows=200, outcome_noise=1e-12, proxy_noise=1e-12, seed=2)
    ds, h = generate(cfg)
    x, t, m = split_blocks(ds)
    y = ds.values[:, ds.outcome_index]
    np.testing.assert_allclose(y, h.outcome_mean(h.z, t, m), atol=1e-9)
    z_hat = np.linalg.lstsq(h.loadings, x.T, rcond=None)[0].T
    np.testing.assert_allclose(oracle_do(h, x, m, t), h.outcome_mean(z_hat, t, m), atol=1e-6)


def test_oracle_matches_hand_formula():
    cfg = ScmConfig(n_rows=50, seed=5)
    ds, h = generate(cfg)
    x, t, m = split_blocks(ds)
    A, s2 = h.loadings, cfg.proxy_noise ** 2
    cov = np.linalg.inv(np.eye(cfg.latent_dim) + A.T @ A / s2)
    z_mean = x @ A @ cov.T / s2
    c = cfg.coefficients()
    want = (cfg.intercept + z_mean @ c["beta_z"] + t @ c["beta_t"] + m @ c["beta_m"]
            + (t * m.mean(axis=1, keepdims=True)) @ c["beta_tm"])
    np.testing.assert_allclose(oracle_do(h, x, m, t), want, rtol=1e-12)


def test_null_treatment_effect_makes_oracle_flat_in_t():
    cfg = ScmConfig(n_rows=40, beta_t=[0.0], beta_tm=[0.0], seed=6)
    ds, h = generate(cfg)
    x, _, m = split_blocks(ds)
    np.testing.assert_array_equal(oracle_do(h, x, m, np.zeros((40, 1))), oracle_do(h, x, m, np.ones((40, 1))))


def test_oracle_independent_of_gamma():
    a_ds, a = generate(ScmConfig(n_rows=30, gamma=0.0, seed=7))
    _, b = generate(ScmConfig(n_rows=30, gamma=3.0, seed=7))
    x, t, m = split_blocks(a_ds)
    np.testing.assert_array_equal(oracle_do(a, x, m, t), oracle_do(b, x, m, t))


def test_mc_oracle_matches_closed_form():
    ds, h = generate(ScmConfig(n_rows=10, seed=8))
    x, t, m = split_blocks(ds)
    exact = oracle_do(h, x[:3], m[:3], t[:3])
    mc = oracle_do_mc(h, x[:3], m[:3], t[:3], samples=1_000_000, seed=0)
    assert np.all(np.abs(mc - exact) / np.abs(exact) < 0.005)


def test_quadratic_outcome_requires_mc_oracle():
    cfg = ScmConfig(n_rows=20, outcome_form="quadratic", beta_quad=0.5, seed=9)
    ds, h = generate(cfg)
    x, t, m = split_blocks(ds)
    with pytest.raises(DomainError):
        oracle_do(h, x, m, t)
    mc = oracle_do_mc(h, x[:2], m[:2], t[:2], samples=200_000)
    # E[z'z | x] = |mu|^2 + tr(cov) for the Gaussian posterior
    mu = h.posterior_mean(x[:2])
    lin = ScmConfig(n_rows=20, seed=9)
    _, hl = generate(lin)
    want = oracle_do(hl, x[:2], m[:2], t[:2]) + 0.5 * ((mu ** 2).sum(axis=1) + np.trace(h.posterior_cov))
    np.testing.assert_allclose(mc, want, rtol=5e-3)


def test_intervention_draw_is_independent_of_data():
    t = intervention_draw(ScmConfig(), 4000, seed=3)
    assert set(np.unique(t)) == {0.0, 1.0}
    assert abs(t.mean() - 0.5) < 0.03
    np.testing.assert_array_equal(t, intervention_draw(ScmConfig(), 4000, seed=3))


def test_config_json_round_trip(tmp_path):
    cfg = ScmConfig(gamma=1.25, beta_t=[0.1], beta_m=[0.1, 0.2, 0.3], n_rows=77, seed=12)
    save_scm_config(cfg, tmp_path / "c.json")
    assert load_scm_config(tmp_path / "c.json") == cfg
    with pytest.raises(ConfigError):
        ScmConfig.from_json({"gama": 1.0})
    with pytest.raises(ConfigError):
        ScmConfig(proxy_noise=0.0)
    with pytest.raises(ConfigError):
        ScmConfig(beta_m=[1.0])


def test_default_config_really_confounds():
    check = confounding_self_check(ScmConfig())
    assert check["ratio"] >= 1.5


def test_schema_roles():
    ds, _ = generate(ScmConfig(n_rows=5))
    roles = [v.role for v in ds.schema]
    assert roles.count("confounder") == 10 and roles.count("treatment") == 1
    assert roles.count("adjustment") == 3 and roles[-1] == "outcome"
