import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cips.data import split  # noqa: E402
from cips.scm_vae import VaeConfig, train  # noqa: E402
from cips.synthcausal import ScmConfig, generate  # noqa: E402

from helpers import mixed_dataset  # noqa: E402

SMALL = dict(encoder_hidden=(16,), aux_hidden=(16,), decoder_hidden=(16,), outcome_hidden=(16,))


@pytest.fixture(scope="session")
def scm_world():
    """A small default-shaped SCM, its split and a briefly trained model."""
    cfg = ScmConfig(n_rows=800, seed=0)
    ds, handle = generate(cfg)
    tr, va, te = split(ds, 0.6, 0.2, 0)
    model = train(tr, va, VaeConfig(latent_dim=2, epochs=15, patience=15, **SMALL))
    return {"cfg": cfg, "ds": ds, "handle": handle, "train": tr, "valid": va, "test": te, "model": model}


@pytest.fixture(scope="session")
def mixed_model():
    """A model over every variable kind (barely trained; for shape/contract tests)."""
    ds = mixed_dataset(120, 0)
    return train(ds, None, VaeConfig(latent_dim=2, epochs=2, **SMALL)), ds


def _world(**scm):
    cfg = ScmConfig(seed=0, **scm)
    ds, handle = generate(cfg)
    tr, va, te = split(ds, 0.6, 0.2, 0)
    return {"cfg": cfg, "handle": handle, "train": tr, "valid": va, "test": te,
            "model": train(tr, va, VaeConfig(seed=0))}


@pytest.fixture(scope="session")
def default_world():
    """The default confounded SCM with a fully trained default model."""
    return _world()


@pytest.fixture(scope="session")
def unconfounded_world():
    return _world(gamma=0.0)


# Acceptance criteria register a one-line verdict here; printed after the run.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
