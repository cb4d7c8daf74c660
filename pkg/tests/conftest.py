import numpy as np
import pytest

from socialvae.data import make_windows
from socialvae.model import ModelConfig, SocialVAE
from socialvae.synthetic import simulate_crowd

TINY = dict(latent_dim=4, obs_hidden=8, rnn_hidden=8, embed_dim=8, attn_dim=8, head_hidden=8)


def tiny_model(seed=0, dtype="float64", **kw):
    return SocialVAE(ModelConfig(dtype=dtype, **{**TINY, **kw}), seed=seed)


@pytest.fixture(scope="session")
def crowd_scene():
    return simulate_crowd(n_agents=20, n_frames=60, seed=3)


@pytest.fixture(scope="session")
def crowd_windows(crowd_scene):
    w = make_windows(crowd_scene)
    assert len(w) >= 16
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def record_criterion(number, name, passed, detail, status=None):
    status = status or ("PASS" if passed else "FAIL")
    line = f"criterion {number} [{status}] {name}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
