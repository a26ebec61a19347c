import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the application directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../Dbpsim_app')))

import extensions
from config import parse_and_validate
from phy import sample_quality
from vcts import build_params

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

# A link small enough for many short runs: 16 subcarriers, 4 taps, 5 slots per frame
SMALL_CONFIG = """
n_fft = 16
bandwidth_hz = 160e3
n_taps = 4
dt_s = 0.01
frame_s = 0.05
target_per = 0.01
csit.sigma_e2 = 0.05
arrival.kind = deterministic
arrival.unit = nats_per_frame
arrival.mean = 1
policy.kind = dbp
policy.v = 1
mc.n_slots = 3000
mc.seed = 5
mc.expectation_samples = 10000
"""


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """No DBPSIM_* overrides, no disk cache and an empty expectation cache per test."""
    for key in list(os.environ):
        if key.startswith("DBPSIM_"):
            monkeypatch.delenv(key)
    extensions.init_cache(None)
    extensions.clear_cache()
    yield
    extensions.init_cache(None)
    extensions.clear_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    config = parse_and_validate(SMALL_CONFIG)
    return config.with_mc(min_warmup_slots=100)


@pytest.fixture
def desk_config():
    return parse_and_validate(CONFIG_DIR / "desk_scale.conf")


@pytest.fixture
def desk_random_config():
    return parse_and_validate(CONFIG_DIR / "desk_random.conf")


@pytest.fixture
def desk_tradeoff_config():
    return parse_and_validate(CONFIG_DIR / "desk_tradeoff.conf")


@pytest.fixture
def reference_config():
    return parse_and_validate(CONFIG_DIR / "reference_link.conf")


@pytest.fixture
def write_config(tmp_path):
    """Write config text to a file and return its path."""

    def _write(text, name="test.conf"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def desk_samples(desk_config):
    rng = np.random.default_rng(99)
    phy = desk_config.phy_params
    return sample_quality(phy, desk_config.profile, desk_config.error_model, 20_000, rng)


@pytest.fixture
def desk_params(desk_config, desk_samples):
    return build_params(desk_config, samples=desk_samples)


@pytest.fixture
def params_at(desk_config, desk_samples):
    """VctsParams of the desk link at another V (and optionally other fields)."""

    def _params(tradeoff_v, **changes):
        params = build_params(desk_config, tradeoff_v=tradeoff_v, samples=desk_samples)
        return dataclasses.replace(params, **changes) if changes else params

    return _params


@pytest.fixture
def small_config_path(write_config):
    return write_config(SMALL_CONFIG, "small.conf")
