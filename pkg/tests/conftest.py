"""Shared fixtures: scene bundles are expensive, so they are session-scoped."""

import numpy as np
import pytest

from bevss import synth


@pytest.fixture(scope="session")
def one_box():
    return synth.generate(synth.preset("one-box", seed=0))


@pytest.fixture(scope="session")
def two_box():
    return synth.generate(synth.preset("two-box", seed=0))


@pytest.fixture(scope="session")
def static_scene():
    return synth.generate(synth.preset("static", seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
