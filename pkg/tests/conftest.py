import numpy as np
import pytest

from reidloop import FeatureRecord, LabeledPair, ModelState


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_pair(xp, xg, label=1, pid="p0", gid="g0"):
    return LabeledPair(FeatureRecord(pid, 0, np.asarray(xp, float)),
                       FeatureRecord(gid, 1, np.asarray(xg, float)),
                       label)


def random_state(rng, r, d, scale=0.5):
    def m():
        return rng.normal(scale=scale, size=(r, d))
    return ModelState(m(), m(), m(), m(), m(), m())


@pytest.fixture
def pair_factory():
    return make_pair


@pytest.fixture
def state_factory():
    return random_state
