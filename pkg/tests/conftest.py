import numpy as np
import pytest

from duplexlab.compose import Composer, ComposerConfig
from duplexlab.model import DuplexModel, ModelConfig
from duplexlab.world import SyntheticSpec, World


@pytest.fixture(scope="session")
def world():
    return World(SyntheticSpec(seed=7))


@pytest.fixture(scope="session")
def composer(world):
    return Composer(world, ComposerConfig())


@pytest.fixture(scope="session")
def cf_model():
    return DuplexModel(ModelConfig(variant="cf"), seed=1)


@pytest.fixture(scope="session")
def xa_model():
    return DuplexModel(ModelConfig(variant="xa"), seed=1)


def finite_diff(f, params, h=1e-5):
    """Central finite differences of scalar f() w.r.t. each tensor in params."""
    out = []
    for p in params:
        num = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p.data[i]
            p.data[i] = old + h
            lp = f()
            p.data[i] = old - h
            lm = f()
            p.data[i] = old
            num[i] = (lp - lm) / (2 * h)
        out.append(num)
    return out


def rel_err(a, b, eps=1e-8):
    return np.max(np.abs(a - b) / (np.abs(b) + eps))
