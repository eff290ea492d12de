import numpy as np
import pytest

from multislu.corpus import make_synthetic_corpus
from multislu.demo import build_demo_model, load_scenario


@pytest.fixture(scope="session")
def tiny_corpus():
    samples, label_set = make_synthetic_corpus(24, seed=3)
    return samples, label_set


@pytest.fixture(scope="session")
def figure1_scenario():
    return load_scenario("figure1")


@pytest.fixture(scope="session")
def demo_model(figure1_scenario):
    # Overfit toy model whose tagger decodes the scenario exactly and whose
    # policy keeps every candidate row.  Built once; tests must not mutate it.
    return build_demo_model(figure1_scenario, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
