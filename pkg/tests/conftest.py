import numpy as np
import pytest

from r2dl.embeddings import EmbeddingMatrix

from synthetic import make_source_fixture, make_target_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dictionary(rng, rows, dim, unit_norm=True):
    data = rng.standard_normal((rows, dim))
    if unit_norm:
        data /= np.linalg.norm(data, axis=1, keepdims=True)
    return EmbeddingMatrix(data)


@pytest.fixture
def small_dictionary(rng):
    return random_dictionary(rng, 12, 16)


# the synthetic source model is trained once per session, then frozen
@pytest.fixture(scope="session")
def source():
    return make_source_fixture(seed=0)


@pytest.fixture(scope="session")
def target_task(source):
    _, _, token_scores = source
    return make_target_dataset(token_scores, seed=1, n_train=200, n_test=100)
