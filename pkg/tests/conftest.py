import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def tiny_config(**overrides):
    """Desk profile shrunk so a forward/backward pass takes milliseconds."""
    from mimo_sarnn.pipeline.config import desk_config
    base = dict(estimator__num_blocks=2, estimator__num_stacks=1, estimator__channels=16,
                beamformer__fc1=16, beamformer__gru_hidden=8, beamformer__attention_dim=8,
                recipe__duration_s=0.5, recipe__max_order=2, train__chunk_seconds=0.25,
                train__batch_size=2, train__max_epochs=1, corpus_sizes=[4, 2, 2])
    base.update(overrides)
    return desk_config(**base)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A 4-utterance simulated corpus (1-2 speakers, 0.5 s) shared by pipeline tests."""
    from mimo_sarnn.acoustics import generate_corpus
    root = tmp_path_factory.mktemp("corpus")
    cfg = tiny_config()
    generate_corpus(cfg.recipe, 4, 5, root, prefix="tiny_")
    return root
