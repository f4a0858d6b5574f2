import numpy as np
import pytest

from massrank import ToyModel


def make_fixture_model() -> ToyModel:
    """Hand-built 2-image, 3-token model; the rows below are the ground
    truth the oracle tests check against."""
    vocab = ("a", "b", "</s>")
    transitions = {
        "iA": {
            (): np.array([0.8, 0.1, 0.1]),
            ("a",): np.array([0.2, 0.3, 0.5]),
            ("b",): np.array([0.25, 0.25, 0.5]),
        },
        "iB": {
            (): np.array([0.4, 0.4, 0.2]),
            ("a",): np.array([0.5, 0.4, 0.1]),
            ("b",): np.array([0.1, 0.8, 0.1]),
        },
    }
    return ToyModel(
        vocab=vocab,
        end_token="</s>",
        images=("iA", "iB"),
        prior=np.array([0.5, 0.5]),
        transitions=transitions,
        max_len=2,
    )


@pytest.fixture
def fixture_model() -> ToyModel:
    return make_fixture_model()
