import numpy as np
import pytest

from multisem.data import SynthSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_synth():
    """Tiny two-modality dataset used across the fast tests."""
    return generate_synthetic(SynthSpec(
        n_classes=20, instances_per_class=20, feature_dim=8,
        modalities={"label": (6, 0.9), "description": (5, 0.9), "attributes": (4, 0.9)},
        split=(10, 5, 5), seed=11))


def assert_bitwise_equal(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    assert a.tobytes() == b.tobytes()
