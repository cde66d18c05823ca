import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "skelview",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("skelview")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small synthetic dataset shared by model-level tests."""
    from skelview.data import SyntheticDatasetSpec, generate_synthetic

    spec = SyntheticDatasetSpec(num_classes=3, sequences_per_class=4,
                                frames=8, joints=7, view_ambiguity=0.5,
                                seed=99)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def toy_batch():
    """3-joint, 2-frame sequences for gradient checks."""
    from skelview.data import SkeletonSequence

    gen = np.random.default_rng(515)
    bones = ((0, 1), (1, 2))
    return [
        SkeletonSequence(frames=gen.normal(0.0, 0.5, size=(2, 3, 3)),
                         bones=bones, label=i % 3)
        for i in range(3)
    ]
