import pytest

from cfa.synthetic import SyntheticSpec, generate


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The stock synthetic benchmark dataset (20 classes, 13 base / 7 novel)."""
    out = tmp_path_factory.mktemp("default_dataset")
    spec = SyntheticSpec()
    return spec, generate(spec, out)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small dataset with all three splits, for harness plumbing tests."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    spec = SyntheticSpec(classes=7, samples_per_class=8, channels=8, n_true=2,
                         height=2, width=2, attribute_vocab=4, sigma_a=0.8,
                         novel_classes=2, val_classes=2, rng_seed=3)
    return spec, generate(spec, out)


@pytest.fixture(scope="session")
def separable_dataset(tmp_path_factory):
    """Vanishing noise: every sample of a class is bitwise identical."""
    out = tmp_path_factory.mktemp("separable_dataset")
    spec = SyntheticSpec(classes=5, samples_per_class=6, channels=8, n_true=2,
                         height=2, width=2, attribute_vocab=4, sigma_a=1e-300,
                         location_shuffle=False, novel_classes=2,
                         val_classes=0, rng_seed=11)
    return spec, generate(spec, out)
