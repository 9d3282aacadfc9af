import pytest

from ptmvqa.feature_store import split_dataset

from helpers_synth import make_bundle


@pytest.fixture
def small_bundle():
    return make_bundle()


@pytest.fixture
def split_small_bundle():
    return split_dataset(make_bundle(n_videos=24), 0.75, seed=5)
