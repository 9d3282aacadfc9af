"""Shared builders for synthetic tables and bundles."""

import numpy as np

from ptmvqa.feature_store import FeatureTable, SyntheticSpec, gen_synthetic


def make_table(model_id="m00", dim=3, videos=("a", "b"), views=(0,), seed=0):
    rng = np.random.default_rng(seed)
    entries = {(v, w): rng.normal(size=dim) for v in videos for w in views}
    return FeatureTable(model_id=model_id, dim=dim, entries=entries)


def make_bundle(n_videos=12, n_models=2, dim=4, views=1, seed=0, noise=0.1):
    spec = SyntheticSpec(n_videos=n_videos, n_models=n_models,
                         dims=[dim] * n_models, views_per_video=views,
                         signal_strength=[1.0] + [0.0] * (n_models - 1),
                         noise_sigma=noise, seed=seed)
    return gen_synthetic(spec)
