import math

import numpy as np
import pytest

from ptmvqa.clustering import assign_clusters, compute_dbi, model_weights
from ptmvqa.feature_store import (MosLabels, SyntheticSpec, gen_synthetic,
                                  split_dataset)
from ptmvqa.heads import init_heads, save_checkpoint
from ptmvqa.training import (AdamWState, TrainConfig, adamw_step, lr_at,
                             make_balanced_batches, train)
from ptmvqa.validation import ValidationError

from helpers_synth import make_bundle


def dbi_weights(bundle, config):
    spec = config.resolved_cluster_spec()
    labels = MosLabels({v: bundle.labels.entries[v]
                        for v in bundle.videos("train")})
    assignment = assign_clusters(labels, spec)
    return model_weights([compute_dbi(t, assignment) for t in bundle.tables])


class TestBalancedBatches:
    def test_three_even_clusters(self):
        assignments = {f"s{i}": i % 3 for i in range(12)}
        batches = make_balanced_batches(assignments, 4, seed=0, epoch=0)
        assert len(batches) == 3
        for batch in batches:
            assert len(batch) == 4
            assert len({assignments[s] for s in batch}) >= 2

    def test_deterministic_per_seed_epoch(self):
        assignments = {f"s{i}": i % 4 for i in range(23)}
        a = make_balanced_batches(assignments, 5, seed=9, epoch=3)
        b = make_balanced_batches(assignments, 5, seed=9, epoch=3)
        assert a == b
        c = make_balanced_batches(assignments, 5, seed=9, epoch=4)
        assert a != c

    def test_every_sample_exactly_once(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            n = int(rng.integers(8, 40))
            assignments = {f"s{i}": int(rng.integers(0, 4)) for i in range(n)}
            if len(set(assignments.values())) < 2:
                continue
            batches = make_balanced_batches(assignments, 4, seed=trial, epoch=1)
            flat = [s for batch in batches for s in batch]
            assert sorted(flat) == sorted(assignments)

    def test_diversity_whenever_pool_allows(self):
        # skewed clusters: once the small cluster is exhausted, single-cluster
        # tail batches are allowed, but only then
        assignments = {f"a{i}": 0 for i in range(17)}
        assignments.update({f"b{i}": 1 for i in range(3)})
        batches = make_balanced_batches(assignments, 4, seed=2, epoch=0)
        flat = [s for batch in batches for s in batch]
        assert sorted(flat) == sorted(assignments)
        exhausted = False
        for batch in batches:
            clusters = {assignments[s] for s in batch}
            if not exhausted and len(clusters) < 2:
                remaining_b = any(s.startswith("b") for s in flat[flat.index(batch[0]):])
                assert not remaining_b
            if all(not s.startswith("b") for s in batch):
                exhausted = True

    def test_single_cluster_rejected(self):
        with pytest.raises(ValidationError, match="coarser"):
            make_balanced_batches({"a": 0, "b": 0, "c": 0, "d": 0}, 4, 0, 0)

    def test_small_batch_rejected(self):
        with pytest.raises(ValidationError, match="batch_size"):
            make_balanced_batches({"a": 0, "b": 1}, 2, 0, 0)


class TestLrSchedule:
    def test_warmup_endpoint(self):
        assert lr_at(9, 100, 10, 1e-3) == pytest.approx(1e-3, abs=1e-18)

    def test_warmup_ramp(self):
        assert lr_at(0, 100, 10, 1e-3) == pytest.approx(1e-4, abs=1e-18)

    def test_annealing_midpoint(self):
        # step exactly halfway through the cosine span
        assert lr_at(55, 100, 10, 2e-3) == pytest.approx(1e-3, abs=1e-15)

    def test_final_step_near_zero(self):
        total, warm, base = 100, 10, 1e-3
        expected = 0.5 * base * (1 + math.cos(math.pi * 89 / 90))
        got = lr_at(99, total, warm, base)
        assert got == pytest.approx(expected, abs=1e-18)
        assert got < 1e-6

    def test_monotone_after_warmup(self):
        values = [lr_at(s, 50, 5, 1e-3) for s in range(5, 50)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_range_step(self):
        with pytest.raises(ValidationError):
            lr_at(100, 100, 10, 1e-3)


class TestAdamW:
    def test_decay_only_with_zero_gradient(self):
        params = init_heads([4], 3, 5, seed=0)
        state = AdamWState.for_params(params)
        before = {n: a.copy() for n, a in params.named_arrays()}
        grads = {n: np.zeros_like(a) for n, a in params.named_arrays()}
        adamw_step(params, grads, state, lr=1e-3, weight_decay=0.02)
        after = dict(params.named_arrays())
        factor = 1.0 - 1e-3 * 0.02
        assert np.allclose(after["head0.w1"], before["head0.w1"] * factor,
                           rtol=1e-15, atol=0)
        assert np.allclose(after["w_out"], before["w_out"] * factor,
                           rtol=1e-15, atol=0)
        # biases and norm parameters are never decayed
        for name in ("head0.b1", "head0.gain1", "head0.bias1", "b_out"):
            assert np.array_equal(after[name], before[name])

    def test_stationary_without_decay(self):
        params = init_heads([4], 3, 5, seed=1)
        state = AdamWState.for_params(params)
        before = {n: a.copy() for n, a in params.named_arrays()}
        grads = {n: np.zeros_like(a) for n, a in params.named_arrays()}
        adamw_step(params, grads, state, lr=1e-3, weight_decay=0.0)
        for name, arr in params.named_arrays():
            assert np.array_equal(arr, before[name])

    def test_unit_step_property(self):
        # constant gradient: the bias-corrected update magnitude approaches lr
        params = init_heads([4], 3, 5, seed=2)
        state = AdamWState.for_params(params)
        grads = {n: np.ones_like(a) for n, a in params.named_arrays()}
        lr = 1e-3
        prev = params.heads[0].w1.copy()
        for _ in range(300):
            prev = params.heads[0].w1.copy()
            adamw_step(params, grads, state, lr=lr, weight_decay=0.0)
        delta = np.abs(params.heads[0].w1 - prev)
        assert np.allclose(delta, lr, rtol=1e-2)

    def test_shape_mismatch_rejected(self):
        params = init_heads([4], 3, 5, seed=0)
        state = AdamWState.for_params(params)
        grads = {n: np.zeros_like(a) for n, a in params.named_arrays()}
        grads["w_out"] = np.zeros(7)
        with pytest.raises(ValidationError, match="shape"):
            adamw_step(params, grads, state, 1e-3, 0.0)


def quick_config(**kw):
    base = dict(epochs=5, batch_size=8, base_lr=5e-3, embed_dim=8,
                hidden_dim=12, clusters=4, seed=0, warmup_epochs=1)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_zero_epochs_is_noop(self):
        bundle = split_dataset(make_bundle(n_videos=16), 0.75, seed=0)
        config = quick_config(epochs=0)
        checkpoint, history = train(bundle, config, np.ones(2))
        fresh = init_heads(bundle.dims(), config.embed_dim, config.hidden_dim,
                           config.seed)
        assert history == []
        for (na, va), (nb, vb) in zip(checkpoint.params.named_arrays(),
                                      fresh.named_arrays()):
            assert na == nb and np.array_equal(va, vb)

    def test_bitwise_reproducibility(self, tmp_path):
        bundle = split_dataset(make_bundle(n_videos=20), 0.75, seed=1)
        config = quick_config(epochs=4)
        outs = []
        for run in range(2):
            checkpoint, history = train(bundle, config, np.array([1.5, 0.5]))
            path = tmp_path / f"run{run}.ptmc"
            save_checkpoint(checkpoint, path)
            outs.append((path.read_bytes(),
                         [rec.log_line() for rec in history]))
        assert outs[0][0] == outs[1][0]
        assert outs[0][1] == outs[1][1]

    def test_loss_decreases_over_training(self):
        spec = SyntheticSpec(n_videos=48, n_models=1, dims=[6],
                             signal_strength=[1.0], noise_sigma=0.0, seed=3)
        bundle = split_dataset(gen_synthetic(spec), 0.75, seed=3)
        config = quick_config(epochs=60, batch_size=12)
        _, history = train(bundle, config, np.ones(1))
        assert history[59].total < history[0].total

    def test_features_stay_frozen(self):
        bundle = split_dataset(make_bundle(n_videos=16), 0.75, seed=2)
        snapshot = [{k: v.copy() for k, v in t.entries.items()}
                    for t in bundle.tables]
        train(bundle, quick_config(epochs=3), np.ones(2))
        for table, before in zip(bundle.tables, snapshot):
            assert all(np.array_equal(table.entries[k], before[k])
                       for k in before)

    def test_history_records_test_metrics(self):
        bundle = split_dataset(make_bundle(n_videos=24), 0.75, seed=4)
        _, history = train(bundle, quick_config(epochs=2), np.ones(2))
        assert len(history) == 2
        assert history[-1].test_plcc is not None
        assert -1.0 <= history[-1].test_plcc <= 1.0
        line = history[-1].log_line()
        for token in ("epoch=", "lr=", "l1=", "intra=", "inter=", "total=",
                      "test_plcc=", "test_srcc="):
            assert token in line

    def test_metric_losses_fall_with_default_weighting(self):
        bundle = split_dataset(make_bundle(n_videos=24, noise=0.05), 0.75, seed=5)
        config = quick_config(epochs=12, batch_size=8)
        weights = dbi_weights(bundle, config)
        _, history = train(bundle, config, weights)
        assert history[-1].intra < history[0].intra

    def test_best_srcc_policy_keeps_best(self):
        bundle = split_dataset(make_bundle(n_videos=24), 0.75, seed=6)
        config = quick_config(epochs=6, checkpoint_policy="best-srcc")
        checkpoint, history = train(bundle, config, np.ones(2))
        assert checkpoint.params is not None
        assert any(rec.test_srcc is not None for rec in history)

    def test_weight_count_mismatch(self):
        bundle = split_dataset(make_bundle(n_videos=16), 0.75, seed=0)
        with pytest.raises(ValidationError, match="one weight per model"):
            train(bundle, quick_config(), np.ones(3))

    def test_unsplit_bundle_rejected(self):
        bundle = make_bundle(n_videos=16)
        with pytest.raises(ValidationError, match="split"):
            train(bundle, quick_config(), np.ones(2))

    def test_non_finite_loss_aborts_with_term_name(self):
        from ptmvqa.losses import LossBreakdown
        from ptmvqa.training import _abort_if_not_finite
        bad = LossBreakdown(l1=0.1, intra=0.0, inter=float("inf"),
                            total=float("inf"), margin=0.05, metric_weight=0.2)
        with pytest.raises(ValidationError, match="non-finite loss term 'inter'"):
            _abort_if_not_finite(bad, epoch=4)

    def test_diverging_run_aborts(self):
        # an absurd learning rate must abort, not train through garbage
        bundle = split_dataset(make_bundle(n_videos=16), 0.75, seed=7)
        config = quick_config(epochs=3, base_lr=1e200)
        with pytest.raises(ValidationError):
            train(bundle, config, np.ones(2))


class TestConfigValidation:
    def test_defaults_valid(self):
        TrainConfig().validate()

    def test_warmup_bound_only_when_training(self):
        TrainConfig(epochs=0, warmup_epochs=2).validate()
        with pytest.raises(ValidationError, match="warmup"):
            TrainConfig(epochs=2, warmup_epochs=2).validate()

    def test_bad_inter_mode(self):
        with pytest.raises(ValidationError, match="inter_mode"):
            TrainConfig(inter_mode="bogus").validate()

    def test_bad_fraction(self):
        with pytest.raises(ValidationError, match="train_fraction"):
            TrainConfig(train_fraction=1.0).validate()
