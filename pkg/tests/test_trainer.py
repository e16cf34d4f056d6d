import numpy as np
import pytest

from dsos.bmm import Assessment
from dsos.correction import CorrectionParams, dynamic_soften
from dsos.errors import ConfigError, InputError
from dsos.nn import Network, OptimizerState, backward, forward, row_entropy
from dsos.synthgen import CLEAN, ID_NOISE, OOD, GenConfig, generate
from dsos.trainer import (
    Streams,
    TrainConfig,
    build_network,
    correction_epoch,
    corrected_targets,
    evaluate_metrics,
    run,
    warmup_epoch,
)
from oracle import ideal_predictions, lookup_setup


@pytest.fixture(scope="module")
def small_data():
    cfg = GenConfig(num_classes=4, feature_dim=5, train_size=160, test_size=40, rho=0.2, psi=0.2, seed=3)
    return generate(cfg)


def quick_cfg(**kw):
    base = dict(epochs=6, lr_drop_epochs=[3], hidden_dims=[8], batch_size=16, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def manual_assessment(u, v):
    u, v = np.asarray(u, float), np.asarray(v, float)
    n = u.size
    return Assessment(np.zeros(n), np.zeros(n), u, v, np.full(n, CLEAN), 0.0)


class TestConfig:
    def test_lr_schedule(self):
        cfg = TrainConfig()
        assert [cfg.lr_at(e) for e in (1, 20, 21, 32, 33, 40)] == pytest.approx(
            [0.03, 0.03, 0.003, 0.003, 0.0003, 0.0003], rel=1e-12)

    def test_warmup_end_defaults_after_first_drop(self):
        assert TrainConfig().effective_warmup_end == 21
        assert TrainConfig(lr_drop_epochs=[32, 20]).effective_warmup_end == 21
        assert TrainConfig(warmup_end=5).effective_warmup_end == 5

    def test_disabled_correction_is_all_warmup(self):
        assert TrainConfig(enable_correction=False).effective_warmup_end == 40

    def test_no_drop_needs_explicit_warmup(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_drop_epochs=[]).validate()

    @pytest.mark.parametrize("kw", [dict(warmup_end=41), dict(epochs=0), dict(lr=0.0), dict(momentum=1.0),
                                    dict(hidden_dims=[0]), dict(correction=CorrectionParams(alpha=0))])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_correction_from_dict(self):
        assert TrainConfig(correction={"gamma": 0.0}).correction == CorrectionParams(gamma=0.0)


class TestWarmup:
    def test_zero_lr_leaves_parameters(self, small_data):
        train, _ = small_data
        cfg = quick_cfg()
        net = build_network(cfg, train.feature_dim, train.num_classes)
        before = net.copy()
        opt = OptimizerState.for_network(net, 0.0, cfg.momentum, cfg.weight_decay)
        warmup_epoch(net, train, cfg, opt, Streams.from_seed(cfg.seed))
        assert all(np.array_equal(a, b) for a, b in zip(net.params(), before.params()))

    def test_plain_ce_matches_reference_loop(self, small_data):
        train, _ = small_data
        cfg = quick_cfg(warmup_mixup=False, warmup_entropy=False, weight_decay=1e-3)
        net = build_network(cfg, train.feature_dim, train.num_classes)
        ref = net.copy()
        opt = OptimizerState.for_network(net, 0.05, cfg.momentum, cfg.weight_decay)
        warmup_epoch(net, train, cfg, opt, Streams.from_seed(cfg.seed))

        # hand-written minibatch SGD with momentum over the same batch order
        order = np.random.default_rng([cfg.seed, 1]).permutation(len(train))
        y = np.eye(train.num_classes)[train.labels]
        vel = [np.zeros_like(p) for p in ref.params()]
        for start in range(0, len(train), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            g = backward(ref, train.features[idx], y[idx]).params()
            for k, p in enumerate(ref.params()):
                vel[k] = 0.9 * vel[k] + g[k] + 1e-3 * p
                p -= 0.05 * vel[k]
        for a, b in zip(net.params(), ref.params()):
            np.testing.assert_allclose(a, b, atol=1e-13)

    def test_refuses_epoch_past_warmup(self, small_data):
        train, _ = small_data
        cfg = quick_cfg()
        net = build_network(cfg, train.feature_dim, train.num_classes)
        with pytest.raises(InputError):
            warmup_epoch(net, train, cfg, OptimizerState.for_network(net, 0.1), Streams.from_seed(0), epoch=5)


class TestEvaluateMetrics:
    def test_uniform_net_all_clean(self, small_data):
        train, _ = small_data
        net = Network([5, 4], [np.zeros((5, 4))], [np.zeros(4)])
        _, a = evaluate_metrics(net, train)
        assert np.all(a.category == CLEAN)
        np.testing.assert_array_equal(a.l_detect_norm, 0.0)

    def test_ideal_predictions_recover_truth(self):
        train, _ = generate(GenConfig(train_size=1000, test_size=10, rho=0.2, psi=0.2, seed=0))
        net, data = lookup_setup(train, ideal_predictions(train))
        preds, a = evaluate_metrics(net, data)
        assert not a.fallback
        np.testing.assert_array_equal(a.category, train.truth)
        np.testing.assert_allclose(preds.sum(axis=1), 1.0, atol=1e-12)

    def test_uses_given_labels(self):
        train, _ = generate(GenConfig(train_size=1000, test_size=10, rho=0.2, psi=0.2, seed=1))
        net, data = lookup_setup(train, ideal_predictions(train, 1))
        _, a = evaluate_metrics(net, data)
        # confident-on-true-label predictions only look noisy against the given label
        assert np.all(a.category[train.truth == ID_NOISE] == ID_NOISE)

    def test_two_classes_rejected(self):
        train, _ = generate(GenConfig(num_classes=2, feature_dim=3, train_size=20, test_size=4))
        with pytest.raises(ConfigError):
            evaluate_metrics(Network.init([3, 2], 0), train)


class TestCorrection:
    def test_targets_start_from_given_labels(self, small_data):
        train, _ = small_data
        cfg = quick_cfg()
        n, c = len(train), train.num_classes
        preds = np.full((n, c), 1 / c)
        first = corrected_targets(train, manual_assessment(np.ones(n), np.zeros(n)), preds, cfg)
        second = corrected_targets(train, manual_assessment(np.zeros(n), np.ones(n)), preds, cfg)
        np.testing.assert_allclose(first, 1 / c, atol=1e-12)
        np.testing.assert_allclose(second, dynamic_soften(np.eye(c)[train.labels], np.ones(n)), atol=0)

    def test_bootstrap_uses_prediction(self, small_data):
        train, _ = small_data
        cfg = quick_cfg(enable_softening=False)
        rng = np.random.default_rng(0)
        preds = rng.dirichlet(np.ones(train.num_classes), len(train))
        u = np.where(np.arange(len(train)) % 2 == 0, 1.0, 0.0)
        t = corrected_targets(train, manual_assessment(u, np.ones(len(train))), preds, cfg)
        np.testing.assert_array_equal(t[::2], preds[::2])
        np.testing.assert_array_equal(t[1::2], np.eye(train.num_classes)[train.labels[1::2]])

    def test_bootstrapped_argmax_is_prediction_argmax(self, small_data):
        train, _ = small_data
        cfg = quick_cfg()
        rng = np.random.default_rng(1)
        preds = rng.dirichlet(np.ones(train.num_classes), len(train))
        n = len(train)
        t = corrected_targets(train, manual_assessment(np.ones(n), np.ones(n)), preds, cfg)
        np.testing.assert_array_equal(t.argmax(axis=1), preds.argmax(axis=1))

    def test_large_alpha_flattens_targets(self, small_data):
        train, _ = small_data
        cfg = quick_cfg(correction=CorrectionParams(alpha=1e6))
        n, c = len(train), train.num_classes
        t = corrected_targets(train, manual_assessment(np.zeros(n), np.ones(n)), np.full((n, c), 1 / c), cfg)
        np.testing.assert_allclose(t, 1 / c, atol=1e-6)

    def test_ood_targets_not_sharper_than_clean(self):
        y = np.eye(6)[[2]]
        sharp = row_entropy(dynamic_soften(y, np.ones(1)))[0]
        for v in np.linspace(0, 0.99, 12):
            assert row_entropy(dynamic_soften(y, np.full(1, v)))[0] >= sharp

    def test_v_zero_gradient_pulls_toward_uniform(self):
        # single linear layer with indicator inputs: dL/dW row i is (p_i - 1/C) / N
        rng = np.random.default_rng(2)
        train, _ = generate(GenConfig(num_classes=3, feature_dim=2, train_size=6, test_size=3, seed=0))
        net, data = lookup_setup(train, rng.dirichlet(np.ones(3), 6))
        n = len(data)
        t = corrected_targets(data, manual_assessment(np.zeros(n), np.zeros(n)), forward(net, data.features),
                              quick_cfg())
        g = backward(net, data.features, t)
        np.testing.assert_allclose(g.weights[0], (forward(net, data.features) - 1 / 3) / n, atol=1e-15)

    def test_correction_epoch_runs_and_changes_weights(self, small_data):
        train, _ = small_data
        cfg = quick_cfg()
        net = build_network(cfg, train.feature_dim, train.num_classes)
        before = net.copy()
        preds, a = evaluate_metrics(net, train)
        loss = correction_epoch(net, train, a, preds, cfg, OptimizerState.for_network(net, 0.05),
                                Streams.from_seed(0), 4)
        assert np.isfinite(loss)
        assert not np.array_equal(net.weights[0], before.weights[0])


class TestRun:
    def test_deterministic(self, small_data):
        train, test = small_data
        net_a, hist_a, fin_a = run(quick_cfg(), train, test)
        net_b, hist_b, fin_b = run(quick_cfg(), train, test)
        assert [e.as_dict() for e in hist_a.epochs] == [e.as_dict() for e in hist_b.epochs]
        assert all(np.array_equal(a, b) for a, b in zip(net_a.params(), net_b.params()))
        assert fin_a.u.tobytes() == fin_b.u.tobytes()

    def test_phases_and_rates(self, small_data):
        train, test = small_data
        _, hist, _ = run(quick_cfg(), train, test)
        assert [e.phase for e in hist.epochs] == ["warmup"] * 4 + ["correction"] * 2
        assert [e.lr for e in hist.epochs] == pytest.approx([0.03] * 3 + [0.003] * 3)
        for e in hist.epochs[4:]:
            assert e.n_clean + e.n_id + e.n_ood == len(train)

    def test_warmup_only_when_end_equals_epochs(self, small_data):
        train, test = small_data
        _, hist, _ = run(quick_cfg(warmup_end=6), train, test)
        assert all(e.phase == "warmup" and e.n_clean is None for e in hist.epochs)

    def test_disabled_correction(self, small_data):
        train, test = small_data
        _, hist, _ = run(quick_cfg(enable_correction=False), train, test)
        assert {e.phase for e in hist.epochs} == {"warmup"}

    def test_best_at_least_last(self, small_data):
        train, test = small_data
        _, hist, _ = run(quick_cfg(), train, test)
        assert hist.best_accuracy >= hist.last_accuracy
        assert all(0 <= e.test_acc <= 1 for e in hist.epochs)

    def test_given_labels_untouched(self, small_data):
        train, test = small_data
        labels = train.labels.copy()
        run(quick_cfg(), train, test)
        np.testing.assert_array_equal(train.labels, labels)

    def test_seed_changes_run(self, small_data):
        train, test = small_data
        a = run(quick_cfg(seed=1), train, test)[0]
        b = run(quick_cfg(seed=2), train, test)[0]
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_mismatched_test_set(self, small_data):
        train, _ = small_data
        other, _ = generate(GenConfig(num_classes=5, feature_dim=5, train_size=20, test_size=5))
        with pytest.raises(InputError):
            run(quick_cfg(), train, other)

    def test_categories_are_known_codes(self, small_data):
        train, test = small_data
        _, _, final = run(quick_cfg(), train, test)
        assert set(np.unique(final.category)) <= {CLEAN, ID_NOISE, OOD}
