import numpy as np
import pytest

from pairq.data import MOS, AnnotatedItem, Database
from pairq.losses import LossConfig
from pairq.pairs import combine, sample_pairs
from pairq.scorer import Architecture, init_params
from pairq.trainer import (AdamState, NumericError, TrainConfig, adam_step,
                           evaluate_pairwise_loss, grad_check, init_adam, train,
                           train_regression)

LINEAR = Architecture(kind="linear", input_dim=2)


def separable_fixture(n=40, seed=0):
    """Items whose quality is exactly the first feature; tiny rating noise
    makes nearly-hard pair labels a linear scorer can drive toward 0 loss."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        q = float(rng.uniform(0, 1))
        items.append(AnnotatedItem(id=f"s{i:03d}", db="sep", content=f"c{i}",
                                   mu=q, sigma=0.01,
                                   features=np.array([q, 1.0])))
    db = Database(name="sep", scenario="synthetic", polarity=MOS, items=items)
    train_set = combine([sample_pairs(db, db.ids(), 400, seed=seed + 1)])
    return db, train_set


class TestAdamStep:
    def test_zero_gradient_keeps_params(self):
        params = init_params(LINEAR, 0)
        state = init_adam(params)
        grads = ([np.zeros_like(w) for w in params.weights],
                 [np.zeros_like(b) for b in params.biases])
        new_params, _ = adam_step(params, grads, state, lr=0.1)
        for a, b in zip(new_params.tensors(), params.tensors()):
            assert np.array_equal(a, b)

    def test_first_step_hand_value(self):
        # g = 1, betas (0.9, 0.999): bias-corrected m_hat = v_hat = 1,
        # so the step is -lr / (1 + eps) ~ -lr
        params = init_params(LINEAR, 0)
        before = params.weights[0][0, 0]
        state = init_adam(params)
        grads = ([np.zeros_like(w) for w in params.weights],
                 [np.zeros_like(b) for b in params.biases])
        grads[0][0][0, 0] = 1.0
        new_params, _ = adam_step(params, grads, state, lr=0.1)
        delta = new_params.weights[0][0, 0] - before
        assert delta == pytest.approx(-0.1, rel=1e-7)

    def test_constant_gradient_asymptotic_step(self):
        params = init_params(LINEAR, 0)
        state = init_adam(params)
        lr = 0.01
        g = ([np.full_like(w, 3.0) for w in params.weights],
             [np.full_like(b, 3.0) for b in params.biases])
        prev = params.weights[0].copy()
        for _ in range(300):
            params, state = adam_step(params, g, state, lr)
        step = params.weights[0] - prev
        # after convergence of the moments each step approaches -lr*sign(g)
        last_before = prev
        prev2 = params.weights[0].copy()
        params, state = adam_step(params, g, state, lr)
        single = params.weights[0] - prev2
        assert np.allclose(single, -lr, rtol=1e-3)

    def test_masked_tensors_untouched(self):
        params = init_params(Architecture(kind="mlp", input_dim=2, hidden_sizes=(3,)), 0)
        state = init_adam(params)
        grads = ([np.ones_like(w) for w in params.weights],
                 [np.ones_like(b) for b in params.biases])
        mask = [False, False, True, True]
        new_params, new_state = adam_step(params, grads, state, 0.1, update=mask)
        assert np.array_equal(new_params.weights[0], params.weights[0])
        assert not np.array_equal(new_params.weights[1], params.weights[1])
        assert new_state.step[0] == 0 and new_state.step[2] == 1

    def test_shape_mismatch_rejected(self):
        params = init_params(LINEAR, 0)
        state = init_adam(params)
        grads = ([np.zeros((3, 3))], [np.zeros(2)])
        with pytest.raises(ValueError):
            adam_step(params, grads, state, 0.1)


class TestLrSchedule:
    def test_default_table(self):
        cfg = TrainConfig()
        for epoch in range(12):
            assert cfg.lr_at(epoch) == pytest.approx(1e-4 * 10.0 ** (-(epoch // 3)))

    def test_invariants(self):
        with pytest.raises(ValueError):
            TrainConfig(warmup_epochs=5, epochs=3)
        with pytest.raises(ValueError):
            TrainConfig(lr0=0.0)


class TestTrain:
    def test_zero_epochs_returns_init(self):
        db, ts = separable_fixture()
        cfg = TrainConfig(epochs=0, warmup_epochs=0, seed=3)
        report = train(ts, db.item_map(), LINEAR, cfg)
        expected = init_params(
            LINEAR, int(np.random.SeedSequence([3, 0]).generate_state(1)[0]))
        for a, b in zip(report.params.tensors(), expected.tensors()):
            assert np.array_equal(a, b)

    def test_deterministic(self):
        db, ts = separable_fixture()
        cfg = TrainConfig(epochs=3, warmup_epochs=0, batch_size_main=32,
                          lr0=0.01, decay_every=10, seed=5)
        a = train(ts, db.item_map(), LINEAR, cfg)
        b = train(ts, db.item_map(), LINEAR, cfg)
        for x, y in zip(a.params.tensors(), b.params.tensors()):
            assert np.array_equal(x, y)
        assert a.rows == b.rows

    def test_separable_fixture_improves_10x(self):
        db, ts = separable_fixture()
        cfg = TrainConfig(epochs=20, warmup_epochs=0, batch_size_main=32,
                          batch_size_warmup=32, lr0=0.05, decay_factor=10.0,
                          decay_every=15, seed=0,
                          loss=LossConfig(hinge_weight=0.0))
        report = train(ts, db.item_map(), LINEAR, cfg, loss_kind="fidelity-only")
        assert report.initial_loss is not None
        final = evaluate_pairwise_loss(ts, db.item_map(), report.params,
                                       cfg.loss, "fidelity-only")
        assert final < report.initial_loss / 10.0

    def test_unresolvable_id_rejected(self):
        db, ts = separable_fixture()
        items = db.item_map()
        items.pop(ts.pairs[0].x_id)
        with pytest.raises(ValueError, match="unknown item"):
            train(ts, items, LINEAR, TrainConfig(epochs=1, warmup_epochs=0))

    def test_warmup_masks_upstream_parameters(self):
        db, ts = separable_fixture()
        arch = Architecture(kind="mlp", input_dim=2, hidden_sizes=(4,))
        cfg = TrainConfig(epochs=2, warmup_epochs=2, batch_size_warmup=32,
                          lr0=0.01, seed=1)
        report = train(ts, db.item_map(), arch, cfg)
        init = init_params(
            arch, int(np.random.SeedSequence([1, 0]).generate_state(1)[0]))
        assert np.array_equal(report.params.weights[0], init.weights[0])
        assert np.array_equal(report.params.biases[0], init.biases[0])
        assert not np.array_equal(report.params.weights[1], init.weights[1])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts_with_diagnostic(self):
        # the first Adam step has magnitude ~lr0, so this overflows the
        # parameters and the next batch sees inf/nan
        db, ts = separable_fixture()
        cfg = TrainConfig(epochs=2, warmup_epochs=0, lr0=1e308, seed=0,
                          decay_every=10)
        with pytest.raises(NumericError, match="epoch"):
            train(ts, db.item_map(), LINEAR, cfg)

    def test_epoch_rows_track_schedule(self):
        db, ts = separable_fixture()
        cfg = TrainConfig(epochs=6, warmup_epochs=2, batch_size_warmup=64,
                          batch_size_main=16, lr0=0.01, decay_every=3, seed=2)
        report = train(ts, db.item_map(), LINEAR, cfg)
        assert [r.batch_size for r in report.rows] == [64, 64, 16, 16, 16, 16]
        assert [r.lr for r in report.rows] == [0.01] * 3 + [0.001] * 3
        assert all(np.isfinite(r.mean_loss) for r in report.rows)


class TestTrainRegression:
    def test_fits_linear_targets(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(100, 2))
        targets = 0.7 * x[:, 0] - 0.2 * x[:, 1]
        cfg = TrainConfig(epochs=40, warmup_epochs=0, batch_size_main=25,
                          lr0=0.05, decay_every=30, seed=0)
        report = train_regression(x, targets, LINEAR, cfg)
        assert report.rows[-1].mean_loss < report.initial_loss / 50.0

    def test_sigma_head_untouched(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 2))
        cfg = TrainConfig(epochs=3, warmup_epochs=0, batch_size_main=10,
                          lr0=0.05, decay_every=30, seed=4)
        report = train_regression(x, x[:, 0], LINEAR, cfg)
        init = init_params(
            LINEAR, int(np.random.SeedSequence([4, 0]).generate_state(1)[0]))
        assert np.array_equal(report.params.weights[0][1], init.weights[0][1])
        assert report.params.biases[0][1] == init.biases[0][1]


class TestGradCheck:
    def test_linear_tight(self):
        err = max(grad_check(Architecture(kind="linear", input_dim=6), seed, 2)
                  for seed in range(5))
        assert err <= 1e-6

    def test_mlp(self):
        arch = Architecture(kind="mlp", input_dim=6, hidden_sizes=(8,))
        err = max(grad_check(arch, seed, 2) for seed in range(5))
        assert err <= 1e-4

    def test_bilinear(self):
        arch = Architecture(kind="bilinear_mlp", spatial=3, channels=4,
                            hidden_sizes=(8,))
        err = max(grad_check(arch, seed, 2) for seed in range(5))
        assert err <= 1e-4

    def test_detects_corrupted_gradient(self, monkeypatch):
        import pairq.trainer as trainer_mod

        original = trainer_mod.backward_batch

        def corrupted(params, cache, d_f, d_sigma):
            dw, db = original(params, cache, d_f, d_sigma)
            dw[0] = dw[0] * 1.05
            return dw, db

        monkeypatch.setattr(trainer_mod, "backward_batch", corrupted)
        err = grad_check(Architecture(kind="linear", input_dim=6), 0, 2)
        assert err > 1e-4
