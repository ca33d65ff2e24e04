import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairq.scorer import (Architecture, ScorerParams, backward, backward_batch,
                          bilinear_pool, forward, forward_batch, init_params,
                          load_checkpoint, save_checkpoint, softplus)

from oracles import fd_gradient

LINEAR = Architecture(kind="linear", input_dim=4)
MLP = Architecture(kind="mlp", input_dim=4, hidden_sizes=(6,))
BILINEAR = Architecture(kind="bilinear_mlp", spatial=3, channels=2, hidden_sizes=(5,))


class TestArchitecture:
    def test_linear_param_count(self):
        assert init_params(LINEAR, 0).n_params() == 4 * 2 + 2

    def test_rejects_bad_kind(self):
        with pytest.raises(ValueError):
            Architecture(kind="transformer", input_dim=4)

    def test_linear_rejects_hidden(self):
        with pytest.raises(ValueError):
            Architecture(kind="linear", input_dim=4, hidden_sizes=(3,))

    def test_bilinear_needs_map_spec(self):
        with pytest.raises(ValueError):
            Architecture(kind="bilinear_mlp", input_dim=4)


class TestInit:
    def test_deterministic(self):
        a, b = init_params(MLP, 9), init_params(MLP, 9)
        assert all(np.array_equal(x, y) for x, y in zip(a.tensors(), b.tensors()))

    def test_biases_zero(self):
        params = init_params(MLP, 3)
        assert all(np.all(b == 0.0) for b in params.biases)

    def test_he_variance(self):
        arch = Architecture(kind="mlp", input_dim=50, hidden_sizes=(2000,))
        params = init_params(arch, 0)
        w = params.weights[0]  # fan_in 50, 100k draws
        assert w.size == 100_000
        assert np.var(w) == pytest.approx(2.0 / 50.0, rel=0.05)


class TestBilinearPool:
    def test_hand_example(self):
        z = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert bilinear_pool(z).tolist() == [10.0, 14.0, 14.0, 20.0]

    def test_zeros(self):
        assert np.all(bilinear_pool(np.zeros((3, 2))) == 0.0)

    def test_outer_product_identity(self):
        a, b = 1.7, -0.3
        out = bilinear_pool(np.array([[a, b]]))
        assert out == pytest.approx([a * a, a * b, a * b, b * b])

    @given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 100))
    def test_symmetric_and_trace_nonneg(self, s, c, seed):
        z = np.random.default_rng(seed).normal(size=(s, c))
        m = bilinear_pool(z).reshape(c, c)
        assert np.array_equal(m, m.T)
        assert m.trace() >= -1e-12


class TestSoftplus:
    def test_zero(self):
        assert softplus(0.0) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_large_negative(self):
        v = softplus(-40.0)
        assert 0.0 < v <= 1e-17

    def test_large_positive(self):
        assert softplus(40.0) == pytest.approx(40.0, abs=1e-12)


class TestForward:
    def test_zero_weights_linear(self):
        params = init_params(LINEAR, 0)
        for w in params.weights:
            w[:] = 0.0
        out = forward(params, np.ones(4))
        assert out.f == 0.0
        assert out.sigma == softplus(0.0) + LINEAR.sigma_floor

    def test_zero_input_mlp_equals_bias_only(self):
        params = init_params(MLP, 1)
        for b in params.biases:
            b[:] = 0.3
        zeroed = forward(params, np.zeros(4))
        # bias-only: hidden acts = relu(b0), head = W1 relu(b0) + b1
        hidden = np.maximum(params.biases[0], 0.0)
        raw = params.weights[1] @ hidden + params.biases[1]
        assert zeroed.f == pytest.approx(raw[0], abs=1e-15)
        assert zeroed.sigma == pytest.approx(softplus(raw[1]) + MLP.sigma_floor, abs=1e-15)

    def test_hand_forward_two_layer(self):
        arch = Architecture(kind="mlp", input_dim=2, hidden_sizes=(2,))
        params = init_params(arch, 0)
        params.weights[0][:] = np.array([[0.1, -0.2], [0.3, 0.4]])
        params.biases[0][:] = np.array([0.05, -0.1])
        params.weights[1][:] = np.array([[0.2, -0.5], [0.7, 0.1]])
        params.biases[1][:] = np.array([0.0, 0.25])
        out = forward(params, np.array([1.0, 0.0]))
        # hidden pre-acts: [0.1+0.05, 0.3-0.1] = [0.15, 0.2]; both positive
        # f head: 0.2*0.15 - 0.5*0.2 = -0.07
        assert out.f == pytest.approx(-0.07, abs=1e-12)
        raw_sigma = 0.7 * 0.15 + 0.1 * 0.2 + 0.25
        assert out.sigma == pytest.approx(softplus(raw_sigma) + arch.sigma_floor, abs=1e-12)

    def test_sigma_strictly_positive(self):
        params = init_params(LINEAR, 0)
        params.weights[0][:] = -50.0
        out = forward(params, np.ones(4) * 10.0)
        assert out.sigma > 0.0

    def test_pure_function_bit_identical(self):
        params = init_params(BILINEAR, 2)
        x = np.random.default_rng(0).normal(size=(3, 2))
        a, b = forward(params, x), forward(params, x)
        assert a.f == b.f and a.sigma == b.sigma

    def test_shape_mismatch_rejected(self):
        params = init_params(LINEAR, 0)
        with pytest.raises(ValueError):
            forward(params, np.ones(5))


class TestBackward:
    def test_zero_upstream_zero_gradient(self):
        params = init_params(MLP, 4)
        out = forward(params, np.ones(4))
        dw, db = backward(params, out, 0.0, 0.0)
        assert all(np.all(g == 0.0) for g in dw + db)

    def test_linear_f_head_gradient_is_input(self):
        params = init_params(LINEAR, 0)
        x = np.array([0.5, -1.0, 2.0, 0.0])
        out = forward(params, x)
        dw, db = backward(params, out, 1.0, 0.0)
        assert np.allclose(dw[0][0], x)
        assert np.all(dw[0][1] == 0.0)
        assert db[0].tolist() == [1.0, 0.0]

    @pytest.mark.parametrize("arch", [LINEAR, MLP, BILINEAR], ids=lambda a: a.kind)
    def test_matches_finite_differences(self, arch):
        rng = np.random.default_rng(0)
        for trial in range(5):
            params = init_params(arch, 100 + trial)
            for b in params.biases:
                b += rng.normal(0, 0.1, b.shape)
            x = rng.normal(size=(arch.spatial, arch.channels)
                           if arch.kind == "bilinear_mlp" else arch.input_dim)
            d_f, d_s = rng.normal(), rng.normal()

            out = forward(params, x)
            dw, dbias = backward(params, out, d_f, d_s)
            analytic = np.concatenate([g.ravel() for pair in zip(dw, dbias) for g in pair])

            def scalar():
                o = forward(params, x)
                return d_f * o.f + d_s * o.sigma

            tensors = []
            for w, b in zip(params.weights, params.biases):
                tensors.extend([w, b])
            numeric = np.concatenate([g.ravel() for g in fd_gradient(scalar, tensors)])
            denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
            assert np.linalg.norm(analytic - numeric) / denom <= 1e-4

    def test_batch_matches_sum_of_singles(self):
        params = init_params(MLP, 7)
        rng = np.random.default_rng(1)
        xs = rng.normal(size=(3, 4))
        ups = rng.normal(size=(3, 2))
        f, s, cache = forward_batch(params, xs)
        dw_b, db_b = backward_batch(params, cache, ups[:, 0], ups[:, 1])
        dw_sum = None
        for i in range(3):
            out = forward(params, xs[i])
            dw, db = backward(params, out, ups[i, 0], ups[i, 1])
            if dw_sum is None:
                dw_sum, db_sum = dw, db
            else:
                dw_sum = [a + b for a, b in zip(dw_sum, dw)]
                db_sum = [a + b for a, b in zip(db_sum, db)]
        for a, b in zip(dw_b + db_b, dw_sum + db_sum):
            assert np.allclose(a, b, atol=1e-12)

    def test_cache_param_mismatch_rejected(self):
        params = init_params(MLP, 0)
        other = init_params(MLP, 1)
        out = forward(params, np.ones(4))
        with pytest.raises(ValueError, match="cache"):
            backward_batch(other, out.cache, np.array([1.0]), np.array([0.0]))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params(BILINEAR, 12)
        meta = {"train_seed": 12, "note": "fixture"}
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path, meta=meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded.arch == params.arch
        assert loaded_meta == meta
        for a, b in zip(loaded.tensors(), params.tensors()):
            assert np.array_equal(a, b)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_checkpoint(path)
