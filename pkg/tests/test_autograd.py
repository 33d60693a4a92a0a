import numpy as np
import pytest

from tactisense.autograd import checkpoint
from tactisense.autograd import tensor as T
from tactisense.autograd.gradcheck import check_layer_kind, gradcheck
from tactisense.autograd.layers import (LAYER_KINDS, RELU, BatchNorm, Sequential, backward, batch_norm,
                                        build_layer, dense, forward)
from tactisense.autograd.optim import AdamState, adam_step, mse_l1_loss
from tactisense.autograd.tensor import GraphError, NumericFault, ShapeError, Tensor, no_grad


class TestForward:
    def test_identity_dense(self, rng):
        layer = build_layer(dense(3, 3), rng)
        layer.weight.data[...] = np.eye(3)
        layer.bias.data[...] = 0.0
        out = layer(Tensor(np.array([[1.0, 2.0, 3.0]])))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_relu(self):
        out = build_layer(RELU, None)(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_batch_norm_train_standardizes(self, rng):
        layer = BatchNorm(batch_norm(4))
        x = rng.normal(loc=[1.0, -3.0, 10.0, 0.0], scale=[0.1, 2.0, 5.0, 1.0], size=(256, 4))
        out = layer(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        # eps in the denominator shrinks low-variance columns slightly
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-3)

    def test_batch_norm_eval_is_pure(self, rng):
        layer = BatchNorm(batch_norm(3))
        layer(Tensor(rng.normal(size=(16, 3))))
        layer.set_mode(False)
        before = layer.running_mean.copy(), layer.running_var.copy()
        x = Tensor(rng.normal(size=(5, 3)))
        a = layer(x).data
        b = layer(x).data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(before[0], layer.running_mean)
        np.testing.assert_array_equal(before[1], layer.running_var)

    def test_shape_mismatch_names_layer(self, rng):
        seq = Sequential([dense(4, 2)], rng)
        with pytest.raises(ShapeError):
            forward(seq.layers, Tensor(np.zeros((2, 5))))

    def test_non_finite_activation(self, rng):
        seq = Sequential([dense(2, 2)], rng)
        with pytest.raises(NumericFault):
            forward(seq.layers, Tensor(np.array([[np.inf, 0.0]])))


class TestBackward:
    def test_linear_grad_is_input(self, rng):
        x = rng.normal(size=5)
        w = Tensor(rng.normal(size=5), requires_grad=True)
        T.tsum(T.mul(w, Tensor(x))).backward()
        np.testing.assert_array_equal(w.grad, x)

    def test_disjoint_graphs_isolated(self, rng):
        w1 = Tensor(rng.normal(size=3), requires_grad=True)
        w2 = Tensor(rng.normal(size=3), requires_grad=True)
        T.tsum(T.square(w1))
        T.tsum(T.square(w2)).backward()
        assert w1.grad is None
        np.testing.assert_allclose(w2.grad, 2 * w2.data)

    def test_backward_needs_graph(self):
        with pytest.raises(GraphError):
            Tensor(np.ones(2)).backward()

    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = T.tsum(T.square(w))
        with pytest.raises(GraphError):
            out.backward()

    def test_unreached_params_get_zero_grad(self, rng):
        a = Tensor(rng.normal(size=2), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        backward(T.tsum(a), [a, b])
        np.testing.assert_array_equal(b.grad, 0.0)

    def test_fancy_index_accumulates(self):
        a = Tensor(np.arange(4.0), requires_grad=True)
        T.tsum(T.getitem(a, np.array([0, 0, 2]))).backward()
        np.testing.assert_array_equal(a.grad, [2.0, 0.0, 1.0, 0.0])

    @pytest.mark.parametrize("kind", LAYER_KINDS)
    def test_layer_gradients(self, kind):
        errors = check_layer_kind(kind, instances=3, seed=99)
        assert max(errors) < 1e-4

    def test_gradcheck_detects_wrong_gradient(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)

        def broken():
            # forward squares but backward claims the identity
            return T._make(x.data ** 2, (x,), lambda g: (g,))

        assert gradcheck(broken, [x], rng) > 1e-2


class TestAdam:
    def test_zero_gradient_fixed_point(self, rng):
        p = Tensor(rng.normal(size=3), requires_grad=True)
        before = p.data.copy()
        state = AdamState.for_params([p])
        for _ in range(3):
            adam_step([p], [np.zeros(3)], state)
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_hand_computed(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = AdamState.for_params([p], 0.001)
        adam_step([p], [np.array([0.5])], state)
        # m_hat = 0.5, v_hat = 0.25 -> step = lr * 0.5 / (0.5 + eps)
        expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8)
        assert p.data[0] == pytest.approx(expected, abs=1e-15)
        assert p.data[0] == pytest.approx(0.999, abs=1e-8)

    def test_scalar_descent(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = AdamState.for_params([p], 0.1)
        seen = [abs(p.data[0])]
        for _ in range(10):
            adam_step([p], [2 * p.data], state)
            seen.append(abs(p.data[0]))
        assert all(b < a for a, b in zip(seen, seen[1:]))

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ShapeError):
            adam_step([p], [np.zeros(3)], AdamState.for_params([p]))


class TestLoss:
    def test_perfect_fit(self):
        assert float(mse_l1_loss(Tensor(np.ones(4)), np.ones(4)).data) == 0.0

    def test_unit_residual(self):
        assert float(mse_l1_loss(Tensor(np.ones(4)), np.zeros(4)).data) == 1.0

    def test_l1_term(self):
        params = [Tensor(np.array([2.0, -3.0]), requires_grad=True)]
        loss = mse_l1_loss(Tensor(np.zeros(2)), np.zeros(2), params, 0.001)
        assert float(loss.data) == pytest.approx(0.005, abs=1e-15)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            mse_l1_loss(Tensor(np.zeros(1)), np.zeros(1), [], -1.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        tensors = {"a.weight": rng.normal(size=(3, 4)), "b": rng.normal(size=7)}
        checkpoint.save(tmp_path / "m.ckpt", tensors)
        back = checkpoint.load(tmp_path / "m.ckpt")
        assert set(back) == set(tensors)
        for k in tensors:
            assert back[k].tobytes() == tensors[k].tobytes()

    def test_corrupt_file_rejected(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"nope")
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load(tmp_path / "bad.ckpt")
