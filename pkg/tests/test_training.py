import copy
import math

import numpy as np
import pytest

from promil.bagdata import Bag, DatasetSplit, SyntheticSpec, generate_synthetic, split_dataset
from promil.bernstein import QuantileParam
from promil.network import NetArch, init_params
from promil.training import (
    NumericalError,
    TrainConfig,
    adam_update,
    bag_cost_and_grads,
    bag_step,
    cost_gradients,
    init_train_state,
    promil_cost,
    train,
)


def make_bag(instances, label, bag_id="b0"):
    return Bag(id=bag_id, instances=np.asarray(instances, dtype=np.float64), label=label)


def tiny_split(qstar=0.3, n=60, seed=0):
    spec = SyntheticSpec(n_bags=n, threshold_qstar=qstar, bag_size_mean=6,
                         bag_size_std=2, class_separation=4.0)
    bags = generate_synthetic(spec, seed)
    return split_dataset(bags, (0.7, 0.3, 0.0), seed)


class TestCost:
    def test_zero_cost_cases(self):
        assert promil_cost(1.0, 0.37, 1) == 0.0
        assert promil_cost(0.37, 1.0, 0) == 0.0

    def test_log_two(self):
        assert promil_cost(0.5, 0.8, 1) == pytest.approx(math.log(2), rel=1e-12)

    def test_nonnegative_with_clamped_args(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c_q = float(rng.uniform(1e-7, 1.0 + 1e-9))
            c_1mq = float(rng.uniform(1e-7, 1.0 + 1e-9))
            y = int(rng.integers(0, 2))
            assert promil_cost(c_q, c_1mq, y) >= 0.0

    def test_y_validation(self):
        with pytest.raises(ValueError):
            promil_cost(0.5, 0.5, 2)
        with pytest.raises(ValueError):
            cost_gradients(0.5, 0.5, 0.5)

    def test_gradients(self):
        assert cost_gradients(0.7, 0.2, 0)[0] == 0.0
        assert cost_gradients(0.5, 0.9, 1)[0] == pytest.approx(-2.0, rel=1e-14)
        rng = np.random.default_rng(1)
        h = 1e-7
        for _ in range(50):
            c_q = float(rng.uniform(0.05, 0.95))
            c_1mq = float(rng.uniform(0.05, 0.95))
            y = int(rng.integers(0, 2))
            d_cq, d_c1mq = cost_gradients(c_q, c_1mq, y)
            fd_cq = (promil_cost(c_q + h, c_1mq, y) - promil_cost(c_q - h, c_1mq, y)) / (2 * h)
            fd_c1 = (promil_cost(c_q, c_1mq + h, y) - promil_cost(c_q, c_1mq - h, y)) / (2 * h)
            assert d_cq == pytest.approx(fd_cq, rel=1e-6, abs=1e-9)
            assert d_c1mq == pytest.approx(fd_c1, rel=1e-6, abs=1e-9)


class TestAdam:
    def cfg(self, **kw):
        return TrainConfig(**kw)

    def test_zero_grad_no_decay_is_identity(self):
        cfg = self.cfg(weight_decay=0.0)
        p = np.array([1.0, -2.0])
        p2, _, _ = adam_update(p, np.zeros(2), (np.zeros(2), np.zeros(2)), cfg, t=1)
        np.testing.assert_array_equal(p2, [1.0, -2.0])

    def test_first_step_is_sign_scaled(self):
        # t=1: m_hat = g, v_hat = g^2, so the step is lr * g/(|g| + eps)
        cfg = self.cfg()
        g = np.array([0.37, -4.2])
        p = np.zeros(2)
        p2, _, _ = adam_update(p, g, (np.zeros(2), np.zeros(2)), cfg, t=1)
        expect = -cfg.learning_rate * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p2, expect, rtol=1e-9)

    def test_repeated_steps_move_against_gradient(self):
        cfg = self.cfg(weight_decay=0.0)
        p = np.array([0.5])
        m, v = np.zeros(1), np.zeros(1)
        prev = p.copy()
        for t in range(1, 6):
            p, m, v = adam_update(p, np.array([1.0]), (m, v), cfg, t)
            assert p[0] < prev[0]
            prev = p.copy()

    def test_scalar_param(self):
        cfg = self.cfg()
        p, m, v = adam_update(0.0, 2.0, (0.0, 0.0), cfg, t=1)
        assert p == pytest.approx(-cfg.learning_rate * 2.0 / (2.0 + 1e-8), rel=1e-9)


class TestConfigValidation:
    def test_bad_fields(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(patience=101, max_epochs=100)
        with pytest.raises(ValueError):
            TrainConfig(q_init=1.5)
        with pytest.raises(ValueError):
            TrainConfig(val_metric="f1")


class TestBagStep:
    def test_single_instance_gradient_is_bce(self):
        # n=0: both quantile levels return the lone prediction, so the
        # upstream on it is the BCE derivative -y/c + (1-y)/(1-c)
        cfg = TrainConfig(q_init=0.3, seed=0)
        net = init_params(NetArch(input_dim=2), seed=5)
        net.weights[0][:, 0] = [0.4, -0.3]
        bag = make_bag([[1.0, 2.0]], label=1)
        from promil.network import forward_bag
        c = forward_bag(net, bag.instances)[0][0]
        cost, grads, grad_raw = bag_cost_and_grads(net, QuantileParam.from_q(0.3), bag, cfg)
        assert cost == pytest.approx(-math.log(c), rel=1e-12)
        upstream = -1.0 / c
        expect_w = upstream * c * (1 - c) * bag.instances[0]
        np.testing.assert_allclose(grads.weights[0][:, 0], expect_w, rtol=1e-10)
        assert grad_raw == pytest.approx(0.0, abs=1e-12)

    def test_composed_gradient_finite_difference(self):
        rng = np.random.default_rng(77)
        cfg = TrainConfig(seed=0)
        checked = 0
        for trial in range(24):
            hidden = [(), (5,), (6, 3)][trial % 3]
            act = ("relu", "tanh")[trial % 2]
            arch = NetArch(input_dim=3, hidden_dims=hidden, activation=act)
            net = init_params(arch, seed=trial)
            for w in net.weights:
                w += rng.normal(size=w.shape) * 0.4
            q_param = QuantileParam.from_q(float(rng.uniform(0.1, 0.9)))
            head = ("promil", "promil", "max", "mean")[trial % 4]
            from promil.network import forward_bag as fb
            while True:
                bag = make_bag(rng.normal(size=(int(rng.integers(1, 9)), 3)),
                               label=int(rng.integers(0, 2)))
                preds = np.sort(fb(net, bag.instances)[0])
                # max head: keep away from argmax ties where the FD kinks
                if head != "max" or len(preds) == 1 or preds[-1] - preds[-2] > 1e-3:
                    break
            _, grads, grad_raw = bag_cost_and_grads(net, q_param, bag, cfg, head=head)

            def cost_at():
                return bag_cost_and_grads(net, q_param, bag, cfg, head=head)[0]

            h = 1e-6
            for arrays, garrays in ((net.weights, grads.weights),
                                    (net.biases, grads.biases)):
                for arr, garr in zip(arrays, garrays):
                    flat, gflat = arr.ravel(), np.asarray(garr).ravel()
                    for idx in range(flat.size):
                        orig = flat[idx]
                        flat[idx] = orig + h
                        up = cost_at()
                        flat[idx] = orig - h
                        down = cost_at()
                        flat[idx] = orig
                        fd = (up - down) / (2 * h)
                        scale = max(abs(fd), abs(gflat[idx]), 1e-4)
                        assert abs(gflat[idx] - fd) / scale < 1e-4, \
                            f"trial {trial} head={head}"
            if head == "promil":
                raw = q_param.raw
                fd = (bag_cost_and_grads(net, QuantileParam(raw + h), bag, cfg)[0]
                      - bag_cost_and_grads(net, QuantileParam(raw - h), bag, cfg)[0]) / (2 * h)
                scale = max(abs(fd), abs(grad_raw), 1e-4)
                assert abs(grad_raw - fd) / scale < 1e-4, f"trial {trial}: raw q"
            checked += 1
        assert checked >= 20

    def test_sort_routing_is_permutation_invariant(self):
        rng = np.random.default_rng(8)
        cfg = TrainConfig(seed=0)
        net = init_params(NetArch(input_dim=2, hidden_dims=(4,)), seed=1)
        for w in net.weights:
            w += rng.normal(size=w.shape) * 0.5
        instances = rng.normal(size=(7, 2))
        q_param = QuantileParam.from_q(0.35)
        cost0, grads0, graw0 = bag_cost_and_grads(
            net, q_param, make_bag(instances, 1), cfg)
        perm = rng.permutation(7)
        cost1, grads1, graw1 = bag_cost_and_grads(
            net, q_param, make_bag(instances[perm], 1), cfg)
        assert cost1 == pytest.approx(cost0, rel=1e-12)
        assert graw1 == pytest.approx(graw0, rel=1e-12)
        for g0, g1 in zip(grads0.weights, grads1.weights):
            np.testing.assert_allclose(g1, g0, rtol=1e-9)

    def test_saturated_positive_bag_barely_moves(self):
        cfg = TrainConfig(q_init=0.3, seed=0, weight_decay=0.0)
        state = init_train_state(NetArch(input_dim=1), cfg)
        state.net.weights[0][0, 0] = 60.0   # predictions pinned at ~1
        before = state.net.weights[0].copy()
        bag = make_bag([[1.0], [1.0], [1.0]], label=1)
        state, cost = bag_step(state, bag, cfg)
        assert cost == pytest.approx(0.0, abs=1e-9)
        assert abs(state.net.weights[0][0, 0] - before[0, 0]) < 2 * cfg.learning_rate

    def test_q_stays_interior(self):
        cfg = TrainConfig(q_init=0.5, seed=0, learning_rate=0.5)
        state = init_train_state(NetArch(input_dim=1), cfg)
        rng = np.random.default_rng(0)
        for i in range(200):
            bag = make_bag(rng.normal(size=(4, 1)), label=int(rng.integers(0, 2)))
            state, _ = bag_step(state, bag, cfg)
            assert 0.0 < state.q.q < 1.0


class TestTrainLoop:
    def test_patience_zero_returns_first_epoch(self):
        split = tiny_split()
        cfg = TrainConfig(seed=0, patience=0, max_epochs=10, q_init=0.4)
        model = train(init_train_state(NetArch(input_dim=2), cfg), split, cfg)
        assert model.epochs_run == 1
        assert model.best_epoch == 1
        assert len(model.history) == 1

    def test_deterministic(self):
        split = tiny_split()
        out = []
        for _ in range(2):
            cfg = TrainConfig(seed=3, max_epochs=5, patience=5, q_init="random")
            model = train(init_train_state(NetArch(input_dim=2), cfg), split, cfg)
            out.append(model)
        a, b = out
        assert a.q.raw == b.q.raw
        for wa, wb in zip(a.net.weights, b.net.weights):
            np.testing.assert_array_equal(wa, wb)
        assert [h.train_cost for h in a.history] == [h.train_cost for h in b.history]

    def test_seeds_change_the_run(self):
        split = tiny_split()
        cfg_a = TrainConfig(seed=3, max_epochs=3, patience=3)
        cfg_b = TrainConfig(seed=4, max_epochs=3, patience=3)
        a = train(init_train_state(NetArch(input_dim=2), cfg_a), split, cfg_a)
        b = train(init_train_state(NetArch(input_dim=2), cfg_b), split, cfg_b)
        assert a.q.raw != b.q.raw

    def test_best_snapshot_is_kept(self):
        split = tiny_split()
        cfg = TrainConfig(seed=1, max_epochs=8, patience=8, val_metric="loss")
        model = train(init_train_state(NetArch(input_dim=2), cfg), split, cfg)
        best = min(h.val_loss for h in model.history)
        assert model.best_value == pytest.approx(best)
        assert model.history[model.best_epoch - 1].val_loss == pytest.approx(best)

    def test_empty_split_rejected(self):
        split = tiny_split()
        cfg = TrainConfig(seed=0)
        state = init_train_state(NetArch(input_dim=2), cfg)
        with pytest.raises(ValueError):
            train(state, DatasetSplit(train=split.train, validation=[]), cfg)

    def test_nan_features_raise_numerical_error(self):
        split = tiny_split()
        bad = copy.deepcopy(split)
        bad.train[0].instances[0, 0] = np.nan
        cfg = TrainConfig(seed=0, max_epochs=2, patience=2)
        state = init_train_state(NetArch(input_dim=2), cfg)
        with pytest.raises(NumericalError):
            train(state, bad, cfg)

    def test_baseline_heads_train(self):
        split = tiny_split()
        for head in ("max", "mean"):
            cfg = TrainConfig(seed=2, max_epochs=4, patience=4, q_init=0.3)
            model = train(init_train_state(NetArch(input_dim=2), cfg), split, cfg, head=head)
            assert model.head == head
            # baselines never touch the quantile level
            assert model.learned_q == pytest.approx(0.3, rel=1e-12)
