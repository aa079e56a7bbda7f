import numpy as np
import pytest

import qembed.optimizer as optimizer
from qembed.data import gen_synthetic
from qembed.network import Model, model_forward
from qembed.numkit import RandomSource
from qembed.optimizer import (
    SMALL_CHECK_DIMS,
    TrainingConfig,
    TrainState,
    anneal_mix,
    backward_full,
    gradient_check,
    lr_at,
    sgd_step,
    train,
    train_baseline,
)


class TestGradientCheck:
    def test_all_groups_pass(self):
        report = gradient_check(tol=1e-4)
        assert report["pass"], report
        for group in ("backbone", "additive", "contrastive", "decoder", "classifier"):
            assert report[group] < 1e-4

    def test_negative_control_sign_flip(self, monkeypatch):
        # corrupting one analytic gradient must trip the check
        real = backward_full

        def corrupted(model, record, y, lam):
            grads = real(model, record, y, lam)
            dw, db = grads["decoder"][0]
            grads["decoder"][0] = (-dw, db)
            return grads

        monkeypatch.setattr(optimizer, "backward_full", corrupted)
        report = gradient_check(tol=1e-4)
        assert not report["pass"]
        assert report["decoder"] > 1e-4


class TestAnnealMix:
    def grads(self, seed):
        src = RandomSource(seed)
        return [(src.gaussian((2, 3)), src.gaussian((2,))) for _ in range(2)]

    def test_endpoints(self):
        a, b = self.grads(0), self.grads(1)
        for (dw, db), (dw_a, db_a) in zip(anneal_mix(a, b, 0.0), a):
            assert np.allclose(dw, dw_a) and np.allclose(db, db_a)
        for (dw, db), (dw_b, db_b) in zip(anneal_mix(a, b, 1.0), b):
            assert np.allclose(dw, dw_b) and np.allclose(db, db_b)

    def test_midpoint_linear(self):
        a, b = self.grads(0), self.grads(1)
        for (dw, db), (dw_a, db_a), (dw_b, db_b) in zip(anneal_mix(a, b, 0.25), a, b):
            assert np.allclose(dw, 0.75 * dw_a + 0.25 * dw_b)
            assert np.allclose(db, 0.75 * db_a + 0.25 * db_b)

    def test_rejects_bad_rho(self):
        a = self.grads(0)
        with pytest.raises(ValueError):
            anneal_mix(a, a, -0.1)
        with pytest.raises(ValueError):
            anneal_mix(a, a, 1.5)

    def test_rejects_shape_mismatch(self):
        a, b = self.grads(0), self.grads(1)
        dw, db = b[0]
        b[0] = (dw.T, db)
        with pytest.raises(ValueError):
            anneal_mix(a, b, 0.5)


class TestLrSchedule:
    def test_decade_drops(self):
        state = TrainState(base_lr=0.01)
        for epoch, expected in ((0, 0.01), (29, 0.01), (30, 0.001),
                                (59, 0.001), (60, 0.0001), (89, 0.0001)):
            state.epoch = epoch
            assert abs(lr_at(state) - expected) < 1e-15


class TestSgdStep:
    def make_model(self):
        src = RandomSource(0)
        return Model(SMALL_CHECK_DIMS, src)

    def zero_grads(self, model, fill=0.0):
        grads = {}
        for group in ("backbone", "additive", "contrastive", "decoder", "classifier"):
            grads[group] = [
                (np.full_like(layer.weights, fill), np.full_like(layer.bias, fill))
                for layer in model.group_layers(group)
            ]
        return grads

    def test_zero_gradient_is_identity(self):
        model = self.make_model()
        before = [l.weights.copy() for _, _, l in model.parameters()]
        sgd_step(model, self.zero_grads(model), 0.5)
        for b, (_, _, layer) in zip(before, model.parameters()):
            assert np.array_equal(b, layer.weights)

    def test_unit_gradient_moves_by_lr(self):
        model = self.make_model()
        before = [l.weights.copy() for _, _, l in model.parameters()]
        sgd_step(model, self.zero_grads(model, fill=1.0), 0.1)
        for b, (_, _, layer) in zip(before, model.parameters()):
            assert np.allclose(b - 0.1, layer.weights)

    def test_rejects_nonpositive_lr(self):
        model = self.make_model()
        with pytest.raises(ValueError):
            sgd_step(model, self.zero_grads(model), 0.0)

    def test_aborts_on_nonfinite(self):
        model = self.make_model()
        grads = self.zero_grads(model)
        grads["decoder"][0][0][0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="decoder"):
            sgd_step(model, grads, 0.1)


def tiny_config(**overrides):
    base = dict(epochs=2, batch_size=50, hidden_backbone=(8,),
                hidden_quality=4, hidden_latent=4, hidden_decoder=4,
                d_quality=2, seed=0)
    base.update(overrides)
    return TrainingConfig(**base)


class TestTrainLoop:
    def test_step_bookkeeping(self):
        ds = gen_synthetic(2, 3, per_class=50, spread=0.5, seed=0)  # 100 rows
        _, log = train(ds, tiny_config(epochs=3))
        # 100 items / batch 50 -> 2 steps per epoch
        assert len(log) == 6
        assert [r["step"] for r in log] == list(range(1, 7))
        assert [r["epoch"] for r in log] == [0, 0, 1, 1, 2, 2]
        for row in log:
            assert np.isfinite(row["total"])
            assert abs(row["total"] - (row["recon"] + row["kl_z"] + row["kl_s"])) < 1e-9

    def test_partial_last_batch(self):
        ds = gen_synthetic(2, 3, per_class=35, spread=0.5, seed=1)  # 70 rows
        _, log = train(ds, tiny_config(epochs=1))
        assert len(log) == 2  # batches of 50 and 20

    def test_deterministic(self):
        ds = gen_synthetic(2, 3, per_class=30, spread=0.5, seed=2)
        m1, log1 = train(ds, tiny_config(seed=5))
        m2, log2 = train(ds, tiny_config(seed=5))
        for (_, _, l1), (_, _, l2) in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(l1.weights, l2.weights)
            assert np.array_equal(l1.bias, l2.bias)
        assert log1 == log2

    def test_seed_changes_result(self):
        ds = gen_synthetic(2, 3, per_class=30, spread=0.5, seed=2)
        m1, _ = train(ds, tiny_config(seed=5))
        m2, _ = train(ds, tiny_config(seed=6))
        assert any(not np.array_equal(l1.weights, l2.weights)
                   for (_, _, l1), (_, _, l2) in zip(m1.parameters(), m2.parameters()))

    def test_rejects_empty_dataset(self):
        ds = gen_synthetic(2, 3, per_class=10, spread=0.5, seed=0)
        from qembed.data import Dataset
        empty = Dataset(features=ds.features[:0], noisy_labels=ds.noisy_labels[:0])
        with pytest.raises(ValueError):
            train(empty, tiny_config())

    def test_learns_clean_separable(self):
        ds = gen_synthetic(3, 4, per_class=60, spread=0.3, seed=7)
        model, _ = train(ds, tiny_config(epochs=40, base_lr=0.01,
                                         hidden_backbone=(16,), seed=1))
        src = RandomSource(123)
        rec = model_forward(model, ds.features, ds.noisy_labels.astype(float),
                            tau=0.5, src=src)
        pred = (rec.p_z > 0.5).astype(int)
        acc = (pred == ds.noisy_labels).mean()
        assert acc > 0.95


class TestBaseline:
    def test_deterministic(self):
        ds = gen_synthetic(2, 3, per_class=30, spread=0.5, seed=3)
        n1, log1 = train_baseline(ds, tiny_config(seed=4))
        n2, log2 = train_baseline(ds, tiny_config(seed=4))
        for l1, l2 in zip(n1.layers, n2.layers):
            assert np.array_equal(l1.weights, l2.weights)
        assert log1 == log2

    def test_learns_clean_separable(self):
        ds = gen_synthetic(3, 4, per_class=60, spread=0.3, seed=8)
        net, log = train_baseline(ds, tiny_config(epochs=30, hidden_backbone=(16,)))
        pred = (net.forward(ds.features) > 0.5).astype(int)
        acc = (pred == ds.noisy_labels).mean()
        assert acc > 0.95
        assert log[-1]["total"] < log[0]["total"]


class TestTrainingConfig:
    def test_round_trip(self):
        cfg = tiny_config(lam=0.7, base_lr=0.005)
        again = TrainingConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert isinstance(again.hidden_backbone, tuple)

    def test_dims(self):
        dims = tiny_config().dims(10, 4)
        assert dims.n_features == 10 and dims.n_classes == 4
        assert dims.d_quality == 2
