import math

import numpy as np
import pytest

from delayfeed.core import ContractViolation
from delayfeed.regressor import (
    FeatureVector,
    PoissonRegressor,
    RegressorConfig,
    adagrad_update,
    hash_token,
)

FIELDS = ("campaign", "segment")


def small_config(**kw):
    defaults = dict(
        categorical_fields=FIELDS,
        numeric_features=("aux",),
        embedding_dim=3,
        hash_buckets_per_field=16,
        hidden_layer_sizes=(5,),
        learning_rate=0.05,
        rng_seed=7,
    )
    defaults.update(kw)
    return RegressorConfig(**defaults)


def fv(campaign="c1", segment="s1", aux=None):
    numeric = [] if aux is None else [("aux", aux)]
    return FeatureVector(
        categorical=[("campaign", campaign), ("segment", segment)],
        numeric=numeric,
    )


def zero_weights(model):
    for f in model.embeddings:
        model.embeddings[f][:] = 0.0
    for w in model.weights:
        w[:] = 0.0
    for b in model.biases:
        b[:] = 0.0
    model.biases[-1][:] = model.config.output_bias_init


def all_params(model):
    return (
        [model.embeddings[f] for f in model.config.categorical_fields]
        + model.weights
        + model.biases
    )


class TestInit:
    def test_same_seed_bit_identical(self):
        a = PoissonRegressor(small_config())
        b = PoissonRegressor(small_config())
        for pa, pb in zip(all_params(a), all_params(b)):
            assert np.array_equal(pa, pb)

    def test_different_seed_differs(self):
        a = PoissonRegressor(small_config(rng_seed=1))
        b = PoissonRegressor(small_config(rng_seed=2))
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_bias_only_forward(self):
        model = PoissonRegressor(small_config(output_bias_init=math.log(2)))
        zero_weights(model)
        assert model.forward(fv()) == pytest.approx(2.0)

    def test_accumulators_zero_at_init(self):
        model = PoissonRegressor(small_config())
        for g2 in model.weight_g2 + model.bias_g2 + list(model.embedding_g2.values()):
            assert np.all(g2 == 0)

    def test_output_bias_applied(self):
        model = PoissonRegressor(small_config(output_bias_init=-1.5))
        assert model.biases[-1][0] == -1.5
        assert np.all(model.biases[0] == 0)


class TestForward:
    def test_rate_positive(self):
        model = PoissonRegressor(small_config())
        for c in ("a", "b", "weird token"):
            assert model.forward(fv(campaign=c, aux=3.0)) > 0

    def test_deterministic(self):
        model = PoissonRegressor(small_config())
        assert model.forward(fv(aux=2.0)) == model.forward(fv(aux=2.0))

    def test_zeroed_network_constant(self):
        model = PoissonRegressor(small_config(output_bias_init=0.3))
        zero_weights(model)
        for c in ("x", "y"):
            assert model.forward(fv(campaign=c, aux=5.0)) == pytest.approx(
                math.exp(0.3)
            )

    def test_unknown_field_rejected(self):
        model = PoissonRegressor(small_config())
        with pytest.raises(ContractViolation):
            model.forward(FeatureVector(categorical=[("nope", "x")]))
        with pytest.raises(ContractViolation):
            model.forward(FeatureVector(categorical=[], numeric=[("nope", 1.0)]))

    def test_hash_stability(self):
        assert hash_token("f", "tok", 4096) == hash_token("f", "tok", 4096)
        assert hash_token("f", "tok", 4096) < 4096

    def test_two_output_signed_decomposition(self):
        model = PoissonRegressor(small_config(two_output_mode=True))
        plus, minus = model.forward(fv(aux=1.0))
        assert plus > 0 and minus > 0
        assert model.predict(fv(aux=1.0)) == plus - minus


class TestTrainStep:
    def test_first_adagrad_step_scalar(self):
        # w=0, g=1, lr=0.1, eps=0 -> w = -0.1
        w = np.array([0.0])
        g2 = np.array([0.0])
        adagrad_update(w, g2, np.array([1.0]), lr=0.1, eps=0.0)
        assert w[0] == pytest.approx(-0.1)
        assert g2[0] == 1.0

    def test_bias_only_convergence(self):
        # no features, no hidden layers: the model is just the output bias
        cfg = RegressorConfig(
            categorical_fields=(),
            numeric_features=(),
            hidden_layer_sizes=(),
            learning_rate=0.1,
            output_bias_init=0.0,
            rng_seed=0,
        )
        model = PoissonRegressor(cfg)
        empty = FeatureVector(categorical=[])
        rate = None
        for step in range(5000):
            model.train_step(empty, 3.0)
            rate = model.forward(empty)
            if abs(rate - 3.0) < 0.01:
                break
        assert abs(rate - 3.0) < 0.01, f"no convergence, final rate {rate}"

    def test_returns_pre_update_loss(self):
        model = PoissonRegressor(small_config(output_bias_init=0.0))
        zero_weights(model)
        loss = model.train_step(fv(aux=0.0), 2.0)
        # rate was exactly 1.0 before the step
        assert loss == pytest.approx(1.0 - 2.0 * math.log(1.0))

    def test_negative_label_rejected_single_output(self):
        model = PoissonRegressor(small_config())
        with pytest.raises(ContractViolation):
            model.train_step(fv(), -1.0)

    def test_two_output_label_pair(self):
        model = PoissonRegressor(small_config(two_output_mode=True))
        loss = model.train_step(fv(aux=1.0), (2.0, 0.5))
        assert math.isfinite(loss)
        with pytest.raises(ContractViolation):
            model.train_step(fv(), (1.0, -0.5))

    def test_gradients_match_finite_differences(self):
        model = PoissonRegressor(small_config())
        features = fv(campaign="c9", segment="s2", aux=2.5)
        label = 3.0
        loss, w_grads, b_grads, emb_grads = model.gradients(features, label)

        def numeric_grad(arr, idx):
            h = 1e-6
            orig = arr[idx]
            arr[idx] = orig + h
            up, _, _, _ = model.gradients(features, label)
            arr[idx] = orig - h
            dn, _, _, _ = model.gradients(features, label)
            arr[idx] = orig
            return (up - dn) / (2 * h)

        rng = np.random.default_rng(0)
        for layer, (wg, bg) in enumerate(zip(w_grads, b_grads)):
            w = model.weights[layer]
            for _ in range(10):
                idx = (rng.integers(w.shape[0]), rng.integers(w.shape[1]))
                fd = numeric_grad(w, idx)
                assert fd == pytest.approx(wg[idx], rel=1e-3, abs=1e-8)
            idx = (rng.integers(model.biases[layer].shape[0]),)
            fd = numeric_grad(model.biases[layer], idx)
            assert fd == pytest.approx(bg[idx[0]], rel=1e-3, abs=1e-8)
        for (field_id, row), g in emb_grads.items():
            table = model.embeddings[field_id]
            for col in range(g.shape[0]):
                fd = numeric_grad(table, (row, col))
                assert fd == pytest.approx(g[col], rel=1e-3, abs=1e-8)


class TestInvariants:
    def test_sparse_update_locality(self):
        model = PoissonRegressor(small_config())
        touched = {
            (f, hash_token(f, t, model.config.hash_buckets_per_field))
            for f, t in fv(aux=1.0).categorical
        }
        before = {f: model.embeddings[f].copy() for f in FIELDS}
        model.train_step(fv(aux=1.0), 2.0)
        for f in FIELDS:
            diff_rows = np.where(
                np.any(model.embeddings[f] != before[f], axis=1)
            )[0]
            assert set(diff_rows) <= {r for ff, r in touched if ff == f}

    def test_accumulators_never_decrease_fuzz(self):
        model = PoissonRegressor(small_config())
        rng = np.random.default_rng(3)
        prev = [g2.copy() for g2 in model.weight_g2 + model.bias_g2]
        prev_emb = {f: g2.copy() for f, g2 in model.embedding_g2.items()}
        for step in range(10_000):
            features = fv(
                campaign=f"c{rng.integers(40)}",
                segment=f"s{rng.integers(5)}",
                aux=float(rng.exponential(1.0)),
            )
            model.train_step(features, float(rng.poisson(0.7)))
            if step % 500 == 0:
                cur = model.weight_g2 + model.bias_g2
                for p, c in zip(prev, cur):
                    assert np.all(c >= p - 1e-15)
                prev = [g2.copy() for g2 in cur]
                for f, g2 in model.embedding_g2.items():
                    assert np.all(g2 >= prev_emb[f] - 1e-15)
                    prev_emb[f] = g2.copy()
        for p in model.weights + model.biases:
            assert np.all(np.isfinite(p))

    def test_zero_learning_rate_is_noop(self):
        model = PoissonRegressor(small_config(learning_rate=0.0))
        before_out = model.forward(fv(aux=1.0))
        before = [p.copy() for p in all_params(model)]
        model.train_step(fv(aux=1.0), 5.0)
        for p, b in zip(all_params(model), before):
            assert np.array_equal(p, b)
        assert model.forward(fv(aux=1.0)) == before_out


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = PoissonRegressor(small_config())
        for _ in range(20):
            model.train_step(fv(aux=1.0), 2.0)
        path = tmp_path / "model.ckpt"
        model.save(path)
        loaded = PoissonRegressor.load(path)
        assert loaded.config == model.config
        # float32 storage: compare at storage precision
        for a, b in zip(model._param_arrays(), loaded._param_arrays()):
            assert np.allclose(a, b, atol=1e-6)
        got = loaded.forward(fv(aux=1.0))
        want = model.forward(fv(aux=1.0))
        assert got == pytest.approx(want, rel=1e-5)

    def test_magic_header(self, tmp_path):
        model = PoissonRegressor(small_config())
        path = tmp_path / "model.ckpt"
        model.save(path)
        with open(path, "rb") as fh:
            assert fh.read(8) == b"DLYFEED1"

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTDLYFD" + b"\x00" * 32)
        with pytest.raises(ValueError):
            PoissonRegressor.load(path)
