import math

import numpy as np
import pytest

from sfdm import ndtensor as nt
from sfdm.classifier import ClassifierConfig, classifier_forward, init_classifier, predict, predict_logits
from sfdm.denoiser import DenoiserConfig, denoiser_forward, init_denoiser, param_shapes


def as64(params):
    return {k: nt.Tensor(v.data, requires_grad=True, dtype=np.float64) for k, v in params.items()}


class TestDenoiser:
    def test_seeded_init(self):
        cfg = DenoiserConfig(window=32, channels=(4, 8, 8), step_dim=8)
        a = init_denoiser(cfg, np.random.default_rng(3))
        b = init_denoiser(cfg, np.random.default_rng(3))
        assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)

    def test_param_count_closed_form(self):
        cfg = DenoiserConfig(window=200, cond_channels=4, channels=(32, 64, 128), step_dim=64)
        k, d, f = 9, 64, 4
        want = d * d + d
        c_in = 1
        for c in (32, 64, 128):
            want += (c * c_in * k + c) + (c * d + c) + (c * f * k + c)
            c_in = 2 * c
        want += (256 * 64 * k + 64) + (64 * 32 * k + 32) + (32 + 1)
        got = sum(v.data.size for v in init_denoiser(cfg, np.random.default_rng(0)).values())
        assert got == want == 377_857

    def test_init_bound(self):
        cfg = DenoiserConfig(window=32, channels=(4, 8, 8), step_dim=8)
        params = init_denoiser(cfg, np.random.default_rng(1))
        for name, p in params.items():
            if name.endswith(".b"):
                assert not p.data.any()
                continue
            shape = p.shape
            fan_in = shape[1] if len(shape) == 2 else (shape[0] * shape[2] if "deconv" in name else shape[1] * shape[2])
            assert np.abs(p.data).max() <= 1 / math.sqrt(fan_in)

    def test_shape_contract(self):
        cfg = DenoiserConfig(window=32, channels=(4, 8, 8), step_dim=8)
        p = init_denoiser(cfg, np.random.default_rng(0))
        out = denoiser_forward(p, cfg, np.zeros((3, 1, 32)), np.zeros((3, 4, 32)), [1, 2, 3])
        assert out.shape == (3, 1, 32)

    def test_zero_weights_zero_output(self):
        cfg = DenoiserConfig(window=16, channels=(2, 2, 2), step_dim=4)
        p = {k: nt.Tensor(np.zeros(s)) for k, s in param_shapes(cfg).items()}
        rng = np.random.default_rng(0)
        out = denoiser_forward(p, cfg, rng.normal(size=(2, 1, 16)), rng.normal(size=(2, 4, 16)), [3, 9])
        assert not out.data.any()

    def test_stage_named_errors(self):
        cfg = DenoiserConfig(window=16, channels=(2, 2, 2), step_dim=4)
        p = init_denoiser(cfg, np.random.default_rng(0))
        with pytest.raises(nt.ShapeError, match="conditioner"):
            denoiser_forward(p, cfg, np.zeros((1, 1, 16)), np.zeros((1, 3, 16)), [1])
        with pytest.raises(nt.ShapeError, match="input"):
            denoiser_forward(p, cfg, np.zeros((1, 1, 15)), np.zeros((1, 4, 16)), [1])

    @pytest.mark.parametrize("bad", [dict(window=15), dict(window=16, kernel=8), dict(window=16, channels=(2, 2))])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            DenoiserConfig(**bad)

    def test_gradcheck(self):
        cfg = DenoiserConfig(window=16, channels=(2, 3, 2), step_dim=4, kernel=3)
        params = as64(init_denoiser(cfg, np.random.default_rng(0)))
        rng = np.random.default_rng(1)
        # non-zero biases move relu kinks away from exact zeros
        for k, v in params.items():
            if k.endswith(".b"):
                v.data[...] = rng.normal(scale=0.1, size=v.shape)
        noisy = nt.Tensor(rng.normal(size=(2, 1, 16)), dtype=np.float64)
        cond = nt.Tensor(rng.normal(size=(2, 4, 16)), dtype=np.float64)
        target = nt.Tensor(rng.normal(size=(2, 1, 16)) * 3, dtype=np.float64)

        def loss():
            return nt.mae(denoiser_forward(params, cfg, noisy, cond, [4, 17]), target)

        errs = nt.gradcheck(loss, list(params.values()), h=1e-6)
        assert max(errs) < 1e-3, dict(zip(params, errs))

    def test_deterministic(self):
        cfg = DenoiserConfig(window=32, channels=(4, 8, 8), step_dim=8)
        p = init_denoiser(cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, 1, 32))
        c = np.random.default_rng(2).normal(size=(2, 4, 32))
        a = denoiser_forward(p, cfg, x, c, [1, 50]).data
        b = denoiser_forward(p, cfg, x, c, [1, 50]).data
        assert a.tobytes() == b.tobytes()


class TestClassifier:
    def test_flatten_sizes(self):
        assert ClassifierConfig(window=200, n_classes=3).flatten_size() == 64 * 11
        assert ClassifierConfig(window=400, n_classes=10).flatten_size() == 64 * 23
        with pytest.raises(ValueError):
            ClassifierConfig(window=20, n_classes=3)

    def test_shape_contract(self):
        cfg = ClassifierConfig(window=64, n_classes=3)
        p = init_classifier(cfg, np.random.default_rng(0))
        assert classifier_forward(p, cfg, np.zeros((5, 1, 64))).shape == (5, 3)

    def test_zero_weights_uniform(self):
        cfg = ClassifierConfig(window=64, n_classes=4)
        p = {k: nt.Tensor(np.zeros(v.shape)) for k, v in init_classifier(cfg, np.random.default_rng(0)).items()}
        logits = classifier_forward(p, cfg, np.random.default_rng(1).normal(size=(3, 1, 64)))
        loss = nt.softmax_xent(logits, [0, 1, 3])
        assert float(loss.data) == pytest.approx(math.log(4), rel=1e-6)

    def test_gradcheck(self):
        cfg = ClassifierConfig(window=64, n_classes=3, channels=(2, 3, 2), fc=(6, 5, 4, 4, 3))
        params = as64(init_classifier(cfg, np.random.default_rng(0)))
        rng = np.random.default_rng(1)
        for k, v in params.items():
            if k.endswith(".b"):
                v.data[...] = rng.normal(scale=0.1, size=v.shape)
        x = nt.Tensor(rng.normal(size=(3, 1, 64)), dtype=np.float64)

        def loss():
            return nt.softmax_xent(classifier_forward(params, cfg, x), [0, 2, 1])

        errs = nt.gradcheck(loss, list(params.values()), h=1e-6)
        assert max(errs) < 1e-3, dict(zip(params, errs))

    def test_batch_independent(self):
        cfg = ClassifierConfig(window=64, n_classes=3)
        p = init_classifier(cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 1, 64)).astype(np.float32)
        full = classifier_forward(p, cfg, x).data
        for i in range(4):
            np.testing.assert_allclose(classifier_forward(p, cfg, x[i : i + 1]).data[0], full[i], rtol=1e-5, atol=1e-6)


class TestPredict:
    def test_argmax(self):
        assert predict_logits([[0, 1, 0]]).tolist() == [1]

    def test_tie_goes_low(self):
        assert predict_logits([[1, 1]]).tolist() == [0]

    def test_monotone_invariance(self):
        logits = np.random.default_rng(0).normal(size=(20, 5))
        base = predict_logits(logits)
        assert predict_logits(logits + 7.5).tolist() == base.tolist()
        assert predict_logits(np.exp(logits)).tolist() == base.tolist()
        assert predict_logits(3 * logits - 1).tolist() == base.tolist()

    def test_predict_batches(self):
        cfg = ClassifierConfig(window=64, n_classes=3)
        p = init_classifier(cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(7, 64))
        assert predict(p, cfg, x, batch=3).tolist() == predict(p, cfg, x).tolist()
