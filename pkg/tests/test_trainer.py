import dataclasses

import numpy as np
import pytest

from sfdm import ndtensor as nt
from sfdm.classifier import ClassifierConfig
from sfdm.denoiser import DenoiserConfig
from sfdm.diffusion import linear_beta_schedule
from sfdm.signal_data import SplitSpec, SyntheticCorpusSpec, make_synthetic_corpus, segment_windows, subject_split
from sfdm.trainer import (
    LeakageError,
    TrainConfig,
    _fit,
    finetune_classifier,
    init_classifier,
    pretrain_classifier,
    rng_stream,
    train_baseline,
    train_diffusion,
)

W = 48
DM = DenoiserConfig(window=W, channels=(4, 4, 4), step_dim=8)
CLF = ClassifierConfig(window=W, n_classes=3, channels=(4, 4, 4), fc=(8, 8, 8, 8, 8))
SCHED = linear_beta_schedule()


@pytest.fixture(scope="module")
def splits():
    spec = SyntheticCorpusSpec(n_subjects=3, windows_per_class_per_subject=3, window=W, sample_rate=10)
    windows = [w for rec in make_synthetic_corpus(spec) for w in segment_windows(rec, W)]
    return subject_split(windows, SplitSpec(["S01"], ["S02"], ["S03"]), np.random.default_rng(0))


def cfg(**kw):
    base = dict(batch_size=4, max_epochs=3, patience=2, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.lr, c.max_epochs, c.patience) == (128, 2e-4, 200, 20)

    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(patience=0), dict(max_epochs=5, patience=5),
                                    dict(cond_mode="labels"), dict(gen_mode="ancestral")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_zero_epochs_allowed(self):
        assert TrainConfig(max_epochs=0, patience=20).max_epochs == 0


class TestEarlyStopping:
    def test_stub_metric_stops_after_patience(self, splits):
        script = [5.0, 4.0, 4.0, 4.0, 3.0, 2.0]
        _, rec = train_diffusion(splits.train, cfg(max_epochs=6, patience=2), model_config=DM, schedule=SCHED,
                                 validate=lambda e: script[e])
        # a tie is not an improvement; epoch 3 is two epochs past the best at 1
        assert rec.best_epoch == 1
        assert rec.stop_epoch == 3
        assert len(rec.epochs) == 4

    def test_runs_to_budget_while_improving(self, splits):
        _, rec = train_diffusion(splits.train, cfg(max_epochs=4, patience=2), model_config=DM, schedule=SCHED,
                                 validate=lambda e: 10.0 - e)
        assert rec.best_epoch == rec.stop_epoch == 3

    def test_best_parameters_restored(self):
        w = nt.Tensor(np.zeros(2), requires_grad=True)

        def train_epoch(epoch):
            w.data[...] = epoch
            return 0.0

        rec = _fit({"w": w}, cfg(max_epochs=4, patience=3), train_epoch, lambda e: [3.0, 1.0, 2.0, 2.5][e],
                   higher_is_better=False)
        assert rec.best_epoch == 1 and rec.stop_epoch == 3
        assert w.data.tolist() == [1.0, 1.0]

    def test_zero_epochs_returns_init(self, splits):
        model, rec = train_diffusion(splits.train, cfg(max_epochs=0), model_config=DM, schedule=SCHED)
        assert rec.epochs == []
        again, _ = train_diffusion(splits.train, cfg(max_epochs=0), model_config=DM, schedule=SCHED)
        assert all(model.params[k].data.tobytes() == again.params[k].data.tobytes() for k in model.params)


class TestDiffusionTraining:
    def test_deterministic(self, splits):
        a, ra = train_diffusion(splits.train, cfg(), model_config=DM, schedule=SCHED, val_windows=splits.val)
        b, rb = train_diffusion(splits.train, cfg(), model_config=DM, schedule=SCHED, val_windows=splits.val)
        assert ra.train_losses == rb.train_losses
        assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)

    def test_seed_changes_result(self, splits):
        a, ra = train_diffusion(splits.train, cfg(seed=1), model_config=DM, schedule=SCHED)
        b, rb = train_diffusion(splits.train, cfg(seed=2), model_config=DM, schedule=SCHED)
        assert ra.train_losses != rb.train_losses

    def test_loss_decreases(self, splits):
        _, rec = train_diffusion(splits.train, cfg(max_epochs=8, patience=7, batch_size=2, lr=1e-2),
                                 model_config=DM, schedule=SCHED)
        assert rec.train_losses[-1] < rec.train_losses[0]

    def test_onehot_mode(self, splits):
        dm_cfg = dataclasses.replace(DM, cond_channels=3)
        model, _ = train_diffusion(splits.train, cfg(cond_mode="class-onehot"), model_config=dm_cfg,
                                   schedule=SCHED, n_classes=3)
        assert model.mode == "class-onehot"
        assert model.params["block1.cond.w"].shape[1] == 3

    def test_records_schedule(self, splits):
        model, _ = train_diffusion(splits.train, cfg(), model_config=DM, schedule=SCHED, n_classes=3)
        assert model.extra == {"T": 50, "beta_min": 1e-4, "beta_max": 0.05, "cumulative": False, "n_classes": 3}


class TestLeakage:
    def test_val_window_rejected(self, splits):
        with pytest.raises(LeakageError):
            train_diffusion(list(splits.train) + [splits.val[0]], cfg(), model_config=DM, schedule=SCHED)
        with pytest.raises(LeakageError):
            train_baseline(list(splits.train) + [splits.test[0]], cfg(), clf_config=CLF)

    def test_hook_sees_only_train(self, splits):
        tags = []

        def hook(stage, batch):
            tags.extend((stage, w.split) for w in batch)

        dm, _ = train_diffusion(splits.train, cfg(), model_config=DM, schedule=SCHED, val_windows=splits.val,
                                batch_hook=hook)
        p, _ = pretrain_classifier(dm, splits.train, cfg(), clf_config=CLF, schedule=SCHED,
                                   val_windows=splits.val, batch_hook=hook)
        finetune_classifier(p, splits.train, cfg(), clf_config=CLF, val_windows=splits.val, batch_hook=hook)
        assert {s for _, s in tags} == {"train"}
        assert {t for t, _ in tags} == {"dm", "clf.pretrain", "clf.finetune"}


class TestClassifierStages:
    def test_pretrain_leaves_denoiser_untouched(self, splits):
        dm, _ = train_diffusion(splits.train, cfg(), model_config=DM, schedule=SCHED)
        before = snapshot(dm.params)
        pretrain_classifier(dm, splits.train, cfg(), clf_config=CLF, schedule=SCHED)
        assert all(dm.params[k].data.tobytes() == before[k].tobytes() for k in before)
        assert all(p.grad is None or not np.any(p.grad) for p in dm.params.values())

    def test_finetune_does_not_mutate_input(self, splits):
        p = init_classifier(CLF, np.random.default_rng(0))
        before = snapshot(p)
        finetune_classifier(p, splits.train, cfg(), clf_config=CLF)
        assert all(p[k].data.tobytes() == before[k].tobytes() for k in p)

    def test_baseline_is_finetune_after_empty_pretrain(self, splits):
        dm, _ = train_diffusion(splits.train, cfg(max_epochs=0), model_config=DM, schedule=SCHED)
        pre, rec = pretrain_classifier(dm, splits.train, cfg(max_epochs=0), clf_config=CLF, schedule=SCHED)
        assert rec.epochs == []
        tuned, _ = finetune_classifier(pre, splits.train, cfg(), clf_config=CLF, val_windows=splits.val)
        base, _ = train_baseline(splits.train, cfg(), clf_config=CLF, val_windows=splits.val)
        assert all(tuned[k].data.tobytes() == base[k].data.tobytes() for k in base)

    def test_val_metric_is_macro_f1(self, splits):
        _, rec = train_baseline(splits.train, cfg(), clf_config=CLF, val_windows=splits.val)
        assert all(0.0 <= e["val_metric"] <= 1.0 for e in rec.epochs)


def test_rng_streams_independent():
    a = rng_stream(0, "dm.epoch", 1).random(4)
    assert a.tolist() == rng_stream(0, "dm.epoch", 1).random(4).tolist()
    assert a.tolist() != rng_stream(0, "dm.epoch", 2).random(4).tolist()
    assert a.tolist() != rng_stream(0, "clf.pretrain", 1).random(4).tolist()
    assert a.tolist() != rng_stream(1, "dm.epoch", 1).random(4).tolist()
