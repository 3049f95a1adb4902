"""Learning-rate schedules, strategies and the training loops."""

import numpy as np
import pytest
import torch
import torch.nn as nn

from breastmri import (
    BINARY_LESION,
    THREE_CLASS,
    BackboneConfig,
    FinetuneStrategy,
    HeadConfig,
    SegTrainConfig,
    TaskFormulation,
    TrainConfig,
    TrainingDivergedError,
    build_model,
    build_segmenter,
    extract_case_rois,
    lr_at,
    relabel_for_binary,
    resample,
    train,
    train_segmenter,
    trainable_parameters,
)
from breastmri.training import (
    TrainSample,
    dice_score,
    predict_segmentation,
    segmenter_foreground_dice,
    warmup_high,
    warmup_low,
)

TINY_BACKBONE = BackboneConfig(
    kind="res_enc", in_channels=3, stage_channels=(4, 8), strides=(1, 2)
)


def tiny_model(seed=0, num_classes=3):
    return build_model(TINY_BACKBONE, HeadConfig(num_classes=num_classes), seed=seed)


def tiny_config(**overrides):
    base = dict(
        epochs=3,
        batch_size=2,
        iters_per_epoch=4,
        patch_shape=(4, 6, 6),
        base_lr=0.005,
        momentum=0.9,
        seed=11,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def roi_samples(small_dataset):
    samples = []
    for case in small_dataset:
        for roi in extract_case_rois(case):
            samples.append(TrainSample(roi=roi, label=case.label))
    return samples


@pytest.fixture(scope="module")
def seg_pairs(small_dataset):
    pairs = []
    for case in small_dataset[:6]:
        ch = resample(case.channels, (4.0, 4.0, 4.0))
        seg = resample(case.seg_mask, (4.0, 4.0, 4.0), mode="nearest")
        pairs.append((ch, seg))
    return pairs


class TestStrategy:
    def test_warmup_requires_rates(self):
        with pytest.raises(ValueError):
            FinetuneStrategy("warmup_finetune")
        with pytest.raises(ValueError):
            FinetuneStrategy("warmup_finetune", lr_start=1e-2, lr_peak=1e-3, warmup_epochs=5)
        with pytest.raises(ValueError):
            FinetuneStrategy("warmup_finetune", lr_start=1e-4, lr_peak=1e-2, warmup_epochs=0)

    def test_non_warmup_rejects_warmup_params(self):
        with pytest.raises(ValueError):
            FinetuneStrategy("full_finetune", lr_start=1e-4)
        with pytest.raises(ValueError):
            FinetuneStrategy("from_scratch", warmup_epochs=3)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            FinetuneStrategy("two_stage")

    def test_presets(self):
        hi = warmup_high()
        lo = warmup_low()
        assert (hi.lr_start, hi.lr_peak) == (1e-4, 1e-2)
        assert (lo.lr_start, lo.lr_peak) == (1e-5, 1e-3)


class TestLrSchedule:
    def test_warmup_endpoints_exact(self):
        strat = FinetuneStrategy("warmup_finetune", lr_start=1e-5, lr_peak=1e-3, warmup_epochs=5)
        assert lr_at(strat, 0, 30) == 1e-5
        assert lr_at(strat, 5, 30) == 1e-3  # (1 - 0)^0.9 == 1 exactly

    def test_warmup_is_linear(self):
        strat = FinetuneStrategy("warmup_finetune", lr_start=2e-4, lr_peak=1e-2, warmup_epochs=4)
        vals = [lr_at(strat, e, 20) for e in range(5)]
        diffs = np.diff(vals)
        np.testing.assert_allclose(diffs, diffs[0], rtol=1e-12)

    def test_junction_continuity(self):
        strat = FinetuneStrategy("warmup_finetune", lr_start=1e-5, lr_peak=1e-3, warmup_epochs=5)
        before = strat.lr_start + (strat.lr_peak - strat.lr_start) * (5 / 5)
        assert lr_at(strat, 5, 30) == pytest.approx(before, rel=1e-12)

    def test_decay_matches_formula(self):
        strat = FinetuneStrategy("warmup_finetune", lr_start=1e-5, lr_peak=1e-3, warmup_epochs=5)
        for epoch in (6, 12, 29):
            want = 1e-3 * (1.0 - (epoch - 5) / 25) ** 0.9
            assert lr_at(strat, epoch, 30) == pytest.approx(want, rel=1e-12)

    def test_plain_poly_decay(self):
        strat = FinetuneStrategy("from_scratch")
        assert lr_at(strat, 0, 30, base_lr=0.01) == 0.01
        for epoch in (1, 15, 29):
            want = 0.01 * (1.0 - epoch / 30) ** 0.9
            assert lr_at(strat, epoch, 30, base_lr=0.01) == pytest.approx(want, rel=1e-12)

    def test_monotone_after_warmup(self):
        strat = FinetuneStrategy("warmup_finetune", lr_start=1e-5, lr_peak=1e-3, warmup_epochs=3)
        vals = [lr_at(strat, e, 20) for e in range(3, 20)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_rejects_out_of_range(self):
        strat = FinetuneStrategy("from_scratch")
        with pytest.raises(ValueError):
            lr_at(strat, 30, 30)
        with pytest.raises(ValueError):
            lr_at(strat, -1, 30)
        with pytest.raises(ValueError):
            lr_at(strat, 0, 30, base_lr=0.0)
        warm = FinetuneStrategy("warmup_finetune", lr_start=1e-5, lr_peak=1e-3, warmup_epochs=30)
        with pytest.raises(ValueError):
            lr_at(warm, 0, 30)


class TestTaskFormulation:
    def test_class_names(self):
        assert THREE_CLASS.class_names == ("healthy", "benign", "malignant")
        assert BINARY_LESION.class_names == ("healthy", "lesion_present")
        assert THREE_CLASS.num_classes == 3
        assert BINARY_LESION.num_classes == 2

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            TaskFormulation("four_class")

    def test_relabel(self):
        assert relabel_for_binary("healthy") == "healthy"
        assert relabel_for_binary("benign") == "lesion_present"
        assert relabel_for_binary("malignant") == "lesion_present"
        with pytest.raises(ValueError):
            relabel_for_binary("cyst")


class TestTrainableParameters:
    def test_linear_probe_trains_head_only(self):
        model = tiny_model()
        names = trainable_parameters(FinetuneStrategy("linear_probe"), model)
        assert names == {"head.weight", "head.bias"}

    def test_other_strategies_train_everything(self):
        model = tiny_model()
        all_names = {n for n, _ in model.named_parameters()}
        for kind in ("from_scratch", "full_finetune"):
            assert trainable_parameters(FinetuneStrategy(kind), model) == all_names

    def test_headless_model_rejected(self):
        with pytest.raises(ValueError):
            trainable_parameters(FinetuneStrategy("linear_probe"), nn.Linear(4, 2))


class TestTrainConfig:
    def test_class_weights_length_checked(self):
        with pytest.raises(ValueError):
            TrainConfig(task=THREE_CLASS, class_weights=(1.0, 2.0))
        TrainConfig(task=BINARY_LESION, class_weights=(1.0, 2.0))

    def test_sample_label_checked(self, roi_samples):
        with pytest.raises(ValueError):
            TrainSample(roi=roi_samples[0].roi, label="cyst")


class TestTrainLoop:
    def test_deterministic_for_equal_seeds(self, roi_samples):
        runs = []
        for _ in range(2):
            model, log = train(tiny_model(seed=5), roi_samples[:8], tiny_config())
            runs.append((model.state_dict(), [e.train_loss for e in log.epochs]))
        assert runs[0][1] == runs[1][1]
        for ta, tb in zip(runs[0][0].values(), runs[1][0].values()):
            torch.testing.assert_close(ta, tb, rtol=0, atol=0)

    def test_seed_changes_trajectory(self, roi_samples):
        _, log_a = train(tiny_model(seed=5), roi_samples[:8], tiny_config(seed=1))
        _, log_b = train(tiny_model(seed=5), roi_samples[:8], tiny_config(seed=2))
        assert [e.train_loss for e in log_a.epochs] != [e.train_loss for e in log_b.epochs]

    def test_loss_decreases(self, roi_samples):
        config = tiny_config(epochs=12, iters_per_epoch=8)
        _, log = train(tiny_model(seed=3), roi_samples, config)
        losses = [e.train_loss for e in log.epochs]
        assert np.mean(losses[-3:]) < np.mean(losses[:3])
        assert all(np.isfinite(losses))

    def test_log_records_schedule(self, roi_samples):
        config = tiny_config()
        _, log = train(tiny_model(), roi_samples[:4], config)
        assert len(log.epochs) == config.epochs
        for e, stats in enumerate(log.epochs):
            assert stats.epoch == e
            assert stats.lr == lr_at(config.strategy, e, config.epochs, base_lr=config.base_lr)

    def test_linear_probe_freezes_encoder(self, roi_samples):
        model = tiny_model(seed=9)
        before = {n: t.clone() for n, t in model.state_dict().items()}
        train(model, roi_samples[:8], tiny_config(strategy=FinetuneStrategy("linear_probe")))
        after = model.state_dict()
        for name, tensor in before.items():
            if name.startswith("head."):
                assert not torch.equal(after[name], tensor)
            else:
                torch.testing.assert_close(after[name], tensor, rtol=0, atol=0)

    def test_memorizes_single_sample(self, roi_samples):
        config = tiny_config(epochs=200, iters_per_epoch=4, batch_size=1, base_lr=0.02)
        _, log = train(tiny_model(seed=1), roi_samples[:1], config)
        assert min(e.train_loss for e in log.epochs) < 0.01

    def test_validation_tracks_best(self, roi_samples):
        by_label = {"healthy": [], "benign": [], "malignant": []}
        for s in roi_samples:
            by_label[s.label].append(s)
        train_set = [s for group in by_label.values() for s in group[:3]]
        val_set = [s for group in by_label.values() for s in group[3:5]]
        model, log = train(
            tiny_model(seed=2),
            train_set,
            tiny_config(epochs=4),
            val_samples=val_set,
        )
        assert log.best_epoch is not None
        assert log.best_val is not None
        vals = [e.val_metric for e in log.epochs if e.val_metric is not None]
        assert log.best_val == max(vals)
        assert 0.0 <= log.best_val <= 1.0

    def test_binary_task_trains(self, roi_samples):
        config = tiny_config(task=BINARY_LESION)
        model, log = train(tiny_model(num_classes=2), roi_samples[:8], config)
        assert all(np.isfinite(e.train_loss) for e in log.epochs)

    def test_augmentation_is_deterministic(self, roi_samples):
        from breastmri import default_pipeline

        config = tiny_config(augmentation=default_pipeline(probability=0.5))
        a, _ = train(tiny_model(seed=5), roi_samples[:8], config)
        b, _ = train(tiny_model(seed=5), roi_samples[:8], config)
        for ta, tb in zip(a.state_dict().values(), b.state_dict().values()):
            torch.testing.assert_close(ta, tb, rtol=0, atol=0)

    def test_nan_loss_raises(self, roi_samples):
        model = tiny_model()
        with torch.no_grad():
            model.head.weight.fill_(float("nan"))
        with pytest.raises(TrainingDivergedError, match="epoch 0"):
            train(model, roi_samples[:4], tiny_config())

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            train(tiny_model(), [], tiny_config())


class TestDice:
    def test_known_values(self):
        a = np.zeros((4, 4, 4), dtype=bool)
        b = np.zeros((4, 4, 4), dtype=bool)
        a[0, 0, :2] = True
        b[0, 0, 1:3] = True
        assert dice_score(a, b) == pytest.approx(2 * 1 / 4)
        assert dice_score(a, a) == 1.0
        assert dice_score(a, ~a) == 0.0

    def test_both_empty_is_one(self):
        empty = np.zeros((3, 3, 3), dtype=bool)
        assert dice_score(empty, empty) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_score(np.zeros((2, 2, 2), dtype=bool), np.zeros((3, 3, 3), dtype=bool))


class TestSegmenterTraining:
    def test_loss_decreases_and_metrics_work(self, seg_pairs):
        model = build_segmenter(TINY_BACKBONE, seg_classes=3, seed=0)
        log = train_segmenter(model, seg_pairs, SegTrainConfig(epochs=6, lr=0.02, seed=4))
        losses = [e.train_loss for e in log.epochs]
        assert all(np.isfinite(losses))
        assert losses[-1] < losses[0]
        dice = segmenter_foreground_dice(model, seg_pairs)
        assert 0.0 <= dice <= 1.0

    def test_prediction_grid_and_labels(self, seg_pairs):
        model = build_segmenter(TINY_BACKBONE, seg_classes=3, seed=0)
        channels, seg = seg_pairs[0]
        pred = predict_segmentation(model, channels)
        assert pred.spatial_shape == channels.spatial_shape
        assert pred.spacing == channels.spacing
        assert set(np.unique(pred.data)) <= {0.0, 1.0, 2.0}

    def test_deterministic(self, seg_pairs):
        runs = []
        for _ in range(2):
            model = build_segmenter(TINY_BACKBONE, seg_classes=3, seed=7)
            log = train_segmenter(model, seg_pairs[:2], SegTrainConfig(epochs=2, seed=3))
            runs.append([e.train_loss for e in log.epochs])
        assert runs[0] == runs[1]

    def test_empty_pairs_rejected(self):
        model = build_segmenter(TINY_BACKBONE, seg_classes=3)
        with pytest.raises(ValueError):
            train_segmenter(model, [], SegTrainConfig(epochs=1))
