import numpy as np
import pytest

from conftest import tone_dataset
from respsound.nn.model import (DenseParams, LstmParams, ModelParams,
                                init_model, params_to_vector)
from respsound.trainer import (EpochRecord, TrainConfig, chance_baseline,
                               curves_to_csv, evaluate, majority_baseline,
                               plateau_detector, report_to_csv, train)


def onehot_model():
    """Hand-built net that classifies one-hot inputs perfectly.

    Saturated input and candidate gates copy the hot dimension into the
    cell state; the dense layer reads it back out with a scaled identity.
    """
    h = 8
    w_hot = np.hstack([30.0 * np.eye(h), np.zeros((h, h))])
    zeros = np.zeros((h, 2 * h))
    cell = LstmParams(w_hot, zeros, zeros, w_hot,
                      np.zeros(h), np.zeros(h), np.zeros(h), np.zeros(h))
    dense = DenseParams(10.0 * np.eye(h), np.zeros(h))
    return ModelParams("uni", cell, None, dense)


def onehot_examples(labels):
    return [(np.eye(8)[label:label + 1], label) for label in labels]


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 10 and cfg.lr == 0.01 and cfg.seed == 7

    @pytest.mark.parametrize("kwargs", [
        {"epochs": 0}, {"lr": 0.0}, {"lr": -1.0}, {"duration_s": 0.0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestTrain:
    def small_run(self, seed=7, **kwargs):
        data = tone_dataset(n_per_class=2)
        cfg = TrainConfig(epochs=3, lr=0.05, hidden_size=8, seed=seed, **kwargs)
        model = init_model(data[0][0].n_dims, cfg.hidden_size, cfg.mode,
                           seed=cfg.seed)
        return train(model, data, data, cfg)

    def test_deterministic(self):
        (m1, r1), (m2, r2) = self.small_run(), self.small_run()
        assert np.array_equal(params_to_vector(m1), params_to_vector(m2))
        assert r1 == r2

    def test_seed_changes_trajectory(self):
        (m1, _), (m2, _) = self.small_run(seed=7), self.small_run(seed=8)
        assert not np.array_equal(params_to_vector(m1), params_to_vector(m2))

    def test_records_one_per_epoch(self):
        _, records = self.small_run()
        assert [r.epoch for r in records] == [1, 2, 3]
        for r in records:
            assert np.isfinite(r.train_loss) and 0 <= r.train_acc <= 1

    def test_loss_decreases_on_learnable_data(self):
        _, records = self.small_run()
        assert records[-1].train_loss < records[0].train_loss

    def test_overfits_small_tone_set(self):
        data = tone_dataset(n_per_class=2)
        cfg = TrainConfig(epochs=30, lr=0.1, hidden_size=16)
        model = init_model(data[0][0].n_dims, 16, seed=cfg.seed)
        model, records = train(model, data, [], cfg)
        assert max(r.train_acc for r in records) >= 0.95

    def test_keep_best_validation(self):
        # lr high enough to bounce: final params need not be the best ones
        data = tone_dataset(n_per_class=2)
        cfg = TrainConfig(epochs=8, lr=0.3, hidden_size=8,
                          keep_best_validation=True)
        model = init_model(data[0][0].n_dims, 8, seed=7)
        best_model, records = train(model, data, data, cfg)
        best_loss = min(r.val_loss for r in records)
        from respsound.trainer import _dataset_metrics
        loss, _ = _dataset_metrics(best_model, data)
        assert loss == pytest.approx(best_loss, rel=1e-12)

    def test_gradient_clipping_accepted(self):
        _, records = self.small_run(max_grad_norm=1.0)
        assert len(records) == 3

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train(init_model(4, 4, seed=0), [], [], TrainConfig())


class TestEvaluate:
    def test_perfect_model_diagonal_confusion(self):
        labels = [0, 1, 2, 3, 4, 5, 6, 7, 2, 2]
        report = evaluate(onehot_model(), onehot_examples(labels))
        assert report.accuracy == 1.0
        assert report.n_examples == 10
        assert np.trace(report.confusion) == 10
        assert report.confusion[2, 2] == 3
        assert report.precision[2] == 1.0 and report.recall[2] == 1.0

    def test_systematic_confusion_counted(self):
        # feed class-3 inputs labeled 5: all mass lands at (5, 3)
        examples = [(np.eye(8)[3:4], 5)] * 4
        report = evaluate(onehot_model(), examples)
        assert report.accuracy == 0.0
        assert report.confusion[5, 3] == 4
        assert report.recall[5] == 0.0
        assert report.precision[3] == 0.0

    def test_undefined_metrics_are_none(self):
        report = evaluate(onehot_model(), onehot_examples([0, 1]))
        assert report.precision[7] is None  # class 7 never predicted
        assert report.recall[7] is None  # class 7 never appears

    def test_tie_breaks_toward_lowest_index(self):
        m = init_model(8, 4, seed=0)
        zero = ModelParams("uni", m.forward_cell, None,
                           DenseParams(np.zeros((8, 4)), np.zeros(8)))
        report = evaluate(zero, onehot_examples([0, 3]))
        assert report.confusion[:, 0].sum() == 2

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            evaluate(onehot_model(), [])


class TestBaselines:
    def test_chance(self):
        assert chance_baseline(8) == 0.125
        with pytest.raises(ValueError):
            chance_baseline(0)

    def test_majority(self):
        assert majority_baseline([2, 2, 2, 5]) == 0.75
        assert majority_baseline([0]) == 1.0
        with pytest.raises(ValueError):
            majority_baseline([])

    def test_majority_equals_constant_predictor_accuracy(self, rng):
        labels = rng.integers(0, 8, size=200)
        best = max(np.mean(labels == c) for c in range(8))
        assert majority_baseline(labels) == best


class TestPlateauDetector:
    def rec(self, losses):
        return [EpochRecord(i + 1, 0.0, 0.0, v, 0.0)
                for i, v in enumerate(losses)]

    def test_detects_flat_tail(self):
        assert plateau_detector(self.rec([1.0, 0.5, 0.5, 0.5]), patience=2) == 2

    def test_none_while_improving(self):
        assert plateau_detector(self.rec([1.0, 0.8, 0.6, 0.4]), patience=2) is None

    def test_recovery_within_patience_is_not_a_plateau(self):
        records = self.rec([1.0, 1.1, 0.5, 0.4])
        assert plateau_detector(records, patience=2) is None

    def test_validation(self):
        with pytest.raises(ValueError):
            plateau_detector([], patience=1)
        with pytest.raises(ValueError):
            plateau_detector(self.rec([1.0]), patience=0)


class TestCsv:
    def test_curves_roundtrip_exact(self):
        records = [EpochRecord(1, 1 / 3, 0.5, 2 / 7, 0.25),
                   EpochRecord(2, 0.1, 1.0, 0.2, 1.0)]
        text = curves_to_csv(records)
        lines = text.strip().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        parsed = [line.split(",") for line in lines[1:]]
        assert float(parsed[0][1]) == 1 / 3  # repr() floats roundtrip
        assert float(parsed[0][3]) == 2 / 7

    def test_report_csv_layout(self):
        report = evaluate(onehot_model(), onehot_examples([0, 1]))
        text = report_to_csv(report, class_names=[f"c{i}" for i in range(8)])
        lines = text.strip().splitlines()
        assert lines[0] == "n_examples,2"
        assert lines[1] == "accuracy,1.0"
        assert lines[2].startswith("confusion_true\\pred,c0,")
        assert len(lines) == 3 + 8 + 2
        # undefined per-class metrics serialize as empty fields
        assert lines[-2].endswith(",")
