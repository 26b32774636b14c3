"""Learning-rate sweep and few-shot protocol."""

import json

import numpy as np
import pytest

from helpers import separable_image_set
from leancnn.data import ArrayDataset
from leancnn.errors import ConfigError, DataError, DivergenceError
from leancnn.models import ModelSpec, build
from leancnn.train import (TrainConfig, evaluate, few_shot_experiment,
                           lr_sweep, train)

SPEC32 = ModelSpec("btbcnn", input_size=32)


def quick_config(**over):
    kwargs = dict(lr=5e-4, epochs=2, batch_size=16, seed=7, eval_every=0)
    kwargs.update(over)
    return TrainConfig(**kwargs)


class TestSweep:
    def test_entries_and_artifacts(self, tmp_path):
        ds = separable_image_set(seed=1)
        result = lr_sweep(SPEC32, ds, ds, [1e-3, 5e-4], quick_config(),
                          out_dir=str(tmp_path))
        assert [e.lr for e in result.entries] == [1e-3, 5e-4]
        assert all(e.status == "ok" for e in result.entries)
        assert result.best_lr in (1e-3, 5e-4)
        assert (tmp_path / "sweep.json").exists()
        for sub in ("lr_0.001", "lr_0.0005"):
            assert (tmp_path / sub / "trace.csv").exists()
            assert (tmp_path / sub / "checkpoint.lcnn").exists()
        saved = json.loads((tmp_path / "sweep.json").read_text())
        assert saved["best_lr"] == result.best_lr
        assert len(saved["entries"]) == 2
        assert saved["entries"][0]["lr"] == 1e-3

    def test_each_rate_trains_a_fresh_model(self, tmp_path):
        """A sweep entry must be byte-identical to a standalone run at the
        same rate, which rules out state carried over between rates."""
        ds = separable_image_set(seed=2)
        cfg = quick_config()
        lr_sweep(SPEC32, ds, ds, [1e-3, 5e-4], cfg, out_dir=str(tmp_path / "s"))
        train(SPEC32, ds, ds, quick_config(lr=5e-4),
              out_dir=str(tmp_path / "solo"))
        assert (tmp_path / "s" / "lr_0.0005" / "trace.csv").read_bytes() == \
            (tmp_path / "solo" / "trace.csv").read_bytes()
        assert (tmp_path / "s" / "lr_0.0005" / "report.json").read_bytes() == \
            (tmp_path / "solo" / "report.json").read_bytes()

    def test_repeat_invocations_byte_identical(self, tmp_path):
        ds = separable_image_set(seed=3)
        for name in ("a", "b"):
            lr_sweep(SPEC32, ds, ds, [1e-3, 1e-4], quick_config(),
                     out_dir=str(tmp_path / name))
        assert (tmp_path / "a" / "sweep.json").read_bytes() == \
            (tmp_path / "b" / "sweep.json").read_bytes()
        for sub in ("lr_0.001", "lr_0.0001"):
            for fname in ("trace.csv", "report.json"):
                assert (tmp_path / "a" / sub / fname).read_bytes() == \
                    (tmp_path / "b" / sub / fname).read_bytes()

    def test_tie_breaks_toward_smaller_rate(self):
        # zero epochs: every rate evaluates the identical untrained model,
        # so accuracies tie and the smaller rate must win
        ds = separable_image_set(seed=4)
        result = lr_sweep(SPEC32, ds, ds, [1e-3, 1e-5, 1e-4],
                          quick_config(epochs=0))
        accs = {e.accuracy for e in result.entries}
        assert len(accs) == 1
        assert result.best_lr == 1e-5

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_rate_recorded_and_skipped(self):
        ds = separable_image_set(seed=5)
        result = lr_sweep(SPEC32, ds, ds, [1e12, 1e-4], quick_config())
        first, second = result.entries
        assert first.status == "diverged"
        assert first.diverged_at_epoch is not None
        assert first.accuracy is None
        assert second.status == "ok"
        assert result.best_lr == 1e-4

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_all_rates_diverging_raises(self):
        ds = separable_image_set(seed=6)
        with pytest.raises(DivergenceError):
            lr_sweep(SPEC32, ds, ds, [1e12, 1e13], quick_config())

    def test_validation(self):
        ds = separable_image_set(seed=7)
        with pytest.raises(ConfigError):
            lr_sweep(SPEC32, ds, ds, [], quick_config())
        with pytest.raises(ConfigError):
            lr_sweep(SPEC32, ds, ds, [1e-3, 1e-3], quick_config())


class LeakyDataset(ArrayDataset):
    """Touches a neighbouring example on every fetch."""

    def fetch(self, i):
        self.accessed.add((i + 1) % len(self))
        return super().fetch(i)


class TestFewShot:
    def test_subset_sizes_and_entries(self, tmp_path):
        ds = separable_image_set(seed=8)          # 8 per class
        result = few_shot_experiment(SPEC32, ds, ds, [0, 2, 4],
                                     quick_config(),
                                     out_dir=str(tmp_path))
        assert [e.shots for e in result.entries] == [0, 2, 4]
        assert [e.n_train for e in result.entries] == [0, 4, 8]
        assert all(np.isfinite(e.accuracy) for e in result.entries)
        saved = json.loads((tmp_path / "fewshot.json").read_text())
        assert saved["sampler_seed"] == result.sampler_seed
        assert [e["n_train"] for e in saved["entries"]] == [0, 4, 8]

    def test_sampler_seed_defaults_to_train_seed_plus_one(self):
        ds = separable_image_set(seed=9)
        result = few_shot_experiment(SPEC32, ds, ds, [0], quick_config(seed=7))
        assert result.sampler_seed == 8
        result = few_shot_experiment(SPEC32, ds, ds, [0], quick_config(seed=7),
                                     sampler_seed=123)
        assert result.sampler_seed == 123

    def test_deterministic(self):
        ds = separable_image_set(seed=10)
        a = few_shot_experiment(SPEC32, ds, ds, [0, 2], quick_config())
        b = few_shot_experiment(SPEC32, ds, ds, [0, 2], quick_config())
        assert a.to_dict() == b.to_dict()

    def test_zero_shot_scores_untrained_model(self):
        ds = separable_image_set(seed=11)
        result = few_shot_experiment(SPEC32, ds, ds, [0], quick_config(seed=3))
        fresh = build(SPEC32, 3)
        report, _ = evaluate(fresh, ds, 16)
        assert result.entries[0].accuracy == report.accuracy

    def test_access_budget_enforced(self):
        images = np.zeros((12, 1, 32, 32), np.float32)
        images[::2] += 0.8
        ds = LeakyDataset(images, np.arange(12) % 2, ["a", "b"])
        with pytest.raises(DataError, match="touched"):
            few_shot_experiment(SPEC32, ds, ds, [1], quick_config(epochs=1))

    def test_honest_access_stays_within_budget(self):
        train_ds = separable_image_set(seed=12)
        test_ds = separable_image_set(seed=13)
        few_shot_experiment(SPEC32, train_ds, test_ds, [2],
                            quick_config(epochs=1))
        assert len(train_ds.accessed) <= 4

    def test_negative_shots_rejected(self):
        ds = separable_image_set(seed=13)
        with pytest.raises(ConfigError):
            few_shot_experiment(SPEC32, ds, ds, [2, -1], quick_config())
