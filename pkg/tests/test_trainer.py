"""Tests for normalization, fold splitting, training, metrics, and the baseline."""

import numpy as np
import pytest

from mcan import graphdata as gd
from mcan import model as md
from mcan import trainer as tr
from mcan.errors import MissingDataError, TrainingDivergence


def tiny_dataset(seed=3, days=16, n_roads=2, **overrides):
    config = gd.GeneratorConfig(
        n_roads=n_roads, edge_density=1.0, intervals=(60,), days=days,
        coupling=0.2, noise=1.0, obs_noise=0.3, weekly_amplitude=1.5, weather_impact=1.0,
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return gd.generate_synthetic(config, seed=seed)


def tiny_train_config(**overrides):
    base = dict(
        epochs=2, batch_size=32, learning_rate=0.002, dropout=0.0,
        alpha=0.2, beta=0.2, recent_steps=3, daily_steps=1, weekly_steps=1,
        horizon=2, folds=5, seed=11, embed_len=4, hops=1, filters=2,
        cpa_order=3, gcn_order=3, hidden_size=4, lstm_layers=1, fnn_layers=1,
        max_train_samples=48,
    )
    base.update(overrides)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset():
    return tiny_dataset()


@pytest.fixture(scope="module")
def raw_view(dataset):
    return md.build_view(dataset)


@pytest.fixture(scope="module")
def model_config(dataset):
    return tiny_train_config().model_config(dataset)


class TestNormalization:
    def test_round_trip_exact(self, dataset):
        masks = [np.ones(dataset.days, dtype=bool)] * dataset.graph.size
        scaler = tr.normalize_fit(dataset, masks)
        values = dataset.series[0].values
        back = tr.normalize_invert(scaler, 0, tr.normalize_apply(scaler, 0, values))
        assert np.abs(back - values).max() < 1e-12

    def test_transformed_training_mean_is_zero(self, dataset):
        masks = [np.ones(dataset.days, dtype=bool)] * dataset.graph.size
        scaler = tr.normalize_fit(dataset, masks)
        for road in range(dataset.graph.size):
            z = tr.normalize_apply(scaler, road, dataset.series[road].values)
            assert abs(z.mean()) < 1e-9

    def test_constant_series_fallback(self):
        dataset = tiny_dataset(days=2, noise=0.0, obs_noise=0.0, coupling=0.0,
                               weekly_amplitude=0.0, weather_impact=0.0)
        dataset.series[0].values[:] = 25.0
        masks = [np.ones(dataset.days, dtype=bool)] * dataset.graph.size
        scaler = tr.normalize_fit(dataset, masks)
        assert scaler.stds[0] == 1.0
        z = tr.normalize_apply(scaler, 0, dataset.series[0].values)
        assert np.array_equal(z, np.zeros_like(z))


class TestKfold:
    def test_blocks_partition_eligible_samples(self, raw_view, model_config):
        folds = tr.kfold_split(raw_view, model_config, 5, seed=1)
        eligible = set(tr.eligible_samples(raw_view, model_config))
        test_union = set()
        for fold in folds:
            block = set(fold.test)
            assert not (block & test_union)
            test_union |= block
        assert test_union == eligible

    def test_equal_block_sizes_when_divisible(self, raw_view, model_config):
        eligible = tr.eligible_samples(raw_view, model_config)
        k = 5
        folds = tr.kfold_split(raw_view, model_config, k, seed=1)
        sizes = [len(f.test) for f in folds]
        assert sum(sizes) == len(eligible)
        assert max(sizes) - min(sizes) <= 1

    def test_same_seed_same_partition(self, raw_view, model_config):
        a = tr.kfold_split(raw_view, model_config, 4, seed=9)
        b = tr.kfold_split(raw_view, model_config, 4, seed=9)
        for fa, fb in zip(a, b):
            assert fa.test == fb.test and fa.train == fb.train

    def test_too_many_folds_rejected(self, raw_view, model_config):
        with pytest.raises(MissingDataError, match="folds"):
            tr.kfold_split(raw_view, model_config, 10_000, seed=0)

    def test_contiguous_test_blocks_in_time(self, raw_view, model_config):
        folds = tr.kfold_split(raw_view, model_config, 5, seed=1)
        walls = [sorted(t * raw_view.interval(r) for r, t in fold.test) for fold in folds]
        for earlier, later in zip(walls, walls[1:]):
            assert earlier[-1] <= later[0]

    def test_no_training_sample_touches_test_window(self, raw_view, model_config):
        # instrumented leakage check: every index a training sample reads or
        # predicts lies outside the fold's test wall-clock window
        folds = tr.kfold_split(raw_view, model_config, 5, seed=1)
        for fold in folds[:2] + folds[-1:]:
            lo, hi = fold.test_wall
            for road, t in fold.train[::7]:
                target_walls = md.target_indices(model_config, t) * raw_view.interval(road)
                assert not np.any((target_walls >= lo) & (target_walls <= hi))
                for j, idx in md.sample_footprint(raw_view, model_config, road, t).items():
                    walls = idx * raw_view.interval(j)
                    assert not np.any((walls >= lo) & (walls <= hi))

    def test_fast_filter_matches_footprint_oracle(self, raw_view, model_config):
        # the interval-arithmetic filter agrees with enumerating the footprint
        rng = np.random.default_rng(23)
        eligible = tr.eligible_samples(raw_view, model_config)
        for _ in range(200):
            road, t = eligible[rng.integers(len(eligible))]
            wall = int(t * raw_view.interval(road))
            width = int(rng.integers(60, 3000))
            lo = wall + int(rng.integers(-30000, 3000))
            window = (lo, lo + width)
            fast = tr._sample_touches_window(raw_view, model_config, (road, t), window)
            walls = [md.target_indices(model_config, t) * raw_view.interval(road)]
            walls += [
                idx * raw_view.interval(j)
                for j, idx in md.sample_footprint(raw_view, model_config, road, t).items()
            ]
            oracle = any(np.any((w >= window[0]) & (w <= window[1])) for w in walls)
            assert fast == oracle, (road, t, window)

    def test_shuffled_folds_partition_without_filtering(self, raw_view, model_config):
        folds = tr.kfold_split(raw_view, model_config, 5, seed=1, shuffled=True)
        eligible = tr.eligible_samples(raw_view, model_config)
        for fold in folds:
            assert len(fold.train) + len(fold.test) == len(eligible)
            assert fold.test_wall is None


class TestTrainingDayMasks:
    def test_masks_exclude_test_days_only(self, dataset, raw_view, model_config):
        folds = tr.kfold_split(raw_view, model_config, 5, seed=1)
        fold = folds[2]
        masks = tr.training_day_masks(dataset, fold)
        lo, hi = fold.test_wall
        for road in range(dataset.graph.size):
            for day in range(dataset.days):
                day_lo, day_hi = day * 1440, (day + 1) * 1440 - 1
                overlaps = day_hi >= lo and day_lo <= hi
                assert masks[road][day] == (not overlaps)


class TestMetrics:
    def test_perfect_predictions(self):
        truth = np.array([[1.0, 2.0], [3.0, 4.0]])
        report = tr.compute_metrics(truth, truth.copy())
        assert (report.mae, report.mape_pct, report.rmse) == (0.0, 0.0, 0.0)

    def test_hand_computed_values(self):
        truth = np.array([[1.0, 2.0]])
        pred = np.array([[2.0, 4.0]])
        report = tr.compute_metrics(truth, pred)
        assert report.mae == pytest.approx(1.5)
        assert report.mape_pct == pytest.approx(100.0)
        assert report.rmse == pytest.approx(np.sqrt(2.5))
        assert report.rmse == pytest.approx(1.5811, abs=1e-4)

    def test_zero_truth_excluded_from_mape_only(self):
        truth = np.array([[0.0, 2.0]])
        pred = np.array([[1.0, 3.0]])
        report = tr.compute_metrics(truth, pred)
        assert report.mae == pytest.approx(1.0)
        assert report.mape_pct == pytest.approx(50.0)
        assert report.mape_count == 1

    def test_invariant_to_sample_ordering(self):
        rng = np.random.default_rng(3)
        truth = rng.uniform(1, 50, size=(40, 3))
        pred = truth + rng.normal(size=(40, 3))
        a = tr.compute_metrics(truth, pred)
        perm = rng.permutation(40)
        b = tr.compute_metrics(truth[perm], pred[perm])
        assert a.mae == pytest.approx(b.mae, abs=1e-12)
        assert a.rmse == pytest.approx(b.rmse, abs=1e-12)
        assert a.mape_pct == pytest.approx(b.mape_pct, abs=1e-12)

    def test_empty_split_rejected(self):
        with pytest.raises(MissingDataError):
            tr.compute_metrics(np.empty((0, 2)), np.empty((0, 2)))


class TestTrain:
    def test_single_batch_single_epoch_one_adam_step(self, dataset):
        config = tiny_train_config(epochs=1, batch_size=64, max_train_samples=20)
        result = tr.train(dataset, config)
        assert result.adam_steps == 1
        assert len(result.history) == 1

    def test_same_seed_identical_history(self, dataset):
        config = tiny_train_config(epochs=2, dropout=0.3)
        a = tr.train(dataset, config)
        b = tr.train(dataset, config)
        assert a.history == b.history
        for (name, pa), (_, pb) in zip(md.named_parameters(a.params),
                                       md.named_parameters(b.params)):
            assert np.array_equal(pa.data, pb.data), name

    def test_loss_decreases_on_smoke_run(self, dataset):
        config = tiny_train_config(epochs=12, learning_rate=0.01, max_train_samples=24)
        result = tr.train(dataset, config)
        assert all(np.isfinite(result.history))
        assert result.history[-1] < result.history[0]

    def test_loss_moving_average_non_increasing_on_overfit_oracle(self):
        # smooth descent on the overfitting oracle dataset: the 5-epoch moving
        # average of the training loss never increases
        dataset = gd.generate_synthetic(
            gd.GeneratorConfig(n_roads=2, edge_density=1.0, intervals=(36,), days=5,
                               coupling=0.3, noise=0.0, obs_noise=0.0),
            seed=1,
        )
        config = tr.TrainConfig(
            epochs=80, batch_size=64, learning_rate=0.002, dropout=0.0,
            recent_steps=4, daily_steps=1, weekly_steps=2, horizon=3,
            folds=5, seed=3, ablations=("nw",), embed_len=6, hops=1, filters=2,
            cpa_order=3, gcn_order=3, hidden_size=12, lstm_layers=1, fnn_layers=2,
            max_train_samples=64,
        )
        result = tr.train(dataset, config)
        history = np.asarray(result.history)
        assert np.all(np.isfinite(history))
        moving = np.convolve(history, np.ones(5) / 5.0, mode="valid")
        assert np.all(np.diff(moving) <= 1e-9)

    def test_nan_data_aborts_with_diagnostic(self):
        bad = tiny_dataset(seed=5)
        bad.series[0].values[200] = np.nan
        with pytest.raises(TrainingDivergence, match="non-finite"):
            tr.train(bad, tiny_train_config(epochs=1))

    def test_evaluate_result_on_test_fold(self, dataset):
        config = tiny_train_config(epochs=1)
        result = tr.train(dataset, config)
        report = tr.evaluate_result(result, dataset)
        assert report.sample_count == len(result.fold.test)
        assert np.isfinite(report.rmse)
        assert report.per_step_rmse.shape == (config.horizon,)


class TestBaseline:
    def test_exactly_periodic_data_gives_zero_error(self):
        dataset = tiny_dataset(days=16, noise=0.0, obs_noise=0.0, coupling=0.0,
                               weekly_amplitude=0.0, weather_impact=0.0)
        view = md.build_view(dataset)
        mc = tiny_train_config().model_config(dataset)
        fold = tr.kfold_split(view, mc, 5, seed=1)[-1]
        report = tr.historical_average_baseline(dataset, fold, mc.horizon)
        assert report.mae == pytest.approx(0.0, abs=1e-9)
        assert report.rmse == pytest.approx(0.0, abs=1e-9)
        assert report.mape_pct == pytest.approx(0.0, abs=1e-9)

    def test_constant_speed_dataset_gives_zero_error(self):
        dataset = tiny_dataset(days=16, noise=0.0, obs_noise=0.0, coupling=0.0,
                               weekly_amplitude=0.0, weather_impact=0.0)
        for s in dataset.series:
            s.values[:] = 33.0
        view = md.build_view(dataset)
        mc = tiny_train_config().model_config(dataset)
        fold = tr.kfold_split(view, mc, 5, seed=1)[-1]
        report = tr.historical_average_baseline(dataset, fold, mc.horizon)
        assert report.rmse == 0.0

    def test_rmse_converges_to_noise_sd(self):
        # periodic signal plus iid N(0, sigma^2): the baseline's RMSE estimates
        # sigma as the test sample count grows
        sigma = 2.0
        dataset = tiny_dataset(days=100, n_roads=2, noise=0.0, obs_noise=sigma,
                               coupling=0.0, weekly_amplitude=0.0, weather_impact=0.0)
        view = md.build_view(dataset)
        mc = tiny_train_config().model_config(dataset)
        fold = tr.kfold_split(view, mc, 5, seed=1)[-1]
        report = tr.historical_average_baseline(dataset, fold, mc.horizon)
        assert report.sample_count * mc.horizon > 1500
        assert abs(report.rmse - sigma) / sigma < 0.10
