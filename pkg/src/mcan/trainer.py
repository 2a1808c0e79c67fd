"""Training loop, time-series cross validation, normalization, and metrics.

Cross-validation uses contiguous-in-time test blocks: eligible (road, t)
samples are ordered by wall-clock time and cut into k blocks.  For a given
fold, normalization statistics and daily averages are fitted only on days that
do not touch the test block's wall-clock window, and training samples whose
input windows or targets reach into that window are dropped, so no test value
ever influences fitting or gradients.  A config flag restores shuffled folds
(which inherently overlap) for parity with conventional shuffled evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import graphdata as gd
from . import hsc as hsc_mod
from . import model as md
from .errors import ConfigError, MissingDataError, TrainingDivergence

Sample = tuple[int, int]  # (road id, time index)


@dataclass
class TrainConfig:
    """Run configuration; defaults follow the reference hyperparameters."""

    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.0001
    dropout: float = 0.5
    alpha: float = 0.2
    beta: float = 0.2
    recent_steps: int = 6
    daily_steps: int = 4
    weekly_steps: int = 2
    horizon: int = 6
    folds: int = 5
    fold_index: int | None = None  # default: the last (latest) block
    seed: int = 0
    ablations: tuple[str, ...] = ()
    embed_len: int = 12
    hops: int = 2
    filters: int = 8
    cpa_order: int = 5
    gcn_order: int = 5
    hidden_size: int = 36
    lstm_layers: int = 3
    fnn_layers: int = 3
    max_train_samples: int | None = None
    max_test_samples: int | None = None
    shuffled_folds: bool = False

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "horizon", "recent_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.fold_index is not None and not 0 <= self.fold_index < self.folds:
            raise ConfigError(f"fold_index must be in [0, {self.folds}), got {self.fold_index}")

    def model_config(self, dataset: gd.TrafficDataset) -> md.ModelConfig:
        return md.ModelConfig(
            horizon=self.horizon,
            recent_steps=self.recent_steps,
            daily_steps=self.daily_steps,
            weekly_steps=self.weekly_steps,
            embed_len=self.embed_len,
            hops=self.hops,
            filters=self.filters,
            cpa_order=self.cpa_order,
            gcn_order=self.gcn_order,
            hidden_size=self.hidden_size,
            lstm_layers=self.lstm_layers,
            fnn_layers=self.fnn_layers,
            alpha=self.alpha,
            beta=self.beta,
            ablations=md.parse_ablations(self.ablations),
            weather_code_count=dataset.weather_code_count,
            road_type_count=dataset.road_type_count,
        )


# ---------------------------------------------------------------------------
# Folds


@dataclass
class Fold:
    """One train/test partition; the wall-clock window spans the test targets."""

    index: int
    train: list[Sample]
    test: list[Sample]
    test_wall: tuple[int, int] | None  # inclusive minutes; None for shuffled folds


def eligible_samples(view: md.DataView, config: md.ModelConfig) -> list[Sample]:
    samples: list[Sample] = []
    for road in range(view.graph.size):
        for t in md.eligible_times(view, config, road):
            samples.append((road, int(t)))
    return samples


def _wall(view: md.DataView, sample: Sample) -> int:
    road, t = sample
    return t * view.interval(road)


def _sample_touches_window(view: md.DataView, config: md.ModelConfig, sample: Sample,
                           wall: tuple[int, int]) -> bool:
    """Whether any index the sample reads or predicts falls inside the window.

    Interval arithmetic over the same index sets ``md.sample_footprint``
    enumerates (the tests cross-check the two).
    """
    lo, hi = wall
    road, t = sample
    interval = view.interval(road)

    def hits_range(first_idx: int, last_idx: int, step_minutes: int) -> bool:
        return last_idx * step_minutes >= lo and first_idx * step_minutes <= hi

    def hits_periodic(t_idx: int, steps: int, period: int, step_minutes: int) -> bool:
        for k in range(1, steps + 1):
            u = t_idx - k * period
            if hits_range(u - 1, u, step_minutes):
                return True
        return False

    if hits_range(t, t + config.horizon - 1, interval):  # targets
        return True
    if hits_range(t - config.recent_steps - 1, t - 1, interval):  # recent block
        return True
    spd = view.slots_per_day(road)
    if config.use_daily and hits_periodic(t, config.daily_steps, spd, interval):
        return True
    if config.use_weekly and hits_periodic(t, config.weekly_steps, 7 * spd, interval):
        return True
    for j in {road} | set().union(*view.hop_layers[road]):
        j_interval = view.interval(j)
        local_t = (t * interval) // j_interval
        length = hsc_mod.hour_window_length(j_interval)
        if hits_range(local_t - length - 1, local_t - 1, j_interval):
            return True
    return False


def kfold_split(view: md.DataView, config: md.ModelConfig, k: int, seed: int,
                shuffled: bool = False) -> list[Fold]:
    """k folds whose test blocks partition the eligible samples.

    Contiguous mode orders samples by wall-clock time, cuts k blocks, and
    removes training samples that would read any test-window value.  Shuffled
    mode permutes samples instead and performs no leak filtering.
    """
    if k < 2:
        raise ConfigError(f"folds must be >= 2, got {k}")
    samples = eligible_samples(view, config)
    if len(samples) < k:
        raise MissingDataError(f"only {len(samples)} eligible samples for {k} folds")
    if shuffled:
        order = np.random.default_rng(seed).permutation(len(samples))
        blocks = np.array_split(order, k)
        folds = []
        for f, block in enumerate(blocks):
            test_set = {samples[i] for i in block}
            folds.append(Fold(
                index=f,
                train=[s for s in samples if s not in test_set],
                test=[samples[i] for i in sorted(block)],
                test_wall=None,
            ))
        return folds
    ordered = sorted(samples, key=lambda s: (_wall(view, s), s[0]))
    blocks = np.array_split(np.arange(len(ordered)), k)
    folds = []
    for f, block in enumerate(blocks):
        test = [ordered[i] for i in block]
        lo = min(_wall(view, s) for s in test)
        hi = max((s[1] + config.horizon - 1) * view.interval(s[0]) for s in test)
        in_block = set(block.tolist())
        rest = [ordered[i] for i in range(len(ordered)) if i not in in_block]
        train = [s for s in rest if not _sample_touches_window(view, config, s, (lo, hi))]
        folds.append(Fold(index=f, train=train, test=test, test_wall=(lo, hi)))
    return folds


def training_day_masks(dataset: gd.TrafficDataset, fold: Fold) -> list[np.ndarray]:
    """Per road: which whole days are safe to use for fitting (no test overlap)."""
    days = dataset.days
    masks = []
    for road in range(dataset.graph.size):
        mask = np.ones(days, dtype=bool)
        if fold.test_wall is not None:
            lo, hi = fold.test_wall
            for day in range(days):
                day_lo, day_hi = day * gd.MINUTES_PER_DAY, (day + 1) * gd.MINUTES_PER_DAY - 1
                if day_hi >= lo and day_lo <= hi:
                    mask[day] = False
        masks.append(mask)
    return masks


# ---------------------------------------------------------------------------
# Normalization


@dataclass
class Scaler:
    """Per-road z-score parameters fitted on training data only."""

    means: np.ndarray
    stds: np.ndarray


def normalize_fit(dataset: gd.TrafficDataset, day_masks: list[np.ndarray]) -> Scaler:
    n = dataset.graph.size
    means = np.zeros(n)
    stds = np.ones(n)
    for road in range(n):
        spd = dataset.graph.nodes[road].slots_per_day
        mask = np.repeat(day_masks[road], spd)
        training = dataset.series[road].values[mask]
        if len(training) == 0:
            raise MissingDataError(f"road {road}: no training days to fit normalization")
        means[road] = training.mean()
        std = training.std()
        stds[road] = std if std > 1e-12 else 1.0  # constant series fallback
    return Scaler(means=means, stds=stds)


def normalize_apply(scaler: Scaler, road: int, values: np.ndarray) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - scaler.means[road]) / scaler.stds[road]


def normalize_invert(scaler: Scaler, road: int, values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * scaler.stds[road] + scaler.means[road]


def fit_daily_averages(dataset: gd.TrafficDataset, scaler: Scaler,
                       day_masks: list[np.ndarray]) -> list[np.ndarray]:
    """Frozen per-slot averages over training days, in normalized units."""
    ybar = []
    for road in range(dataset.graph.size):
        spd = dataset.graph.nodes[road].slots_per_day
        normalized = normalize_apply(scaler, road, dataset.series[road].values)
        by_day = normalized.reshape(-1, spd)
        mask = day_masks[road]
        if not mask.any():
            raise MissingDataError(f"road {road}: no training days to fit daily averages")
        ybar.append(by_day[mask].mean(axis=0))
    return ybar


def fitted_view(dataset: gd.TrafficDataset, fold: Fold) -> tuple[md.DataView, Scaler]:
    masks = training_day_masks(dataset, fold)
    scaler = normalize_fit(dataset, masks)
    ybar = fit_daily_averages(dataset, scaler, masks)
    view = md.build_view(dataset, means=scaler.means, stds=scaler.stds, ybar=ybar)
    return view, scaler


# ---------------------------------------------------------------------------
# Batch plumbing


def _subset_group(gi: md.GroupInputs, rows: np.ndarray) -> md.GroupInputs:
    pick = lambda a: None if a is None else a[rows]
    return md.GroupInputs(
        road=gi.road,
        times=gi.times[rows],
        target_windows={ch: w[rows] for ch, w in gi.target_windows.items()},
        hop_windows={
            ch: [{j: w[rows] for j, w in layer.items()} for layer in layers]
            for ch, layers in gi.hop_windows.items()
        },
        prev_speed=gi.prev_speed[rows],
        ybar_at_t=gi.ybar_at_t[rows],
        recent=gi.recent[rows],
        daily=pick(gi.daily),
        weekly=pick(gi.weekly),
        static=gi.static[rows],
        dynamic=gi.dynamic[rows],
        target_speed=gi.target_speed[rows],
        target_trend=pick(gi.target_trend),
        target_deviation=pick(gi.target_deviation),
    )


class SampleCache:
    """Pre-assembled model inputs for a fixed sample set, sliceable per batch."""

    def __init__(self, view: md.DataView, config: md.ModelConfig, samples: list[Sample]):
        self.groups: dict[int, md.GroupInputs] = {}
        self.row_of: dict[Sample, int] = {}
        by_road: dict[int, list[int]] = {}
        for road, t in samples:
            by_road.setdefault(road, []).append(t)
        for road in sorted(by_road):
            times = sorted(by_road[road])
            self.groups[road] = md.assemble_group(view, config, road, times)
            for row, t in enumerate(times):
                self.row_of[(road, t)] = row

    def batch_groups(self, batch: list[Sample]) -> list[md.GroupInputs]:
        rows_by_road: dict[int, list[int]] = {}
        for sample in batch:
            rows_by_road.setdefault(sample[0], []).append(self.row_of[sample])
        return [
            _subset_group(self.groups[road], np.asarray(sorted(rows), dtype=int))
            for road, rows in sorted(rows_by_road.items())
        ]


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    params: md.McanParams
    scaler: Scaler
    ybar: list[np.ndarray]
    history: list[float]  # mean per-sample training loss per epoch
    fold: Fold
    adam_steps: int
    model_config: md.ModelConfig


def _first_nonfinite(params: md.McanParams, loss_value: float) -> str:
    if not np.isfinite(loss_value):
        for name, p in md.named_parameters(params):
            if not np.all(np.isfinite(p.data)):
                return name
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                return f"grad of {name}"
        return "loss"
    for name, p in md.named_parameters(params):
        if not np.all(np.isfinite(p.data)):
            return name
    return "loss"


def train(dataset: gd.TrafficDataset, config: TrainConfig) -> TrainResult:
    """Mini-batch Adam training on the configured fold; deterministic per seed."""
    config.validate()
    mc = config.model_config(dataset)
    raw_view = md.build_view(dataset)
    folds = kfold_split(raw_view, mc, config.folds, config.seed, config.shuffled_folds)
    fold = folds[config.fold_index if config.fold_index is not None else config.folds - 1]
    if not fold.train:
        raise MissingDataError(f"fold {fold.index} has no usable training samples")
    view, scaler = fitted_view(dataset, fold)

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    rng_init = np.random.default_rng(seeds[0])
    rng_shuffle = np.random.default_rng(seeds[1])
    rng_drop = np.random.default_rng(seeds[2])
    rng_subsample = np.random.default_rng(seeds[3])

    train_samples = list(fold.train)
    if config.max_train_samples is not None and len(train_samples) > config.max_train_samples:
        keep = rng_subsample.choice(len(train_samples), config.max_train_samples, replace=False)
        train_samples = [train_samples[i] for i in sorted(keep)]

    params = md.init_mcan(mc, rng_init)
    cache = SampleCache(view, mc, train_samples)
    leaves = md.parameter_list(params)
    state = ad.AdamState(learning_rate=config.learning_rate)
    drop = md.Dropout(config.dropout, rng_drop) if config.dropout > 0 else None

    history: list[float] = []
    count = len(train_samples)
    for _ in range(config.epochs):
        order = rng_shuffle.permutation(count)
        epoch_loss = 0.0
        for start in range(0, count, config.batch_size):
            batch = [train_samples[i] for i in order[start : start + config.batch_size]]
            total = None
            for gi in cache.batch_groups(batch):
                speed, trend, dev = md.forward_group(params, gi, drop)
                part = md.loss_batch(
                    speed, gi.target_speed, trend, gi.target_trend,
                    dev, gi.target_deviation, mc.alpha, mc.beta,
                )
                total = part if total is None else ad.add(total, part)
            ad.zero_grads(leaves)
            total.backward()
            value = total.item()
            if not np.isfinite(value):
                raise TrainingDivergence(
                    f"non-finite training loss; first non-finite tensor: "
                    f"{_first_nonfinite(params, value)}"
                )
            ad.adam_step(leaves, None, state)
            epoch_loss += value
        for p in leaves:
            if not np.all(np.isfinite(p.data)):
                raise TrainingDivergence(
                    f"non-finite parameter after update: {_first_nonfinite(params, epoch_loss)}"
                )
        history.append(epoch_loss / count)
    return TrainResult(
        params=params, scaler=scaler, ybar=view.ybar, history=history,
        fold=fold, adam_steps=state.step, model_config=mc,
    )


# ---------------------------------------------------------------------------
# Metrics and evaluation


@dataclass
class MetricsReport:
    """Denormalized error metrics with a per-horizon-step breakdown."""

    mae: float
    mape_pct: float
    rmse: float
    per_step_mae: np.ndarray
    per_step_rmse: np.ndarray
    sample_count: int
    mape_count: int


def compute_metrics(truth: np.ndarray, predictions: np.ndarray) -> MetricsReport:
    """MAE / MAPE / RMSE over (samples, horizon) arrays in km/h.

    MAPE is computed only over nonzero truths; MAE and RMSE use every value.
    """
    truth = np.asarray(truth, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if truth.shape != predictions.shape or truth.ndim != 2 or truth.size == 0:
        raise MissingDataError(f"metrics need matching non-empty (samples, horizon) arrays, "
                               f"got {truth.shape} and {predictions.shape}")
    error = predictions - truth
    abs_error = np.abs(error)
    nonzero = truth != 0.0
    mape = float((abs_error[nonzero] / np.abs(truth[nonzero])).mean() * 100.0) if nonzero.any() else 0.0
    return MetricsReport(
        mae=float(abs_error.mean()),
        mape_pct=mape,
        rmse=float(np.sqrt((error * error).mean())),
        per_step_mae=abs_error.mean(axis=0),
        per_step_rmse=np.sqrt((error * error).mean(axis=0)),
        sample_count=truth.shape[0],
        mape_count=int(nonzero.sum()),
    )


def predict_samples(params: md.McanParams, view: md.DataView, samples: list[Sample],
                    batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Denormalized (truth, prediction) arrays of shape (samples, horizon),
    rows in the order of ``samples``."""
    if not samples:
        raise MissingDataError("no samples to evaluate")
    config = params.config
    horizon = config.horizon
    truth = np.empty((len(samples), horizon))
    preds = np.empty((len(samples), horizon))
    by_road: dict[int, list[int]] = {}
    for pos, (road, _) in enumerate(samples):
        by_road.setdefault(road, []).append(pos)
    for road in sorted(by_road):
        positions = by_road[road]
        times = [samples[pos][1] for pos in positions]
        for start in range(0, len(times), batch_size):
            chunk_pos = positions[start : start + batch_size]
            chunk_times = times[start : start + batch_size]
            gi = md.assemble_group(view, config, road, chunk_times)
            speed, _, _ = md.forward_group(params, gi, None)
            truth[chunk_pos] = view.denormalize(road, gi.target_speed)
            preds[chunk_pos] = view.denormalize(road, speed.data)
    return truth, preds


def evaluate(params: md.McanParams, view: md.DataView, samples: list[Sample]) -> MetricsReport:
    """Evaluation-mode metrics on a sample split, in km/h."""
    truth, preds = predict_samples(params, view, samples)
    return compute_metrics(truth, preds)


def evaluate_result(result: TrainResult, dataset: gd.TrafficDataset,
                    samples: list[Sample] | None = None) -> MetricsReport:
    view = md.build_view(dataset, means=result.scaler.means, stds=result.scaler.stds,
                         ybar=result.ybar)
    return evaluate(result.params, view, samples if samples is not None else result.fold.test)


def historical_average_baseline(dataset: gd.TrafficDataset, fold: Fold, horizon: int,
                                samples: list[Sample] | None = None) -> MetricsReport:
    """Predict the training-day per-slot mean speed for every horizon step."""
    masks = training_day_masks(dataset, fold)
    averages = []
    for road in range(dataset.graph.size):
        spd = dataset.graph.nodes[road].slots_per_day
        by_day = dataset.series[road].values.reshape(-1, spd)
        if not masks[road].any():
            raise MissingDataError(f"road {road}: no training days for the baseline")
        averages.append(by_day[masks[road]].mean(axis=0))
    split = samples if samples is not None else fold.test
    if not split:
        raise MissingDataError("no samples to evaluate")
    truth = np.empty((len(split), horizon))
    preds = np.empty((len(split), horizon))
    for row, (road, t) in enumerate(split):
        spd = dataset.graph.nodes[road].slots_per_day
        idx = np.arange(t, t + horizon)
        truth[row] = dataset.series[road].values[idx]
        preds[row] = averages[road][idx % spd]
    return compute_metrics(truth, preds)
