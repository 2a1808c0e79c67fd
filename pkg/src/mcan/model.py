"""Full prediction model: three spatial-correlation channels, three temporal
LSTMs, contextual encoders, attention fusion, prediction heads, and the
training loss.

Samples are (road, time-index) pairs.  A sample at index ``t`` reads history
strictly before ``t`` and predicts the speeds at ``t .. t+H-1``; the trend and
deviation channels additionally supervise their value at ``t`` itself.
The trainer drives the batched path (samples grouped by road so window lengths
and neighbor sets agree); the per-sample functions mirror it one row at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import graphdata as gd
from . import hsc as hsc_mod
from . import nnlayers as nn
from .autodiff import DiffValue
from .errors import ConfigError, MissingDataError, SchemaError, ShapeMismatch
from .hsc import HscParams
from .nnlayers import AttentionParams, Dropout, FnnParams, LstmStack

ABLATION_FLAGS = ("ntr", "nde", "nd", "nw", "nemb")
ABLATION_NAMES = ("ntr", "nde", "ntr-nde", "nd", "nw", "nd-nw", "nemb")


def parse_ablations(names) -> frozenset[str]:
    """Expand ablation names (including the combined forms) into flag sets."""
    flags: set[str] = set()
    for name in names:
        parts = name.split("-") if name in ABLATION_NAMES else [name]
        if name not in ABLATION_NAMES or any(p not in ABLATION_FLAGS for p in parts):
            raise ConfigError(
                f"unknown ablation flag {name!r}; valid flags: {', '.join(ABLATION_NAMES)}"
            )
        flags.update(parts)
    return frozenset(flags)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs plus the dataset-derived encoder widths."""

    horizon: int = 6
    recent_steps: int = 6
    daily_steps: int = 4
    weekly_steps: int = 2
    embed_len: int = 12
    hops: int = 2
    filters: int = 8
    cpa_order: int = 5
    gcn_order: int = 5
    hidden_size: int = 36
    lstm_layers: int = 3
    fnn_layers: int = 3
    alpha: float = 0.2
    beta: float = 0.2
    ablations: frozenset[str] = frozenset()
    weather_code_count: int = 3
    road_type_count: int = 4

    def validate(self) -> None:
        for name in ("horizon", "recent_steps", "embed_len", "hops", "filters",
                     "cpa_order", "gcn_order", "hidden_size", "lstm_layers", "fnn_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.daily_steps < 0 or self.weekly_steps < 0:
            raise ConfigError("daily_steps and weekly_steps must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights alpha and beta must be >= 0")
        unknown = set(self.ablations) - set(ABLATION_FLAGS)
        if unknown:
            raise ConfigError(f"unknown ablation flags {sorted(unknown)}")

    @property
    def use_trend(self) -> bool:
        return "ntr" not in self.ablations

    @property
    def use_deviation(self) -> bool:
        return "nde" not in self.ablations

    @property
    def use_daily(self) -> bool:
        return "nd" not in self.ablations and self.daily_steps > 0

    @property
    def use_weekly(self) -> bool:
        return "nw" not in self.ablations and self.weekly_steps > 0

    @property
    def use_embedding(self) -> bool:
        return "nemb" not in self.ablations

    def channels(self) -> list[str]:
        out = ["speed"]
        if self.use_trend:
            out.append("trend")
        if self.use_deviation:
            out.append("deviation")
        return out

    @property
    def static_width(self) -> int:
        return 1 + self.road_type_count + 2

    @property
    def dynamic_width(self) -> int:
        return self.weather_code_count + 1 + 1 + 7


@dataclass
class McanParams:
    """Complete learnable state; disabled branches hold no parameters."""

    config: ModelConfig
    hsc: dict[str, HscParams]
    msc_heads: dict[str, FnnParams]
    lstm_recent: LstmStack
    lstm_daily: LstmStack | None
    lstm_weekly: LstmStack | None
    context_static: FnnParams
    context_dynamic: LstmStack
    fusion: AttentionParams
    output_head: FnnParams


@dataclass
class PredictionBundle:
    """Model outputs for one sample, in the value space of its inputs."""

    speed: np.ndarray  # length horizon
    trend: np.ndarray | None  # length 1 unless the channel is ablated
    deviation: np.ndarray | None


def init_mcan(config: ModelConfig, rng: np.random.Generator) -> McanParams:
    config.validate()
    hidden = config.hidden_size
    fnn_hidden = [hidden] * (config.fnn_layers - 1)
    hsc: dict[str, HscParams] = {}
    msc_heads: dict[str, FnnParams] = {}
    for channel in config.channels():
        hsc[channel] = hsc_mod.init_hsc(
            rng,
            channel=channel,
            embed_len=config.embed_len,
            hops=config.hops,
            filters=config.filters,
            cpa_order=config.cpa_order,
            gcn_order=config.gcn_order,
            hidden_size=hidden,
            lstm_layers=config.lstm_layers,
            fnn_hidden=fnn_hidden,
            out_width=1,
            use_embedding=config.use_embedding,
        )
        head_in = 1 if channel == "speed" else 2
        msc_heads[channel] = nn.init_fnn(rng, head_in, fnn_hidden, hidden)
    return McanParams(
        config=config,
        hsc=hsc,
        msc_heads=msc_heads,
        lstm_recent=nn.init_lstm_stack(rng, 4, hidden, config.lstm_layers),
        lstm_daily=nn.init_lstm_stack(rng, 3, hidden, config.lstm_layers) if config.use_daily else None,
        lstm_weekly=nn.init_lstm_stack(rng, 3, hidden, config.lstm_layers) if config.use_weekly else None,
        context_static=nn.init_fnn(rng, config.static_width, fnn_hidden, hidden),
        context_dynamic=nn.init_lstm_stack(rng, config.dynamic_width, hidden, config.lstm_layers),
        fusion=nn.init_attention(rng, hidden, hidden),
        output_head=nn.init_fnn(rng, hidden, fnn_hidden, config.horizon),
    )


def _lstm_parameters(prefix: str, stack: LstmStack):
    for k, cell in enumerate(stack.cells):
        for name in ("w_ix", "w_ih", "w_fx", "w_fh", "w_ox", "w_oh", "w_cx", "w_ch",
                     "b_i", "b_f", "b_o", "b_c"):
            yield f"{prefix}.{k}.{name}", getattr(cell, name)


def _fnn_parameters(prefix: str, params: FnnParams):
    for k, layer in enumerate(params.layers):
        yield f"{prefix}.{k}.weight", layer.weight
        yield f"{prefix}.{k}.bias", layer.bias


def named_parameters(params: McanParams):
    """Deterministic (name, value) walk over every learnable leaf."""
    for channel in params.config.channels():
        h = params.hsc[channel]
        base = f"hsc_{channel}"
        if h.cpa is not None:
            yield f"{base}.cpa.coefficients", h.cpa.coefficients
        yield f"{base}.gcn.correlation", h.gcn.correlation
        yield f"{base}.gcn.kernel", h.gcn.kernel
        yield from _lstm_parameters(f"{base}.lstm_self", h.lstm_self)
        yield from _lstm_parameters(f"{base}.lstm_neigh", h.lstm_neigh)
        yield from _fnn_parameters(f"{base}.head", h.head)
        yield from _fnn_parameters(f"msc_{channel}_head", params.msc_heads[channel])
    yield from _lstm_parameters("lstm_recent", params.lstm_recent)
    if params.lstm_daily is not None:
        yield from _lstm_parameters("lstm_daily", params.lstm_daily)
    if params.lstm_weekly is not None:
        yield from _lstm_parameters("lstm_weekly", params.lstm_weekly)
    yield from _fnn_parameters("context_static", params.context_static)
    yield from _lstm_parameters("context_dynamic", params.context_dynamic)
    yield "fusion.projection", params.fusion.projection
    yield "fusion.query", params.fusion.query
    yield from _fnn_parameters("output_head", params.output_head)


def parameter_list(params: McanParams) -> list[DiffValue]:
    return [p for _, p in named_parameters(params)]


def count_parameters(params: McanParams) -> int:
    return sum(p.data.size for p in parameter_list(params))


# ---------------------------------------------------------------------------
# Data view: per-road normalized values, daily averages, context features


@dataclass
class DataView:
    """Model-facing view of a dataset: (optionally normalized) speeds, frozen
    per-slot daily averages, and assembled context feature arrays."""

    graph: gd.RoadGraph
    values: list[np.ndarray]
    ybar: list[np.ndarray]
    means: np.ndarray
    stds: np.ndarray
    static_features: list[np.ndarray]
    dynamic_features: list[np.ndarray]
    hop_layers: list[list[set[int]]] = field(default_factory=list)

    def slots_per_day(self, road: int) -> int:
        return self.graph.nodes[road].slots_per_day

    def interval(self, road: int) -> int:
        return self.graph.nodes[road].interval_minutes

    def denormalize(self, road: int, values: np.ndarray) -> np.ndarray:
        return values * self.stds[road] + self.means[road]

    def ensure_hops(self, hops: int) -> None:
        if not self.hop_layers or len(self.hop_layers[0]) != hops:
            self.hop_layers = [
                gd.k_hop_neighbors(self.graph, road, hops) for road in range(self.graph.size)
            ]


def dynamic_feature_matrix(ctx: gd.ContextFeatures, slots_per_day: int,
                           weather_code_count: int) -> np.ndarray:
    """Per-slot dynamic factors: one-hot weather, holiday flag, normalized
    slot-of-day index, one-hot day-of-week."""
    count = len(ctx.weather)
    out = np.zeros((count, weather_code_count + 1 + 1 + 7))
    codes = np.minimum(ctx.weather, weather_code_count - 1)
    out[np.arange(count), codes] = 1.0
    out[:, weather_code_count] = ctx.holiday
    out[:, weather_code_count + 1] = (np.arange(count) % slots_per_day) / slots_per_day
    out[np.arange(count), weather_code_count + 2 + ctx.day_of_week] = 1.0
    return out


def build_view(
    dataset: gd.TrafficDataset,
    means: np.ndarray | None = None,
    stds: np.ndarray | None = None,
    ybar: list[np.ndarray] | None = None,
) -> DataView:
    """Raw view by default; the trainer passes fitted normalization stats and
    frozen training-portion daily averages.  ``ybar`` entries are in the same
    (normalized) space as the transformed values."""
    n = dataset.graph.size
    if means is None:
        means = np.zeros(n)
    if stds is None:
        stds = np.ones(n)
    values = [(s.values - means[i]) / stds[i] for i, s in enumerate(dataset.series)]
    if ybar is None:
        ybar = [
            gd.compute_daily_average(values[i], dataset.graph.nodes[i].slots_per_day)
            for i in range(n)
        ]
    return DataView(
        graph=dataset.graph,
        values=values,
        ybar=ybar,
        means=np.asarray(means, dtype=np.float64),
        stds=np.asarray(stds, dtype=np.float64),
        static_features=[ctx.static.copy() for ctx in dataset.contexts],
        dynamic_features=[
            dynamic_feature_matrix(ctx, dataset.graph.nodes[i].slots_per_day,
                                   dataset.weather_code_count)
            for i, ctx in enumerate(dataset.contexts)
        ],
    )


def _as_view(data) -> DataView:
    return data if isinstance(data, DataView) else build_view(data)


# ---------------------------------------------------------------------------
# Sample eligibility and index footprints


def eligible_times(view: DataView, config: ModelConfig, road: int) -> np.ndarray:
    """Sample times with full input history and a full prediction horizon."""
    view.ensure_hops(config.hops)
    length = len(view.values[road])
    spd = view.slots_per_day(road)
    start = config.recent_steps + 1
    if config.use_daily:
        start = max(start, config.daily_steps * spd + 1)
    if config.use_weekly:
        start = max(start, config.weekly_steps * 7 * spd + 1)
    interval = view.interval(road)
    involved = {road} | set().union(*view.hop_layers[road])
    for j in involved:
        t_interval = view.interval(j)
        window = hsc_mod.hour_window_length(t_interval)
        # need floor(t * interval / t_interval) >= window + 1
        start = max(start, -((-(window + 1) * t_interval) // interval))
    end = length - config.horizon  # inclusive upper bound is end - 1 + horizon
    if start >= end + 1:
        return np.array([], dtype=int)
    times = np.arange(start, end + 1)
    # the neighbor windows must also stay inside each neighbor's series
    for j in involved:
        t_interval = view.interval(j)
        local_t = (times * interval) // t_interval
        times = times[local_t <= len(view.values[j])]
    return times


def sample_footprint(view: DataView, config: ModelConfig, road: int, t: int) -> dict[int, np.ndarray]:
    """All history indices a sample reads, per road (targets excluded)."""
    view.ensure_hops(config.hops)
    spd = view.slots_per_day(road)
    own = [gd.recent_indices(t, config.recent_steps)]
    if config.use_daily:
        own.append(gd.periodic_indices(t, config.daily_steps, spd))
    if config.use_weekly:
        own.append(gd.periodic_indices(t, config.weekly_steps, 7 * spd))
    footprint: dict[int, np.ndarray] = {}
    interval = view.interval(road)
    involved = {road} | set().union(*view.hop_layers[road])
    for j in sorted(involved):
        idx = hsc_mod.hour_window_indices(t, interval, view.interval(j))
        parts = [idx]
        if j == road:
            parts.extend(own)
            parts.append(np.array([t - 1]))
        merged = np.unique(np.concatenate(parts))
        # the trend gather also touches each index's predecessor
        footprint[j] = np.unique(np.concatenate([merged, merged - 1]))
    return footprint


def target_indices(config: ModelConfig, t: int) -> np.ndarray:
    return np.arange(t, t + config.horizon)


# ---------------------------------------------------------------------------
# Batched input assembly


@dataclass
class GroupInputs:
    """Stacked model inputs for a batch of samples sharing one target road."""

    road: int
    times: np.ndarray
    target_windows: dict[str, np.ndarray]
    hop_windows: dict[str, list[dict[int, np.ndarray]]]
    prev_speed: np.ndarray  # (B, 1)
    ybar_at_t: np.ndarray  # (B, 1)
    recent: np.ndarray  # (B, recent_steps, 4)
    daily: np.ndarray | None  # (B, daily_steps, 3)
    weekly: np.ndarray | None  # (B, weekly_steps, 3)
    static: np.ndarray  # (B, static_width)
    dynamic: np.ndarray  # (B, recent_steps, dynamic_width)
    target_speed: np.ndarray  # (B, horizon)
    target_trend: np.ndarray | None  # (B, 1)
    target_deviation: np.ndarray | None  # (B, 1)


def assemble_group(view: DataView, config: ModelConfig, road: int, times) -> GroupInputs:
    view.ensure_hops(config.hops)
    times = np.asarray(times, dtype=int)
    values = view.values[road]
    ybar = view.ybar[road]
    spd = view.slots_per_day(road)
    interval = view.interval(road)

    temporal = [
        gd.build_temporal_inputs(
            values, ybar, int(t),
            config.recent_steps,
            config.daily_steps if config.use_daily else 0,
            config.weekly_steps if config.use_weekly else 0,
            spd,
        )
        for t in times
    ]
    recent = np.stack(
        [np.column_stack([tv.recent_speed, tv.recent_trend, tv.recent_deviation, tv.recent_average])
         for tv in temporal]
    )
    daily = weekly = None
    if config.use_daily:
        daily = np.stack(
            [np.column_stack([tv.daily_speed, tv.daily_trend, tv.daily_deviation]) for tv in temporal]
        )
    if config.use_weekly:
        weekly = np.stack(
            [np.column_stack([tv.weekly_speed, tv.weekly_trend, tv.weekly_deviation]) for tv in temporal]
        )

    channels = config.channels()
    target_windows: dict[str, np.ndarray] = {}
    hop_windows: dict[str, list[dict[int, np.ndarray]]] = {ch: [] for ch in channels}
    own_idx = np.stack([hsc_mod.hour_window_indices(int(t), interval, interval) for t in times])
    for ch in channels:
        target_windows[ch] = np.stack(
            [hsc_mod.channel_window(values, ybar, idx, ch) for idx in own_idx]
        )
    for layer in view.hop_layers[road]:
        per_channel: dict[str, dict[int, np.ndarray]] = {ch: {} for ch in channels}
        for j in sorted(layer):
            j_values = view.values[j]
            j_ybar = view.ybar[j]
            j_idx = np.stack(
                [hsc_mod.hour_window_indices(int(t), interval, view.interval(j)) for t in times]
            )
            for ch in channels:
                per_channel[ch][j] = np.stack(
                    [hsc_mod.channel_window(j_values, j_ybar, idx, ch) for idx in j_idx]
                )
        for ch in channels:
            hop_windows[ch].append(per_channel[ch])

    horizon_idx = times[:, None] + np.arange(config.horizon)[None, :]
    if horizon_idx.max() >= len(values):
        raise MissingDataError(
            f"road {road}: sample at t={times.max()} needs {config.horizon} future values"
        )
    target_speed = values[horizon_idx]
    target_trend = (values[times] - values[times - 1]).reshape(-1, 1) if config.use_trend else None
    target_dev = (values[times] - ybar[times % spd]).reshape(-1, 1) if config.use_deviation else None

    recent_idx = np.stack([gd.recent_indices(int(t), config.recent_steps) for t in times])
    return GroupInputs(
        road=road,
        times=times,
        target_windows=target_windows,
        hop_windows=hop_windows,
        prev_speed=values[times - 1].reshape(-1, 1),
        ybar_at_t=ybar[times % spd].reshape(-1, 1),
        recent=recent,
        daily=daily,
        weekly=weekly,
        static=np.tile(view.static_features[road], (len(times), 1)),
        dynamic=view.dynamic_features[road][recent_idx],
        target_speed=target_speed,
        target_trend=target_trend,
        target_deviation=target_dev,
    )


# ---------------------------------------------------------------------------
# Forward passes


def _msc_components(params: McanParams, gi: GroupInputs, drop: Dropout | None):
    """Per-channel spatial features plus the raw channel outputs for the loss."""
    config = params.config
    features: dict[str, DiffValue] = {}
    outputs: dict[str, DiffValue] = {}
    for ch in config.channels():
        out = hsc_mod.hsc_forward_batch(
            params.hsc[ch], gi.target_windows[ch], gi.hop_windows[ch], drop
        )
        outputs[ch] = out
        if ch == "speed":
            head_in = out
        elif ch == "trend":
            head_in = ad.concat([out, ad.constant(gi.prev_speed)], axis=1)
        else:
            head_in = ad.concat([out, ad.constant(gi.ybar_at_t)], axis=1)
        features[ch] = nn.fnn_forward(params.msc_heads[ch], head_in, drop)
    return features, outputs


def _sequence_steps(stacked: np.ndarray) -> list[DiffValue]:
    return [ad.constant(stacked[:, k, :]) for k in range(stacked.shape[1])]


def _mtc_components(params: McanParams, gi: GroupInputs, drop: Dropout | None):
    config = params.config
    if gi.recent.shape[1] != config.recent_steps:
        raise ShapeMismatch(
            f"recent input has {gi.recent.shape[1]} steps, expected {config.recent_steps}"
        )
    out = {"recent": nn.lstm_sequence(params.lstm_recent, _sequence_steps(gi.recent), drop)}
    if config.use_daily:
        if gi.daily is None or gi.daily.shape[1] != config.daily_steps:
            raise ShapeMismatch(f"daily input must have {config.daily_steps} steps")
        out["daily"] = nn.lstm_sequence(params.lstm_daily, _sequence_steps(gi.daily), drop)
    if config.use_weekly:
        if gi.weekly is None or gi.weekly.shape[1] != config.weekly_steps:
            raise ShapeMismatch(f"weekly input must have {config.weekly_steps} steps")
        out["weekly"] = nn.lstm_sequence(params.lstm_weekly, _sequence_steps(gi.weekly), drop)
    return out


def _context_components(params: McanParams, static: np.ndarray, dynamic: np.ndarray,
                        drop: Dropout | None):
    static_summary = nn.fnn_forward(params.context_static, ad.constant(static), drop)
    dynamic_summary = nn.lstm_sequence(params.context_dynamic, _sequence_steps(dynamic), drop)
    return static_summary, dynamic_summary


def fusion_components(params: McanParams, gi: GroupInputs, drop: Dropout | None = None):
    """All enabled component vectors in canonical order, plus channel outputs."""
    msc_features, channel_outputs = _msc_components(params, gi, drop)
    mtc = _mtc_components(params, gi, drop)
    ctx_static, ctx_dynamic = _context_components(params, gi.static, gi.dynamic, drop)
    components = [msc_features[ch] for ch in params.config.channels()]
    components.append(mtc["recent"])
    if "daily" in mtc:
        components.append(mtc["daily"])
    if "weekly" in mtc:
        components.append(mtc["weekly"])
    components.extend([ctx_static, ctx_dynamic])
    return components, channel_outputs


def forward_group(params: McanParams, gi: GroupInputs, drop: Dropout | None = None):
    """Batched forward: returns (speed (B,H), trend (B,1)|None, deviation (B,1)|None)."""
    components, channel_outputs = fusion_components(params, gi, drop)
    fused = nn.attention_fuse(params.fusion, components)
    speed = nn.fnn_forward(params.output_head, fused, drop)
    return speed, channel_outputs.get("trend"), channel_outputs.get("deviation")


# ---------------------------------------------------------------------------
# Per-sample surfaces


def msc_forward(params: McanParams, road: int, t: int, graph: gd.RoadGraph, data) -> dict[str, np.ndarray]:
    """Per-channel spatial feature vectors for one sample."""
    view = _as_view(data)
    gi = assemble_group(view, params.config, road, [t])
    features, _ = _msc_components(params, gi, None)
    return {ch: f.data[0].copy() for ch, f in features.items()}


def mtc_forward(params: McanParams, temporal: gd.TemporalInputs) -> dict[str, np.ndarray]:
    """Summary vectors of the recent/daily/weekly LSTMs for one sample."""
    gi_recent = np.column_stack(
        [temporal.recent_speed, temporal.recent_trend, temporal.recent_deviation,
         temporal.recent_average]
    )[None, :, :]
    daily = np.column_stack(
        [temporal.daily_speed, temporal.daily_trend, temporal.daily_deviation]
    )[None, :, :] if params.config.use_daily else None
    weekly = np.column_stack(
        [temporal.weekly_speed, temporal.weekly_trend, temporal.weekly_deviation]
    )[None, :, :] if params.config.use_weekly else None
    gi = GroupInputs(
        road=-1, times=np.array([0]), target_windows={}, hop_windows={},
        prev_speed=np.zeros((1, 1)), ybar_at_t=np.zeros((1, 1)),
        recent=gi_recent, daily=daily, weekly=weekly,
        static=np.zeros((1, params.config.static_width)),
        dynamic=np.zeros((1, params.config.recent_steps, params.config.dynamic_width)),
        target_speed=np.zeros((1, params.config.horizon)),
        target_trend=None, target_deviation=None,
    )
    out = _mtc_components(params, gi, None)
    return {name: v.data[0].copy() for name, v in out.items()}


def context_forward(params: McanParams, static: np.ndarray, dynamic: np.ndarray):
    """Static and dynamic context summaries for one sample."""
    if len(dynamic) == 0:
        raise MissingDataError("context_forward: dynamic sequence is empty")
    s, d = _context_components(params, np.asarray(static)[None, :],
                               np.asarray(dynamic)[None, :, :], None)
    return s.data[0].copy(), d.data[0].copy()


def mcan_forward(params: McanParams, road: int, t: int, graph: gd.RoadGraph, data) -> PredictionBundle:
    """Full per-sample forward in evaluation mode (deterministic)."""
    view = _as_view(data)
    gi = assemble_group(view, params.config, road, [t])
    speed, trend, deviation = forward_group(params, gi, None)
    return PredictionBundle(
        speed=speed.data[0].copy(),
        trend=trend.data[0].copy() if trend is not None else None,
        deviation=deviation.data[0].copy() if deviation is not None else None,
    )


# ---------------------------------------------------------------------------
# Loss


def loss_batch(
    speed_pred: DiffValue,
    speed_target: np.ndarray,
    trend_pred: DiffValue | None,
    trend_target: np.ndarray | None,
    deviation_pred: DiffValue | None,
    deviation_target: np.ndarray | None,
    alpha: float,
    beta: float,
) -> DiffValue:
    """Squared speed error plus weighted trend/deviation terms, summed over the batch."""
    if speed_pred.data.shape != np.shape(speed_target):
        raise ShapeMismatch(
            f"loss: speed prediction {speed_pred.data.shape} vs target {np.shape(speed_target)}"
        )
    total = ad.vsum(ad.square(ad.subtract(speed_pred, ad.constant(speed_target))))
    for pred, target, weight, name in (
        (trend_pred, trend_target, alpha, "trend"),
        (deviation_pred, deviation_target, beta, "deviation"),
    ):
        if pred is None:
            continue
        if target is None or pred.data.shape != np.shape(target):
            raise ShapeMismatch(f"loss: {name} prediction/target length mismatch")
        term = ad.vsum(ad.square(ad.subtract(pred, ad.constant(target))))
        total = ad.add(total, ad.multiply(term, weight))
    return total


def loss(bundle: PredictionBundle, speed_target, trend_target, deviation_target,
         alpha: float, beta: float) -> float:
    """Per-sample loss value on plain arrays (same arithmetic as training)."""
    value = loss_batch(
        ad.constant(np.asarray(bundle.speed)[None, :]),
        np.asarray(speed_target, dtype=np.float64)[None, :],
        ad.constant(np.asarray(bundle.trend)[None, :]) if bundle.trend is not None else None,
        np.asarray(trend_target, dtype=np.float64)[None, :] if bundle.trend is not None else None,
        ad.constant(np.asarray(bundle.deviation)[None, :]) if bundle.deviation is not None else None,
        np.asarray(deviation_target, dtype=np.float64)[None, :] if bundle.deviation is not None else None,
        alpha, beta,
    )
    return value.item()


# ---------------------------------------------------------------------------
# Checkpoints


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: McanParams, means: np.ndarray, stds: np.ndarray,
                    ybar: list[np.ndarray], extra_config: dict | None = None) -> None:
    config = params.config
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "horizon": config.horizon,
            "recent_steps": config.recent_steps,
            "daily_steps": config.daily_steps,
            "weekly_steps": config.weekly_steps,
            "embed_len": config.embed_len,
            "hops": config.hops,
            "filters": config.filters,
            "cpa_order": config.cpa_order,
            "gcn_order": config.gcn_order,
            "hidden_size": config.hidden_size,
            "lstm_layers": config.lstm_layers,
            "fnn_layers": config.fnn_layers,
            "alpha": config.alpha,
            "beta": config.beta,
            "ablations": sorted(config.ablations),
            "weather_code_count": config.weather_code_count,
            "road_type_count": config.road_type_count,
            **(extra_config or {}),
        },
        "parameters": {
            name: {"shape": list(p.data.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in named_parameters(params)
        },
        "state": {
            "mean": np.asarray(means).tolist(),
            "std": np.asarray(stds).tolist(),
            "daily_average": {str(road): y.tolist() for road, y in enumerate(ybar)},
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Returns (params, means, stds, ybar, config echo dict)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid checkpoint JSON: {exc}") from None
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise SchemaError(
            f"{path}: unsupported checkpoint format version {doc.get('format_version')}"
        )
    cfg = doc["config"]
    config = ModelConfig(
        horizon=cfg["horizon"],
        recent_steps=cfg["recent_steps"],
        daily_steps=cfg["daily_steps"],
        weekly_steps=cfg["weekly_steps"],
        embed_len=cfg["embed_len"],
        hops=cfg["hops"],
        filters=cfg["filters"],
        cpa_order=cfg["cpa_order"],
        gcn_order=cfg["gcn_order"],
        hidden_size=cfg["hidden_size"],
        lstm_layers=cfg["lstm_layers"],
        fnn_layers=cfg["fnn_layers"],
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        ablations=frozenset(cfg["ablations"]),
        weather_code_count=cfg["weather_code_count"],
        road_type_count=cfg["road_type_count"],
    )
    params = init_mcan(config, np.random.default_rng(0))
    stored = doc["parameters"]
    for name, p in named_parameters(params):
        if name not in stored:
            raise SchemaError(f"{path}: checkpoint is missing parameter {name!r}")
        entry = stored[name]
        if tuple(entry["shape"]) != p.data.shape:
            raise SchemaError(
                f"{path}: parameter {name!r} has shape {entry['shape']}, expected {list(p.data.shape)}"
            )
        p.data[...] = np.asarray(entry["values"], dtype=np.float64).reshape(p.data.shape)
    state = doc["state"]
    means = np.asarray(state["mean"], dtype=np.float64)
    stds = np.asarray(state["std"], dtype=np.float64)
    ybar = [
        np.asarray(state["daily_average"][str(road)], dtype=np.float64)
        for road in range(len(means))
    ]
    return params, means, stds, ybar, cfg
