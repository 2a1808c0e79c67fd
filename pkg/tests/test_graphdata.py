"""Tests for graph/series types, derived channels, windows, generator, and file IO."""

import numpy as np
import pytest

from mcan import graphdata as gd
from mcan.errors import ConfigError, MissingDataError, SchemaError


def line_graph(n=3, interval=60):
    nodes = [
        gd.RoadSegment(id=i, length_m=500.0, road_type=1, lanes=2, traffic_lights=1,
                       interval_minutes=interval)
        for i in range(n)
    ]
    edges = [(i, i + 1) for i in range(n - 1)]
    return gd.RoadGraph(nodes, edges)


class TestGraphInvariants:
    def test_duplicate_edge_rejected(self):
        nodes = line_graph(3).nodes
        with pytest.raises(SchemaError, match="duplicate"):
            gd.RoadGraph(list(nodes), [(0, 1), (1, 0)])

    def test_self_loop_rejected(self):
        nodes = line_graph(2).nodes
        with pytest.raises(SchemaError, match="self-loop"):
            gd.RoadGraph(list(nodes), [(1, 1)])

    def test_non_dense_ids_rejected(self):
        nodes = [
            gd.RoadSegment(id=i, length_m=1.0, road_type=0, lanes=1, traffic_lights=0,
                           interval_minutes=60)
            for i in (0, 2)
        ]
        with pytest.raises(SchemaError, match="dense"):
            gd.RoadGraph(nodes, [])

    def test_interval_must_divide_day(self):
        with pytest.raises(SchemaError, match="divide"):
            gd.RoadSegment(id=0, length_m=1.0, road_type=0, lanes=1, traffic_lights=0,
                           interval_minutes=7)


class TestKHopNeighbors:
    def test_line_middle_node(self):
        graph = line_graph(3)
        assert gd.k_hop_neighbors(graph, 1, 1) == [{0, 2}]

    def test_line_end_node_two_hops(self):
        graph = line_graph(3)
        assert gd.k_hop_neighbors(graph, 0, 2) == [{1}, {2}]

    def test_isolated_node(self):
        nodes = line_graph(3).nodes
        graph = gd.RoadGraph(list(nodes), [])
        assert gd.k_hop_neighbors(graph, 1, 2) == [set(), set()]

    def test_invalid_node_rejected(self):
        with pytest.raises(MissingDataError, match="node"):
            gd.k_hop_neighbors(line_graph(3), 9, 1)

    def test_matches_matrix_power_oracle_on_random_graphs(self):
        # Independent oracle: boolean adjacency powers give exact hop distances.
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(2, 50))
            nodes = [
                gd.RoadSegment(id=i, length_m=1.0, road_type=0, lanes=1, traffic_lights=0,
                               interval_minutes=60)
                for i in range(n)
            ]
            edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.15]
            graph = gd.RoadGraph(nodes, edges)
            adj = np.zeros((n, n), dtype=bool)
            for a, b in edges:
                adj[a, b] = adj[b, a] = True
            hops = 4
            reach = np.eye(n, dtype=bool)
            seen = np.eye(n, dtype=bool)
            layers_oracle = []
            for _ in range(hops):
                reach = reach @ adj
                layer = reach & ~seen
                seen |= layer
                layers_oracle.append(layer)
            node = int(rng.integers(0, n))
            layers = gd.k_hop_neighbors(graph, node, hops)
            for k in range(hops):
                assert layers[k] == set(np.flatnonzero(layers_oracle[k][node]))


class TestChannels:
    def test_trend_definition(self):
        assert np.array_equal(gd.compute_trend([10.0, 12.0, 11.0]), [2.0, -1.0])

    def test_trend_constant_series(self):
        assert np.array_equal(gd.compute_trend([7.0, 7.0, 7.0, 7.0]), [0.0, 0.0, 0.0])

    def test_trend_single_step(self):
        assert np.array_equal(gd.compute_trend([0.0, 5.0]), [5.0])

    def test_trend_too_short_rejected(self):
        with pytest.raises(MissingDataError):
            gd.compute_trend([3.0])

    def test_daily_average_two_days(self):
        assert np.array_equal(gd.compute_daily_average([10.0, 20.0, 14.0, 24.0], 2), [12.0, 22.0])

    def test_daily_average_single_day(self):
        assert np.array_equal(gd.compute_daily_average([3.0, 4.0, 5.0], 3), [3.0, 4.0, 5.0])

    def test_daily_average_three_days_hand_value(self):
        # days [0,0], [10,0], [20,0] -> slot means [10, 0]
        values = [0.0, 0.0, 10.0, 0.0, 20.0, 0.0]
        assert np.array_equal(gd.compute_daily_average(values, 2), [10.0, 0.0])

    def test_daily_average_partial_day_rejected(self):
        with pytest.raises(MissingDataError, match="whole days"):
            gd.compute_daily_average([1.0, 2.0, 3.0], 2)

    def test_deviation_definition(self):
        assert gd.compute_deviation([20.0], [17.0])[0] == 3.0

    def test_deviation_of_tiled_average_is_zero(self):
        avg = np.array([5.0, 9.0, 4.0])
        values = np.tile(avg, 4)
        assert np.array_equal(gd.compute_deviation(values, avg), np.zeros(12))

    def test_deviation_hand_values(self):
        out = gd.compute_deviation([12.0, 22.0, 10.0, 24.0], [12.0, 22.0])
        assert np.array_equal(out, [0.0, 0.0, -2.0, 2.0])

    def test_mean_centering_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            slots = int(rng.integers(2, 12))
            days = int(rng.integers(1, 6))
            values = rng.uniform(0, 60, size=slots * days)
            avg = gd.compute_daily_average(values, slots)
            dev = gd.compute_deviation(values, avg)
            assert abs(dev.sum()) < 1e-9

    def test_trend_cumsum_reconstructs_series(self):
        rng = np.random.default_rng(13)
        values = rng.uniform(0, 60, size=50)
        trend = gd.compute_trend(values)
        rebuilt = values[0] + np.concatenate([[0.0], np.cumsum(trend)])
        assert np.allclose(rebuilt, values, atol=1e-12)


class TestTemporalInputs:
    def test_recent_window_indices(self):
        values = np.arange(1.0, 11.0)  # [1..10]
        avg = gd.compute_daily_average(values, 5)
        out = gd.build_temporal_inputs(values, avg, t=5, recent_steps=2, daily_steps=0,
                                       weekly_steps=0, slots_per_day=5)
        assert np.array_equal(out.recent_speed, [4.0, 5.0])

    def test_daily_one_period_back(self):
        slots_per_day = 4
        values = np.arange(100.0, 100.0 + 64)
        avg = gd.compute_daily_average(values[:16], slots_per_day)
        out = gd.build_temporal_inputs(values, avg, t=6, recent_steps=2, daily_steps=1,
                                       weekly_steps=0, slots_per_day=slots_per_day)
        assert np.array_equal(out.daily_speed, [values[2]])

    def test_default_window_indices_five_minute_road(self):
        slots_per_day = 288
        t = 3000
        idx = gd.periodic_indices(t, 4, slots_per_day)
        assert np.array_equal(idx, [t - 1152, t - 864, t - 576, t - 288])
        widx = gd.periodic_indices(t, 2, 7 * slots_per_day)
        assert np.array_equal(widx, [t - 4032, t - 2016])

    def test_insufficient_history_names_branch(self):
        values = np.arange(0.0, 40.0)
        avg = gd.compute_daily_average(values[:20], 10)
        with pytest.raises(MissingDataError, match="weekly"):
            gd.build_temporal_inputs(values, avg, t=30, recent_steps=2, daily_steps=1,
                                     weekly_steps=1, slots_per_day=10)

    def test_never_reads_at_or_after_t(self):
        class Recorder:
            def __init__(self, data):
                self.data = data
                self.touched = []

            def __len__(self):
                return len(self.data)

            def __getitem__(self, idx):
                self.touched.extend(np.atleast_1d(np.asarray(idx)).tolist())
                return self.data[idx]

        rng = np.random.default_rng(17)
        slots_per_day = 12
        values = rng.uniform(0, 50, size=slots_per_day * 30)
        avg = gd.compute_daily_average(values, slots_per_day)
        for _ in range(20):
            t = int(rng.integers(7 * slots_per_day + 1, len(values)))
            rec = Recorder(values)
            gd.build_temporal_inputs(rec, avg, t, recent_steps=6, daily_steps=4,
                                     weekly_steps=1, slots_per_day=slots_per_day)
            assert rec.touched and max(rec.touched) < t


class TestGenerator:
    def test_deterministic_for_fixed_seed(self, tmp_path):
        config = gd.GeneratorConfig(n_roads=4, edge_density=0.5, intervals=(5, 10),
                                    days=2, coupling=0.3, noise=1.0, obs_noise=0.2,
                                    weekly_amplitude=2.0, weather_impact=1.0)
        for name in ("a", "b"):
            d = gd.generate_synthetic(config, seed=99)
            gd.write_dataset(d, tmp_path / f"g_{name}.json", tmp_path / f"s_{name}.csv",
                             tmp_path / f"c_{name}.csv")
        for prefix, suffix in (("g", "json"), ("s", "csv"), ("c", "csv")):
            a = (tmp_path / f"{prefix}_a.{suffix}").read_bytes()
            b = (tmp_path / f"{prefix}_b.{suffix}").read_bytes()
            assert a == b

    def test_noise_and_coupling_zero_is_daily_periodic(self):
        config = gd.GeneratorConfig(n_roads=3, edge_density=1.0, intervals=(10,), days=3)
        dataset = gd.generate_synthetic(config, seed=4)
        for s in dataset.series:
            spd = dataset.graph.nodes[s.road_id].slots_per_day
            assert np.allclose(s.values[:spd], s.values[spd : 2 * spd], atol=1e-12)

    def test_interval_menu_respected(self):
        config = gd.GeneratorConfig(n_roads=4, edge_density=0.2, intervals=(5, 10), days=1)
        dataset = gd.generate_synthetic(config, seed=7)
        intervals = {node.interval_minutes for node in dataset.graph.nodes}
        assert intervals == {5, 10}
        lengths = {len(s) for s in dataset.series}
        assert lengths == {288, 144}

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError, match="n_roads"):
            gd.generate_synthetic(gd.GeneratorConfig(n_roads=0), seed=1)
        with pytest.raises(ConfigError, match="intervals"):
            gd.generate_synthetic(gd.GeneratorConfig(intervals=()), seed=1)

    def test_speeds_clipped_at_zero(self):
        config = gd.GeneratorConfig(n_roads=3, intervals=(30,), days=2, noise=40.0, obs_noise=20.0)
        dataset = gd.generate_synthetic(config, seed=3)
        for s in dataset.series:
            assert np.all(s.values >= 0.0)


class TestFileRoundTrip:
    def test_write_then_load_matches(self, tmp_path):
        config = gd.GeneratorConfig(n_roads=4, edge_density=0.6, intervals=(10, 30), days=2,
                                    coupling=0.2, noise=0.5, weather_impact=1.0)
        dataset = gd.generate_synthetic(config, seed=21)
        paths = (tmp_path / "graph.json", tmp_path / "series.csv", tmp_path / "context.csv")
        gd.write_dataset(dataset, *paths)
        loaded = gd.load_dataset(*paths)
        assert loaded.graph.size == dataset.graph.size
        assert loaded.graph.edges == dataset.graph.edges
        assert loaded.span_minutes == dataset.span_minutes
        for a, b in zip(loaded.series, dataset.series):
            assert np.array_equal(a.values, b.values)
        for a, b in zip(loaded.contexts, dataset.contexts):
            assert np.array_equal(a.weather, b.weather)
            assert np.array_equal(a.holiday, b.holiday)
            assert np.array_equal(a.static, b.static)

    def test_three_node_line_file(self, tmp_path):
        graph_doc = """{
  "nodes": [
    {"id": 0, "length_m": 100, "road_type": 0, "lanes": 1, "traffic_lights": 0, "interval_minutes": 720},
    {"id": 1, "length_m": 200, "road_type": 1, "lanes": 2, "traffic_lights": 1, "interval_minutes": 720},
    {"id": 2, "length_m": 300, "road_type": 0, "lanes": 1, "traffic_lights": 0, "interval_minutes": 720}
  ],
  "edges": [[0, 1], [1, 2]]
}"""
        series_rows = ["road_id,slot_index,speed_kmh"]
        for road in range(3):
            for slot in range(2):
                series_rows.append(f"{road},{slot},{30 + road}.0")
        ctx_rows = ["road_id,slot_index,weather_code,holiday_flag,day_of_week"]
        for road in range(3):
            for slot in range(2):
                ctx_rows.append(f"{road},{slot},0,0,0")
        (tmp_path / "graph.json").write_text(graph_doc)
        (tmp_path / "series.csv").write_text("\n".join(series_rows) + "\n")
        (tmp_path / "context.csv").write_text("\n".join(ctx_rows) + "\n")
        dataset = gd.load_dataset(tmp_path / "graph.json", tmp_path / "series.csv",
                                  tmp_path / "context.csv")
        assert dataset.graph.size == 3
        assert dataset.graph.edges == [(0, 1), (1, 2)]

    def test_heterogeneous_lengths_from_fig_style_input(self, tmp_path):
        # One road at 5-minute and one at 10-minute sampling over the same span
        # must load with lengths in ratio 2:1.
        config = gd.GeneratorConfig(n_roads=2, edge_density=1.0, intervals=(5, 10), days=1)
        dataset = gd.generate_synthetic(config, seed=2)
        paths = (tmp_path / "g.json", tmp_path / "s.csv", tmp_path / "c.csv")
        gd.write_dataset(dataset, *paths)
        loaded = gd.load_dataset(*paths)
        lengths = sorted(len(s) for s in loaded.series)
        assert lengths == [144, 288]

    def test_row_count_inconsistent_with_interval_rejected(self, tmp_path):
        config = gd.GeneratorConfig(n_roads=2, edge_density=1.0, intervals=(60,), days=1)
        dataset = gd.generate_synthetic(config, seed=5)
        paths = (tmp_path / "g.json", tmp_path / "s.csv", tmp_path / "c.csv")
        gd.write_dataset(dataset, *paths)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        (tmp_path / "s.csv").write_text("\n".join(lines[:-1]) + "\n")  # drop one row
        with pytest.raises(SchemaError):
            gd.load_dataset(*paths)

    def test_missing_series_for_road_rejected(self, tmp_path):
        config = gd.GeneratorConfig(n_roads=2, edge_density=1.0, intervals=(60,), days=1)
        dataset = gd.generate_synthetic(config, seed=5)
        paths = (tmp_path / "g.json", tmp_path / "s.csv", tmp_path / "c.csv")
        gd.write_dataset(dataset, *paths)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        kept = [lines[0]] + [ln for ln in lines[1:] if not ln.startswith("1,")]
        (tmp_path / "s.csv").write_text("\n".join(kept) + "\n")
        with pytest.raises(MissingDataError, match="without any series"):
            gd.load_dataset(*paths)

    def test_parse_error_names_row_and_field(self, tmp_path):
        config = gd.GeneratorConfig(n_roads=1, intervals=(60,), days=1)
        dataset = gd.generate_synthetic(config, seed=5)
        paths = (tmp_path / "g.json", tmp_path / "s.csv", tmp_path / "c.csv")
        gd.write_dataset(dataset, *paths)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        lines[3] = "0,2,fast"
        (tmp_path / "s.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match=r"row 4.*speed_kmh"):
            gd.load_dataset(*paths)


class TestPlantedPair:
    def test_same_frequency_and_shape(self):
        a, b, slots_per_day = gd.generate_planted_pair(seed=1, days=10)
        assert len(a) == len(b) == 10 * slots_per_day
        assert np.all(a.values >= 0) and np.all(b.values >= 0)
