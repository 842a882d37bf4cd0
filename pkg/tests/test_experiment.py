import json

import numpy as np
import pytest

from fedgsl.config import ExperimentConfig
from fedgsl.exceptions import UsageError
from fedgsl.experiment import (ablate, build_datasets, evaluate_checkpoints,
                               resolve_seeds, run_experiment, train_once,
                               write_generated_bundles)


def tiny_cfg(**kw):
    base = dict(nodes=50, classes=3, homophily=0.3, degree=6.0, feature_dim=6,
                clients=2, conflict=1.0, rounds=3, hidden_dim=8, k_neighbors=5,
                repeats=2, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


class TestSeeds:
    def test_explicit_seeds_win(self):
        cfg = tiny_cfg(seeds=(4, 9), repeats=2)
        assert resolve_seeds(cfg) == [4, 9]

    def test_derived_seeds_are_pure_function(self):
        cfg = tiny_cfg()
        assert resolve_seeds(cfg) == resolve_seeds(tiny_cfg())
        assert resolve_seeds(cfg) != resolve_seeds(tiny_cfg(seed=2))


class TestBuildDatasets:
    def test_generated_clients(self):
        datasets = build_datasets(tiny_cfg(), seed=3)
        assert len(datasets) == 2
        for g, split in datasets:
            assert g.num_nodes == 50
            assert split.num_nodes == 50

    def test_edge_flip_applied(self):
        clean = build_datasets(tiny_cfg(), seed=3)
        noisy = build_datasets(tiny_cfg(edge_flip=0.5), seed=3)
        assert not np.array_equal(clean[0][0].col_indices, noisy[0][0].col_indices)
        assert clean[0][0].num_edges == noisy[0][0].num_edges

    def test_file_source_round_trip(self, tmp_path):
        write_generated_bundles(tiny_cfg(), tmp_path / "data")
        cfg = tiny_cfg(data_source="files", data_path=str(tmp_path / "data"))
        datasets = build_datasets(cfg, seed=0)
        assert len(datasets) == 2

    def test_single_bundle_partitioned(self, tmp_path):
        from fedgsl.experiment import generator_config
        from fedgsl.datagen import generate_graph
        from fedgsl.io import save_graph_bundle
        g = generate_graph(generator_config(tiny_cfg(nodes=120, clients=1), seed=5))
        save_graph_bundle(g, tmp_path / "whole")
        cfg = tiny_cfg(data_source="files", data_path=str(tmp_path / "whole"),
                       partition_method="balanced", clients=3)
        datasets = build_datasets(cfg, seed=0)
        assert len(datasets) == 3
        assert sum(g.num_nodes for g, _ in datasets) == 120


class TestTrainOnce:
    def test_artifacts_written(self, tmp_path):
        summary = train_once(tiny_cfg(), seed=7, out_dir=tmp_path / "run")
        assert (tmp_path / "run" / "metrics.csv").is_file()
        assert (tmp_path / "run" / "config.ini").is_file()
        assert (tmp_path / "run" / "checkpoints" / "client_00" / "blocks.bin").is_file()
        assert 0.0 <= summary["final_test"] <= 1.0
        lines = (tmp_path / "run" / "metrics.csv").read_text().strip().splitlines()
        # header + rounds * (clients + mean row)
        assert len(lines) == 1 + 3 * (2 + 1)
        mean_rows = [l for l in lines[1:] if l.split(",")[1] == "mean"]
        assert len(mean_rows) == 3

    def test_deterministic_metrics_bytes(self, tmp_path):
        train_once(tiny_cfg(), seed=7, out_dir=tmp_path / "a")
        train_once(tiny_cfg(), seed=7, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_deterministic_summary_bytes(self, tmp_path):
        run_experiment(tiny_cfg(repeats=2), out_dir=tmp_path / "a")
        run_experiment(tiny_cfg(repeats=2), out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "summary.json").read_bytes() == \
            (tmp_path / "b" / "summary.json").read_bytes()

    def test_evaluate_matches_training_summary(self, tmp_path):
        write_generated_bundles(tiny_cfg(seed=3), tmp_path / "data")
        cfg = tiny_cfg(data_source="files", data_path=str(tmp_path / "data"), seed=3)
        summary = train_once(cfg, seed=3, out_dir=tmp_path / "run")
        report = evaluate_checkpoints(tmp_path / "run", tmp_path / "data")
        assert report["mean_accuracy"] == pytest.approx(summary["final_test"])


class TestRunExperiment:
    def test_repeats_and_stats(self, tmp_path):
        result = run_experiment(tiny_cfg(repeats=2), out_dir=tmp_path / "exp")
        assert result["repeats"] == 2
        per = [r["final_test"] for r in result["per_repeat"]]
        assert result["final_test"]["mean"] == pytest.approx(float(np.mean(per)))
        assert result["final_test"]["std"] == pytest.approx(float(np.std(per, ddof=1)))
        summary = json.loads((tmp_path / "exp" / "summary.json").read_text())
        assert summary["final_test"] == result["final_test"]

    def test_single_repeat_zero_std(self, tmp_path):
        result = run_experiment(tiny_cfg(repeats=1), out_dir=tmp_path / "exp")
        assert result["final_test"]["std"] == 0.0

    def test_mean_matches_per_repeat_files(self, tmp_path):
        result = run_experiment(tiny_cfg(repeats=2), out_dir=tmp_path / "exp")
        finals = []
        for r in range(2):
            data = json.loads((tmp_path / "exp" / f"repeat_{r:02d}" / "summary.json")
                              .read_text())
            finals.append(data["final_test"])
        assert result["final_test"]["mean"] == pytest.approx(float(np.mean(finals)))


class TestAblate:
    def test_sweep_writes_one_row_per_value(self, tmp_path):
        rows = ablate(tiny_cfg(repeats=1, rounds=2), "alpha", ["0.0", "1.0"],
                      tmp_path / "sweep")
        assert [r["value"] for r in rows] == [0.0, 1.0]
        table = (tmp_path / "sweep" / "sweep.csv").read_text().strip().splitlines()
        assert len(table) == 3

    def test_scope_sweep_keeps_strings(self, tmp_path):
        rows = ablate(tiny_cfg(repeats=1, rounds=2), "scope", ["global", "none"],
                      tmp_path / "sweep")
        assert [r["value"] for r in rows] == ["global", "none"]

    def test_unknown_parameter(self, tmp_path):
        with pytest.raises(UsageError, match="alpha"):
            ablate(tiny_cfg(), "nope", ["1"], tmp_path / "sweep")
