"""Tests for the harness module in the robust_fl package (config, rounds, metrics files)."""

import numpy as np
import pytest

from src.robust_fl import harness
from src.robust_fl.aggregation import InvalidUpdateError
from src.robust_fl.harness import ConfigError


def small_config(tmp_path, aggregator="mean", rounds=3, attack=None, **federation):
    fed = {"aggregator": aggregator, "n_clients": 5, "rounds": rounds, "alpha": 10.0, "master_seed": 3}
    fed.update(federation)
    raw = {
        "dataset": {"source": "synthetic", "classes": 2, "dim": 5, "per_class": 60, "separation": 6.0},
        "federation": fed,
        "train": {"local_epochs": 1, "batch_size": 16, "learning_rate": 0.05},
        "model": {"layer_sizes": [5, 8, 2]},
        "output": {"dir": str(tmp_path), "name": f"{aggregator}_run", "record_wall_time": False},
    }
    if attack is not None:
        raw["attack"] = attack
    return harness.config_from_dict(raw)


# config parsing

def test_minimal_config_gets_defaults():
    cfg = harness.config_from_dict({"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean"}})
    assert cfg.federation.rounds == 200
    assert cfg.federation.n_clients == 100
    assert cfg.train.local_epochs == 5
    assert cfg.train.batch_size == 32
    assert cfg.train.learning_rate == 0.01
    assert cfg.model.leaky_slope == 0.2
    assert cfg.attack.kind == "none"
    snapshot = cfg.to_dict()
    assert snapshot["federation"]["rounds"] == 200
    assert snapshot["train"]["local_epochs"] == 5


def test_snapshot_rebuilds_same_config():
    cfg = harness.config_from_dict({
        "dataset": {"source": "synthetic"},
        "federation": {"aggregator": "krum", "known_f": 3, "byzantine_count": 3},
        "attack": {"kind": "label_flipping", "label_map": "binary"},
    })
    again = harness.config_from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_krum_without_known_f_is_rejected():
    with pytest.raises(ConfigError, match="federation.known_f"):
        harness.config_from_dict({"dataset": {"source": "synthetic"}, "federation": {"aggregator": "krum"}})


def test_known_f_at_the_limit():
    cfg = harness.config_from_dict({
        "dataset": {"source": "synthetic"},
        "federation": {"aggregator": "mkrum", "known_f": 48, "n_clients": 100},
    })
    assert cfg.federation.known_f == 48
    with pytest.raises(ConfigError) as excinfo:
        harness.config_from_dict({
            "dataset": {"source": "synthetic"},
            "federation": {"aggregator": "mkrum", "known_f": 49, "n_clients": 100},
        })
    assert "known_f=49" in str(excinfo.value)
    assert "n_clients=100" in str(excinfo.value)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="federation.bogus"):
        harness.config_from_dict({"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean", "bogus": 1}})


@pytest.mark.parametrize("raw", [
    {"dataset": {"source": "synthetic"}, "federation": {}},
    {"dataset": {}, "federation": {"aggregator": "mean"}},
    {"dataset": {"source": "parquet"}, "federation": {"aggregator": "mean"}},
    {"dataset": {"source": "synthetic"}, "federation": {"aggregator": "median"}},
    {"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean", "byzantine_count": 100}},
    {"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean"}, "train": {"batch_size": 0}},
    {"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean"}, "attack": {"kind": "sybil"}},
    {"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean", "master_seed": -1}},
])
def test_invalid_configs_raise_config_error(raw):
    with pytest.raises(ConfigError):
        harness.config_from_dict(raw)


def test_attack_sigma_defaults_by_kind():
    cfg = harness.config_from_dict({
        "dataset": {"source": "synthetic"},
        "federation": {"aggregator": "arkrum", "byzantine_count": 10},
        "attack": {"kind": "large_outlier"},
    })
    assert cfg.attack.sigma == 10.0


def test_byzantine_defaults_to_last_clients():
    cfg = harness.config_from_dict({
        "dataset": {"source": "synthetic"},
        "federation": {"aggregator": "mean", "n_clients": 6, "byzantine_count": 2},
    })
    assert cfg.federation.byzantine == (4, 5)
    cfg = harness.config_from_dict({
        "dataset": {"source": "synthetic"},
        "federation": {"aggregator": "mean", "n_clients": 6, "byzantine_count": 2, "byzantine_indices": [3, 0]},
    })
    assert cfg.federation.byzantine == (0, 3)


def test_parse_config_names_run_after_file(tmp_path):
    path = tmp_path / "outlier_study.toml"
    path.write_text(
        '[dataset]\nsource = "synthetic"\n\n'
        '[federation]\naggregator = "rkrum"\nn_clients = 10\nbyzantine_count = 4\n\n'
        '[attack]\nkind = "noise_injection"\nsigma = 2.5\n'
    )
    cfg = harness.parse_config(path)
    assert cfg.output.name == "outlier_study"
    assert cfg.attack.sigma == 2.5
    assert cfg.federation.byzantine == (6, 7, 8, 9)


def test_parse_config_bad_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[dataset\nsource = 1\n")
    with pytest.raises(ConfigError):
        harness.parse_config(path)


def test_sample_configs_parse():
    paths = sorted(harness.DATA_DIR.joinpath("configs").glob("*.toml"))
    assert paths
    for path in paths:
        cfg = harness.parse_config(path)
        assert cfg.output.name == path.stem


def test_layout_must_match_data(tmp_path):
    cfg = small_config(tmp_path)
    assert cfg.layout_for(5, 2).layer_sizes == (5, 8, 2)
    with pytest.raises(ConfigError):
        cfg.layout_for(6, 2)


# running

def test_zero_rounds_reports_initial_model(tmp_path):
    record = harness.run_experiment(small_config(tmp_path, rounds=0), progress=False)
    assert record.metrics == []
    assert record.summary["rounds"] == 0
    assert record.summary["final_mean_accuracy"] == record.summary["initial_accuracy"]
    csv_path = harness.write_metrics(record)
    assert csv_path.read_text().splitlines() == [",".join(harness.METRIC_COLUMNS)]


def test_mean_round_matches_manual_average(tmp_path):
    cfg = small_config(tmp_path, rounds=1, n_clients=3)
    state = harness.prepare_run(cfg)
    expected = harness.collect_updates(cfg, state, 1).mean(axis=0)
    record = harness.run_experiment(cfg, progress=False)
    assert np.allclose(record.final_update, expected)
    assert record.metrics[0].selected_index is None
    assert record.metrics[0].averaged_count == 3


def test_collect_updates_applies_outlier_attack(tmp_path):
    cfg = small_config(tmp_path, aggregator="krum", known_f=1, byzantine_count=1)
    cfg.attack = harness.AttackSpec("large_outlier", sigma=0.0, mu=7.0)
    state = harness.prepare_run(cfg)
    updates = harness.collect_updates(cfg, state, 1)
    assert updates.shape == (5, state.layout.n_params)
    assert np.all(updates[4] == 7.0)
    result = harness.AGGREGATORS["krum"](updates, known_f=1)
    assert result.selected_index != 4
    assert any(np.array_equal(result.aggregate, u) for u in updates)


def test_parallel_clients_match_sequential(tmp_path):
    sequential = small_config(tmp_path, rounds=1, n_jobs=1)
    threaded = small_config(tmp_path, rounds=1, n_jobs=2)
    first = harness.collect_updates(sequential, harness.prepare_run(sequential), 1)
    second = harness.collect_updates(threaded, harness.prepare_run(threaded), 1)
    assert np.array_equal(first, second)


def test_same_config_gives_identical_csv(tmp_path):
    cfg = small_config(tmp_path, aggregator="arkrum", byzantine_count=1)
    cfg.attack = harness.AttackSpec("noise_injection", sigma=0.5)
    first = harness.write_metrics(harness.run_experiment(cfg, progress=False), out_dir=tmp_path / "a")
    second = harness.write_metrics(harness.run_experiment(cfg, progress=False), out_dir=tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()
    assert (tmp_path / "a" / "arkrum_run.json").exists()


def test_metrics_round_trip(tmp_path):
    record = harness.run_experiment(small_config(tmp_path, aggregator="rkrum"), progress=False)
    csv_path = harness.write_metrics(record)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "round,accuracy,loss,selected_index,averaged_count,f_hat,wall_time_s"
    assert len(lines) == 4

    loaded = harness.read_metrics(csv_path)
    assert loaded.metrics == record.metrics
    assert loaded.config["federation"]["aggregator"] == "rkrum"
    assert loaded.summary == record.summary


def test_mean_rows_leave_selected_index_empty(tmp_path):
    record = harness.run_experiment(small_config(tmp_path, rounds=2), progress=False)
    rows = harness.write_metrics(record).read_text().splitlines()[1:]
    for row in rows:
        cells = row.split(",")
        assert cells[3] == ""
        assert cells[5] == ""
        assert cells[6] == ""


def test_rejected_round_keeps_global_model(tmp_path, monkeypatch):
    def reject(updates, known_f=None, use_filter=True):
        raise InvalidUpdateError("Update from client 0 contains NaN or Inf", client_index=0)

    monkeypatch.setitem(harness.AGGREGATORS, "mean", reject)
    cfg = small_config(tmp_path, rounds=2)
    record = harness.run_experiment(cfg, progress=False)
    initial = harness.flatten(harness.prepare_run(cfg).global_params)
    assert np.array_equal(record.final_update, initial)
    assert [m.averaged_count for m in record.metrics] == [0, 0]
    assert record.metrics[0].test_accuracy == record.summary["initial_accuracy"]


def test_too_many_clients_for_data(tmp_path):
    cfg = small_config(tmp_path, n_clients=200)
    with pytest.raises(ConfigError, match="n_clients"):
        harness.prepare_run(cfg)


def test_negative_master_seed_is_named():
    with pytest.raises(ConfigError, match="federation.master_seed"):
        harness.config_from_dict({"dataset": {"source": "synthetic"}, "federation": {"aggregator": "mean", "master_seed": -1}})


def test_label_map_outside_classes_is_rejected_before_training(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, byzantine_count=2, attack={"kind": "label_flipping", "label_map": "mnist"})
    monkeypatch.setattr(harness, "local_train", lambda *a, **k: pytest.fail("training started"))
    with pytest.raises(ConfigError, match="attack.label_map"):
        harness.run_experiment(cfg, progress=False)


def test_binary_label_map_fits_two_classes(tmp_path):
    cfg = small_config(tmp_path, byzantine_count=1, attack={"kind": "label_flipping", "label_map": "binary"})
    state = harness.prepare_run(cfg)
    assert state.layout.layer_sizes[-1] == 2


# comparison

def test_compare_runs_flags_degraded(tmp_path):
    baseline = harness.RunRecord(
        config={"federation": {"aggregator": "mean"}, "attack": {"kind": "none"}},
        metrics=[harness.RoundMetrics(r, 0.95, 0.1, None, 5, None, None) for r in range(1, 11)],
        summary={},
    )
    attacked = harness.RunRecord(
        config={"federation": {"aggregator": "mean"}, "attack": {"kind": "large_outlier"}},
        metrics=[harness.RoundMetrics(r, 0.5, 2.0, None, 5, None, None) for r in range(1, 11)],
        summary={},
    )
    base_csv = harness.write_metrics(baseline, out_dir=tmp_path, name="clean")
    bad_csv = harness.write_metrics(attacked, out_dir=tmp_path, name="attacked")

    table = harness.compare_runs([base_csv, bad_csv], baseline=base_csv)
    assert table["run"].tolist() == ["clean", "attacked"]
    assert table["degraded"].tolist() == [False, True]
    assert table["final_mean_accuracy"].tolist() == pytest.approx([0.95, 0.5])
    assert table["attack"].tolist() == ["none", "large_outlier"]


def test_read_metrics_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        harness.read_metrics(tmp_path / "nothing.csv")


def test_resolve_data_path_reports_candidates():
    with pytest.raises(FileNotFoundError, match="Tried"):
        harness.resolve_data_path("definitely_missing_file.csv")


def test_sweep_runs_each_aggregator_on_the_same_setup(tmp_path):
    cfg = small_config(tmp_path, rounds=2, byzantine_count=1, attack={"kind": "large_outlier"})
    paths = harness.sweep_aggregators(cfg, ["mean", "krum", "arkrum"], out_dir=tmp_path / "sweep", progress=False)
    assert [p.name for p in paths] == ["mean_run_mean.csv", "mean_run_krum.csv", "mean_run_arkrum.csv"]

    records = [harness.read_metrics(p) for p in paths]
    assert [r.config["federation"]["aggregator"] for r in records] == ["mean", "krum", "arkrum"]
    assert records[1].config["federation"]["known_f"] == 1
    assert records[0].summary["initial_accuracy"] == records[2].summary["initial_accuracy"]
    assert cfg.federation.aggregator == "mean"


def test_sweep_rejects_unknown_aggregator(tmp_path):
    with pytest.raises(ConfigError, match="federation.aggregator"):
        harness.sweep_aggregators(small_config(tmp_path), ["median"], progress=False)
