"""
harness.py
Date: 11/10/2026
--------------------------------------------------------#
Description: Runs a federated-learning experiment end to end.

partition -> (every round) local training on all clients -> Byzantine
misbehaviour -> aggregation -> new global model -> test-set evaluation

Inputs: a TOML experiment config (see data/configs/ and the README)

Outputs:
- RunRecord in memory
- <name>.csv with one row per round
  (round,accuracy,loss,selected_index,averaged_count,f_hat,wall_time_s)
- <name>.json holding the resolved config snapshot and the run summary

Notes:
Every random draw comes from numpy.random.SeedSequence([master_seed, stream,
client, round]), so a config reproduces its run exactly, whatever n_jobs is.
--------------------------------------------------------#
"""

from __future__ import annotations

import json
import logging
import time
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .aggregation import AGGREGATORS, KNOWN_F_AGGREGATORS, InvalidUpdateError
from .attacks import AttackSpec, flip_labels, forge_outlier_update, inject_noise
from .data import (
    DATA_DIR,
    REPO_ROOT,
    RUNS_DIR,
    ClientShard,
    Dataset,
    PartitionSpec,
    dirichlet_partition,
    generate_synthetic,
    load_feature_csv,
    load_idx,
    split_dataset,
)
from .training import ModelLayout, ModelParams, TrainConfig, evaluate, flatten, init_model, local_train, unflatten

logger = logging.getLogger(__name__)

DATA_SOURCES = ("synthetic", "idx", "csv")
DEFAULT_HIDDEN = (32, 16, 8)

METRIC_COLUMNS = ["round", "accuracy", "loss", "selected_index", "averaged_count", "f_hat", "wall_time_s"]

# SeedSequence stream ids
STREAM_DATA, STREAM_PARTITION, STREAM_INIT, STREAM_TRAIN, STREAM_ATTACK = range(5)


class ConfigError(ValueError):
    """An experiment config is missing a key, has an unknown one, or breaks a constraint."""


@dataclass
class DatasetConfig:
    source: str
    path: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    classes: int = 2
    dim: int = 20
    per_class: int = 500
    separation: float = 10.0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"dataset.source must be one of {DATA_SOURCES}, got {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("dataset.path is required when dataset.source = 'csv'")
        if self.source == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, key):
                    raise ConfigError(f"dataset.{key} is required when dataset.source = 'idx'")


@dataclass
class FederationConfig:
    aggregator: str
    n_clients: int = 100
    byzantine_count: int = 0
    byzantine_indices: Optional[List[int]] = None
    known_f: Optional[int] = None
    rounds: int = 200
    alpha: float = 10.0
    master_seed: int = 0
    n_jobs: int = 1
    arkrum_filter: bool = True

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"federation.aggregator must be one of {sorted(AGGREGATORS)}, got {self.aggregator!r}")
        if self.n_clients < 1:
            raise ConfigError(f"federation.n_clients must be >= 1, got {self.n_clients}")
        if self.aggregator != "mean" and self.n_clients < 3:
            raise ConfigError(f"federation.n_clients must be >= 3 for {self.aggregator}, got {self.n_clients}")
        if self.rounds < 0:
            raise ConfigError(f"federation.rounds must be >= 0, got {self.rounds}")
        if not self.alpha > 0:
            raise ConfigError(f"federation.alpha must be > 0, got {self.alpha}")
        if self.master_seed < 0:
            raise ConfigError(f"federation.master_seed must be >= 0, got {self.master_seed}")
        if self.n_jobs == 0:
            raise ConfigError("federation.n_jobs must be non-zero (-1 uses every core)")
        if not 0 <= self.byzantine_count < self.n_clients:
            raise ConfigError(
                f"federation.byzantine_count must satisfy 0 <= f < n_clients, "
                f"got f={self.byzantine_count}, n_clients={self.n_clients}"
            )
        if self.byzantine_indices is not None:
            indices = [int(i) for i in self.byzantine_indices]
            if len(indices) != self.byzantine_count or len(set(indices)) != len(indices):
                raise ConfigError(
                    f"federation.byzantine_indices must list {self.byzantine_count} distinct clients, got {indices}"
                )
            if any(not 0 <= i < self.n_clients for i in indices):
                raise ConfigError(f"federation.byzantine_indices must lie in 0..{self.n_clients - 1}, got {indices}")
            self.byzantine_indices = sorted(indices)
        if self.aggregator in KNOWN_F_AGGREGATORS:
            if self.known_f is None:
                raise ConfigError(f"federation.known_f is required for aggregator {self.aggregator!r}")
            if self.known_f < 0 or 2 + 2 * self.known_f >= self.n_clients:
                raise ConfigError(
                    f"federation.known_f violates 2 + 2f < n: known_f={self.known_f}, n_clients={self.n_clients}"
                )

    @property
    def byzantine(self) -> Tuple[int, ...]:
        if self.byzantine_indices is not None:
            return tuple(self.byzantine_indices)
        return tuple(range(self.n_clients - self.byzantine_count, self.n_clients))


@dataclass
class ModelConfig:
    layer_sizes: Optional[List[int]] = None
    leaky_slope: float = 0.2


@dataclass
class OutputConfig:
    dir: str = str(RUNS_DIR)
    name: str = "run"
    record_wall_time: bool = True


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    federation: FederationConfig
    attack: AttackSpec = field(default_factory=AttackSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def partition(self) -> PartitionSpec:
        return PartitionSpec(
            n_clients=self.federation.n_clients,
            alpha=self.federation.alpha,
            seed=self.federation.master_seed,
        )

    def layout_for(self, dim: int, n_classes: int) -> ModelLayout:
        sizes = self.model.layer_sizes
        if sizes is None:
            sizes = [dim, *DEFAULT_HIDDEN, n_classes]
        if sizes[0] != dim:
            raise ConfigError(f"model.layer_sizes starts with {sizes[0]} but the data has {dim} features")
        if sizes[-1] != n_classes:
            raise ConfigError(f"model.layer_sizes ends with {sizes[-1]} but the data has {n_classes} classes")
        return ModelLayout(tuple(sizes), self.model.leaky_slope)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset": asdict(self.dataset),
            "federation": asdict(self.federation),
            "attack": self.attack.to_dict(),
            "train": asdict(self.train),
            "model": asdict(self.model),
            "output": asdict(self.output),
        }


SECTIONS = {
    "dataset": DatasetConfig,
    "federation": FederationConfig,
    "train": TrainConfig,
    "model": ModelConfig,
    "output": OutputConfig,
}


def _check_keys(section: str, table: Mapping[str, Any], allowed: Sequence[str]) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown key(s) in [{section}]: " + ", ".join(f"{section}.{k}" for k in unknown))


def _build(section: str, cls, table: Mapping[str, Any]):
    _check_keys(section, table, [f.name for f in fields(cls)])
    values = {k: v for k, v in table.items() if v is not None}
    try:
        return cls(**values)
    except ConfigError:
        raise
    except TypeError as e:
        raise ConfigError(f"[{section}] is missing a required key: {e}") from e
    except ValueError as e:
        raise ConfigError(f"[{section}] {e}") from e


def config_from_dict(raw: Mapping[str, Any], name: Optional[str] = None) -> ExperimentConfig:
    """
    Build and validate an ExperimentConfig from a nested mapping (parsed TOML or a snapshot).

    Raises:
        ConfigError: naming the offending key.
    """
    _check_keys("top level", raw, list(SECTIONS) + ["attack"])
    if "dataset" not in raw or "source" not in raw["dataset"]:
        raise ConfigError("Missing required key dataset.source")
    if "federation" not in raw or "aggregator" not in raw["federation"]:
        raise ConfigError("Missing required key federation.aggregator")

    built = {section: _build(section, cls, raw.get(section, {})) for section, cls in SECTIONS.items()}

    attack_table = dict(raw.get("attack", {}))
    _check_keys("attack", attack_table, ["kind", "sigma", "mu", "label_map"])
    try:
        attack = AttackSpec.from_dict({k: v for k, v in attack_table.items() if v is not None})
    except ValueError as e:
        raise ConfigError(f"[attack] {e}") from e

    if name and "name" not in raw.get("output", {}):
        built["output"].name = name
    if attack.kind != "none" and built["federation"].byzantine_count == 0:
        logger.warning("attack.kind = %r but federation.byzantine_count = 0; nobody attacks", attack.kind)

    return ExperimentConfig(attack=attack, **built)


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a TOML experiment config; output.name defaults to the file stem.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(raw, name=path.stem)


def resolve_data_path(path_like: str) -> Path:
    """
    Find a data file given as an absolute path, relative to the cwd, relative
    to the repo root, or by name inside data/.
    """
    p = Path(path_like)
    if p.is_absolute():
        return p
    for candidate in (Path.cwd() / p, REPO_ROOT / p, DATA_DIR / p.name):
        if candidate.exists():
            return candidate.resolve()
    raise FileNotFoundError(
        f"Could not find file {path_like!r}. Tried:\n"
        f"  - {Path.cwd() / p}\n"
        f"  - {REPO_ROOT / p}\n"
        f"  - {DATA_DIR / p.name}"
    )


def derive_rng(master_seed: int, stream: int, *keys: int) -> np.random.Generator:
    """Independent generator for (master_seed, stream, keys...)."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, stream, *keys]))


def load_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    ds = cfg.dataset
    seed = cfg.federation.master_seed
    if ds.source == "synthetic":
        full = generate_synthetic(ds.classes, ds.dim, ds.per_class, ds.separation, derive_rng(seed, STREAM_DATA))
        return split_dataset(full, ds.test_fraction, seed)
    if ds.source == "csv":
        return split_dataset(load_feature_csv(resolve_data_path(ds.path)), ds.test_fraction, seed)
    train = load_idx(resolve_data_path(ds.train_images), resolve_data_path(ds.train_labels))
    test = load_idx(resolve_data_path(ds.test_images), resolve_data_path(ds.test_labels))
    return train, test


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    test_loss: float
    selected_index: Optional[int]
    averaged_count: int
    f_hat_of_winner: Optional[int]
    wall_time: Optional[float]


@dataclass
class RunRecord:
    config: Dict[str, Any]
    metrics: List[RoundMetrics]
    summary: Dict[str, Any]
    final_update: Optional[np.ndarray] = None


@dataclass
class RunState:
    train: Dataset
    test: Dataset
    shards: List[ClientShard]
    layout: ModelLayout
    global_params: ModelParams


def check_label_map(attack: AttackSpec, n_classes: int) -> None:
    """
    Raises:
        ConfigError: if a label_flipping map uses a label outside 0..n_classes-1.
    """
    if attack.kind != "label_flipping":
        return
    outside = sorted({label for pair in attack.label_map.items() for label in pair if not 0 <= label < n_classes})
    if outside:
        raise ConfigError(
            f"attack.label_map uses labels {outside} but the data only has classes 0..{n_classes - 1}"
        )


def prepare_run(cfg: ExperimentConfig) -> RunState:
    """
    Load data, partition it and initialise the global model.

    Raises:
        ConfigError: when the data does not fit the config (layout, client count, label map).
    """
    train, test = load_datasets(cfg)
    layout = cfg.layout_for(train.dim, train.n_classes)
    check_label_map(cfg.attack, train.n_classes)
    if cfg.federation.n_clients > len(train):
        raise ConfigError(
            f"federation.n_clients = {cfg.federation.n_clients} exceeds the {len(train)} training rows"
        )
    shards = dirichlet_partition(train, cfg.partition, derive_rng(cfg.federation.master_seed, STREAM_PARTITION))
    global_params = init_model(layout, derive_rng(cfg.federation.master_seed, STREAM_INIT))
    logger.info("Prepared %d clients over %d training rows (%d test), %d parameters",
                len(shards), len(train), len(test), layout.n_params)
    return RunState(train, test, shards, layout, global_params)


def _client_update(cfg: ExperimentConfig, state: RunState, client: int, round_index: int,
                   byzantine: bool) -> np.ndarray:
    seed = cfg.federation.master_seed
    attack = cfg.attack
    if byzantine and attack.kind == "large_outlier":
        return forge_outlier_update(state.layout.n_params, attack, derive_rng(seed, STREAM_ATTACK, client, round_index))

    shard = state.train.subset(state.shards[client].indices)
    if byzantine and attack.kind == "label_flipping":
        shard = flip_labels(shard, attack.label_map)
    update = local_train(state.global_params, shard, cfg.train, derive_rng(seed, STREAM_TRAIN, client, round_index))
    if byzantine and attack.kind == "noise_injection":
        update = inject_noise(update, attack, derive_rng(seed, STREAM_ATTACK, client, round_index))
    return update


def collect_updates(cfg: ExperimentConfig, state: RunState, round_index: int) -> np.ndarray:
    """
    Every client's update for one round, stacked in client-index order.
    """
    byzantine = set(cfg.federation.byzantine)
    updates = Parallel(n_jobs=cfg.federation.n_jobs, prefer="threads")(
        delayed(_client_update)(cfg, state, client, round_index, client in byzantine)
        for client in range(cfg.federation.n_clients)
    )
    return np.vstack(updates)


def summarize(metrics: Sequence[RoundMetrics], initial_accuracy: float, initial_loss: float) -> Dict[str, Any]:
    accuracies = [m.test_accuracy for m in metrics]
    if not accuracies:
        return {
            "rounds": 0,
            "initial_accuracy": initial_accuracy,
            "initial_loss": initial_loss,
            "final_mean_accuracy": initial_accuracy,
            "max_accuracy": initial_accuracy,
            "last20_std": 0.0,
        }
    return {
        "rounds": len(accuracies),
        "initial_accuracy": initial_accuracy,
        "initial_loss": initial_loss,
        "final_mean_accuracy": float(np.mean(accuracies[-10:])),
        "max_accuracy": float(np.max(accuracies)),
        "last20_std": float(np.std(accuracies[-20:])),
    }


def run_experiment(cfg: ExperimentConfig, progress: bool = True) -> RunRecord:
    """
    Run cfg.federation.rounds communication rounds and return the RunRecord.
    """
    fed = cfg.federation
    state = prepare_run(cfg)
    initial_accuracy, initial_loss = evaluate(state.global_params, state.test)
    logger.info("Starting %s: %d rounds, %d clients (%d Byzantine, attack=%s), aggregator=%s",
                cfg.output.name, fed.rounds, fed.n_clients, fed.byzantine_count, cfg.attack.kind, fed.aggregator)

    aggregate = AGGREGATORS[fed.aggregator]
    current = flatten(state.global_params)
    metrics: List[RoundMetrics] = []
    for round_index in tqdm(range(1, fed.rounds + 1), desc=cfg.output.name, disable=not progress):
        started = time.perf_counter()
        updates = collect_updates(cfg, state, round_index)
        try:
            result = aggregate(updates, known_f=fed.known_f, use_filter=fed.arkrum_filter)
        except InvalidUpdateError as e:
            logger.warning("Round %d rejected: %s", round_index, e)
            selected, averaged, f_hat = None, 0, None
        else:
            current = result.aggregate
            state.global_params = unflatten(current, state.layout)
            selected, averaged, f_hat = result.selected_index, len(result.averaged_indices), result.f_hat_of_winner

        accuracy, loss = evaluate(state.global_params, state.test)
        elapsed = time.perf_counter() - started
        metrics.append(RoundMetrics(
            round=round_index,
            test_accuracy=accuracy,
            test_loss=loss,
            selected_index=selected,
            averaged_count=averaged,
            f_hat_of_winner=f_hat,
            wall_time=elapsed if cfg.output.record_wall_time else None,
        ))
        logger.debug("round %d: accuracy=%.4f loss=%.4f winner=%s f_hat=%s", round_index, accuracy, loss, selected, f_hat)

    summary = summarize(metrics, initial_accuracy, initial_loss)
    logger.info("Finished %s: final mean accuracy %.4f, max %.4f",
                cfg.output.name, summary["final_mean_accuracy"], summary["max_accuracy"])
    return RunRecord(config=cfg.to_dict(), metrics=metrics, summary=summary, final_update=current)


def metrics_frame(metrics: Sequence[RoundMetrics]) -> pd.DataFrame:
    frame = pd.DataFrame({
        "round": pd.array([m.round for m in metrics], dtype="int64"),
        "accuracy": pd.array([m.test_accuracy for m in metrics], dtype="float64"),
        "loss": pd.array([m.test_loss for m in metrics], dtype="float64"),
        "selected_index": pd.array([m.selected_index for m in metrics], dtype="Int64"),
        "averaged_count": pd.array([m.averaged_count for m in metrics], dtype="int64"),
        "f_hat": pd.array([m.f_hat_of_winner for m in metrics], dtype="Int64"),
        "wall_time_s": pd.array([np.nan if m.wall_time is None else m.wall_time for m in metrics], dtype="float64"),
    })
    return frame[METRIC_COLUMNS]


def write_metrics(record: RunRecord, out_dir: Optional[Union[str, Path]] = None,
                  name: Optional[str] = None) -> Path:
    """
    Write <name>.csv (per-round metrics) and <name>.json (config snapshot + summary).

    Returns:
        Path of the CSV file.
    """
    output = record.config.get("output", {})
    out_dir = Path(out_dir or output.get("dir") or RUNS_DIR)
    name = name or output.get("name") or "run"
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_frame(record.metrics).to_csv(csv_path, index=False, lineterminator="\n", encoding="utf-8")
        with open(json_path, "w", encoding="utf-8", newline="\n") as f:
            json.dump({"config": record.config, "summary": record.summary}, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OSError(f"Could not write run output to {out_dir}: {e}") from e
    logger.info("Wrote %d rounds to %s", len(record.metrics), csv_path)
    return csv_path


def _optional_int(value) -> Optional[int]:
    return None if pd.isna(value) else int(value)


def _optional_float(value) -> Optional[float]:
    return None if pd.isna(value) else float(value)


def read_metrics(csv_path: Union[str, Path]) -> RunRecord:
    """
    Re-read a metrics CSV (and its companion JSON, when present) into a RunRecord.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(f"Metrics CSV not found: {csv_path}")
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    missing = [c for c in METRIC_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{csv_path}: missing columns {missing}")

    metrics = [
        RoundMetrics(
            round=int(row["round"]),
            test_accuracy=float(row["accuracy"]),
            test_loss=float(row["loss"]),
            selected_index=_optional_int(row["selected_index"]),
            averaged_count=int(row["averaged_count"]),
            f_hat_of_winner=_optional_int(row["f_hat"]),
            wall_time=_optional_float(row["wall_time_s"]),
        )
        for _, row in frame.iterrows()
    ]

    config, summary = {}, {}
    json_path = csv_path.with_suffix(".json")
    if json_path.exists():
        with open(json_path, encoding="utf-8") as f:
            stored = json.load(f)
        config, summary = stored.get("config", {}), stored.get("summary", {})
    return RunRecord(config=config, metrics=metrics, summary=summary)


def compare_runs(csv_paths: Sequence[Union[str, Path]], baseline: Optional[Union[str, Path]] = None,
                 degrade_margin: float = 0.10) -> pd.DataFrame:
    """
    One summary row per run. With a baseline run, `degraded` marks runs whose
    final mean accuracy is more than `degrade_margin` below the baseline's.
    """
    baseline_final = None
    if baseline is not None:
        baseline_final = _final_mean(read_metrics(baseline))

    rows = []
    for path in csv_paths:
        record = read_metrics(path)
        accuracies = [m.test_accuracy for m in record.metrics]
        row = {
            "run": Path(path).stem,
            "aggregator": record.config.get("federation", {}).get("aggregator", ""),
            "attack": record.config.get("attack", {}).get("kind", ""),
            "rounds": len(accuracies),
            "final_mean_accuracy": _final_mean(record),
            "max_accuracy": max(accuracies) if accuracies else np.nan,
            "last20_std": float(np.std(accuracies[-20:])) if accuracies else np.nan,
        }
        if baseline_final is not None:
            row["degraded"] = bool(row["final_mean_accuracy"] < baseline_final - degrade_margin)
        rows.append(row)
    return pd.DataFrame(rows)


def _final_mean(record: RunRecord) -> float:
    accuracies = [m.test_accuracy for m in record.metrics]
    if not accuracies:
        return float(record.summary.get("final_mean_accuracy", np.nan))
    return float(np.mean(accuracies[-10:]))


def sweep_aggregators(cfg: ExperimentConfig, aggregators: Sequence[str],
                      out_dir: Optional[Union[str, Path]] = None, progress: bool = True) -> List[Path]:
    """
    Run the same experiment once per aggregator and write <name>_<aggregator>.csv for each.

    Every run shares the data, partition, initial model and attack draws, so
    the CSVs differ only through the aggregation rule. Krum and Multi-Krum get
    known_f = byzantine_count when the config leaves it unset.

    Raises:
        ConfigError: on an unknown aggregator or an f that breaks 2 + 2f < n.
    """
    paths = []
    for aggregator in aggregators:
        known_f = cfg.federation.known_f
        if known_f is None and aggregator in KNOWN_F_AGGREGATORS:
            known_f = cfg.federation.byzantine_count
        run_cfg = replace(
            cfg,
            federation=replace(cfg.federation, aggregator=aggregator, known_f=known_f),
            output=replace(cfg.output, name=f"{cfg.output.name}_{aggregator}"),
        )
        record = run_experiment(run_cfg, progress=progress)
        paths.append(write_metrics(record, out_dir=out_dir))
    return paths
