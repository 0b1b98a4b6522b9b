"""Experiment configuration: flat key-value files with dotted sections.

Grammar (documented in the README):

* one ``key = value`` pair per line; keys are lowercase dotted paths
* ``#`` starts a comment (full line or trailing); blank lines ignored
* values are integers, floats, bare strings, or comma-separated lists

Every validation error names the offending key so a bad file points
straight at the line to fix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import PARTITION_KINDS, PartitionSpec
from .nn import HEADS, NetSpec, make_net_spec


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


@dataclass
class DataSource:
    kind: str  # "blobs" | "idx"
    classes: int = 3
    samples_per_class: int = 200
    dim: int = 8
    spread: float = 0.08
    seed: int = 0
    images_path: str = ""
    labels_path: str = ""


@dataclass
class ExperimentConfig:
    seed: int
    learner_count: int
    rounds: int
    epochs_per_round: int
    learning_rate: float
    batch_size: int
    tolerances: list[float]
    metric_kind: str
    net_spec: NetSpec
    data: DataSource
    data_second: DataSource | None
    partition: PartitionSpec
    output_dir: str = "out"

    def tolerance_for(self, learner_index: int) -> float:
        if len(self.tolerances) == 1:
            return self.tolerances[0]
        return self.tolerances[learner_index]


def parse_config_text(text: str) -> dict[str, str]:
    """First pass: raw key/value strings, syntax errors located by line."""
    pairs: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in pairs:
            raise ConfigError(f"{key}: duplicate key (line {line_no})")
        pairs[key] = value
    return pairs


class _Reader:
    def __init__(self, pairs: dict[str, str]):
        self.pairs = dict(pairs)
        self.used: set[str] = set()

    def get(self, key: str, default=None, required: bool = False) -> str | None:
        if key in self.pairs:
            self.used.add(key)
            return self.pairs[key]
        if required:
            raise ConfigError(f"{key}: required key is missing")
        return default

    def get_int(self, key: str, default=None, required=False, minimum=None) -> int | None:
        raw = self.get(key, required=required)
        if raw is None:
            value = default
        else:
            try:
                value = int(raw)
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
        if value is not None and minimum is not None and value < minimum:
            raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
        return value

    def get_float(self, key: str, default=None, required=False, minimum=None) -> float | None:
        raw = self.get(key, required=required)
        if raw is None:
            value = default
        else:
            try:
                value = float(raw)
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
        if value is not None and minimum is not None and value < minimum:
            raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
        return value

    def get_list(self, key: str, default=None) -> list[str] | None:
        raw = self.get(key)
        if raw is None:
            return default
        return [item.strip() for item in raw.split(",") if item.strip()]

    def unused(self) -> list[str]:
        return sorted(set(self.pairs) - self.used)


def _parse_data_source(reader: _Reader, prefix: str, required: bool) -> DataSource | None:
    kind = reader.get(f"{prefix}.kind")
    if kind is None:
        if required:
            raise ConfigError(f"{prefix}.kind: required key is missing")
        return None
    if kind == "blobs":
        return DataSource(
            kind="blobs",
            classes=reader.get_int(f"{prefix}.classes", default=3, minimum=1),
            samples_per_class=reader.get_int(f"{prefix}.samples_per_class", default=200, minimum=1),
            dim=reader.get_int(f"{prefix}.dim", default=8, minimum=1),
            spread=reader.get_float(f"{prefix}.spread", default=0.08),
            seed=reader.get_int(f"{prefix}.seed", default=0),
        )
    if kind == "idx":
        images = reader.get(f"{prefix}.images", required=True)
        labels = reader.get(f"{prefix}.labels", required=True)
        return DataSource(kind="idx", images_path=images, labels_path=labels)
    raise ConfigError(f"{prefix}.kind: expected 'blobs' or 'idx', got {kind!r}")


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return build_config(parse_config_text(text))


def build_config(pairs: dict[str, str]) -> ExperimentConfig:
    reader = _Reader(pairs)

    seed = reader.get_int("seed", default=0)
    learner_count = reader.get_int("learners", required=True, minimum=2)
    rounds = reader.get_int("rounds", required=True, minimum=1)
    epochs = reader.get_int("train.epochs", default=2, minimum=1)
    learning_rate = reader.get_float("train.learning_rate", default=0.1)
    if learning_rate < 0:
        raise ConfigError(f"train.learning_rate: must be >= 0, got {learning_rate}")
    batch_size = reader.get_int("train.batch_size", default=16, minimum=1)

    raw_tolerance = reader.get_list("tolerance", default=["2.0"])
    try:
        tolerances = [float(t) for t in raw_tolerance]
    except ValueError:
        raise ConfigError(f"tolerance: expected numbers, got {raw_tolerance!r}") from None
    if any(t < 0 for t in tolerances):
        raise ConfigError(f"tolerance: values must be >= 0, got {tolerances}")
    if len(tolerances) not in (1, learner_count):
        raise ConfigError(
            f"tolerance: expected 1 or {learner_count} values, got {len(tolerances)}"
        )

    metric_kind = reader.get("metric", default="accuracy")
    if metric_kind not in ("accuracy", "mse"):
        raise ConfigError(f"metric: expected 'accuracy' or 'mse', got {metric_kind!r}")

    layers_raw = reader.get_list("net.layers")
    if not layers_raw:
        raise ConfigError("net.layers: required key is missing")
    try:
        layers = [int(v) for v in layers_raw]
    except ValueError:
        raise ConfigError(f"net.layers: expected integers, got {layers_raw!r}") from None
    head = reader.get("net.head", default="softmax")
    if head not in HEADS:
        raise ConfigError(f"net.head: expected one of {HEADS}, got {head!r}")
    activations_raw = reader.get_list("net.activations")
    try:
        net_spec = make_net_spec(layers, head, tuple(activations_raw) if activations_raw else None)
    except ValueError as exc:
        raise ConfigError(f"net.layers: {exc}") from None

    data = _parse_data_source(reader, "data", required=True)

    partition_kind = reader.get("partition.kind", default="iid")
    if partition_kind not in PARTITION_KINDS:
        raise ConfigError(
            f"partition.kind: expected one of {PARTITION_KINDS}, got {partition_kind!r}"
        )

    data_second = _parse_data_source(reader, "data2", required=False)
    if partition_kind == "disjoint_datasets" and data_second is None:
        raise ConfigError("data2.kind: required for the disjoint_datasets partition")

    fractions_raw = reader.get_list("partition.fractions", default=["0.7", "0.15", "0.15"])
    try:
        fractions = tuple(float(f) for f in fractions_raw)
    except ValueError:
        raise ConfigError(f"partition.fractions: expected numbers, got {fractions_raw!r}") from None
    if len(fractions) != 3:
        raise ConfigError(f"partition.fractions: expected 3 values, got {len(fractions)}")

    class_map = None
    class_map_raw = reader.get("partition.class_map")
    if class_map_raw is not None:
        class_map = {}
        for item in class_map_raw.split(","):
            if ":" not in item:
                raise ConfigError(
                    f"partition.class_map: expected 'class:subset' entries, got {item.strip()!r}"
                )
            cls, sub = item.split(":", 1)
            try:
                class_map[int(cls)] = int(sub)
            except ValueError:
                raise ConfigError(
                    f"partition.class_map: expected integers, got {item.strip()!r}"
                ) from None

    means_raw = reader.get_list("partition.means")
    means = None
    if means_raw is not None:
        try:
            means = [float(m) for m in means_raw]
        except ValueError:
            raise ConfigError(f"partition.means: expected numbers, got {means_raw!r}") from None

    try:
        partition = PartitionSpec(
            kind=partition_kind,
            learner_count=learner_count,
            rng_seed=reader.get_int("partition.seed", default=seed),
            subset_count=reader.get_int("partition.subsets", default=0),
            class_to_subset=class_map,
            means=means,
            stddev=reader.get_float("partition.stddev", default=1.5),
            fractions=fractions,
        )
    except ValueError as exc:
        raise ConfigError(f"partition.kind: {exc}") from None

    output_dir = reader.get("output", default="out")

    leftover = reader.unused()
    if leftover:
        raise ConfigError(f"{leftover[0]}: unknown key")

    return ExperimentConfig(
        seed=seed,
        learner_count=learner_count,
        rounds=rounds,
        epochs_per_round=epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
        tolerances=tolerances,
        metric_kind=metric_kind,
        net_spec=net_spec,
        data=data,
        data_second=data_second,
        partition=partition,
        output_dir=output_dir,
    )
