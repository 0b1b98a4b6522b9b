"""Experiment orchestration and artifact emission.

``run_experiment`` wires the whole stack together: build datasets,
partition them, boot the learners on a recording bus, run the configured
number of rounds, and write four artifacts into the output directory:

* ``metrics.csv``   — one row per (round, learner, trained model)
* ``dag.jsonl``     — DAG snapshot (models, updates, selections)
* ``dag.dot``       — Graphviz rendering of the model evolution
* ``messages.log``  — full wire-format message log of the run

Identical configs produce byte-identical artifacts; floats are printed
with 17 significant digits so reruns can be compared with ``cmp``.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .config import ExperimentConfig
from .dag import ModelDag
from .data import Dataset, generate_blobs, load_idx, partition, partition_preview
from .nn import init_params
from .node import Learner, RoundOutcome, join_all, run_round
from .params import derive_seed
from .transport import KIND_UPDATE, Bus, read_message_log, update_from_payload

logger = logging.getLogger(__name__)

METRICS_HEADER = (
    "round,learner_id,model_id,metric_kind,value,"
    "models_trained,active_model_count,fork_count_this_round"
)


def _learner_id(index: int) -> str:
    return f"L{index:02d}"


def build_dataset(source) -> Dataset:
    if source.kind == "blobs":
        return generate_blobs(
            class_count=source.classes,
            samples_per_class=source.samples_per_class,
            dim=source.dim,
            spread=source.spread,
            seed=source.seed,
        )
    return load_idx(source.images_path, source.labels_path)


def build_splits(config: ExperimentConfig):
    dataset = build_dataset(config.data)
    second = build_dataset(config.data_second) if config.data_second else None
    return partition(dataset, config.partition, second=second)


def genesis_for(config: ExperimentConfig):
    params = init_params(config.net_spec, derive_seed(config.seed, "genesis"))
    return params, config.net_spec.digest()


def build_learners(config: ExperimentConfig, bus: Bus, baseline: bool) -> list[Learner]:
    splits = build_splits(config)
    for split in splits:
        if split.train.feature_count != config.net_spec.input_size:
            raise ValueError(
                f"net.layers: input size {config.net_spec.input_size} does not match "
                f"the dataset's {split.train.feature_count} features"
            )
        if (config.net_spec.head == "softmax"
                and split.train.class_count > config.net_spec.output_size):
            raise ValueError(
                f"net.layers: output size {config.net_spec.output_size} is smaller "
                f"than the dataset's {split.train.class_count} classes"
            )
    learners = []
    for index in range(config.learner_count):
        learners.append(Learner(
            learner_id=_learner_id(index),
            split=splits[index],
            net_spec=config.net_spec,
            bus=bus,
            tolerance=config.tolerance_for(index),
            metric_kind=config.metric_kind,
            epochs=config.epochs_per_round,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            global_seed=config.seed,
            baseline=baseline,
        ))
    return learners


def metrics_rows(outcomes: list[RoundOutcome], metric_kind: str) -> list[str]:
    rows = []
    for outcome in outcomes:
        for metric in outcome.metrics:
            rows.append(
                f"{outcome.round},{outcome.learner_id},{metric.model_id},"
                f"{metric_kind},{metric.value:.17g},{outcome.models_trained},"
                f"{outcome.active_model_count},{outcome.fork_count}"
            )
    return rows


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    baseline: bool = False,
) -> dict[str, Path]:
    """Run the configured experiment and write its artifacts.

    With ``baseline=True`` model selection and divergence filtering are
    disabled: every learner trains the single global lineage and accepts
    every update, which is plain decentralized FedAvg.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.csv",
        "snapshot": out / "dag.jsonl",
        "dot": out / "dag.dot",
        "log": out / "messages.log",
    }

    bus = Bus(record_path=paths["log"])
    try:
        learners = build_learners(config, bus, baseline)
        genesis_params, spec_digest = genesis_for(config)
        join_all(learners, genesis_params, spec_digest)
        all_rows = [METRICS_HEADER]
        for round_no in range(1, config.rounds + 1):
            outcomes = run_round(learners, round_no)
            all_rows.extend(metrics_rows(outcomes, config.metric_kind))
            logger.info(
                "round %d: %d active models, %d forks",
                round_no, outcomes[0].active_model_count, outcomes[0].fork_count,
            )
    finally:
        bus.close()

    paths["metrics"].write_text("\n".join(all_rows) + "\n", encoding="utf-8")
    reference = learners[0].dag
    reference.save_snapshot(paths["snapshot"])
    paths["dot"].write_text(reference.export_dot(), encoding="utf-8")
    return paths


def preview_partition(config: ExperimentConfig) -> str:
    """Learner-by-class histogram CSV; no training happens."""
    dataset = build_dataset(config.data)
    second = build_dataset(config.data_second) if config.data_second else None
    return partition_preview(dataset, config.partition, second=second)


def rebuild_dag_from_log(log_path, genesis_params, spec_digest: str) -> ModelDag:
    """Replay a message log into a fresh DAG replica, without learners.

    Rounds are replayed in order — updates first, then selections in the
    same canonical order the learners used — so the rebuilt DAG matches
    the replicas of the original run byte for byte.
    """
    from .transport import KIND_SELECTION, selection_from_payload

    dag = ModelDag()
    dag.insert_genesis(genesis_params, spec_digest)
    updates_by_round: dict[int, list] = {}
    selections_by_round: dict[int, list] = {}
    for env in read_message_log(log_path):
        if env.kind == KIND_UPDATE:
            updates_by_round.setdefault(env.round, []).append(env.payload)
        elif env.kind == KIND_SELECTION:
            selections_by_round.setdefault(env.round, []).append(env.payload)
    for round_no in sorted(set(updates_by_round) | set(selections_by_round)):
        for payload in updates_by_round.get(round_no, []):
            dag.record_update(update_from_payload(payload))
        selections = [selection_from_payload(p) for p in selections_by_round.get(round_no, [])]
        selections.sort(key=lambda s: (s.learner_id, s.parent_model_id))
        for selection in selections:
            dag.materialize_model(selection)
    return dag
