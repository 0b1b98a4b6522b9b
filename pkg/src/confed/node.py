"""Per-learner round protocol: select, train/share, aggregate/publish.

Each learner owns a full DAG replica and talks to its peers only through
the broadcast bus. A round walks every learner through the same phase
sequence with a barrier between phases:

1. *select* — score every active model on the local test split and keep
   the top sqrt(n) by metric x sqrt(popularity).
2. *train/share* — train each selected model on the local training split
   and broadcast one update per model.
3. *aggregate/publish* — once updates from every peer have arrived,
   filter the updates on each trained model by weight divergence and
   broadcast the resulting selection.
4. *materialize* — once selections from every peer have arrived, fold
   every selection (own and received) into the local replica and measure
   the freshly aggregated models on the local test split.

Because aggregation is deterministic and selections are shared, replicas
never exchange aggregated parameters yet remain byte-identical. Training
several selected models per round is what carries knowledge between
groups; a learner's own update is always part of its own selection, so no
learner can be silenced by its peers.

The scheduler in ``run_round`` executes learners sequentially in id
order. Every training call derives its RNG seed from (global seed,
learner, round, model), so any parallel schedule would produce the same
bytes; the sequential one is simply the reference order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .dag import ModelDag, SelectionRecord, UpdateRecord, make_update
from .data import LearnerSplit
from .nn import (
    HEAD_MSE,
    HEAD_SOFTMAX,
    NetSpec,
    TrainConfig,
    evaluate_accuracy,
    evaluate_mse,
    train,
)
from .params import derive_seed
from .rules import ScoredModel, normalize_metric, select_best_models, select_updates
from .transport import (
    KIND_JOIN,
    KIND_SELECTION,
    KIND_UPDATE,
    Bus,
    make_envelope,
    selection_from_payload,
    selection_to_payload,
    update_from_payload,
    update_to_payload,
)

logger = logging.getLogger(__name__)

PHASES = ("select", "train", "share", "aggregate", "publish", "done")

METRIC_ACCURACY = "accuracy"
METRIC_MSE = "mse"


@dataclass
class ModelMetric:
    """Post-aggregation measurement of one model a learner trained."""

    parent_id: str
    model_id: str
    value: float


@dataclass
class RoundOutcome:
    round: int
    learner_id: str
    metrics: list[ModelMetric]
    updates_sent: int
    models_trained: int
    active_model_count: int
    fork_count: int


class Learner:
    """State machine for one learner across rounds."""

    def __init__(
        self,
        learner_id: str,
        split: LearnerSplit,
        net_spec: NetSpec,
        bus: Bus,
        tolerance: float,
        metric_kind: str,
        epochs: int,
        learning_rate: float,
        batch_size: int,
        global_seed: int,
        baseline: bool = False,
        store_dir=None,
    ):
        if metric_kind not in (METRIC_ACCURACY, METRIC_MSE):
            raise ValueError(f"unknown metric kind {metric_kind!r}")
        if metric_kind == METRIC_ACCURACY and net_spec.head != HEAD_SOFTMAX:
            raise ValueError("accuracy metric requires a softmax head")
        if metric_kind == METRIC_MSE and net_spec.head != HEAD_MSE:
            raise ValueError("mse metric requires a reconstruction head")
        if tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {tolerance}")
        self.learner_id = learner_id
        self.split = split
        self.net_spec = net_spec
        self.bus = bus
        self.tolerance = tolerance
        self.metric_kind = metric_kind
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.global_seed = global_seed
        self.baseline = baseline
        self.store_dir = store_dir
        self.dag = ModelDag()
        self.roster: list[str] = []
        self.phase = "done"
        self.selected_model_ids: list[str] = []
        self._own_updates: dict[str, UpdateRecord] = {}
        self._own_selections: list[SelectionRecord] = []
        self._active_count = 0

    # -- bookkeeping ----------------------------------------------------

    def _advance(self, expected: str, next_phase: str) -> None:
        if self.phase != expected:
            raise RuntimeError(
                f"{self.learner_id}: phase {expected!r} requested while in {self.phase!r}"
            )
        self.phase = next_phase

    @property
    def peer_count(self) -> int:
        return len(self.roster) - 1

    def join(self, genesis_params, spec_digest: str) -> None:
        """Register on the bus and seed the local replica."""
        self.bus.join(self.learner_id)
        self.dag.insert_genesis(genesis_params, spec_digest)

    def announce(self) -> None:
        """Broadcast the join announcement (after everyone registered)."""
        self.bus.broadcast(make_envelope(
            KIND_JOIN, self.learner_id, 0, {"learner_id": self.learner_id}
        ))

    def finish_join(self, expected_peers: int) -> list[str]:
        """Barrier: wait for every peer's announcement, fix the roster."""
        envelopes = self.bus.collect(self.learner_id, KIND_JOIN, 0, expected_peers)
        peers = {env.payload["learner_id"] for env in envelopes}
        self.roster = sorted(peers | {self.learner_id})
        self.phase = "done"
        return self.roster

    # -- round phases ----------------------------------------------------

    def phase_select(self, round_no: int) -> list[str]:
        """Pick the models to train this round."""
        self.phase = "select"
        active = self.dag.active_models(round_no)
        if not active:
            raise RuntimeError(f"round {round_no}: no active models (protocol fault)")
        self._active_count = len(active)
        if self.baseline:
            # baseline FedAvg: one global lineage, no scoring
            if len(active) != 1:
                raise RuntimeError(
                    f"baseline expects a single chain, found {len(active)} active models"
                )
            self.selected_model_ids = list(active)
            return self.selected_model_ids
        candidates = []
        for model_id in active:
            node = self.dag.models[model_id]
            raw = self._measure(node.params)
            candidates.append(ScoredModel(
                model_id=model_id,
                metric=normalize_metric(raw, self.metric_kind),
                popularity=self.dag.popularity(model_id),
            ))
        self.selected_model_ids = select_best_models(candidates)
        return self.selected_model_ids

    def phase_train_and_share(self, round_no: int) -> list[UpdateRecord]:
        """Train every selected model and broadcast the updates."""
        self._advance("select", "train")
        if not self.selected_model_ids:
            raise RuntimeError("no models selected before training")
        updates = []
        for model_id in self.selected_model_ids:
            parent = self.dag.models[model_id]
            config = TrainConfig(
                epochs=self.epochs,
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                rng_seed=derive_seed(self.global_seed, self.learner_id, round_no, model_id),
            )
            targets = self.split.train.labels if self.net_spec.head == HEAD_SOFTMAX else None
            trained = train(self.net_spec, parent.params, self.split.train.features, targets, config)
            update = make_update(
                self.learner_id, model_id, round_no, trained, self.split.sample_count
            )
            self.dag.record_update(update)
            updates.append(update)
        self.phase = "share"
        self._own_updates = {u.parent_model_id: u for u in updates}
        for update in updates:
            self.bus.broadcast(make_envelope(
                KIND_UPDATE, self.learner_id, round_no,
                update_to_payload(update, self.store_dir),
            ))
        return updates

    def phase_aggregate_and_publish(self, round_no: int) -> list[SelectionRecord]:
        """Barrier on peer updates, filter them, publish selections."""
        self._advance("share", "aggregate")
        expected = self.peer_count * len(self.selected_model_ids)
        envelopes = self.bus.collect(self.learner_id, KIND_UPDATE, round_no, expected)
        received: dict[str, list[UpdateRecord]] = {}
        for env in envelopes:
            update = update_from_payload(env.payload, self.store_dir)
            if update.parent_model_id not in self.dag.models:
                logger.warning(
                    "%s: dropping update %s on unknown parent %s",
                    self.learner_id, update.update_id[:12], update.parent_model_id[:12],
                )
                continue
            self.dag.record_update(update)
            received.setdefault(update.parent_model_id, []).append(update)

        selections = []
        for model_id in self.selected_model_ids:
            my_update = self._own_updates[model_id]
            peers = received.get(model_id, [])
            if self.baseline:
                chosen = [my_update] + peers
            else:
                chosen = select_updates(my_update, peers, self.tolerance)
            selections.append(SelectionRecord(
                learner_id=self.learner_id,
                round=round_no,
                parent_model_id=model_id,
                chosen_update_ids=tuple(u.update_id for u in chosen),
            ))
        self.phase = "publish"
        self._own_selections = selections
        for selection in selections:
            self.bus.broadcast(make_envelope(
                KIND_SELECTION, self.learner_id, round_no,
                selection_to_payload(selection),
            ))
        return selections

    def phase_materialize(self, round_no: int) -> RoundOutcome:
        """Barrier on peer selections, fold them all into the replica."""
        if self.phase != "publish":
            raise RuntimeError(
                f"{self.learner_id}: materialize requested while in {self.phase!r}"
            )
        expected = self.peer_count * len(self.selected_model_ids)
        envelopes = self.bus.collect(self.learner_id, KIND_SELECTION, round_no, expected)
        all_selections = list(self._own_selections)
        all_selections.extend(selection_from_payload(env.payload) for env in envelopes)
        # canonical order keeps replicas identical regardless of arrival order
        all_selections.sort(key=lambda s: (s.learner_id, s.parent_model_id))
        for selection in all_selections:
            self.dag.materialize_model(selection)

        metrics = []
        for selection in self._own_selections:
            node = self.dag.materialize_model(selection)  # idempotent lookup
            metrics.append(ModelMetric(
                parent_id=selection.parent_model_id,
                model_id=node.model_id,
                value=self._measure(node.params),
            ))
        self.phase = "done"
        return RoundOutcome(
            round=round_no,
            learner_id=self.learner_id,
            metrics=metrics,
            updates_sent=len(self._own_updates),
            models_trained=len(self.selected_model_ids),
            active_model_count=self._active_count,
            fork_count=self.dag.fork_count(round_no),
        )

    def _measure(self, params) -> float:
        test = self.split.test
        if self.metric_kind == METRIC_ACCURACY:
            return evaluate_accuracy(self.net_spec, params, test.features, test.labels)
        return evaluate_mse(self.net_spec, params, test.features)


def join_all(learners: list[Learner], genesis_params, spec_digest: str) -> None:
    """Round-0 bootstrap: everyone joins and observes the same roster."""
    for learner in learners:
        learner.join(genesis_params.copy(), spec_digest)
    for learner in learners:
        learner.announce()
    rosters = {tuple(l.finish_join(len(learners) - 1)) for l in learners}
    if len(rosters) != 1:
        raise RuntimeError(f"inconsistent rosters after join: {rosters}")


def run_round(learners: list[Learner], round_no: int) -> list[RoundOutcome]:
    """Execute one synchronous round over all learners.

    Phases are global barriers: every learner completes a phase before
    any learner starts the next, mirroring the message-counting barriers
    a distributed deployment would use.
    """
    ordered = sorted(learners, key=lambda l: l.learner_id)
    for learner in ordered:
        learner.phase_select(round_no)
    for learner in ordered:
        learner.phase_train_and_share(round_no)
    for learner in ordered:
        learner.phase_aggregate_and_publish(round_no)
    return [learner.phase_materialize(round_no) for learner in ordered]
