"""Content-addressed DAG of model evolution.

Aggregated models are nodes; learner updates are the labeled edges that
feed them; selection records are the recipes that deterministically turn
a set of updates into a child model. Because ids are SHA-256 hashes over
(parent, sorted update ids, parameter bytes), two learners who publish
the same selection produce the same node, and replicas that saw the same
updates converge byte for byte.

The DAG is append-only: models that stop receiving updates simply leave
the active set but stay queryable for lineage tracing and export.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .params import params_from_hex, params_to_bytes, params_to_hex, sha256_hex, validate_params
from .rules import fedavg

logger = logging.getLogger(__name__)

GENESIS_PARENT = "GENESIS"


def compute_update_id(learner_id: str, parent_model_id: str, round_no: int, params: np.ndarray) -> str:
    preimage = f"update:{learner_id}:{parent_model_id}:{round_no};".encode("utf-8")
    return sha256_hex(preimage + params_to_bytes(params))


def compute_model_id(parent_id: str, update_ids: list[str], params: np.ndarray) -> str:
    preimage = "model:{};{};".format(parent_id, ",".join(sorted(update_ids))).encode("utf-8")
    return sha256_hex(preimage + params_to_bytes(params))


def compute_genesis_id(params: np.ndarray, spec_digest: str) -> str:
    preimage = f"genesis:{spec_digest};".encode("utf-8")
    return sha256_hex(preimage + params_to_bytes(params))


@dataclass(frozen=True)
class UpdateRecord:
    """A locally trained model submitted against a specific parent."""

    update_id: str
    learner_id: str
    parent_model_id: str
    round: int
    params: np.ndarray
    sample_count: int


def make_update(
    learner_id: str,
    parent_model_id: str,
    round_no: int,
    params: np.ndarray,
    sample_count: int,
) -> UpdateRecord:
    params = validate_params(params)
    if sample_count <= 0:
        raise ValueError(f"sample_count must be positive, got {sample_count}")
    return UpdateRecord(
        update_id=compute_update_id(learner_id, parent_model_id, round_no, params),
        learner_id=learner_id,
        parent_model_id=parent_model_id,
        round=round_no,
        params=params,
        sample_count=sample_count,
    )


@dataclass(frozen=True)
class SelectionRecord:
    """A learner's published list of accepted update ids for one parent."""

    learner_id: str
    round: int
    parent_model_id: str
    chosen_update_ids: tuple[str, ...]


@dataclass(frozen=True)
class ModelNode:
    """An aggregated model: one vertex of the evolution DAG."""

    model_id: str
    parent_id: str
    created_round: int
    aggregated_update_ids: tuple[str, ...]
    params: np.ndarray
    creator: str


class ModelDag:
    """Append-only store of models, updates, and selections."""

    def __init__(self):
        self.models: dict[str, ModelNode] = {}
        self.updates: dict[str, UpdateRecord] = {}
        self.selections: list[SelectionRecord] = []
        self._updates_by_parent_round: dict[tuple[str, int], list[str]] = {}
        self._submissions: set[tuple[str, str, int]] = set()
        self._seen_selections: set[SelectionRecord] = set()
        self._children: dict[str, list[str]] = {}
        self._genesis_id: str | None = None

    # -- construction -------------------------------------------------

    def insert_genesis(self, params: np.ndarray, spec_digest: str) -> str:
        if self.models:
            raise ValueError("genesis already present")
        params = validate_params(params)
        model_id = compute_genesis_id(params, spec_digest)
        node = ModelNode(
            model_id=model_id,
            parent_id=GENESIS_PARENT,
            created_round=0,
            aggregated_update_ids=(),
            params=params,
            creator=GENESIS_PARENT,
        )
        self.models[model_id] = node
        self._genesis_id = model_id
        return model_id

    @property
    def genesis_id(self) -> str:
        if self._genesis_id is None:
            raise ValueError("DAG has no genesis")
        return self._genesis_id

    def record_update(self, update: UpdateRecord) -> str:
        if update.parent_model_id not in self.models:
            raise KeyError(f"unknown parent model {update.parent_model_id}")
        parent = self.models[update.parent_model_id]
        if update.round <= parent.created_round:
            raise ValueError(
                f"update round {update.round} not after parent round {parent.created_round}"
            )
        key = (update.learner_id, update.parent_model_id, update.round)
        if key in self._submissions:
            raise ValueError(
                f"duplicate update from {update.learner_id} on "
                f"{update.parent_model_id[:12]} round {update.round}"
            )
        expected = compute_update_id(
            update.learner_id, update.parent_model_id, update.round, update.params
        )
        if update.update_id != expected:
            raise ValueError(f"update id {update.update_id[:12]} does not match content")
        if update.sample_count <= 0:
            raise ValueError(f"sample_count must be positive, got {update.sample_count}")
        self.updates[update.update_id] = update
        self._submissions.add(key)
        self._updates_by_parent_round.setdefault(
            (update.parent_model_id, update.round), []
        ).append(update.update_id)
        return update.update_id

    def materialize_model(self, selection: SelectionRecord) -> ModelNode:
        """Aggregate a selection's updates into a child node.

        Idempotent: identical selections (same update set on the same
        parent) collapse onto one node regardless of who publishes them
        or in what order the ids were listed.
        """
        if not selection.chosen_update_ids:
            raise ValueError("selection contains no updates")
        chosen = []
        for uid in selection.chosen_update_ids:
            if uid not in self.updates:
                raise KeyError(f"selection references unknown update {uid[:12]}")
            chosen.append(self.updates[uid])
        for update in chosen:
            if update.parent_model_id != selection.parent_model_id:
                raise ValueError(
                    f"update {update.update_id[:12]} targets "
                    f"{update.parent_model_id[:12]}, not the selection's parent"
                )
            if update.round != selection.round:
                raise ValueError(
                    f"update {update.update_id[:12]} is for round {update.round}, "
                    f"selection is for round {selection.round}"
                )
        chosen.sort(key=lambda u: u.update_id)
        params = fedavg([u.params for u in chosen], [u.sample_count for u in chosen])
        model_id = compute_model_id(selection.parent_model_id, [u.update_id for u in chosen], params)
        if selection not in self._seen_selections:
            self._seen_selections.add(selection)
            self.selections.append(selection)
        if model_id in self.models:
            return self.models[model_id]
        node = ModelNode(
            model_id=model_id,
            parent_id=selection.parent_model_id,
            created_round=selection.round,
            aggregated_update_ids=tuple(u.update_id for u in chosen),
            params=params,
            creator=selection.learner_id,
        )
        self.models[model_id] = node
        self._children.setdefault(selection.parent_model_id, []).append(model_id)
        return node

    # -- queries ------------------------------------------------------

    def popularity(self, model_id: str) -> int:
        if model_id not in self.models:
            raise KeyError(f"unknown model {model_id}")
        node = self.models[model_id]
        if node.parent_id == GENESIS_PARENT:
            return 1
        return len(node.aggregated_update_ids)

    def active_models(self, round_no: int) -> list[str]:
        """Selection candidates for a round: the models created in the
        previous round, sorted by id. A model nobody updates produces no
        children and silently drops out of every later active set."""
        if round_no < 1:
            raise ValueError(f"round must be >= 1, got {round_no}")
        return sorted(
            mid for mid, node in self.models.items() if node.created_round == round_no - 1
        )

    def updates_for(self, parent_model_id: str, round_no: int) -> list[UpdateRecord]:
        ids = self._updates_by_parent_round.get((parent_model_id, round_no), [])
        return [self.updates[u] for u in ids]

    def children(self, model_id: str) -> list[str]:
        return list(self._children.get(model_id, []))

    def fork_count(self, round_no: int) -> int:
        """Extra children beyond one per parent, among models created in
        the given round."""
        per_parent: dict[str, int] = {}
        for node in self.models.values():
            if node.created_round == round_no and node.parent_id != GENESIS_PARENT:
                per_parent[node.parent_id] = per_parent.get(node.parent_id, 0) + 1
        return sum(count - 1 for count in per_parent.values() if count > 1)

    # -- export -------------------------------------------------------

    def export_dot(self) -> str:
        """DOT digraph with one edge per aggregated update.

        Nodes are labeled with round and popularity, edges with the
        learner that produced the update. Output ordering is fixed so
        exports compare byte for byte.
        """
        lines = ["digraph model_evolution {"]
        for model_id in sorted(self.models, key=lambda m: (self.models[m].created_round, m)):
            node = self.models[model_id]
            lines.append(
                f'  "{model_id}" [label="round={node.created_round} '
                f'pop={self.popularity(model_id)}"];'
            )
        edges = []
        for model_id, node in self.models.items():
            for uid in node.aggregated_update_ids:
                update = self.updates[uid]
                edges.append((node.parent_id, model_id, update.learner_id))
        for parent, child, learner in sorted(edges):
            lines.append(f'  "{parent}" -> "{child}" [label="{learner}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def save_snapshot(self, path) -> None:
        """One self-describing JSON object per line; params stored as hex
        of the canonical byte serialization."""
        with open(path, "w", encoding="utf-8") as fh:
            for model_id in sorted(self.models, key=lambda m: (self.models[m].created_round, m)):
                node = self.models[model_id]
                fh.write(json.dumps({
                    "type": "model",
                    "model_id": node.model_id,
                    "parent_id": node.parent_id,
                    "created_round": node.created_round,
                    "aggregated_update_ids": list(node.aggregated_update_ids),
                    "creator": node.creator,
                    "params_hex": params_to_hex(node.params),
                }, separators=(",", ":")) + "\n")
            for uid in sorted(self.updates):
                update = self.updates[uid]
                fh.write(json.dumps({
                    "type": "update",
                    "update_id": update.update_id,
                    "learner_id": update.learner_id,
                    "parent_model_id": update.parent_model_id,
                    "round": update.round,
                    "sample_count": update.sample_count,
                    "params_hex": params_to_hex(update.params),
                }, separators=(",", ":")) + "\n")
            for sel in sorted(self.selections, key=lambda s: (s.round, s.learner_id, s.parent_model_id)):
                fh.write(json.dumps({
                    "type": "selection",
                    "learner_id": sel.learner_id,
                    "round": sel.round,
                    "parent_model_id": sel.parent_model_id,
                    "chosen_update_ids": list(sel.chosen_update_ids),
                }, separators=(",", ":")) + "\n")


def load_snapshot(path) -> ModelDag:
    """Rebuild a DAG from a snapshot file written by ``save_snapshot``."""
    dag = ModelDag()
    models: list[dict] = []
    updates: list[dict] = []
    selections: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: not valid JSON ({exc})") from exc
            kind = record.get("type")
            if kind == "model":
                models.append(record)
            elif kind == "update":
                updates.append(record)
            elif kind == "selection":
                selections.append(record)
            else:
                raise ValueError(f"{path}:{line_no}: unknown record type {kind!r}")

    for record in models:
        node = ModelNode(
            model_id=record["model_id"],
            parent_id=record["parent_id"],
            created_round=record["created_round"],
            aggregated_update_ids=tuple(record["aggregated_update_ids"]),
            params=params_from_hex(record["params_hex"]),
            creator=record["creator"],
        )
        dag.models[node.model_id] = node
        if node.parent_id == GENESIS_PARENT:
            dag._genesis_id = node.model_id
        else:
            dag._children.setdefault(node.parent_id, []).append(node.model_id)
    for record in updates:
        update = UpdateRecord(
            update_id=record["update_id"],
            learner_id=record["learner_id"],
            parent_model_id=record["parent_model_id"],
            round=record["round"],
            params=params_from_hex(record["params_hex"]),
            sample_count=record["sample_count"],
        )
        dag.updates[update.update_id] = update
        dag._submissions.add((update.learner_id, update.parent_model_id, update.round))
        dag._updates_by_parent_round.setdefault(
            (update.parent_model_id, update.round), []
        ).append(update.update_id)
    for record in selections:
        selection = SelectionRecord(
            learner_id=record["learner_id"],
            round=record["round"],
            parent_model_id=record["parent_model_id"],
            chosen_update_ids=tuple(record["chosen_update_ids"]),
        )
        dag.selections.append(selection)
        dag._seen_selections.add(selection)
    return dag
