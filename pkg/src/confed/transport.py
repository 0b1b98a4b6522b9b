"""Broadcast message bus and the pinned line-delimited wire format.

The in-process bus simulates a loss-free broadcast network: every message
reaches every other roster member exactly once, FIFO per sender, in a
deterministic global order. The wire format is one canonical JSON object
per line so the same node logic can later run over any stream transport;
``serialize_envelope(parse_envelope(line)) == line`` for every message
the bus emits.

Messages carry a SHA-256 digest of their canonical payload bytes, checked
on every receive path. Model parameters travel hex-encoded inside update
payloads, or as a ``params_ref`` file name when a shared model store
directory is in use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .dag import UpdateRecord, SelectionRecord, make_update
from .params import params_from_hex, params_to_bytes, params_from_bytes, params_to_hex, sha256_hex

KIND_JOIN = "join"
KIND_UPDATE = "update"
KIND_SELECTION = "selection"
KIND_BARRIER = "barrier"
KINDS = (KIND_JOIN, KIND_UPDATE, KIND_SELECTION, KIND_BARRIER)

# Canonical key order per payload kind; optional keys are skipped when absent.
_PAYLOAD_KEYS = {
    KIND_JOIN: ("learner_id",),
    KIND_UPDATE: (
        "update_id",
        "learner_id",
        "parent_model_id",
        "round",
        "sample_count",
        "params_hex",
        "params_ref",
    ),
    KIND_SELECTION: ("learner_id", "round", "parent_model_id", "chosen_update_ids"),
    KIND_BARRIER: ("round",),
}
_ENVELOPE_KEYS = ("kind", "sender", "round", "digest", "payload")


@dataclass(frozen=True)
class Envelope:
    kind: str
    sender: str
    round: int
    payload: dict
    digest: str


def canonical_payload_bytes(kind: str, payload: dict) -> bytes:
    if kind not in _PAYLOAD_KEYS:
        raise ValueError(f"unknown message kind {kind!r}")
    allowed = _PAYLOAD_KEYS[kind]
    unknown = set(payload) - set(allowed)
    if unknown:
        raise ValueError(f"unexpected payload keys for {kind}: {sorted(unknown)}")
    ordered = {key: payload[key] for key in allowed if key in payload}
    return json.dumps(ordered, separators=(",", ":")).encode("utf-8")


def make_envelope(kind: str, sender: str, round_no: int, payload: dict) -> Envelope:
    digest = sha256_hex(canonical_payload_bytes(kind, payload))
    return Envelope(kind=kind, sender=sender, round=round_no, payload=payload, digest=digest)


def serialize_envelope(env: Envelope) -> bytes:
    payload_bytes = canonical_payload_bytes(env.kind, env.payload)
    if sha256_hex(payload_bytes) != env.digest:
        raise ValueError("payload digest mismatch; refusing to serialize")
    obj = {
        "kind": env.kind,
        "sender": env.sender,
        "round": env.round,
        "digest": env.digest,
        "payload": json.loads(payload_bytes),
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8") + b"\n"


def parse_envelope(line: bytes) -> Envelope:
    """Parse one wire line, verifying structure and payload digest."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not a valid wire message: {exc}") from exc
    missing = [key for key in _ENVELOPE_KEYS if key not in obj]
    if missing:
        raise ValueError(f"wire message missing fields {missing}")
    env = Envelope(
        kind=obj["kind"],
        sender=obj["sender"],
        round=int(obj["round"]),
        payload=obj["payload"],
        digest=obj["digest"],
    )
    if env.round < 0:
        raise ValueError(f"round must be >= 0, got {env.round}")
    actual = sha256_hex(canonical_payload_bytes(env.kind, env.payload))
    if actual != env.digest:
        raise ValueError(
            f"payload digest mismatch from {env.sender}: "
            f"claimed {env.digest[:12]}, computed {actual[:12]}"
        )
    return env


class Bus:
    """Deterministic in-process broadcast bus with per-learner inboxes.

    Delivery order is (send order) = (global sequence); within a sender
    the FIFO order is preserved. With ``record_path`` set, every broadcast
    is appended to a wire-format message log so a run can be replayed or
    audited without the learners.
    """

    def __init__(self, record_path=None):
        self.roster: set[str] = set()
        self._inboxes: dict[str, list[tuple[int, Envelope]]] = {}
        self._sequence = 0
        self._record = open(record_path, "wb") if record_path else None

    def close(self) -> None:
        if self._record is not None:
            self._record.close()
            self._record = None

    def join(self, learner_id: str) -> list[str]:
        if learner_id in self.roster:
            raise ValueError(f"learner id {learner_id!r} already joined")
        self.roster.add(learner_id)
        self._inboxes[learner_id] = []
        return sorted(self.roster)

    def broadcast(self, env: Envelope) -> None:
        if env.sender not in self.roster:
            raise ValueError(f"unknown sender {env.sender!r}")
        # re-derive the digest so a corrupted envelope never enters an inbox
        actual = sha256_hex(canonical_payload_bytes(env.kind, env.payload))
        if actual != env.digest:
            raise ValueError(f"payload digest mismatch from {env.sender}")
        self._sequence += 1
        if self._record is not None:
            self._record.write(serialize_envelope(env))
        for member in self.roster:
            if member != env.sender:
                self._inboxes[member].append((self._sequence, env))

    def collect(self, learner_id: str, kind: str, round_no: int, expected_count: int) -> list[Envelope]:
        """Drain ``expected_count`` envelopes of one kind and round.

        Envelopes for other rounds or kinds stay buffered. In the
        simulated bus all sends precede the collect, so a shortfall is a
        protocol fault rather than something to wait on.
        """
        if learner_id not in self.roster:
            raise ValueError(f"unknown learner {learner_id!r}")
        if expected_count == 0:
            return []
        inbox = self._inboxes[learner_id]
        matched = [(seq, env) for seq, env in inbox if env.kind == kind and env.round == round_no]
        if len(matched) < expected_count:
            raise RuntimeError(
                f"{learner_id} expected {expected_count} {kind!r} messages for "
                f"round {round_no}, only {len(matched)} arrived"
            )
        matched = matched[:expected_count]
        taken = {id(env) for _, env in matched}
        self._inboxes[learner_id] = [
            (seq, env) for seq, env in inbox if id(env) not in taken
        ]
        for _, env in matched:
            actual = sha256_hex(canonical_payload_bytes(env.kind, env.payload))
            if actual != env.digest:
                raise ValueError(f"payload digest mismatch from {env.sender}")
        matched.sort(key=lambda item: (item[1].sender, item[0]))
        return [env for _, env in matched]


# ---------------------------------------------------------------------------
# Payload codecs
# ---------------------------------------------------------------------------

def update_to_payload(update: UpdateRecord, store_dir=None) -> dict:
    """Encode an update; with ``store_dir`` the params go to a shared
    model store file and only the reference travels on the wire."""
    payload = {
        "update_id": update.update_id,
        "learner_id": update.learner_id,
        "parent_model_id": update.parent_model_id,
        "round": update.round,
        "sample_count": update.sample_count,
    }
    if store_dir is None:
        payload["params_hex"] = params_to_hex(update.params)
    else:
        ref = f"{update.update_id}.params"
        Path(store_dir, ref).write_bytes(params_to_bytes(update.params))
        payload["params_ref"] = ref
    return payload


def update_from_payload(payload: dict, store_dir=None) -> UpdateRecord:
    if "params_hex" in payload:
        params = params_from_hex(payload["params_hex"])
    elif "params_ref" in payload:
        if store_dir is None:
            raise ValueError("update references a model store but none was configured")
        params = params_from_bytes(Path(store_dir, payload["params_ref"]).read_bytes())
    else:
        raise ValueError("update payload carries neither params_hex nor params_ref")
    update = make_update(
        learner_id=payload["learner_id"],
        parent_model_id=payload["parent_model_id"],
        round_no=int(payload["round"]),
        params=params,
        sample_count=int(payload["sample_count"]),
    )
    if update.update_id != payload["update_id"]:
        raise ValueError(
            f"update id mismatch: payload says {payload['update_id'][:12]}, "
            f"content hashes to {update.update_id[:12]}"
        )
    return update


def selection_to_payload(selection: SelectionRecord) -> dict:
    return {
        "learner_id": selection.learner_id,
        "round": selection.round,
        "parent_model_id": selection.parent_model_id,
        "chosen_update_ids": list(selection.chosen_update_ids),
    }


def selection_from_payload(payload: dict) -> SelectionRecord:
    return SelectionRecord(
        learner_id=payload["learner_id"],
        round=int(payload["round"]),
        parent_model_id=payload["parent_model_id"],
        chosen_update_ids=tuple(payload["chosen_update_ids"]),
    )


def read_message_log(path) -> list[Envelope]:
    """Parse and verify every line of a recorded message log."""
    envelopes = []
    with open(path, "rb") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                envelopes.append(parse_envelope(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
    return envelopes
