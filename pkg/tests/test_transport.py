"""Broadcast bus semantics and the pinned wire format."""

import numpy as np
import pytest

from confed.dag import SelectionRecord, make_update
from confed.transport import (
    Bus,
    Envelope,
    make_envelope,
    parse_envelope,
    read_message_log,
    selection_from_payload,
    selection_to_payload,
    serialize_envelope,
    update_from_payload,
    update_to_payload,
)

PARENT = "c" * 64


def join_many(bus, count):
    ids = [f"L{i:02d}" for i in range(count)]
    for learner in ids:
        bus.join(learner)
    return ids


def random_envelope(rng):
    kind = rng.choice(["join", "update", "selection"])
    sender = f"L{int(rng.integers(0, 20)):02d}"
    round_no = int(rng.integers(0, 50))
    if kind == "join":
        payload = {"learner_id": sender}
    elif kind == "update":
        update = make_update(
            sender, PARENT, max(round_no, 1),
            rng.normal(size=int(rng.integers(1, 6))), int(rng.integers(1, 100)),
        )
        payload = update_to_payload(update)
        round_no = update.round
    else:
        payload = selection_to_payload(SelectionRecord(
            learner_id=sender,
            round=round_no,
            parent_model_id=PARENT,
            chosen_update_ids=tuple(f"{i:064x}" for i in range(int(rng.integers(1, 5)))),
        ))
    return make_envelope(str(kind), sender, round_no, payload)


class TestJoin:
    def test_roster_grows(self):
        bus = Bus()
        assert bus.join("L00") == ["L00"]
        assert bus.join("L01") == ["L00", "L01"]
        assert bus.join("L02") == ["L00", "L01", "L02"]

    def test_duplicate_id_rejected(self):
        bus = Bus()
        bus.join("L00")
        with pytest.raises(ValueError, match="already"):
            bus.join("L00")

    def test_join_order_irrelevant_to_final_roster(self):
        first = Bus()
        second = Bus()
        for learner in ["L00", "L01", "L02"]:
            first.join(learner)
        for learner in ["L02", "L00", "L01"]:
            second.join(learner)
        assert first.roster == second.roster


class TestBroadcast:
    def test_delivers_to_everyone_else(self):
        bus = Bus()
        ids = join_many(bus, 5)
        env = make_envelope("join", ids[0], 0, {"learner_id": ids[0]})
        bus.broadcast(env)
        received = 0
        for learner in ids[1:]:
            received += len(bus.collect(learner, "join", 0, 1))
        assert received == 4
        assert bus.collect(ids[0], "join", 0, 0) == []

    def test_fifo_per_sender(self):
        bus = Bus()
        ids = join_many(bus, 3)
        first = make_envelope("selection", ids[0], 1, {
            "learner_id": ids[0], "round": 1, "parent_model_id": PARENT,
            "chosen_update_ids": ["a" * 64],
        })
        second = make_envelope("selection", ids[0], 1, {
            "learner_id": ids[0], "round": 1, "parent_model_id": PARENT,
            "chosen_update_ids": ["b" * 64],
        })
        bus.broadcast(first)
        bus.broadcast(second)
        got = bus.collect(ids[1], "selection", 1, 2)
        assert [g.digest for g in got] == [first.digest, second.digest]

    def test_unknown_sender_rejected(self):
        bus = Bus()
        join_many(bus, 2)
        env = make_envelope("join", "L99", 0, {"learner_id": "L99"})
        with pytest.raises(ValueError, match="unknown sender"):
            bus.broadcast(env)

    def test_corrupted_digest_rejected(self):
        bus = Bus()
        ids = join_many(bus, 2)
        env = make_envelope("join", ids[0], 0, {"learner_id": ids[0]})
        forged = Envelope(env.kind, env.sender, env.round, {"learner_id": "mallory"}, env.digest)
        with pytest.raises(ValueError, match="digest"):
            bus.broadcast(forged)


class TestCollect:
    def test_sorted_by_sender(self):
        bus = Bus()
        ids = join_many(bus, 5)
        for learner in reversed(ids[1:]):
            bus.broadcast(make_envelope("join", learner, 0, {"learner_id": learner}))
        got = bus.collect(ids[0], "join", 0, 4)
        assert [g.sender for g in got] == sorted(ids[1:])

    def test_early_round_messages_stay_buffered(self):
        bus = Bus()
        ids = join_many(bus, 2)
        late = make_envelope("selection", ids[1], 2, {
            "learner_id": ids[1], "round": 2, "parent_model_id": PARENT,
            "chosen_update_ids": ["a" * 64],
        })
        now = make_envelope("selection", ids[1], 1, {
            "learner_id": ids[1], "round": 1, "parent_model_id": PARENT,
            "chosen_update_ids": ["b" * 64],
        })
        bus.broadcast(late)
        bus.broadcast(now)
        got = bus.collect(ids[0], "selection", 1, 1)
        assert [g.round for g in got] == [1]
        # the round-2 envelope is still there for the next round
        got2 = bus.collect(ids[0], "selection", 2, 1)
        assert [g.round for g in got2] == [2]

    def test_zero_expected_returns_empty(self):
        bus = Bus()
        ids = join_many(bus, 2)
        assert bus.collect(ids[0], "update", 1, 0) == []

    def test_shortfall_is_protocol_fault(self):
        bus = Bus()
        ids = join_many(bus, 3)
        bus.broadcast(make_envelope("join", ids[1], 0, {"learner_id": ids[1]}))
        with pytest.raises(RuntimeError, match="expected 2"):
            bus.collect(ids[0], "join", 0, 2)


class TestWireFormat:
    def test_round_trip_is_byte_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            env = random_envelope(rng)
            line = serialize_envelope(env)
            assert serialize_envelope(parse_envelope(line)) == line

    def test_parse_verifies_digest(self):
        env = make_envelope("join", "L00", 0, {"learner_id": "L00"})
        line = serialize_envelope(env)
        # tamper the payload (its learner_id is the last "L00" on the line)
        head, _, tail = line.rpartition(b"L00")
        with pytest.raises(ValueError, match="digest"):
            parse_envelope(head + b"L01" + tail)

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError, match="not a valid wire message"):
            parse_envelope(b"this is not json\n")

    def test_parse_rejects_missing_fields(self):
        with pytest.raises(ValueError, match="missing fields"):
            parse_envelope(b'{"kind":"join","sender":"L00"}\n')

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown message kind"):
            make_envelope("gossip", "L00", 0, {})


class TestPayloadCodecs:
    def test_update_embedded_round_trip(self):
        update = make_update("L03", PARENT, 2, np.array([0.25, -1.5]), 42)
        payload = update_to_payload(update)
        decoded = update_from_payload(payload)
        assert decoded.update_id == update.update_id
        assert decoded.params.tobytes() == update.params.tobytes()
        assert decoded.sample_count == 42

    def test_update_by_reference_round_trip(self, tmp_path):
        update = make_update("L03", PARENT, 2, np.array([0.25, -1.5, 7.0]), 9)
        payload = update_to_payload(update, store_dir=tmp_path)
        assert "params_hex" not in payload
        assert (tmp_path / payload["params_ref"]).exists()
        decoded = update_from_payload(payload, store_dir=tmp_path)
        assert decoded.update_id == update.update_id
        assert decoded.params.tobytes() == update.params.tobytes()

    def test_by_reference_without_store_rejected(self, tmp_path):
        update = make_update("L03", PARENT, 2, np.array([1.0]), 9)
        payload = update_to_payload(update, store_dir=tmp_path)
        with pytest.raises(ValueError, match="store"):
            update_from_payload(payload)

    def test_tampered_update_id_rejected(self):
        update = make_update("L03", PARENT, 2, np.array([0.25]), 42)
        payload = update_to_payload(update)
        payload["update_id"] = "0" * 64
        with pytest.raises(ValueError, match="mismatch"):
            update_from_payload(payload)

    def test_selection_round_trip(self):
        record = SelectionRecord("L01", 4, PARENT, ("a" * 64, "b" * 64))
        assert selection_from_payload(selection_to_payload(record)) == record


class TestMessageLog:
    def test_recorded_log_replays(self, tmp_path):
        log_path = tmp_path / "messages.log"
        bus = Bus(record_path=log_path)
        ids = join_many(bus, 3)
        sent = []
        for learner in ids:
            env = make_envelope("join", learner, 0, {"learner_id": learner})
            bus.broadcast(env)
            sent.append(env)
        bus.close()
        replayed = read_message_log(log_path)
        assert [e.digest for e in replayed] == [e.digest for e in sent]

    def test_corrupted_log_line_rejected(self, tmp_path):
        log_path = tmp_path / "messages.log"
        bus = Bus(record_path=log_path)
        ids = join_many(bus, 2)
        bus.broadcast(make_envelope("join", ids[0], 0, {"learner_id": ids[0]}))
        bus.close()
        data = log_path.read_bytes().replace(b"L00", b"L77")
        log_path.write_bytes(data)
        with pytest.raises(ValueError, match="digest"):
            read_message_log(log_path)
