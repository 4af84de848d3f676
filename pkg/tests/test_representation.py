# tests/test_representation.py

import math
import time

import numpy as np
import pytest

from src.core.errors import RepresentationError
from src.features.representation import (SlotAccumulator, SlotStream, ZERO_SLOT, accumulator_add,
                                         accumulator_finalize, build_packet_sequence, build_slot_sequence,
                                         encode_flow, full_slot_sequence, packet_feature, slot_aggregate,
                                         slot_index)
from src.ingest.trace_reader import Direction, PacketRecord
from tests.conftest import KEY_TCP, make_flow, random_flow


def _pkt(ts, up=True, plen=100):
    return PacketRecord(ts, KEY_TCP, Direction.UPSTREAM if up else Direction.DOWNSTREAM, plen, "tcp")


def test_packet_feature_boundaries():
    assert packet_feature(_pkt(0.5, True, 1500), 0.5).as_tuple() == (1.0, 1.0, 0.0)
    f = packet_feature(_pkt(0.001, False, 750), 0.0)
    assert f.dir == 0
    assert f.size == 0.5
    assert f.iat == pytest.approx(math.log(2), abs=1e-12)


def test_packet_feature_rejects_regression():
    with pytest.raises(RepresentationError):
        packet_feature(_pkt(0.1), 0.2)


def test_build_packet_sequence_truncation():
    flow = make_flow([(0.0, "up", 10), (0.01, "down", 20), (0.02, "up", 30)])
    assert len(build_packet_sequence(flow, 2)) == 2
    assert len(build_packet_sequence(flow, 100)) == 3
    with pytest.raises(RepresentationError):
        build_packet_sequence(flow, 0)


def _packet_oracle(flow, mtu=1500):
    out = []
    for i, p in enumerate(flow.packets):
        dt = 0.0 if i == 0 else p.timestamp - flow.packets[i - 1].timestamp
        out.append([1.0 if p.is_upstream else 0.0, p.payload_len / mtu, math.log(1 + dt / 0.001)])
    return np.array(out)


def test_packet_sequence_matches_oracle_and_prefixes(rng):
    flow = random_flow(rng, n=50)
    seq = build_packet_sequence(flow, 50).to_array()
    assert np.max(np.abs(seq - _packet_oracle(flow))) < 1e-12
    assert np.array_equal(build_packet_sequence(flow, 20).to_array(), seq[:20])


def test_slot_aggregate_examples():
    f = slot_aggregate([_pkt(0.0, True, 1400)])
    assert f.as_tuple() == (1400 / 1500, 0.0, 0.0, 0.0, 100.0)
    assert slot_aggregate([]) == ZERO_SLOT
    f = slot_aggregate([_pkt(0.0, True, 1300), _pkt(0.01, True, 1500), _pkt(0.02, False, 100)])
    assert f.as_tuple() == pytest.approx((1400 / 1500, 0.0, 0.0, 100 / 1500, min(2800 / 100, 100.0)))
    # ровно 1200 байт - ещё light
    assert slot_aggregate([_pkt(0.0, True, 1200)]).mean_light_up == 1200 / 1500


def test_updown_ratio_cap_and_zero():
    f = slot_aggregate([_pkt(0.0, True, 1000), _pkt(0.0, False, 1)])
    assert f.updown_ratio == 100.0
    assert slot_aggregate([_pkt(0.0, True, 0), _pkt(0.0, False, 0)]).updown_ratio == 0.0


def test_accumulator_equals_aggregate():
    pkts = [_pkt(0.001, True, 1300), _pkt(0.002, False, 40), _pkt(0.03, True, 20)]
    acc = SlotAccumulator(0.05)
    for p in pkts:
        accumulator_add(acc, p)
    assert accumulator_finalize(acc) == slot_aggregate(pkts)
    assert SlotAccumulator(0.05).finalize() == ZERO_SLOT


def test_accumulator_rejects_packet_outside_window():
    acc = SlotAccumulator(0.05)
    with pytest.raises(RepresentationError):
        acc.add(_pkt(0.06))


def test_slot_windowing():
    flow = make_flow([(0.0, "up", 10), (0.07, "down", 20), (0.12, "up", 30)])
    assert len(build_slot_sequence(flow, 0.05, 0.12)) == 2
    early = make_flow([(0.0, "up", 10), (0.005, "down", 20), (0.009, "up", 30)])
    seq = build_slot_sequence(early, 0.05, 0.2)
    assert len(seq) == 4
    assert all(s == ZERO_SLOT for s in seq.slots[1:])
    with pytest.raises(RepresentationError):
        build_slot_sequence(flow, 0.0, 0.1)


def test_slot_index_tolerates_float_noise():
    assert slot_index(0.15, 0.05) == 3
    assert slot_index(0.1499999, 0.05) == 2


def test_full_slot_sequence_counts():
    flow = make_flow([(0.0, "up", 10), (0.01, "down", 20), (0.12, "up", 30)])
    seq = full_slot_sequence(flow, 0.05)
    assert len(seq) == 3
    assert list(seq.packet_counts()) == [2, 2, 3]
    assert list(seq.times()) == pytest.approx([0.05, 0.10, 0.15])


def _stream_slots(flow, delta):
    stream = SlotStream(delta)
    closed = []
    for p in flow.packets:
        closed.extend(stream.push(p))
    closed.append(stream.close_current())
    return closed


def test_streaming_equals_batch_for_1000_flows():
    rng = np.random.default_rng(7)
    started = time.perf_counter()
    for _ in range(1000):
        flow = random_flow(rng)
        delta = float(rng.choice([0.01, 0.05, 0.1]))
        streamed = _stream_slots(flow, delta)
        batch = full_slot_sequence(flow, delta)
        assert [c.feature for c in streamed] == list(batch.slots)
        assert [c.packets_seen for c in streamed] == list(batch.packet_counts())
        seq = build_packet_sequence(flow, len(flow.packets)).to_array()
        assert np.max(np.abs(seq - _packet_oracle(flow))) < 1e-12
    assert time.perf_counter() - started < 10.0


def test_encode_flow_shapes():
    flow = make_flow([(0.0, "up", 10), (0.01, "down", 20), (0.12, "up", 30)])
    enc = encode_flow(flow, "packet", max_steps=2)
    assert enc.features.shape == (2, 3)
    assert list(enc.packets) == [1, 2]
    enc = encode_flow(flow, "slot")
    assert enc.features.shape == (3, 5)
    with pytest.raises(RepresentationError):
        encode_flow(flow, "bytes")
