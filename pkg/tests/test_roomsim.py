import json
import math

import numpy as np
import pytest

from rt60track.decay import ground_truth_rt60
from rt60track.errors import ArgumentError
from rt60track.roomsim import (
    WALL_CLEARANCE,
    RoomSpec,
    image_method_air,
    image_method_response,
    room_from_dict,
    room_sidecar,
    room_to_dict,
    sabine_rt60,
    sample_room,
    simulate_pool,
)


def test_sabine_hand_value():
    room = RoomSpec((5, 4, 3), 0.3, (1, 1, 1), (2, 2, 2))
    assert room.volume == 60 and room.surface == 94
    assert sabine_rt60(room) == pytest.approx(0.161 * 60 / 28.2)
    assert sabine_rt60(room) == pytest.approx(0.3426, abs=1e-4)


def test_sabine_full_absorption_and_proportionality():
    full = RoomSpec((5, 4, 3), 1.0, (1, 1, 1), (2, 2, 2))
    half = RoomSpec((5, 4, 3), 0.15, (1, 1, 1), (2, 2, 2))
    assert sabine_rt60(full) == pytest.approx(0.161 * 60 / 94)
    assert sabine_rt60(half) == pytest.approx(2 * 0.3426, abs=2e-4)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(dims=(5, 4, 0), absorption=0.3, src=(1, 1, 1), rcv=(2, 2, 2)),
        dict(dims=(5, 4, 3), absorption=0.0, src=(1, 1, 1), rcv=(2, 2, 2)),
        dict(dims=(5, 4, 3), absorption=0.3, src=(0.1, 1, 1), rcv=(2, 2, 2)),
        dict(dims=(5, 4, 3), absorption=0.3, src=(1, 1, 1), rcv=(1, 1, 1)),
    ],
)
def test_invalid_rooms(kwargs):
    with pytest.raises(ArgumentError):
        RoomSpec(**kwargs)


class TestSampleRoom:
    def test_deterministic(self):
        a = sample_room(np.random.default_rng(5), 0.4)
        b = sample_room(np.random.default_rng(5), 0.4)
        assert a == b

    def test_sabine_hits_target_and_clearance(self):
        rng = np.random.default_rng(0)
        for target in rng.uniform(0.05, 0.83, 1000):
            room = sample_room(rng, target)
            assert sabine_rt60(room) == pytest.approx(target, rel=0.01)
            for p in (room.src, room.rcv):
                assert all(WALL_CLEARANCE <= c <= d - WALL_CLEARANCE for c, d in zip(p, room.dims))

    def test_target_out_of_range(self):
        with pytest.raises(ArgumentError):
            sample_room(np.random.default_rng(0), 1.5)


class TestImageMethod:
    def test_direct_path_arrival(self):
        room = RoomSpec((6, 5, 3), 1.0, (2, 2, 1.5), (3, 2, 1.5))
        h = image_method_response(room, 400).samples
        assert int(np.argmax(np.abs(h))) == round(16000 / 343) == 47

    def test_full_absorption_is_single_pulse(self):
        room = RoomSpec((6, 5, 3), 1.0, (2, 2, 1.5), (3, 2, 1.5))
        h = image_method_response(room, 2000).samples
        peak = int(np.argmax(np.abs(h)))
        outside = np.delete(h, np.arange(peak - 9, peak + 10))
        assert np.all(outside == 0.0)
        d = math.dist(room.src, room.rcv)
        assert h.sum() == pytest.approx(1 / (4 * math.pi * d), rel=0.02)

    def test_reciprocity(self):
        room = RoomSpec((4.2, 3.7, 2.8), 0.4, (1.0, 1.2, 1.3), (3.1, 2.5, 1.9))
        a = image_method_response(room, 3000).samples
        b = image_method_response(room.swapped(), 3000).samples
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_absorption_monotonicity(self):
        rts = []
        for alpha in (0.1, 0.3, 0.5, 0.8):
            room = RoomSpec((4, 3, 2.5), alpha, (1.0, 1.1, 1.2), (2.9, 1.8, 1.4))
            rts.append(ground_truth_rt60(image_method_response(room)))
        assert all(a > b for a, b in zip(rts, rts[1:]))

    def test_default_length(self):
        room = RoomSpec((5, 4, 3), 0.5, (1, 1, 1), (2, 3, 2))
        h = image_method_response(room)
        assert len(h) == math.ceil(1.25 * sabine_rt60(room) * 16000)

    def test_cross_method_consistency(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            target = rng.uniform(0.05, 0.83)
            air = image_method_air(sample_room(rng, target))
            assert 0.01 <= air.rt60_true <= 0.9
            assert abs(air.rt60_true / target - 1) <= 0.35


def test_sidecar_roundtrip():
    room = RoomSpec((5, 4, 3), 0.5, (1, 1, 1), (2, 3, 2))
    air = image_method_air(room, air_id="r1")
    rec = json.loads(room_sidecar(air, room))
    assert rec["id"] == "r1" and rec["rt60_true"] == air.rt60_true
    assert room_from_dict(rec) == room
    assert room_from_dict(room_to_dict(room)) == room


def test_simulate_pool_deterministic_and_in_range():
    a, _ = simulate_pool(4, (0.05, 0.3), seed=3)
    b, _ = simulate_pool(4, (0.05, 0.3), seed=3)
    assert [x.id for x in a] == ["sim-0000", "sim-0001", "sim-0002", "sim-0003"]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.h.samples, y.h.samples)
        assert 0.01 <= x.rt60_true <= 0.9
    with pytest.raises(ArgumentError):
        simulate_pool(0)
