"""Shoebox room simulation with the image-source method."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .decay import ground_truth_rt60
from .errors import ArgumentError, NumericError
from .signal import SAMPLE_RATE, Air, AudioSignal

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 0.161
WALL_CLEARANCE = 0.3
SINC_RADIUS = 8
LENGTH_FACTOR = 1.25

DIM_RANGES = ((3.0, 10.0), (3.0, 10.0), (2.5, 4.5))
ALPHA_BAND = (0.57, 0.67)
# elongated rooms keep slow-decaying axial paths alive
MIN_ASPECT = 1.0 / 3.0
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple
    absorption: float
    src: tuple
    rcv: tuple
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dims)
        src = tuple(float(v) for v in self.src)
        rcv = tuple(float(v) for v in self.rcv)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "rcv", rcv)
        if len(dims) != 3 or min(dims) <= 0:
            raise ArgumentError(f"invalid room dimensions {dims}")
        if not 0.0 < self.absorption <= 1.0:
            raise ArgumentError(f"absorption {self.absorption} outside (0, 1]")
        for name, p in (("source", src), ("receiver", rcv)):
            if len(p) != 3 or any(
                not (WALL_CLEARANCE <= c <= d - WALL_CLEARANCE) for c, d in zip(p, dims)
            ):
                raise ArgumentError(
                    f"{name} {p} violates {WALL_CLEARANCE} m wall clearance in room {dims}"
                )
        if src == rcv:
            raise ArgumentError("source and receiver coincide")

    @property
    def volume(self):
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface(self):
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    @property
    def distance(self):
        return math.dist(self.src, self.rcv)

    def swapped(self):
        return RoomSpec(self.dims, self.absorption, self.rcv, self.src, self.speed_of_sound)


def sabine_rt60(room: RoomSpec) -> float:
    """Sabine reverberation time ``0.161 V / sum(alpha_i S_i)`` in seconds."""
    return SABINE_CONSTANT * room.volume / (room.absorption * room.surface)


def _volume_to_surface(dims):
    lx, ly, lz = dims
    return lx * ly * lz / (2.0 * (lx * ly + lx * lz + ly * lz))


def sample_room(rng: np.random.Generator, rt60_target: float) -> RoomSpec:
    """Draw a random shoebox whose Sabine RT60 equals ``rt60_target``.

    The room shape comes from uniform draws over ``DIM_RANGES`` and a
    uniform absorption coefficient from ``ALPHA_BAND``; the shape is then
    scaled isotropically so the Sabine formula hits the target exactly
    (``V/S`` grows linearly with the scale). Specular shoebox responses
    with weak absorption decay much slower than Sabine predicts, so the
    band is kept high and shapes flatter than 1:3 are redrawn, as are
    draws violating the wall clearance.
    """
    if not 0.01 <= rt60_target <= 0.9:
        raise ArgumentError(f"rt60_target {rt60_target} outside [0.01, 0.9] s")
    for _ in range(MAX_ATTEMPTS):
        shape = np.array([rng.uniform(lo, hi) for lo, hi in DIM_RANGES])
        if shape.min() < MIN_ASPECT * shape.max():
            continue
        alpha = rng.uniform(*ALPHA_BAND)
        dims = shape * (rt60_target * alpha / (SABINE_CONSTANT * _volume_to_surface(shape)))
        if dims.min() <= 2 * WALL_CLEARANCE + 0.05:
            continue
        src = [rng.uniform(WALL_CLEARANCE, d - WALL_CLEARANCE) for d in dims]
        rcv = [rng.uniform(WALL_CLEARANCE, d - WALL_CLEARANCE) for d in dims]
        if math.dist(src, rcv) < 0.1:
            continue
        alpha = SABINE_CONSTANT * _volume_to_surface(dims) / rt60_target
        return RoomSpec(tuple(dims), float(alpha), tuple(src), tuple(rcv))
    raise ArgumentError(
        f"no admissible room for rt60_target {rt60_target} s after {MAX_ATTEMPTS} draws"
    )


def _axis_images(src, rcv, length, max_dist):
    """Per-axis image offsets (signed distance component) and reflection counts."""
    n_max = int(math.ceil(max_dist / (2.0 * length))) + 1
    n = np.arange(-n_max, n_max + 1)
    offsets, orders = [], []
    for q in (0, 1):
        offsets.append((1 - 2 * q) * src + 2.0 * n * length - rcv)
        orders.append(np.abs(n - q) + np.abs(n))
    return np.concatenate(offsets), np.concatenate(orders)


def image_method_response(room: RoomSpec, n_samples: int | None = None) -> AudioSignal:
    """Impulse response of a shoebox room by mirror-image enumeration.

    Every image source within travel distance of the response length
    contributes ``beta**order / (4 pi d)`` with ``beta = sqrt(1 - alpha)``,
    placed at its fractional delay by a Hann-windowed sinc of radius
    ``SINC_RADIUS`` samples. The default length is 1.25 times the Sabine
    RT60.
    """
    fs = SAMPLE_RATE
    c = room.speed_of_sound
    if n_samples is None:
        n_samples = int(math.ceil(LENGTH_FACTOR * sabine_rt60(room) * fs))
    n_samples = max(int(n_samples), int(math.ceil(room.distance / c * fs)) + 2 * SINC_RADIUS + 1)
    beta = math.sqrt(1.0 - room.absorption)
    max_dist = c * (n_samples + SINC_RADIUS) / fs

    ox, rx = _axis_images(room.src[0], room.rcv[0], room.dims[0], max_dist)
    oy, ry = _axis_images(room.src[1], room.rcv[1], room.dims[1], max_dist)
    oz, rz = _axis_images(room.src[2], room.rcv[2], room.dims[2], max_dist)
    yz_sq = (oy[:, None] ** 2 + oz[None, :] ** 2).ravel()
    yz_ord = (ry[:, None] + rz[None, :]).ravel()

    pad = SINC_RADIUS + 1
    h = np.zeros(n_samples + 2 * pad)
    taps = np.arange(-SINC_RADIUS, SINC_RADIUS + 1)
    for x_off, x_ord in zip(ox, rx):
        d_sq = x_off * x_off + yz_sq
        keep = d_sq <= max_dist * max_dist
        if beta == 0.0:
            keep &= (x_ord + yz_ord) == 0
        if not np.any(keep):
            continue
        d = np.sqrt(d_sq[keep])
        order = x_ord + yz_ord[keep]
        amp = beta ** order / (4.0 * math.pi * d)
        tau = d / c * fs
        base = np.rint(tau).astype(np.int64)
        frac = base - tau
        for k in taps:
            x = frac + k
            w = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * np.clip(x / (SINC_RADIUS + 1), -1, 1)))
            h += np.bincount(base + k + pad, weights=amp * w, minlength=h.size)[: h.size]
    return AudioSignal(h[pad : pad + n_samples])


def image_method_air(room: RoomSpec, n_samples: int | None = None, air_id: str = "sim") -> Air:
    """Simulated AIR with ``rt60_true`` measured by decay fitting (not Sabine)."""
    signal = image_method_response(room, n_samples)
    return Air(signal, ground_truth_rt60(signal), "simulated", air_id)


def room_sidecar(air: Air, room: RoomSpec) -> str:
    """One JSON line describing a simulated AIR."""
    record = {
        "id": air.id,
        "dims": list(room.dims),
        "alpha": room.absorption,
        "src": list(room.src),
        "rcv": list(room.rcv),
        "sabine_rt60": sabine_rt60(room),
        "rt60_true": air.rt60_true,
    }
    return json.dumps(record, sort_keys=True)


def room_from_dict(record) -> RoomSpec:
    return RoomSpec(tuple(record["dims"]), record["alpha"], tuple(record["src"]), tuple(record["rcv"]))


def room_to_dict(room: RoomSpec):
    return {"dims": list(room.dims), "alpha": room.absorption, "src": list(room.src), "rcv": list(room.rcv)}


def simulate_pool(n_airs: int, rt60_range=(0.05, 0.83), seed: int = 0, prefix: str = "sim"):
    """``n_airs`` simulated AIRs with Sabine targets uniform over ``rt60_range``.

    AIR ``i`` draws from its own stream ``(seed, i, attempt)``; a room
    whose response yields no usable decay is redrawn.
    """
    if n_airs < 1:
        raise ArgumentError(f"n_airs must be positive, got {n_airs}")
    lo, hi = rt60_range
    if not 0.01 <= lo <= hi <= 0.9:
        raise ArgumentError(f"rt60 range {rt60_range} must lie within [0.01, 0.9] s")
    airs, rooms = [], []
    for i in range(n_airs):
        for attempt in range(MAX_ATTEMPTS):
            rng = np.random.default_rng([seed, i, attempt])
            room = sample_room(rng, rng.uniform(lo, hi))
            try:
                air = image_method_air(room, air_id=f"{prefix}-{i:04d}")
            except NumericError:
                continue
            if 0.01 <= air.rt60_true <= 0.9:
                break
        else:
            raise NumericError(f"could not simulate a valid AIR for index {i}")
        airs.append(air)
        rooms.append(room)
    return airs, rooms
