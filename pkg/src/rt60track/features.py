"""Gammatone spectrogram front end.

A 21-band gammatone spectrum is approximated by a fixed non-negative
weighting of STFT magnitudes (4 ms Hann window, 2 ms hop at 16 kHz),
log-compressed, then whitened per band and standardized.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DegenerateInputError, FormatError
from .signal import SAMPLE_RATE, AudioSignal

N_BANDS = 21
CF_LOW = 100.0
TOP_FRACTION = 0.9
GAMMATONE_ORDER = 4
LOG_EPS = 1e-10
GTSP_MAGIC = b"GTSP"


@dataclass(frozen=True)
class StftSpec:
    window_len: int = 64
    hop_len: int = 32
    window: str = "hann"

    def __post_init__(self):
        if self.hop_len * 2 != self.window_len:
            raise ArgumentError("hop length must be half the window length")

    @property
    def n_bins(self):
        return self.window_len // 2 + 1

    def n_frames(self, n_samples):
        return (n_samples - self.window_len) // self.hop_len + 1


DEFAULT_STFT = StftSpec()
FRAME_HOP_S = DEFAULT_STFT.hop_len / SAMPLE_RATE


@dataclass(frozen=True)
class GammatoneSpectrogram:
    values: np.ndarray
    band_center_freqs: np.ndarray
    frame_hop_s: float = FRAME_HOP_S

    @property
    def n_bands(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]


def _samples(x):
    return x.samples if isinstance(x, AudioSignal) else np.asarray(x, dtype=np.float64)


def stft_magnitude(x, spec: StftSpec = DEFAULT_STFT) -> np.ndarray:
    """Magnitude STFT without padding, shape ``(n_bins, n_frames)``.

    Frame ``t`` covers samples ``[t*hop, t*hop + window_len)``.
    """
    x = _samples(x)
    if x.size < spec.window_len:
        raise ArgumentError(
            f"signal of {x.size} samples is shorter than one {spec.window_len}-sample window"
        )
    # periodic Hann: a bin-centred tone leaks only into the two neighbouring bins
    n = np.arange(spec.window_len)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / spec.window_len)
    frames = sliding_window_view(x, spec.window_len)[:: spec.hop_len]
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def erb_rate(f_hz):
    """ERB-rate (Cams) of a frequency in Hz."""
    return 21.4 * np.log10(4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def inverse_erb_rate(e):
    return (10.0 ** (np.asarray(e) / 21.4) - 1.0) * 1000.0 / 4.37


def erb_bandwidth(f_hz):
    return 24.7 * (4.37 * np.asarray(f_hz) / 1000.0 + 1.0)


def center_frequencies(n_bands=N_BANDS, cf_low=CF_LOW, cf_high=TOP_FRACTION * SAMPLE_RATE / 2):
    """Centre frequencies equally spaced on the ERB-rate scale, ascending."""
    return inverse_erb_rate(np.linspace(erb_rate(cf_low), erb_rate(cf_high), n_bands))


@functools.lru_cache(maxsize=8)
def _weights_cached(f_bins, n_bands, cf_low):
    if f_bins < n_bands:
        raise ArgumentError(f"need at least {n_bands} frequency bins, got {f_bins}")
    cfs = center_frequencies(n_bands, cf_low)
    freqs = np.linspace(0.0, SAMPLE_RATE / 2, f_bins)
    # magnitude response of an order-n gammatone filter near its centre frequency
    bw = 1.019 * erb_bandwidth(cfs)
    w = (1.0 + ((freqs[None, :] - cfs[:, None]) / bw[:, None]) ** 2) ** (-GAMMATONE_ORDER / 2)
    w /= w.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    cfs.setflags(write=False)
    return w, cfs


def gammatone_weights(f_bins=DEFAULT_STFT.n_bins, n_bands=N_BANDS, cf_low=CF_LOW):
    """Band-by-bin weights, each row summing to one."""
    return _weights_cached(int(f_bins), int(n_bands), float(cf_low))[0]


def gammatone_spectrogram(x, spec: StftSpec = DEFAULT_STFT) -> GammatoneSpectrogram:
    mag = stft_magnitude(x, spec)
    weights, cfs = _weights_cached(spec.n_bins, N_BANDS, CF_LOW)
    return GammatoneSpectrogram(np.log(weights @ mag + LOG_EPS), cfs, spec.hop_len / SAMPLE_RATE)


def whiten_and_standardize(g: GammatoneSpectrogram) -> GammatoneSpectrogram:
    """Per-band temporal z-scoring followed by global z-scoring."""
    v = np.asarray(g.values, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] < 2:
        raise ArgumentError("whitening needs at least two frames")
    mean = v.mean(axis=1, keepdims=True)
    std = v.std(axis=1, keepdims=True)
    if np.any(std <= 1e-12 * (1.0 + np.abs(mean))):
        raise DegenerateInputError("spectrogram has a constant band")
    v = (v - mean) / std
    v = (v - v.mean()) / v.std()
    return GammatoneSpectrogram(v, g.band_center_freqs, g.frame_hop_s)


def model_input(x) -> np.ndarray:
    """Normalized spectrogram matrix as fed to the estimator."""
    return whiten_and_standardize(gammatone_spectrogram(x)).values


def write_gtsp(path, values) -> None:
    """Write a 2-D matrix in the GTSP dump format (float32, row-major)."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ArgumentError("GTSP dumps hold 2-D matrices")
    bands, frames = values.shape
    with open(Path(path), "wb") as f:
        f.write(GTSP_MAGIC)
        f.write(struct.pack("<III", bands, frames, 0))
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_gtsp(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != GTSP_MAGIC:
        raise FormatError(f"{path}: not a GTSP file")
    bands, frames, _ = struct.unpack_from("<III", data, 4)
    expected = 16 + 4 * bands * frames
    if len(data) != expected:
        raise FormatError(f"{path}: size {len(data)} does not match header ({expected})")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(bands, frames).astype(np.float64)
