"""Audio I/O and (time-varying) convolution."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ArgumentError, FormatError, RateError

SAMPLE_RATE = 16000
MAX_AIR_RT60 = 2.0


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ArgumentError("AudioSignal expects a 1-D sample array")
        if not np.all(np.isfinite(x)):
            raise ArgumentError("AudioSignal samples must be finite")
        if self.sample_rate != SAMPLE_RATE:
            raise RateError(self.sample_rate)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class Air:
    """Acoustic impulse response with its ground-truth reverberation time."""

    h: AudioSignal
    rt60_true: float
    source: str
    id: str

    def __post_init__(self):
        if len(self.h) == 0:
            raise ArgumentError(f"AIR {self.id!r} is empty")
        if not 0.0 < self.rt60_true <= MAX_AIR_RT60:
            raise ArgumentError(
                f"AIR {self.id!r}: rt60_true={self.rt60_true:.3f} s outside (0, {MAX_AIR_RT60}]"
            )
        if self.source not in ("measured", "simulated"):
            raise ArgumentError(f"unknown AIR source {self.source!r}")


def _as_array(x):
    if isinstance(x, AudioSignal):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def read_wav(path) -> AudioSignal:
    """Read a WAV file as a mono 16 kHz signal scaled to [-1, 1].

    Multichannel files contribute their first channel. Integer PCM is
    scaled by the full-scale divisor (32768 for 16 bit), float data is
    taken as is. Files at any other rate raise :class:`RateError`.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise FormatError(f"{path}: cannot parse WAV ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise RateError(rate)
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    return AudioSignal(x)


def write_wav(path, x) -> None:
    """Write a signal as 32-bit float mono WAV at 16 kHz."""
    wavfile.write(Path(path), SAMPLE_RATE, _as_array(x).astype("<f4"))


def fft_convolve(x, h) -> AudioSignal:
    """Full linear convolution via the real FFT (length ``len(x)+len(h)-1``)."""
    a, b = _as_array(x), _as_array(h)
    if a.size == 0 or b.size == 0:
        raise ArgumentError("fft_convolve needs non-empty inputs")
    n = a.size + b.size - 1
    nfft = 1 << (n - 1).bit_length()
    y = np.fft.irfft(np.fft.rfft(a, nfft) * np.fft.rfft(b, nfft), nfft)[:n]
    return AudioSignal(y)


def dynamic_convolve(x, h1: Air, h2: Air, switch_sample: int) -> AudioSignal:
    """Reverberate ``x`` with ``h1`` up to ``switch_sample`` and ``h2`` after it.

    The dry signal is split hard at the switch; the tail excited through
    ``h1`` keeps ringing after the switch. Output is truncated to ``len(x)``.
    """
    a = _as_array(x)
    switch_sample = int(switch_sample)
    if not 0 < switch_sample < a.size:
        raise ArgumentError(
            f"switch_sample {switch_sample} outside (0, {a.size})"
        )
    first = np.zeros_like(a)
    first[:switch_sample] = a[:switch_sample]
    second = a - first
    y = (
        fft_convolve(first, h1.h).samples[: a.size]
        + fft_convolve(second, h2.h).samples[: a.size]
    )
    return AudioSignal(y)


def normalize_energy(h) -> np.ndarray:
    """Scale an impulse response to unit l2 norm."""
    h = _as_array(h)
    norm = np.sqrt(np.sum(h * h))
    if norm == 0.0:
        raise ArgumentError("cannot normalize an all-zero impulse response")
    return h / norm
