"""Reverberant training and test material.

Speech comes from a seeded speech-like synthesizer (or WAV files); each
sample is convolved with one AIR, or with two AIRs switched at a given
moment, and labelled with a per-frame RT60 timeline that is then
averaged onto the estimator's output grid. AIRs are scaled to unit
energy before convolution.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .errors import ArgumentError, DataError, SizingError
from .features import DEFAULT_STFT, model_input, write_gtsp
from .neuralnet.model import DEFAULT_ENCODER, EncoderSpec
from .signal import (
    SAMPLE_RATE,
    Air,
    AudioSignal,
    dynamic_convolve,
    fft_convolve,
    normalize_energy,
    read_wav,
    write_wav,
)

log = logging.getLogger(__name__)

SWITCH_RANGE_S = (0.8, 3.2)
SYLLABLE_RATE_HZ = 4.0
PAUSE_PROB = 0.2
F0_RANGE_HZ = (80.0, 250.0)
FORMANT_RANGES_HZ = ((300.0, 850.0), (850.0, 2300.0), (2300.0, 3300.0))
FORMANT_BANDWIDTHS_HZ = (90.0, 120.0, 180.0)
BLOCK_S = 0.01
PEAK = 0.5
FRICATION_LEVEL = 0.3
RECOMBINATION_FACTOR = 4
TRAIN_FRACTION = 0.8
MEASURED_SHARE = 0.8


class Regime(str, enum.Enum):
    static4 = "static4"
    static2 = "static2"
    dynamic_det = "dynamic_det"
    dynamic_rand = "dynamic_rand"
    test_dynamic6 = "test_dynamic6"
    test_static10 = "test_static10"

    @property
    def duration_s(self) -> float:
        return {"static2": 2.0, "test_dynamic6": 6.0, "test_static10": 10.0}.get(self.value, 4.0)

    @property
    def is_dynamic(self) -> bool:
        return self in (Regime.dynamic_det, Regime.dynamic_rand, Regime.test_dynamic6)

    @property
    def is_test(self) -> bool:
        return self.value.startswith("test_")

    @property
    def fixed_switch_s(self):
        return {"dynamic_det": 2.0, "test_dynamic6": 3.0}.get(self.value)


TRAINING_REGIMES = (Regime.static4, Regime.static2, Regime.dynamic_det, Regime.dynamic_rand)
TEST_REGIMES = (Regime.test_dynamic6, Regime.test_static10)


@dataclass(frozen=True)
class LabeledSample:
    audio: AudioSignal
    gt_input_frames: np.ndarray
    gt_output_frames: np.ndarray
    regime: Regime
    air_ids: tuple
    switch_time_s: float | None = None
    id: str = ""

    @property
    def rt60_last(self) -> float:
        """True RT60 in force at the end of the sample."""
        return float(self.gt_input_frames[-1])


# speech-like excitation ------------------------------------------------


def _resonator(freq, bandwidth):
    r = math.exp(-math.pi * bandwidth / SAMPLE_RATE)
    a = np.array([1.0, -2.0 * r * math.cos(2.0 * math.pi * freq / SAMPLE_RATE), r * r])
    return np.array([a.sum()]), a  # unit gain at DC


def _syllables(rng, n):
    """``(start, length, kind)`` segments with kind in {voiced, pause}."""
    out, pos = [], 0
    mean_len = SAMPLE_RATE / SYLLABLE_RATE_HZ
    while pos < n:
        length = max(int(rng.gamma(4.0, mean_len / 4.0)), int(0.06 * SAMPLE_RATE))
        kind = "pause" if rng.random() < PAUSE_PROB else "voiced"
        out.append((pos, min(length, n - pos), kind))
        pos += length
    return out


def synth_speech_like(rng: np.random.Generator, duration: float) -> AudioSignal:
    """Seeded speech-like signal of ``round(duration * 16000)`` samples.

    Syllables of about 250 ms are either pauses (probability 0.2) or
    voiced nuclei, optionally led by an unvoiced noise burst. Voiced
    excitation is a glottal pulse train at 80-250 Hz with a falling
    spectrum, passed through three formant resonators whose centre
    frequencies glide between per-syllable targets, updated every 10 ms.
    Bursts are highpassed noise added after the formant stage. The result is peak-normalized to 0.5.
    """
    if not duration > 0:
        raise ArgumentError(f"duration must be positive, got {duration}")
    n = int(round(duration * SAMPLE_RATE))
    excitation = np.zeros(n)
    frication = np.zeros(n)
    for start, length, kind in _syllables(rng, n):
        if kind == "pause":
            continue
        burst = 0
        if rng.random() < 0.4:
            burst = min(int(rng.uniform(0.02, 0.06) * SAMPLE_RATE), length // 3)
            frication[start : start + burst] = rng.standard_normal(burst)
        voiced = length - burst
        f0 = rng.uniform(*F0_RANGE_HZ) * np.exp(np.linspace(0.0, rng.uniform(-0.15, 0.15), voiced))
        phase = np.cumsum(f0 / SAMPLE_RATE)
        pulses = np.diff(np.floor(phase), prepend=0.0)
        env = np.sin(np.pi * (np.arange(voiced) + 0.5) / voiced) ** 0.5
        excitation[start + burst : start + length] += pulses * env
    # glottal lowpass gives the falling source spectrum
    excitation = lfilter([1.0], [1.0, -0.9], excitation)

    targets = [
        [rng.uniform(lo, hi) for lo, hi in FORMANT_RANGES_HZ]
        for _ in range(int(n / SAMPLE_RATE * SYLLABLE_RATE_HZ) + 2)
    ]
    block = int(BLOCK_S * SAMPLE_RATE)
    n_blocks = -(-n // block)
    knots = np.linspace(0, n_blocks, len(targets))
    tracks = np.array(targets).T
    y = np.empty(n)
    states = [np.zeros(2) for _ in FORMANT_BANDWIDTHS_HZ]
    for k in range(n_blocks):
        seg = excitation[k * block : (k + 1) * block]
        for i, bw in enumerate(FORMANT_BANDWIDTHS_HZ):
            b, a = _resonator(np.interp(k, knots, tracks[i]), bw)
            seg, states[i] = lfilter(b, a, seg, zi=states[i])
        y[k * block : (k + 1) * block] = seg
    # lip radiation
    y = lfilter([1.0, -0.95], [1.0], y)
    # unvoiced bursts bypass the formants, shaped by a first-order highpass
    frication = lfilter([1.0, -1.0], [1.0, -0.5], frication)
    y += FRICATION_LEVEL * np.std(y) * frication
    peak = np.max(np.abs(y))
    if peak == 0.0:
        y = rng.standard_normal(n)
        peak = np.max(np.abs(y))
    return AudioSignal(PEAK * y / peak)


# labelled samples -------------------------------------------------------


def n_input_frames(n_samples: int) -> int:
    return DEFAULT_STFT.n_frames(n_samples)


def _check_length(speech, n):
    x = speech.samples if isinstance(speech, AudioSignal) else np.asarray(speech, dtype=np.float64)
    if x.size < n:
        raise ArgumentError(f"speech has {x.size} samples, {n} required")
    return x[:n]


def smooth_gt_to_output(gt_input, encoder: EncoderSpec = DEFAULT_ENCODER) -> np.ndarray:
    """Mean of the input-rate ground truth over each output frame's
    receptive window ``[j S, j S + r0)``."""
    gt = np.asarray(gt_input, dtype=np.float64)
    r0, stride = encoder.r0, encoder.stride
    if gt.ndim != 1 or gt.size < r0:
        raise ArgumentError(f"need at least {r0} input frames, got {gt.size}")
    windows = sliding_window_view(gt, r0)[::stride]
    # offset by the first value so constant windows come out exact
    first = windows[:, :1]
    return first[:, 0] + (windows - first).mean(axis=1)


def _unit_energy(air: Air) -> Air:
    return replace(air, h=AudioSignal(normalize_energy(air.h)))


def make_static_sample(
    speech, air: Air, duration: float, regime: Regime = Regime.static4, sample_id: str = ""
) -> LabeledSample:
    n = int(round(duration * SAMPLE_RATE))
    dry = _check_length(speech, n)
    audio = AudioSignal(fft_convolve(dry, normalize_energy(air.h)).samples[:n])
    gt = np.full(n_input_frames(n), air.rt60_true)
    return LabeledSample(audio, gt, smooth_gt_to_output(gt), Regime(regime), (air.id,), None, sample_id)


def make_dynamic_sample(
    speech,
    air1: Air,
    air2: Air,
    switch_time: float,
    duration: float,
    regime: Regime = Regime.dynamic_rand,
    sample_id: str = "",
) -> LabeledSample:
    """Sample whose AIR changes from ``air1`` to ``air2`` at ``switch_time``.

    Input frames starting before the switch sample carry ``air1``'s RT60,
    the rest ``air2``'s.
    """
    if not 0.0 < switch_time < duration:
        raise ArgumentError(f"switch time {switch_time} outside (0, {duration})")
    if air1.id == air2.id:
        raise ArgumentError(f"dynamic sample needs two distinct AIRs, got {air1.id} twice")
    n = int(round(duration * SAMPLE_RATE))
    dry = _check_length(speech, n)
    switch = int(round(switch_time * SAMPLE_RATE))
    audio = dynamic_convolve(dry, _unit_energy(air1), _unit_energy(air2), switch)
    starts = np.arange(n_input_frames(n)) * DEFAULT_STFT.hop_len
    gt = np.where(starts < switch, air1.rt60_true, air2.rt60_true)
    return LabeledSample(
        audio, gt, smooth_gt_to_output(gt), Regime(regime), (air1.id, air2.id), float(switch_time), sample_id
    )


def draw_switch_time(rng: np.random.Generator) -> float:
    return float(rng.uniform(*SWITCH_RANGE_S))


def recombine(speech_ids, air_ids, factor: int = RECOMBINATION_FACTOR, rng=None):
    """Pair every speech id with ``factor`` distinct AIR ids.

    AIRs are dealt from a stream of successive random permutations, so
    usage stays balanced across the pool.
    """
    speech_ids, air_ids = list(speech_ids), list(air_ids)
    if not speech_ids or not air_ids:
        raise ArgumentError("recombine needs non-empty speech and AIR id sets")
    if len(set(air_ids)) < factor:
        raise ArgumentError(f"{len(set(air_ids))} distinct AIRs cannot give {factor} per utterance")
    if rng is None:
        rng = np.random.default_rng(0)
    pool = sorted(set(air_ids))
    stream, pos, pairs = [], 0, []
    for sid in speech_ids:
        chosen = []
        while len(chosen) < factor:
            j = pos
            while True:
                if j >= len(stream):
                    stream.extend(pool[i] for i in rng.permutation(len(pool)))
                if stream[j] not in chosen:
                    break
                j += 1
            stream[pos], stream[j] = stream[j], stream[pos]
            chosen.append(stream[pos])
            pos += 1
        pairs.extend((sid, a) for a in chosen)
    return pairs


# manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    regime: str
    speech: str
    speech_seed: int | None
    air1: str
    air2: str | None
    switch_time_s: float | None
    split: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DatasetManifest:
    entries: list
    train_fraction: float = TRAIN_FRACTION
    ratio_measured_simulated: float = 4.0

    def subset(self, regime=None, split=None):
        return [
            e for e in self.entries
            if (regime is None or e.regime == Regime(regime).value) and (split is None or e.split == split)
        ]

    def write(self, path) -> None:
        Path(path).write_text("".join(e.to_json() + "\n" for e in self.entries))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        entries = []
        for k, line in enumerate(Path(path).read_text().splitlines()):
            if not line.strip():
                continue
            try:
                entries.append(ManifestEntry(**json.loads(line)))
            except (TypeError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{k + 1}: bad manifest line ({exc})") from exc
        return cls(entries)


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    n_samples: int = 800
    regimes: tuple = TRAINING_REGIMES
    n_test: int = 200
    test_regimes: tuple = TEST_REGIMES
    factor: int = RECOMBINATION_FACTOR
    train_fraction: float = TRAIN_FRACTION
    speech_files: tuple = ()

    def __post_init__(self):
        if self.n_samples < 1 and self.regimes:
            raise ArgumentError("n_samples must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ArgumentError("train_fraction must lie in (0, 1)")
        object.__setattr__(self, "regimes", tuple(Regime(r) for r in self.regimes))
        object.__setattr__(self, "test_regimes", tuple(Regime(r) for r in self.test_regimes))


def _speech_ids(cfg: DatasetConfig, n: int, namespace: int):
    if cfg.speech_files:
        names = [Path(p).stem for p in cfg.speech_files]
        return [(names[i % len(names)], None) for i in range(n)]
    seeds = np.random.SeedSequence([cfg.seed, namespace]).generate_state(n)
    return [(f"synth-{namespace}-{i:05d}", int(s)) for i, s in enumerate(seeds)]


def _source_groups(airs):
    groups = {"measured": [], "simulated": []}
    for air in airs:
        groups[air.source].append(air.id)
    return {k: v for k, v in groups.items() if v}


def _pairings(cfg, airs, n, namespace, rng):
    """``n`` (speech, seed, air, source) tuples honouring the 4:1 source mix."""
    groups = _source_groups(airs)
    if len(groups) == 2:
        n_meas = int(round(MEASURED_SHARE * n))
        quota = {"measured": n_meas, "simulated": n - n_meas}
    else:
        quota = {next(iter(groups)): n}
    speech = _speech_ids(cfg, -(-n // cfg.factor) + len(groups), namespace)
    out, offset = [], 0
    for source in sorted(quota):
        need = quota[source]
        n_speech = -(-need // cfg.factor)
        chunk = speech[offset : offset + n_speech]
        offset += n_speech
        seeds = dict(chunk)
        pairs = recombine([s for s, _ in chunk], groups[source], cfg.factor, rng)[:need]
        out.extend((s, seeds[s], a, source) for s, a in pairs)
    return out


def _stratified_split(sources, fraction, rng):
    tags = [""] * len(sources)
    for source in sorted(set(sources)):
        idx = [i for i, s in enumerate(sources) if s == source]
        idx = [idx[i] for i in rng.permutation(len(idx))]
        n_train = int(round(fraction * len(idx)))
        for k, i in enumerate(idx):
            tags[i] = "train" if k < n_train else "val"
    return tags


def _second_air(rng, airs_by_id, air1, pool):
    rt1 = airs_by_id[air1].rt60_true
    candidates = [a for a in pool if a != air1 and airs_by_id[a].rt60_true != rt1]
    if not candidates:
        raise SizingError("dynamic samples need at least 2 AIRs with different RT60")
    return candidates[int(rng.integers(len(candidates)))]


def build_manifest(cfg: DatasetConfig, airs) -> DatasetManifest:
    """Entries for the configured training regimes and test sets.

    Training regimes share one set of (speech, AIR) pairings and one
    split; test sets use fresh speech and are checked against the
    training pairs.
    """
    airs = list(airs)
    airs_by_id = {a.id: a for a in airs}
    if len(airs_by_id) != len(airs):
        raise DataError("duplicate AIR ids in pool")
    needed = max(cfg.factor, 2)
    if len(airs_by_id) < needed:
        raise SizingError(f"AIR pool has {len(airs_by_id)} entries, at least {needed} required")
    for source, ids in _source_groups(airs).items():
        if len(ids) < cfg.factor:
            raise SizingError(f"{len(ids)} {source} AIRs, at least {cfg.factor} required")
    pool = sorted(airs_by_id)
    entries = []
    registry = set()
    if cfg.regimes:
        rng = np.random.default_rng([cfg.seed, 1])
        pairs = _pairings(cfg, airs, cfg.n_samples, 0, rng)
        splits = _stratified_split([p[3] for p in pairs], cfg.train_fraction, rng)
        registry = {(s, a) for s, _, a, _ in pairs}
        for regime in cfg.regimes:
            for k, ((speech, seed, air1, _), split) in enumerate(zip(pairs, splits)):
                entries.append(_entry(cfg, regime, k, speech, seed, air1, split, airs_by_id, pool))
    for t, regime in enumerate(cfg.test_regimes):
        rng = np.random.default_rng([cfg.seed, 2, t])
        test_cfg = DatasetConfig(**{**asdict(cfg), "factor": 1})
        pairs = _pairings(test_cfg, airs, cfg.n_test, 1 + t, rng)
        for k, (speech, seed, air1, _) in enumerate(pairs):
            if (speech, air1) in registry:
                raise DataError(f"test pairing ({speech}, {air1}) also used for training")
            entries.append(_entry(cfg, regime, k, speech, seed, air1, "test", airs_by_id, pool))
    return DatasetManifest(entries, cfg.train_fraction)


def _entry(cfg, regime, k, speech, seed, air1, split, airs_by_id, pool):
    rng = np.random.default_rng([cfg.seed, 3, list(Regime).index(regime), k])
    air2 = switch = None
    if regime.is_dynamic:
        air2 = _second_air(rng, airs_by_id, air1, pool)
        switch = regime.fixed_switch_s
        if switch is None:
            switch = draw_switch_time(rng)
    return ManifestEntry(f"{regime.value}-{k:05d}", regime.value, speech, seed, air1, air2, switch, split)


def _load_speech(entry: ManifestEntry, duration, speech_files):
    if entry.speech_seed is not None:
        return synth_speech_like(np.random.default_rng(entry.speech_seed), duration)
    by_stem = {Path(p).stem: p for p in speech_files}
    if entry.speech not in by_stem:
        raise DataError(f"speech file for '{entry.speech}' not found")
    return read_wav(by_stem[entry.speech])


def materialize(entry: ManifestEntry, airs_by_id, speech_files=()) -> LabeledSample:
    regime = Regime(entry.regime)
    duration = regime.duration_s
    try:
        air1 = airs_by_id[entry.air1]
        air2 = airs_by_id[entry.air2] if entry.air2 is not None else None
    except KeyError as exc:
        raise DataError(f"{entry.id}: unknown AIR id {exc}") from exc
    speech = _load_speech(entry, duration, speech_files)
    if air2 is None:
        return make_static_sample(speech, air1, duration, regime, entry.id)
    return make_dynamic_sample(speech, air1, air2, entry.switch_time_s, duration, regime, entry.id)


def _features_job(args):
    entry, airs_by_id, speech_files = args
    sample = materialize(entry, airs_by_id, speech_files)
    return model_input(sample.audio), sample.gt_output_frames, sample.gt_input_frames


@dataclass
class FeatureSet:
    """Model inputs and targets for a list of manifest entries."""

    entries: list
    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    gt_inputs: list = field(default_factory=list)

    def pairs(self):
        return list(zip(self.inputs, self.targets))


def compute_features(entries, airs_by_id, speech_files=(), jobs: int = 1) -> FeatureSet:
    """Spectrograms and smoothed targets, in entry order whatever ``jobs``."""
    jobs_args = [(e, airs_by_id, tuple(speech_files)) for e in entries]
    if jobs > 1 and len(entries) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_features_job, jobs_args, chunksize=8))
    else:
        results = [_features_job(a) for a in jobs_args]
    fs = FeatureSet(list(entries))
    for x, y, gt in results:
        fs.inputs.append(x)
        fs.targets.append(y)
        fs.gt_inputs.append(gt)
    return fs


def write_sample(directory, sample: LabeledSample, spectrogram=None) -> None:
    """WAV, input-rate ground truth CSV and optional GTSP spectrogram."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_wav(directory / f"{sample.id}.wav", sample.audio)
    with open(directory / f"{sample.id}_gt.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "rt60_s"])
        w.writerows((i, repr(float(v))) for i, v in enumerate(sample.gt_input_frames))
    if spectrogram is not None:
        write_gtsp(directory / f"{sample.id}.gtsp", spectrogram)
