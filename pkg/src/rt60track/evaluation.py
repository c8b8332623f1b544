"""Test-set metrics and switch-aligned error curves."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DegenerateInputError
from .neuralnet.model import DEFAULT_ENCODER, EncoderSpec

log = logging.getLogger(__name__)

DYNAMIC_COLUMNS = ("μ", "σ", "MSE", "ρ", "Bias", "MAPE")
STATIC_COLUMNS = ("MSE", "ρ", "Bias", "MAPE")
EVAL_BATCH = 25


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ArgumentError("correlation needs two equal-length vectors of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0.0:
        raise DegenerateInputError("correlation undefined for a constant vector")
    return float(np.clip(np.dot(dx, dy) / denom, -1.0, 1.0))


def mape(est, gt) -> float:
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if np.any(gt == 0):
        raise ArgumentError("MAPE undefined for a zero ground truth")
    return float(100.0 * np.mean(np.abs(est - gt) / gt))


@dataclass(frozen=True)
class LastStepMetrics:
    mse: float
    rho: float
    bias: float
    mape: float
    rho_defined: bool = True


def last_step_metrics(estimates, gt) -> LastStepMetrics:
    """MSE, Pearson correlation, bias and MAPE over per-sample values.

    A constant estimate or ground truth leaves the correlation undefined;
    it is then reported as 0 with ``rho_defined`` false.
    """
    e = np.asarray(estimates, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if e.shape != g.shape or e.ndim != 1:
        raise ArgumentError(f"estimate shape {e.shape} != ground truth shape {g.shape}")
    if e.size < 2:
        raise ArgumentError("correlation undefined for fewer than 2 samples")
    try:
        rho, defined = pearson(e, g), True
    except DegenerateInputError:
        log.warning("constant estimates or targets: correlation undefined, reported as 0")
        rho, defined = 0.0, False
    d = e - g
    return LastStepMetrics(float(np.mean(d * d)), rho, float(np.mean(d)), mape(e, g), defined)


def squared_error_stats(sq_errors) -> tuple:
    """Per-sample mean and std of squared errors over time, averaged over samples."""
    rows = [np.asarray(s, dtype=np.float64) for s in sq_errors]
    if not rows or any(r.size == 0 for r in rows):
        raise ArgumentError("squared_error_stats needs non-empty samples")
    mu = float(np.mean([r.mean() for r in rows]))
    sigma = float(np.mean([r.std() for r in rows]))
    return mu, sigma


@dataclass(frozen=True)
class SampleResult:
    id: str
    estimates: np.ndarray
    gt_output: np.ndarray
    gt_input: np.ndarray

    @property
    def rt60_first(self):
        return float(self.gt_input[0])

    @property
    def rt60_last(self):
        return float(self.gt_input[-1])

    @property
    def switch_frame(self):
        """First input frame carrying the second RT60, or None."""
        steps = np.flatnonzero(np.diff(self.gt_input))
        return int(steps[0]) + 1 if steps.size else None

    def step_reference(self, encoder: EncoderSpec = DEFAULT_ENCODER):
        """True RT60 at the last input frame of each output frame's window."""
        ends = np.arange(self.estimates.size) * encoder.stride + encoder.r0 - 1
        return self.gt_input[ends]


def aligned_origin(switch_frame: int, encoder: EncoderSpec = DEFAULT_ENCODER) -> int:
    """First output frame whose receptive window contains ``switch_frame``."""
    return max(0, -(-(switch_frame - encoder.r0 + 1) // encoder.stride))


def temporal_error_curve(samples, direction: str, encoder: EncoderSpec = DEFAULT_ENCODER):
    """Mean squared error against the step ground truth per output frame.

    Returns ``(aligned_frame, t_seconds, mse)``, with frame 0 the first
    output frame that sees the switch. ``direction`` 'up' keeps samples
    whose RT60 rises at the switch, 'down' those where it falls.
    """
    if direction not in ("up", "down"):
        raise ArgumentError(f"direction must be 'up' or 'down', got {direction!r}")
    chosen = [
        s for s in samples
        if (s.rt60_last > s.rt60_first if direction == "up" else s.rt60_last < s.rt60_first)
    ]
    if not chosen:
        raise ArgumentError(f"no samples with RT60 going {direction}")
    switches = {s.switch_frame for s in chosen}
    lengths = {s.estimates.size for s in chosen}
    if len(switches) != 1 or None in switches or len(lengths) != 1:
        raise ArgumentError("curve needs samples sharing one switch position and length")
    origin = aligned_origin(switches.pop(), encoder)
    errs = np.array([(s.estimates - s.step_reference(encoder)) ** 2 for s in chosen])
    frames = np.arange(lengths.pop()) - origin
    cadence = encoder.cadence_s
    return frames, frames * cadence, errs.mean(axis=0)


@dataclass(frozen=True)
class MetricsReport:
    label: str
    regime: str
    n_samples: int
    mse_last: float
    rho_last: float
    bias_last: float
    mape_last: float
    mu: float | None = None
    sigma: float | None = None
    rho_defined: bool = True

    @property
    def dynamic(self):
        return self.mu is not None

    def columns(self):
        return DYNAMIC_COLUMNS if self.dynamic else STATIC_COLUMNS

    def values(self):
        tail = (self.mse_last, self.rho_last, self.bias_last, self.mape_last)
        return ((self.mu, self.sigma) + tail) if self.dynamic else tail


def predict_all(model, inputs, batch: int = EVAL_BATCH):
    """Eval-mode estimates per input, batching inputs of equal length."""
    out = [None] * len(inputs)
    lengths = [x.shape[1] for x in inputs]
    for n in sorted(set(lengths)):
        idx = [i for i, m in enumerate(lengths) if m == n]
        for k in range(0, len(idx), batch):
            chunk = idx[k : k + batch]
            y = model.forward(np.stack([inputs[i] for i in chunk]), train=False)
            for i, row in zip(chunk, y):
                out[i] = row
    return out


def sample_results(model, features) -> list:
    est = predict_all(model, features.inputs)
    return [
        SampleResult(e.id, y, np.asarray(t), np.asarray(g))
        for e, y, t, g in zip(features.entries, est, features.targets, features.gt_inputs)
    ]


def evaluate_model(model, features, regime: str, label: str = "model"):
    """Metrics report for one test set, plus the up/down curves when the
    set contains switches (``None`` otherwise)."""
    results = sample_results(model, features)
    if not results:
        raise ArgumentError("empty test set")
    last = last_step_metrics([r.estimates[-1] for r in results], [r.rt60_last for r in results])
    dynamic = any(r.switch_frame is not None for r in results)
    mu = sigma = None
    curves = None
    if dynamic:
        mu, sigma = squared_error_stats([(r.estimates - r.gt_output) ** 2 for r in results])
        curves = {}
        for direction in ("up", "down"):
            try:
                curves[direction] = temporal_error_curve(results, direction)
            except ArgumentError:
                curves[direction] = None
    report = MetricsReport(
        label, str(regime), len(results), last.mse, last.rho, last.bias, last.mape, mu, sigma,
        last.rho_defined,
    )
    return report, curves


def _fmt(v):
    return repr(float(v))


def write_table(path, reports) -> None:
    """One row per model label, one column group per test set."""
    regimes, by_label = [], {}
    for r in reports:
        if r.regime not in regimes:
            regimes.append(r.regime)
        by_label.setdefault(r.label, {})[r.regime] = r
    cols = {}
    for reg in regimes:
        sample = next(r for r in reports if r.regime == reg)
        cols[reg] = sample.columns()
    header = ["model"] + [f"{reg}:{c}" for reg in regimes for c in cols[reg]]
    with open(Path(path), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for label, row in by_label.items():
            line = [label]
            for reg in regimes:
                rep = row.get(reg)
                line.extend(_fmt(v) for v in rep.values()) if rep else line.extend([""] * len(cols[reg]))
            w.writerow(line)


def read_table(path):
    with open(Path(path), newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_curves(path, curves) -> None:
    """CSV ``aligned_frame, t_seconds, mse_up, mse_down``."""
    ref = curves.get("up") or curves.get("down")
    if ref is None:
        raise ArgumentError("no curve to write")
    frames, times, _ = ref
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["aligned_frame", "t_seconds", "mse_up", "mse_down"])
        for k in range(frames.size):
            row = [int(frames[k]), _fmt(times[k])]
            for d in ("up", "down"):
                row.append(_fmt(curves[d][2][k]) if curves.get(d) is not None else "")
            w.writerow(row)
