"""Gradient attributions: saliency maps and integrated gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .neuralnet.model import DEFAULT_ENCODER, EncoderSpec

ALL_FRAMES = "all"
IG_STEPS = 200
IG_CHUNK = 25


@dataclass(frozen=True)
class AttributionMap:
    values: np.ndarray
    target_frame: object = ALL_FRAMES

    def __post_init__(self):
        if self.values.ndim != 2 or not np.all(np.isfinite(self.values)):
            raise ArgumentError("attribution map must be a finite 2-D matrix")


def _as_input(spec):
    x = np.asarray(getattr(spec, "values", spec), dtype=np.float64)
    if x.ndim != 2:
        raise ArgumentError(f"expected a (bands, frames) matrix, got shape {x.shape}")
    return x


def _upstream(n_out, target_frame, batch):
    dy = np.zeros((batch, n_out))
    if target_frame == ALL_FRAMES:
        dy[:] = 1.0
        return dy
    if isinstance(target_frame, bool) or not isinstance(target_frame, (int, np.integer)):
        raise ArgumentError(f"target frame must be an index or '{ALL_FRAMES}', got {target_frame!r}")
    if not 0 <= target_frame < n_out:
        raise ArgumentError(f"target frame {target_frame} outside [0, {n_out})")
    dy[:, target_frame] = 1.0
    return dy


def _target_value(y, target_frame):
    return y.sum(axis=1) if target_frame == ALL_FRAMES else y[:, target_frame]


def input_gradient(model, xs, target_frame=ALL_FRAMES):
    """Eval-mode outputs and gradient of the target w.r.t. each input in ``xs``."""
    y = model.forward(xs, train=False)
    dx = model.backward(_upstream(y.shape[1], target_frame, y.shape[0]), input_grad=True)
    return _target_value(y, target_frame), dx


def saliency(model, spec, target_frame=ALL_FRAMES) -> AttributionMap:
    """``|d estimate[target_frame] / d spec|``; ``'all'`` targets the sum of outputs."""
    x = _as_input(spec)
    _, dx = input_gradient(model, x[None], target_frame)
    return AttributionMap(np.abs(dx[0]), target_frame)


def integrated_gradients(
    model, spec, baseline=None, steps: int = IG_STEPS, target_frame=ALL_FRAMES
) -> AttributionMap:
    """Midpoint-rule integrated gradients along the straight path from
    ``baseline`` (default all zeros) to ``spec``."""
    x = _as_input(spec)
    base = np.zeros_like(x) if baseline is None else _as_input(baseline)
    if base.shape != x.shape:
        raise ArgumentError(f"baseline shape {base.shape} != input shape {x.shape}")
    if steps < 1:
        raise ArgumentError(f"steps must be >= 1, got {steps}")
    delta = x - base
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(x)
    for k in range(0, steps, IG_CHUNK):
        a = alphas[k : k + IG_CHUNK]
        _, dx = input_gradient(model, base[None] + a[:, None, None] * delta[None], target_frame)
        total += dx.sum(axis=0)
    return AttributionMap(delta * total / steps, target_frame)


def model_output(model, spec, target_frame=ALL_FRAMES) -> float:
    y = model.forward(_as_input(spec)[None], train=False)
    _upstream(y.shape[1], target_frame, 1)
    return float(_target_value(y, target_frame)[0])


def completeness_error(model, spec, ig: AttributionMap, baseline=None) -> float:
    """``|sum(IG) - (F(spec) - F(baseline))| / |F(spec) - F(baseline)|``."""
    x = _as_input(spec)
    base = np.zeros_like(x) if baseline is None else _as_input(baseline)
    gap = model_output(model, x, ig.target_frame) - model_output(model, base, ig.target_frame)
    diff = abs(float(ig.values.sum()) - gap)
    return diff / abs(gap) if gap != 0 else diff


def frequency_average(amap, normalize: bool = False) -> np.ndarray:
    """Mean over bands per input frame, optionally divided by its maximum magnitude."""
    values = amap.values if isinstance(amap, AttributionMap) else np.asarray(amap, dtype=np.float64)
    curve = values.mean(axis=0)
    if normalize:
        peak = np.max(np.abs(curve))
        if peak > 0:
            curve = curve / peak
    return curve


def receptive_window(target_frame: int, encoder: EncoderSpec = DEFAULT_ENCODER):
    """Input frame range ``[j S, j S + r0)`` of output frame ``j``."""
    start = int(target_frame) * encoder.stride
    return start, start + encoder.r0
