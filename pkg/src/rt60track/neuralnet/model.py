"""Convolutional-recurrent RT60 estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, StateError
from ..features import DEFAULT_STFT, N_BANDS
from ..signal import SAMPLE_RATE
from .layers import LSTM, BatchNorm, Conv2d, Dense, Dropout, FreqMaxPool, ReLU

LSTM_HIDDEN = 20
CHANNELS = 5
POOL_FACTOR = 2
DEFAULT_DROPOUT = 0.4
OUTPUT_BIAS_INIT = 0.5


@dataclass(frozen=True)
class ConvSpec:
    kernel_time: int
    kernel_freq: int
    stride_time: int
    stride_freq: int
    channels_in: int
    channels_out: int
    pad_freq: int = 0


def _default_layers():
    kt = (7, 5, 3, 3, 3, 2)
    st = (2, 2, 2, 2, 2, 1)
    sf = (2, 1, 2, 1, 1, 1)
    pf = (1, 0, 1, 0, 1, 1)
    return tuple(
        ConvSpec(kt[i], 3, st[i], sf[i], 1 if i == 0 else CHANNELS, CHANNELS, pf[i])
        for i in range(6)
    )


def receptive_field(layers):
    """Receptive field ``r0`` and total stride ``S`` (in input frames) of a
    stack of temporal convolutions.

    ``layers`` holds :class:`ConvSpec` objects or ``(kernel, stride)`` pairs.
    ``r0 = sum_l (k_l - 1) * prod_{i<l} s_i + 1`` and ``S = prod_l s_l``.
    """
    pairs = [
        (layer.kernel_time, layer.stride_time) if isinstance(layer, ConvSpec) else tuple(layer)
        for layer in layers
    ]
    if not pairs:
        raise ArgumentError("receptive_field needs at least one layer")
    r0, jump = 1, 1
    for k, s in pairs:
        if k < 1 or s < 1:
            raise ArgumentError(f"kernel and stride must be >= 1, got k={k}, s={s}")
        r0 += (k - 1) * jump
        jump *= s
    return r0, jump


@dataclass(frozen=True)
class EncoderSpec:
    layers: tuple = _default_layers()

    @property
    def r0(self):
        return receptive_field(self.layers)[0]

    @property
    def stride(self):
        return receptive_field(self.layers)[1]

    def n_outputs(self, n_frames):
        return (n_frames - self.r0) // self.stride + 1

    @property
    def window_s(self):
        """Signal duration seen by one estimate, ``t_h (r0 - 1) + t_w``."""
        hop = DEFAULT_STFT.hop_len / SAMPLE_RATE
        return hop * (self.r0 - 1) + DEFAULT_STFT.window_len / SAMPLE_RATE

    @property
    def cadence_s(self):
        return self.stride * DEFAULT_STFT.hop_len / SAMPLE_RATE


DEFAULT_ENCODER = EncoderSpec()


class CrnnModel:
    """Conv encoder, per-frequency-position LSTM over time, frequency
    max-pool and a ReLU regression head; one RT60 estimate per stride of
    input frames.
    """

    def __init__(
        self,
        encoder: EncoderSpec = DEFAULT_ENCODER,
        n_bands: int = N_BANDS,
        hidden: int = LSTM_HIDDEN,
        dropout: float = DEFAULT_DROPOUT,
        pool: int = POOL_FACTOR,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.encoder = encoder
        self.n_bands = n_bands
        self.hidden = hidden
        self.convs, self.relus, self.norms = [], [], []
        f = n_bands
        for spec in encoder.layers:
            conv = Conv2d(
                spec.channels_in, spec.channels_out, spec.kernel_freq, spec.kernel_time,
                spec.stride_freq, spec.stride_time, spec.pad_freq, rng,
            )
            f = (f + 2 * spec.pad_freq - spec.kernel_freq) // spec.stride_freq + 1
            if f < 1:
                raise ArgumentError("encoder collapses the frequency axis")
            self.convs.append(conv)
            self.relus.append(ReLU())
            self.norms.append(BatchNorm(spec.channels_out))
        self.n_freq_out = f
        channels = encoder.layers[-1].channels_out
        self.dropout = Dropout(dropout)
        self.lstm = LSTM(channels, hidden, rng)
        self.pool = FreqMaxPool(pool)
        n_pooled = -(-f // pool)
        self.head = Dense(n_pooled * hidden, 1, rng, bias_init=OUTPUT_BIAS_INIT)
        self.out_relu = ReLU()
        self._shapes = None

    # parameter access -------------------------------------------------

    def _named_layers(self):
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            yield f"conv{i}", conv
            yield f"bn{i}", norm
        yield "lstm", self.lstm
        yield "head", self.head

    @property
    def params(self):
        return {f"{n}.{k}": v for n, layer in self._named_layers() for k, v in layer.params.items()}

    @property
    def grads(self):
        return {f"{n}.{k}": v for n, layer in self._named_layers() for k, v in layer.grads.items()}

    @property
    def buffers(self):
        out = {}
        for i, norm in enumerate(self.norms):
            out[f"bn{i}.running_mean"] = norm.running_mean
            out[f"bn{i}.running_var"] = norm.running_var
        return out

    def set_buffers(self, buffers):
        for i, norm in enumerate(self.norms):
            norm.running_mean = np.array(buffers[f"bn{i}.running_mean"], dtype=np.float64)
            norm.running_var = np.array(buffers[f"bn{i}.running_var"], dtype=np.float64)

    def n_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    def zero_grad(self):
        for _, layer in self._named_layers():
            layer.zero_grad()

    def state_dict(self):
        state = {k: v.copy() for k, v in self.params.items()}
        state.update({k: v.copy() for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state):
        for name, value in self.params.items():
            if state[name].shape != value.shape:
                raise ArgumentError(f"shape mismatch for {name}: {state[name].shape} vs {value.shape}")
            value[...] = state[name]
        self.set_buffers(state)

    # computation ------------------------------------------------------

    def n_outputs(self, n_frames):
        return self.encoder.n_outputs(n_frames)

    def forward(self, x, train=False, rng=None):
        """Estimates of shape ``(batch, n_outputs)`` for inputs ``(batch, bands, frames)``.

        A 2-D input is treated as a batch of one.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        b, f, t = x.shape
        if f != self.n_bands:
            raise ArgumentError(f"expected {self.n_bands} bands, got {f}")
        if t < self.encoder.r0:
            raise ArgumentError(
                f"input of {t} frames is shorter than the {self.encoder.r0}-frame "
                f"({self.encoder.window_s * 1000:.0f} ms) analysis window"
            )
        h = x[:, None]
        for conv, relu, norm in zip(self.convs, self.relus, self.norms):
            h = norm.forward(relu.forward(conv.forward(h, train), train), train)
        h = self.dropout.forward(h, train, rng)
        _, c, fo, to = h.shape
        seq = h.transpose(3, 0, 2, 1).reshape(to, b * fo, c)
        out = self.lstm.forward(seq, train).reshape(to, b, fo, self.hidden)
        pooled = self.pool.forward(out, train)
        y = self.head.forward(pooled.reshape(to, b, -1), train)
        y = self.out_relu.forward(y, train)[..., 0]
        self._shapes = (b, c, fo, to, pooled.shape)
        return y.T.copy()

    def backward(self, dy, input_grad=True):
        """Accumulate parameter gradients for upstream gradient ``dy``
        (shape of the forward output) and return the input gradient
        (``None`` when ``input_grad`` is false, which skips its cost)."""
        if self._shapes is None:
            raise StateError("backward called before forward")
        b, c, fo, to, pooled_shape = self._shapes
        dy = np.asarray(dy, dtype=np.float64).reshape(b, to)
        d = self.out_relu.backward(dy.T[..., None])
        d = self.head.backward(d).reshape(pooled_shape)
        d = self.pool.backward(d).reshape(to, b * fo, self.hidden)
        d = self.lstm.backward(d).reshape(to, b, fo, c).transpose(1, 3, 2, 0)
        d = self.dropout.backward(d)
        return self.encode_backward(d, input_grad)

    def encode(self, x, train=False):
        """Encoder feature maps ``(batch, channels, freq, time)`` only."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        h = x[:, None]
        for conv, relu, norm in zip(self.convs, self.relus, self.norms):
            h = norm.forward(relu.forward(conv.forward(h, train), train), train)
        return h

    def encode_backward(self, d, input_grad=True):
        n = len(self.convs)
        for i in reversed(range(n)):
            d = relu_d = self.relus[i].backward(self.norms[i].backward(d))
            d = self.convs[i].backward(relu_d, input_grad=input_grad or i > 0)
        return None if d is None else d[:, 0]

    def predict(self, x):
        return self.forward(x, train=False)


def analysis_window_s(encoder: EncoderSpec = DEFAULT_ENCODER):
    return encoder.window_s


def output_times(n_outputs, encoder: EncoderSpec = DEFAULT_ENCODER):
    """End time (s) of the input span feeding each output frame."""
    j = np.arange(n_outputs)
    hop = DEFAULT_STFT.hop_len / SAMPLE_RATE
    return j * encoder.stride * hop + encoder.window_s
