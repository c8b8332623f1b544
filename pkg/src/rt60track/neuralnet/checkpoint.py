"""Binary checkpoint format.

Layout (little-endian): magic ``CRNN``, u32 version, then records until
end of file, each ``u32 name_len, name bytes (utf-8), u32 rank,
u32 dims[rank], float32 data[prod(dims)]``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import ConvSpec, CrnnModel, EncoderSpec

MAGIC = b"CRNN"
VERSION = 1


def write_tensors(path, tensors: dict) -> None:
    with open(Path(path), "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_tensors(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a CRNN checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 8, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            out[name] = arr.reshape(dims).astype(np.float64)
            pos += 4 * count
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return out


def _layer_rows(encoder: EncoderSpec):
    return np.array(
        [
            [l.kernel_time, l.kernel_freq, l.stride_time, l.stride_freq,
             l.channels_in, l.channels_out, l.pad_freq]
            for l in encoder.layers
        ],
        dtype=np.float64,
    )


def save_model(path, model: CrnnModel) -> None:
    tensors = {
        "config.encoder": _layer_rows(model.encoder),
        "config.model": np.array(
            [model.n_bands, model.hidden, model.pool.factor, model.dropout.p]
        ),
    }
    tensors.update(model.state_dict())
    write_tensors(path, tensors)


def load_model(path) -> CrnnModel:
    t = read_tensors(path)
    try:
        rows = t.pop("config.encoder")
        n_bands, hidden, pool, dropout = t.pop("config.model")
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint lacks {exc}") from exc
    encoder = EncoderSpec(tuple(ConvSpec(*(int(v) for v in row)) for row in rows))
    model = CrnnModel(encoder, int(n_bands), int(hidden), float(np.float32(dropout)), int(pool))
    model.load_state_dict(t)
    return model
