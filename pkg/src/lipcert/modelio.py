"""Binary model files.

Layout (all little-endian)::

    b"LIPN" | u32 version | u32 input_dim | u32 n_layers | i32 head_split
    | u32 flags | f64 domain_lo | f64 domain_hi
    layer table, per layer: u32 kind | u32 n_scalars | u32 n_blobs
                            | f64 scalars[n_scalars] | per blob: u32 ndim, u32 dims[ndim]
    blobs: row-major f64 data, in table order

A plain-text ``<path>.manifest`` sidecar lists the architecture.
"""
from __future__ import annotations

import struct

import numpy as np

from .layers import Activation, Affine, LinfDist, MaxMin, MeanShiftBN, PiecewiseLinear, SortNet, Standardize
from .network import Network

MAGIC = b"LIPN"
VERSION = 1

_ACT_CODES = {"identity": 0, "relu": 1, "abs": 2, "tanh": 3}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_KIND = {Affine: 1, Activation: 2, PiecewiseLinear: 3, MaxMin: 4, LinfDist: 5, SortNet: 6, MeanShiftBN: 7, Standardize: 8}

FLAG_DOMAIN = 1
FLAG_TRAINED = 2


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


def _encode_layer(layer):
    if isinstance(layer, Affine):
        return [float(layer.constrained), layer.scale], [layer.W, layer.b]
    if isinstance(layer, Activation):
        return [float(_ACT_CODES[layer.act])], []
    if isinstance(layer, PiecewiseLinear):
        return [], [layer.knots, layer.values]
    if isinstance(layer, MaxMin):
        return [float(layer.group_size)], []
    if isinstance(layer, LinfDist):
        return [], [layer.W, layer.b]
    if isinstance(layer, SortNet):
        blobs = [layer.B, layer.bias_out] + ([] if layer.weights is None else [layer.weights])
        return [layer.rho, float(_ACT_CODES[layer.act]), float(layer.weights is not None)], blobs
    if isinstance(layer, MeanShiftBN):
        has = layer.running_mean is not None
        return [float(layer.dim), float(has)], [layer.running_mean] if has else []
    if isinstance(layer, Standardize):
        return [], [layer.mean, layer.std]
    raise TypeError(f"cannot serialize layer {layer!r}")


def _decode_layer(kind, s, blobs):
    if kind == 1:
        return Affine(blobs[0], blobs[1], constrained=bool(s[0]), scale=s[1])
    if kind == 2:
        return Activation(_ACT_NAMES[int(s[0])])
    if kind == 3:
        return PiecewiseLinear(blobs[0], blobs[1])
    if kind == 4:
        return MaxMin(int(s[0]))
    if kind == 5:
        return LinfDist(blobs[0], blobs[1])
    if kind == 6:
        return SortNet(blobs[0], rho=s[0], activation=_ACT_NAMES[int(s[1])], bias_out=blobs[1],
                       weights=blobs[2] if s[2] else None)
    if kind == 7:
        return MeanShiftBN(int(s[0]), blobs[0] if s[1] else None)
    if kind == 8:
        return Standardize(blobs[0], blobs[1])
    raise ModelFormatError(f"unknown layer kind code {kind}")


def dumps(net: Network) -> bytes:
    flags = (FLAG_DOMAIN if net.domain is not None else 0) | (FLAG_TRAINED if net.training_complete else 0)
    lo, hi = net.domain if net.domain is not None else (0.0, 0.0)
    head = -1 if net.head_split is None else net.head_split
    parts = [MAGIC, struct.pack("<IIIiIdd", VERSION, net.input_dim, len(net.layers), head, flags, lo, hi)]
    data = []
    for layer in net.layers:
        scalars, blobs = _encode_layer(layer)
        parts.append(struct.pack("<III", _KIND[type(layer)], len(scalars), len(blobs)))
        parts.append(struct.pack(f"<{len(scalars)}d", *scalars))
        for b in blobs:
            b = np.ascontiguousarray(b, dtype="<f8")
            parts.append(struct.pack(f"<I{b.ndim}I", b.ndim, *b.shape))
            data.append(b.tobytes())
    return b"".join(parts + data)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"truncated model file: need {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> Network:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        if len(buf) < 4 and MAGIC.startswith(bytes(buf)):
            raise TruncatedFileError("truncated model file")
        raise BadMagicError("bad magic: not a LIPN model file")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"model format version {version}, expected {VERSION}")
    input_dim, n_layers, head, flags, lo, hi = r.unpack("<IIiIdd")
    table = []
    for _ in range(n_layers):
        kind, ns, nb = r.unpack("<III")
        scalars = list(r.unpack(f"<{ns}d"))
        shapes = []
        for _ in range(nb):
            (ndim,) = r.unpack("<I")
            shapes.append(r.unpack(f"<{ndim}I"))
        table.append((kind, scalars, shapes))
    layers = []
    for kind, scalars, shapes in table:
        blobs = []
        for shape in shapes:
            count = int(np.prod(shape)) if shape else 1
            blobs.append(np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape))
        layers.append(_decode_layer(kind, scalars, blobs))
    if r.pos != len(buf):
        raise ModelFormatError(f"{len(buf) - r.pos} trailing bytes after model data")
    return Network(
        input_dim,
        layers,
        head_split=None if head < 0 else head,
        domain=(lo, hi) if flags & FLAG_DOMAIN else None,
        meta={"training_complete": bool(flags & FLAG_TRAINED)},
    )


def save(net: Network, path, manifest=True):
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(dumps(net))
    if manifest:
        with open(path + ".manifest", "w") as fh:
            fh.write(f"LIPN model, format version {VERSION}\n")
            fh.write(net.describe() + "\n")
            if net.head_split is not None:
                fh.write(f"head_split {net.head_split}\n")
            if net.domain is not None:
                fh.write(f"domain [{net.domain[0]}, {net.domain[1]}]\n")


def load(path) -> Network:
    with open(path, "rb") as fh:
        return loads(fh.read())
