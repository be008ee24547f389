"""Single-file binary containers for networks and named-matrix bundles.

Layout (all integers little-endian): an 8-byte magic, a u16 format
version, and a u8 payload kind, followed by the payload.  Weights are
stored as raw row-major float64 bytes and masks as raw bytes, so a
save/load round trip is bit-exact, NaNs and signed zeros included.
"""

import hashlib
import struct

import numpy as np

from .errors import IdxFormatError
from .layers import ACTIVATIONS, ConvLayer, DenseLayer
from .network import Network

MAGIC = b"PRNETBIN"
VERSION = 1
KIND_MODEL = 0
KIND_MATRICES = 1


def _pack(fmt, *values):
    return struct.pack("<" + fmt, *values)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.buf):
            raise IdxFormatError(
                f"container truncated at offset {self.pos}", offset=self.pos)
        out = self.buf[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size))

    def array(self, dtype, shape):
        count = int(np.prod(shape))
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _header(kind):
    return MAGIC + _pack("HB", VERSION, kind)


def _check_header(reader, expected_kind):
    magic = reader.take(8)
    if magic != MAGIC:
        raise IdxFormatError(f"bad container magic {magic!r}", offset=0)
    version, kind = reader.unpack("HB")
    if version != VERSION:
        raise IdxFormatError(f"unsupported container version {version}",
                             offset=8)
    if kind != expected_kind:
        raise IdxFormatError(
            f"container holds kind {kind}, expected {expected_kind}",
            offset=10)


def save_network(path, net):
    parts = [_header(KIND_MODEL)]
    spatial = net.input_shape is not None
    parts.append(_pack("IB", net.input_dim, int(spatial)))
    if spatial:
        parts.append(_pack("III", *net.input_shape))
    parts.append(_pack("I", net.n_layers))
    for layer in net.layers:
        act = ACTIVATIONS.index(layer.activation)
        if isinstance(layer, ConvLayer):
            parts.append(_pack("BB", 1, act))
            parts.append(_pack("IIIIIIII", layer.in_channels, *layer.kernel,
                               layer.out_channels, *layer.stride,
                               *layer.padding))
        else:
            parts.append(_pack("BB", 0, act))
            parts.append(_pack("II", *layer.weights.shape))
        parts.append(np.ascontiguousarray(layer.weights,
                                          dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.mask,
                                          dtype=np.uint8).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
    return path


def load_network(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    _check_header(reader, KIND_MODEL)
    input_dim, spatial = reader.unpack("IB")
    input_shape = tuple(reader.unpack("III")) if spatial else None
    (n_layers,) = reader.unpack("I")
    layers = []
    for _ in range(n_layers):
        kind, act = reader.unpack("BB")
        activation = ACTIVATIONS[act]
        if kind == 1:
            in_c, kh, kw, out_c, sh, sw, ph, pw = reader.unpack("IIIIIIII")
            shape = (in_c * kh * kw + 1, out_c)
            weights = reader.array("<f8", shape)
            mask = reader.array(np.uint8, shape)
            layers.append(ConvLayer(weights, mask, in_c, (kh, kw), (sh, sw),
                                    (ph, pw), activation))
        else:
            rows, cols = reader.unpack("II")
            weights = reader.array("<f8", (rows, cols))
            mask = reader.array(np.uint8, (rows, cols))
            layers.append(DenseLayer(weights, mask, activation))
    return Network(layers, input_dim, input_shape)


def save_matrices(path, named):
    """Persist an ordered mapping of names to float arrays (e.g. Ψ dumps)."""
    parts = [_header(KIND_MATRICES), _pack("I", len(named))]
    for name, array in named.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f8")
        parts.append(_pack("H", len(encoded)))
        parts.append(encoded)
        parts.append(_pack("B", array.ndim))
        parts.append(_pack("I" * array.ndim, *array.shape))
        parts.append(array.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
    return path


def load_matrices(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    _check_header(reader, KIND_MATRICES)
    (count,) = reader.unpack("I")
    named = {}
    for _ in range(count):
        (name_len,) = reader.unpack("H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("B")
        shape = reader.unpack("I" * ndim) if ndim else ()
        named[name] = reader.array("<f8", shape)
    return named


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
