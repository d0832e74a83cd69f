"""Parameters, seeded randomness, He initialization and the checkpoint format.

Tensors are plain ``numpy.ndarray`` objects in float64; every op in
:mod:`pcwnet.layers` and :mod:`pcwnet.losses` consumes and returns them.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError

DTYPE = np.float64
MAGIC = b"PCWNET1\n"


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=DTYPE)


@dataclass
class Parameter:
    """A learnable tensor with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = as_tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ContractError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def accumulate(self, g):
        if g.shape != self.value.shape:
            raise ContractError(f"{self.name}: gradient shape {g.shape} != {self.value.shape}")
        self.grad += g


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64, whose output for a given seed does not depend
    on the platform. ``child(key)`` derives an independent stream from the
    parent seed and a string key, so e.g. the initial value of a parameter
    depends only on ``(seed, parameter name)``.
    """

    def __init__(self, seed, key=()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ContractError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(key)
        entropy = [seed & 0xFFFFFFFF, seed >> 32] + [_key_word(k) for k in self.key]
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, key):
        return Rng(self.seed, self.key + (key,))

    def normal(self, shape, std=1.0):
        return self.gen.standard_normal(shape) * std

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)


def _key_word(key):
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def he_init(shape, fan_in, rng):
    """Gaussian weights with std ``sqrt(2 / fan_in)``."""
    if fan_in <= 0:
        raise ContractError(f"fan_in must be positive, got {fan_in}")
    return rng.normal(tuple(shape), np.sqrt(2.0 / fan_in))


def save_checkpoint(path, params):
    """Write parameters in declaration order; see :func:`load_checkpoint`."""
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params))


def encode_checkpoint(params):
    chunks = [MAGIC]
    for p in params:
        name = p.name.encode("utf-8")
        value = np.asarray(p.value, dtype=DTYPE)
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def load_checkpoint(path):
    """Read a checkpoint file into an ordered list of :class:`Parameter`."""
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def decode_checkpoint(buf):
    if buf[: len(MAGIC)] != MAGIC:
        raise ParseError("bad checkpoint magic", 0)
    pos = len(MAGIC)
    params = []

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError("truncated checkpoint", pos)
        out = buf[pos : pos + n]
        pos += n
        return out

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        start = pos
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("parameter name is not UTF-8", start) from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(8 * count), dtype="<f8").astype(DTYPE).reshape(dims)
        params.append(Parameter(name, values))
    return params
