"""Dense float32 arrays, a splittable seeded RNG, and the HPMT binary format.

Tensors are plain ``numpy.ndarray`` objects in row-major NCHW order; this
module only adds the validation and serialization the rest of the package
relies on.
"""
import hashlib
import struct

import numpy as np

DTYPE = np.float32
MAGIC = b"HPMT"
VERSION = 1
MAX_RANK = 4


class TensorFormatError(ValueError):
    pass


def check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise ValueError(f"rank must be 1..{MAX_RANK}, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ValueError(f"all extents must be >= 1, got shape {shape}")
    return shape


def zeros(shape):
    return np.zeros(check_shape(shape), dtype=DTYPE)


def flat_index(shape, index):
    """Row-major offset of a multi-index."""
    return int(np.ravel_multi_index(tuple(index), check_shape(shape)))


def unflatten_index(shape, offset):
    return tuple(int(i) for i in np.unravel_index(offset, check_shape(shape)))


def elementwise_add(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects two matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


class Rng:
    """Seeded PCG64 stream with labeled child streams.

    ``child(label)`` derives a new seed by hashing (seed, label), so a
    component's randomness does not depend on how many draws other
    components made before it.
    """

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, label):
        digest = hashlib.blake2b(f"{self.seed}/{label}".encode(), digest_size=8).digest()
        return Rng(int.from_bytes(digest, "little"))

    def random(self, size=None):
        return self.gen.random(size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def integers(self, low, high, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def uniform(rng, shape, lo, hi):
    if not lo < hi:
        raise ValueError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
    shape = check_shape(shape)
    x = (lo + (hi - lo) * rng.random(shape)).astype(DTYPE)
    # float32 rounding can land exactly on hi
    top = np.nextafter(DTYPE(hi), DTYPE(lo))
    return np.minimum(x, top)


def tensor_to_bytes(arr):
    arr = np.asarray(arr, dtype="<f4")
    shape = check_shape(arr.shape)
    header = MAGIC + bytes([VERSION, len(shape)]) + struct.pack(f"<{len(shape)}I", *shape)
    return header + np.ascontiguousarray(arr).tobytes()


def tensor_from_bytes(buf, offset=0):
    """Decode one tensor starting at ``offset``; returns (array, next_offset)."""
    buf = memoryview(buf)
    if len(buf) < offset + 6 or bytes(buf[offset:offset + 4]) != MAGIC:
        raise TensorFormatError("bad magic bytes, not an HPMT tensor")
    version, rank = buf[offset + 4], buf[offset + 5]
    if version != VERSION:
        raise TensorFormatError(f"unsupported HPMT version {version}")
    if not 1 <= rank <= MAX_RANK:
        raise TensorFormatError(f"invalid rank {rank}")
    pos = offset + 6
    if len(buf) < pos + 4 * rank:
        raise TensorFormatError("truncated tensor header")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    if any(s < 1 for s in shape):
        raise TensorFormatError(f"zero extent in shape {shape}")
    count = int(np.prod(shape))
    end = pos + 4 * count
    if len(buf) < end:
        raise TensorFormatError("truncated tensor data")
    arr = np.frombuffer(buf[pos:end], dtype="<f4").astype(DTYPE).reshape(shape)
    return arr, end


def save_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path):
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TensorFormatError("trailing bytes after tensor")
    return arr
