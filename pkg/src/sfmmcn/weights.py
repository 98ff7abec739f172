"""Weight store and its binary container.

Container layout (all integers little-endian)::

    b"SFMW"  u8 version
    repeated until EOF:
        u16 name_len, name (utf-8)
        u8 ndim, ndim x u32 dims
        prod(dims) x i16 raw Q8.8 values

Input tensors use the same container with a single record named ``input``
(and optionally ``temb`` for the time embedding of U-net blocks).
"""

import struct
from types import MappingProxyType

import numpy as np

from . import fxp

MAGIC = b"SFMW"
VERSION = 1


class FormatError(ValueError):
    pass


class WeightStore:
    """Immutable mapping from reference name to a raw int64 array."""

    def __init__(self, records=None):
        recs = {}
        for name, arr in (records or {}).items():
            a = np.array(arr, dtype=np.int64)
            if a.size and (a.min() < fxp.FIXED_MIN or a.max() > fxp.FIXED_MAX):
                raise FormatError(f"record {name!r} has values outside 16 bits")
            a.setflags(write=False)
            recs[name] = a
        self._records = MappingProxyType(recs)

    def __contains__(self, name):
        return name in self._records

    def __getitem__(self, name):
        return self._records[name]

    def __iter__(self):
        return iter(self._records)

    def __len__(self):
        return len(self._records)

    def get(self, name, default=None):
        return self._records.get(name, default)

    def items(self):
        return self._records.items()

    def merged(self, other):
        recs = dict(self._records)
        recs.update(other.items() if isinstance(other, WeightStore) else other)
        return WeightStore(recs)

    def __eq__(self, other):
        if not isinstance(other, WeightStore) or set(self) != set(other):
            return False
        return all(np.array_equal(self[k], other[k]) for k in self)


def dumps(store):
    out = [MAGIC, struct.pack("<B", VERSION)]
    for name, arr in store.items():
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<i2").tobytes())
    return b"".join(out)


def loads(buf):
    if buf[:4] != MAGIC:
        raise FormatError("bad magic, not an SFMW container")
    if len(buf) < 5 or buf[4] != VERSION:
        raise FormatError(f"unsupported container version {buf[4] if len(buf) > 4 else None}")
    pos = 5
    recs = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            count = int(np.prod(dims)) if ndim else 1
            if pos + 2 * count > len(buf):
                raise FormatError(f"record {name!r} truncated")
            data = np.frombuffer(buf, dtype="<i2", count=count, offset=pos)
            pos += 2 * count
            if name in recs:
                raise FormatError(f"duplicate record {name!r}")
            recs[name] = data.astype(np.int64).reshape(dims)
    except struct.error as e:
        raise FormatError(f"truncated container at byte {pos}") from e
    return WeightStore(recs)


def save(path, store):
    with open(path, "wb") as f:
        f.write(dumps(store))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
