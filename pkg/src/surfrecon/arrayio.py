"""Deterministic little-endian container for named numpy arrays and CSR matrices."""

from __future__ import annotations

import hashlib
import struct
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import MalformedFile

_MAGIC = b"ARRS"
_VERSION = 1


def _encode_array(name: str, a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    dts = dt.str.encode()
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", 0) + struct.pack("<H", len(dts)) + dts
    head += struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}q", *a.shape)
    return head + a.astype(dt, copy=False).tobytes()


def dumps(arrays: Mapping[str, np.ndarray | sp.csr_matrix]) -> bytes:
    chunks = []
    for name, a in arrays.items():
        if sp.issparse(a):
            a = sp.csr_matrix(a)
            shape = np.asarray(a.shape, dtype=np.int64)
            chunks += [_encode_array(f"{name}#shape", shape),
                       _encode_array(f"{name}#indptr", a.indptr.astype(np.int64)),
                       _encode_array(f"{name}#indices", a.indices.astype(np.int64)),
                       _encode_array(f"{name}#data", a.data)]
        else:
            chunks.append(_encode_array(name, np.asarray(a)))
    body = b"".join(chunks)
    digest = hashlib.blake2b(body, digest_size=8).digest()
    return _MAGIC + struct.pack("<Iq", _VERSION, len(chunks)) + body + digest


def loads(buf: bytes) -> dict[str, np.ndarray | sp.csr_matrix]:
    if buf[:4] != _MAGIC:
        raise MalformedFile("not an array container", 0, "byte")
    version, count = struct.unpack_from("<Iq", buf, 4)
    if version != _VERSION:
        raise MalformedFile(f"array container version {version} unsupported", 4, "byte")
    if len(buf) < 24 or hashlib.blake2b(buf[16:-8], digest_size=8).digest() != buf[-8:]:
        raise MalformedFile("array container checksum mismatch", len(buf) - 8, "byte")
    pos = 16
    raw: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nl,) = struct.unpack_from("<H", buf, pos); pos += 2
            name = buf[pos:pos + nl].decode(); pos += nl + 1
            (dl,) = struct.unpack_from("<H", buf, pos); pos += 2
            dt = np.dtype(buf[pos:pos + dl].decode()); pos += dl
            (ndim,) = struct.unpack_from("<B", buf, pos); pos += 1
            shape = struct.unpack_from(f"<{ndim}q", buf, pos); pos += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            raw[name] = np.frombuffer(buf, dt, n, pos).reshape(shape).copy()
            pos += n * dt.itemsize
    except (struct.error, ValueError) as exc:
        raise MalformedFile(f"corrupt array container: {exc}", pos, "byte") from None
    out: dict[str, np.ndarray | sp.csr_matrix] = {}
    for name, a in raw.items():
        if name.endswith("#shape"):
            base = name[:-6]
            out[base] = sp.csr_matrix(
                (raw[f"{base}#data"], raw[f"{base}#indices"], raw[f"{base}#indptr"]),
                shape=tuple(int(x) for x in a))
        elif "#" not in name:
            out[name] = a
    return out


def save(path, arrays) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
