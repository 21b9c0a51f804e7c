"""Binary serialization of the offline artifact.

Layout (little-endian throughout): magic ``MSBA``, version u32, header
(Nc u32, Nf u32, eps f64, coefficient hash 32 bytes, n_basis u32, n_nodal
u32, n_edge u32), per-basis records (kind u8, anchor u32, support count
u8, cell ids u32[], nnz u32, node ids u32[], values f64[]), the coarse
matrix in CSR (dim u64, row-ptr u64[dim+1], col u32[nnz], val f64[nnz]),
and a trailing CRC-64 checksum of everything before it.

The checksum is CRC-64/XZ (reflected ECMA-182 polynomial, init and xorout
all-ones).  Round trips are bit-exact: save(load(path)) reproduces the
file byte for byte.
"""

from __future__ import annotations

import struct

import numpy as np
import scipy.sparse as sp

from .basis import MsBasisFunction, OfflineArtifact
from .mesh import build_two_level_mesh

MAGIC = b"MSBA"
VERSION = 1

_KIND_CODE = {"node": 0, "edge": 1}
_KIND_NAME = {0: "node", 1: "edge"}


class ArtifactFormatError(ValueError):
    """Malformed artifact file (bad magic/version, truncation, checksum)."""


# ---------------------------------------------------------------------- #
# CRC-64/XZ, slice-by-8
# ---------------------------------------------------------------------- #

_CRC_POLY = 0xC96C5795D7870F42
_MASK = 0xFFFFFFFFFFFFFFFF


def _crc_tables():
    t0 = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC_POLY if crc & 1 else crc >> 1
        t0.append(crc)
    tables = [t0]
    for _ in range(7):
        prev = tables[-1]
        tables.append([(prev[i] >> 8) ^ t0[prev[i] & 0xFF] for i in range(256)])
    return tables


_TABLES = _crc_tables()


def crc64(data: bytes, crc: int = 0) -> int:
    crc ^= _MASK
    t0, t1, t2, t3, t4, t5, t6, t7 = _TABLES
    n8 = len(data) - (len(data) % 8)
    for (word,) in struct.iter_unpack("<Q", memoryview(data)[:n8]):
        x = crc ^ word
        crc = (t7[x & 0xFF] ^ t6[(x >> 8) & 0xFF] ^ t5[(x >> 16) & 0xFF]
               ^ t4[(x >> 24) & 0xFF] ^ t3[(x >> 32) & 0xFF] ^ t2[(x >> 40) & 0xFF]
               ^ t1[(x >> 48) & 0xFF] ^ t0[(x >> 56) & 0xFF])
    for b in memoryview(data)[n8:]:
        crc = (crc >> 8) ^ t0[(crc ^ b) & 0xFF]
    return crc ^ _MASK


# ---------------------------------------------------------------------- #
# save / load
# ---------------------------------------------------------------------- #

def _encode(artifact: OfflineArtifact) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    n_nodal = artifact.n_nodal
    n_edge = artifact.n_basis - n_nodal
    parts.append(struct.pack("<IId", artifact.Nc, artifact.Nf, artifact.eps))
    if len(artifact.coeff_hash) != 32:
        raise ValueError("coefficient hash must be 32 bytes")
    parts.append(artifact.coeff_hash)
    parts.append(struct.pack("<III", artifact.n_basis, n_nodal, n_edge))
    for b in artifact.basis:
        parts.append(struct.pack("<BIB", _KIND_CODE[b.kind], b.anchor, b.support_cells.size))
        parts.append(b.support_cells.astype("<u4").tobytes())
        parts.append(struct.pack("<I", b.nodes.size))
        parts.append(b.nodes.astype("<u4").tobytes())
        parts.append(b.values.astype("<f8").tobytes())
    M = artifact.M.tocsr()
    M.sort_indices()
    parts.append(struct.pack("<Q", M.shape[0]))
    parts.append(M.indptr.astype("<u8").tobytes())
    parts.append(M.indices.astype("<u4").tobytes())
    parts.append(M.data.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", crc64(body))


def save_artifact(artifact: OfflineArtifact, path) -> None:
    data = _encode(artifact)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise ArtifactFormatError("truncated artifact file")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()


def load_artifact(path) -> OfflineArtifact:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise ArtifactFormatError("truncated artifact file")
    body, stored = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if crc64(body) != stored:
        raise ArtifactFormatError("checksum failure: artifact file is corrupted")

    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise ArtifactFormatError("bad magic: not an artifact file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ArtifactFormatError(f"unsupported artifact version {version}")
    Nc, Nf, eps = r.unpack("<IId")
    coeff_hash = r.take(32)
    n_basis, n_nodal, n_edge = r.unpack("<III")
    if n_nodal + n_edge != n_basis:
        raise ArtifactFormatError("inconsistent basis counts")

    basis = []
    for _ in range(n_basis):
        kind_code, anchor, n_cells = r.unpack("<BIB")
        if kind_code not in _KIND_NAME:
            raise ArtifactFormatError(f"unknown basis kind {kind_code}")
        cells = r.array("<u4", n_cells).astype(np.int64)
        (nnz,) = r.unpack("<I")
        nodes = r.array("<u4", nnz).astype(np.int64)
        values = r.array("<f8", nnz)
        basis.append(MsBasisFunction(
            kind=_KIND_NAME[kind_code], anchor=anchor,
            support_cells=cells, nodes=nodes, values=values,
        ))

    (dim,) = r.unpack("<Q")
    indptr = r.array("<u8", dim + 1).astype(np.int64)
    nnz = int(indptr[-1]) if dim else 0
    indices = r.array("<u4", nnz).astype(np.int32)
    values = r.array("<f8", nnz)
    if r.pos != len(body):
        raise ArtifactFormatError("trailing bytes after coarse matrix")
    M = sp.csr_matrix((values, indices, indptr), shape=(dim, dim))

    mesh = build_two_level_mesh(Nc, Nf)
    kbar = (n_edge / mesh.num_edges) if mesh.num_edges else 0.0
    return OfflineArtifact(
        Nc=Nc, Nf=Nf, eps=eps, coeff_hash=coeff_hash,
        basis=basis, M=M, kbar_e=kbar, mesh=mesh,
    )
