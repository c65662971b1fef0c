"""Block composition of fingerprint sequences and the HRRC database format."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .hrr import PositionBasis, generate_position_basis, unbind

UNIT_TOL = 1e-4
_CHUNK_BLOCKS = 4096


class Method(str, Enum):
    HRR = "hrr"
    SUMMATION = "summation"
    DECIMATION = "decimation"

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, Method):
            return value
        aliases = {"sum": "summation", "dec": "decimation"}
        try:
            return cls(aliases.get(value, value))
        except ValueError:
            raise ValueError(f"unknown method {value!r}; expected one of hrr, summation, decimation") from None

    @property
    def code(self) -> int:
        return _METHOD_CODES[self]


_METHOD_CODES = {Method.HRR: 0, Method.SUMMATION: 1, Method.DECIMATION: 2}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}


@dataclass
class FingerprintSequence:
    track_id: str
    fingerprints: np.ndarray
    hop_seconds: float = 0.5

    def __post_init__(self):
        fp = np.asarray(self.fingerprints, dtype=np.float32)
        if fp.ndim != 2 or fp.shape[0] < 1 or fp.shape[1] < 1:
            raise ValueError(f"track {self.track_id!r}: fingerprints must be a nonempty (N, D) array")
        if not np.all(np.isfinite(fp)):
            raise ValueError(f"track {self.track_id!r}: non-finite fingerprint values")
        norms = np.linalg.norm(fp.astype(np.float64), axis=1)
        bad = np.abs(norms - 1.0) > UNIT_TOL
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"track {self.track_id!r}: fingerprint {i} has norm {norms[i]:.6f}, expected 1")
        self.fingerprints = fp

    @property
    def N(self) -> int:
        return self.fingerprints.shape[0]

    @property
    def D(self) -> int:
        return self.fingerprints.shape[1]


@dataclass
class CompositeBlock:
    vector: np.ndarray
    track_id: str
    block_index: int  # 1-based within the track
    fill: int
    method: Method = Method.HRR


@dataclass(frozen=True)
class TrackEntry:
    track_id: str
    start_block: int  # 0-based global offset
    block_count: int
    n_segments: int


@dataclass
class ComposedDatabase:
    vectors: np.ndarray  # (n_blocks, D) float32
    fills: np.ndarray  # (n_blocks,) uint8
    tracks: list[TrackEntry]
    method: Method
    basis: PositionBasis
    _starts: np.ndarray = field(init=False, repr=False)
    _nseg: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.method = Method.parse(self.method)
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        self.fills = np.asarray(self.fills, dtype=np.uint8)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.basis.D:
            raise ValueError("block vectors must be (n_blocks, D) with D matching the basis")
        if self.fills.shape != (self.vectors.shape[0],):
            raise ValueError("one fill count per block required")
        total = sum(t.block_count for t in self.tracks)
        if total != self.vectors.shape[0]:
            raise ValueError(f"track table covers {total} blocks, payload has {self.vectors.shape[0]}")
        self._starts = np.array([t.start_block for t in self.tracks], dtype=np.int64)
        self._nseg = np.array([t.n_segments for t in self.tracks], dtype=np.int64)

    @property
    def D(self) -> int:
        return self.basis.D

    @property
    def M(self) -> int:
        return self.basis.M

    @property
    def n_blocks(self) -> int:
        return self.vectors.shape[0]

    @property
    def payload_bytes(self) -> int:
        return self.n_blocks * self.D * 4

    def track_index_of(self, blocks) -> np.ndarray:
        """Track-table row owning each 0-based global block index."""
        return np.searchsorted(self._starts, np.asarray(blocks), side="right") - 1

    def block(self, k: int) -> CompositeBlock:
        """Global 0-based block ``k`` as a CompositeBlock."""
        t = self.tracks[int(self.track_index_of(k))]
        return CompositeBlock(
            vector=self.vectors[k],
            track_id=t.track_id,
            block_index=k - t.start_block + 1,
            fill=int(self.fills[k]),
            method=self.method,
        )

    def track(self, track_id: str) -> TrackEntry:
        for t in self.tracks:
            if t.track_id == track_id:
                return t
        raise KeyError(track_id)


def _check_block_input(x, D: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a nonempty list of fingerprints")
    if D is not None and arr.shape[1] != D:
        raise ValueError(f"dimension mismatch: fingerprints have D={arr.shape[1]}, basis has D={D}")
    return arr


def compose_block(x, basis: PositionBasis) -> np.ndarray:
    """Bundle up to M fingerprints, slot m bound to position vector m."""
    arr = _check_block_input(x, basis.D)
    if arr.shape[0] > basis.M:
        raise ValueError(f"block holds at most M={basis.M} fingerprints, got {arr.shape[0]}")
    spec = np.fft.rfft(arr, axis=-1) * basis.spectra()[: arr.shape[0]]
    return np.fft.irfft(spec.sum(axis=0), n=basis.D)


def aggregate_summation(x) -> np.ndarray:
    return _check_block_input(x).sum(axis=0)


def aggregate_decimation(x) -> np.ndarray:
    return _check_block_input(x)[0].copy()


def _compose_padded(blocks: np.ndarray, method: Method, pspec: np.ndarray) -> np.ndarray:
    """Aggregate a zero-padded (n, M, D) stack into (n, D) float32."""
    if method is Method.DECIMATION:
        return blocks[:, 0, :].astype(np.float32)
    if method is Method.SUMMATION:
        return blocks.astype(np.float64).sum(axis=1).astype(np.float32)
    d = blocks.shape[-1]
    spec = np.einsum("nmf,mf->nf", np.fft.rfft(blocks.astype(np.float64), axis=-1), pspec)
    return np.fft.irfft(spec, n=d, axis=-1).astype(np.float32)


def compose_database(seqs, basis: PositionBasis, method="hrr") -> ComposedDatabase:
    method = Method.parse(method)
    seqs = list(seqs)
    if not seqs:
        raise ValueError("no sequences to compose")
    M, D = basis.M, basis.D
    for s in seqs:
        if s.D != D:
            raise ValueError(f"dimension mismatch: track {s.track_id!r} has D={s.D}, basis has D={D}")

    tracks, start = [], 0
    for s in seqs:
        nb = math.ceil(s.N / M)
        tracks.append(TrackEntry(s.track_id, start, nb, s.N))
        start += nb
    vectors = np.empty((start, D), dtype=np.float32)
    fills = np.empty(start, dtype=np.uint8)
    pspec = basis.spectra()

    # groups of whole tracks, roughly _CHUNK_BLOCKS blocks each
    i = 0
    while i < len(seqs):
        j, nblk = i, 0
        while j < len(seqs) and (nblk == 0 or nblk + tracks[j].block_count <= _CHUNK_BLOCKS):
            nblk += tracks[j].block_count
            j += 1
        stack = np.zeros((nblk, M, D), dtype=np.float32)
        flat = stack.reshape(nblk * M, D)
        off = 0
        for s, t in zip(seqs[i:j], tracks[i:j]):
            flat[off * M : off * M + s.N] = s.fingerprints
            fills[t.start_block : t.start_block + t.block_count] = M
            fills[t.start_block + t.block_count - 1] = s.N - (t.block_count - 1) * M
            off += t.block_count
        lo = tracks[i].start_block
        vectors[lo : lo + nblk] = _compose_padded(stack, method, pspec)
        i = j
    return ComposedDatabase(vectors, fills, tracks, method, basis)


def recover_position(block: CompositeBlock, basis: PositionBasis, m: int) -> np.ndarray:
    """Noisy estimate of the fingerprint stored at position ``m`` (1-based)."""
    if Method.parse(block.method) is not Method.HRR:
        raise ValueError(f"position recovery is undefined for method {Method.parse(block.method).value!r}")
    if not 1 <= m <= basis.M:
        raise ValueError(f"position {m} outside 1..{basis.M}")
    return unbind(block.vector, basis[m])


# --- HRRC binary format -------------------------------------------------------

MAGIC = b"HRRC"
VERSION = 1
_HEADER = struct.Struct("<4sHIIBQBI")


class FormatError(ValueError):
    pass


def write_database(db: ComposedDatabase, path) -> int:
    """Write ``db`` to ``path``; returns the number of bytes written."""
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, db.D, db.M, db.method.code, db.basis.seed,
                           int(db.basis.unitary), len(db.tracks)))
    for t in db.tracks:
        raw = t.track_id.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<II", t.n_segments, t.block_count))
    buf.write(db.vectors.astype("<f4", copy=False).tobytes())
    buf.write(db.fills.astype(np.uint8, copy=False).tobytes())
    data = buf.getvalue()
    Path(path).write_bytes(data)
    return len(data)


def _take(view: memoryview, pos: int, n: int, what: str):
    if pos + n > len(view):
        raise FormatError(f"truncated file while reading {what}: need {pos + n} bytes, have {len(view)}")
    return view[pos : pos + n], pos + n


def read_header(path) -> dict:
    """Header fields plus track table, without the payload."""
    return _parse(Path(path).read_bytes(), payload=False)


def read_database(path) -> ComposedDatabase:
    return _parse(Path(path).read_bytes(), payload=True)


def _parse(data: bytes, payload: bool):
    view = memoryview(data)
    head, pos = _take(view, 0, _HEADER.size, "header")
    magic, version, D, M, mcode, seed, unitary, ntracks = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported HRRC version {version}")
    if mcode not in _CODE_METHODS:
        raise FormatError(f"unknown method code {mcode}")
    tracks, start = [], 0
    for _ in range(ntracks):
        raw, pos = _take(view, pos, 4, "track id length")
        (ln,) = struct.unpack("<I", raw)
        raw, pos = _take(view, pos, ln, "track id")
        tid = bytes(raw).decode("utf-8")
        raw, pos = _take(view, pos, 8, "track counts")
        n, nb = struct.unpack("<II", raw)
        tracks.append(TrackEntry(tid, start, nb, n))
        start += nb
    info = {"D": D, "M": M, "method": _CODE_METHODS[mcode], "seed": seed, "unitary": bool(unitary),
            "tracks": tracks, "n_blocks": start, "payload_offset": pos}
    if not payload:
        return info
    raw, pos = _take(view, pos, start * D * 4, "block payload")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(start, D).astype(np.float32)
    raw, pos = _take(view, pos, start, "fill table")
    fills = np.frombuffer(raw, dtype=np.uint8).copy()
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after fill table")
    basis = generate_position_basis(D, M, seed, bool(unitary))
    return ComposedDatabase(vectors, fills, tracks, info["method"], basis)
