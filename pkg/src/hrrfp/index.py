"""Top-K inner-product retrieval over composite blocks.

Two backends share one batch interface, ``search(queries, K) -> (scores, ids)``:
an exact scan and an IVF-PQ index (coarse k-means lists plus product-quantized
residuals, scored asymmetrically: raw query against coded blocks). Results are sorted by descending
score with ties broken by ascending block id.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compose import ComposedDatabase, FormatError
from .parallel import pmap

_SCAN_ROWS = 16384
_QUERY_BATCH = 1024


@dataclass(frozen=True, order=True)
class SearchHit:
    block_index: int  # 0-based global block id
    score: float


def _normalize_rows(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    norms = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], _SCAN_ROWS):  # float64 norms without a full-size copy
        norms[lo : lo + _SCAN_ROWS] = np.linalg.norm(x[lo : lo + _SCAN_ROWS].astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"zero-norm {what} at row {int(np.argmin(norms))}")
    if np.all(np.abs(norms - 1.0) <= 1e-6):
        return x
    return x / norms.astype(np.float32)[:, None]


def _as_queries(q, dim: int) -> tuple[np.ndarray, bool]:
    q = np.asarray(q, dtype=np.float32)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != dim:
        raise ValueError(f"query dim {q.shape[1]} != index dim {dim}")
    return _normalize_rows(q, "query"), single


def _order(scores: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row: sort by (-score, id) and keep the first k."""
    ids = np.broadcast_to(ids, scores.shape)
    order = np.lexsort((ids, -scores), axis=-1)[..., :k]
    return np.take_along_axis(scores, order, -1), np.take_along_axis(ids, order, -1)


def _topk_rows(scores: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k per row of a dense (nq, n) score block, honouring the tie rule."""
    n = scores.shape[1]
    if k >= n:
        return _order(scores, ids, k)
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    rows = np.arange(scores.shape[0])[:, None]
    top = scores[rows, part]
    kth = top.min(axis=1)
    # rows where the k-th value is shared beyond the partition need the full tie rule
    crowded = np.count_nonzero(scores >= kth[:, None], axis=1) > k
    cand_ids = ids[part]
    s, i = _order(top, cand_ids, k)
    for r in np.flatnonzero(crowded):
        sel = np.flatnonzero(scores[r] >= kth[r])
        rs, ri = _order(scores[r, sel], ids[sel], k)
        s[r], i[r] = rs, ri
    return s, i


def _merge(acc_s, acc_i, new_s, new_i, k):
    if acc_s is None:
        return new_s, new_i
    return _order(np.concatenate([acc_s, new_s], axis=1), np.concatenate([acc_i, new_i], axis=1), k)


class ExactIndex:
    """Brute-force cosine scan over length-normalized block vectors."""

    kind = "exact"

    def __init__(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("exact index needs a nonempty (n, D) matrix")
        self.vectors = _normalize_rows(vectors, "block")
        self.ids = np.arange(self.vectors.shape[0], dtype=np.int64)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def nbytes(self) -> int:
        return self.vectors.nbytes

    def search(self, queries, k: int, **_) -> tuple[np.ndarray, np.ndarray]:
        if k < 1:
            raise ValueError("K must be >= 1")
        q, single = _as_queries(queries, self.dim)
        k = min(k, self.size)

        def scan(qlo):
            qb = q[qlo : qlo + _QUERY_BATCH]
            acc_s = acc_i = None
            for lo in range(0, self.size, _SCAN_ROWS):
                chunk = self.vectors[lo : lo + _SCAN_ROWS]
                s, i = _topk_rows(qb @ chunk.T, self.ids[lo : lo + _SCAN_ROWS], k)
                acc_s, acc_i = _merge(acc_s, acc_i, s, i, k)
            return acc_s, acc_i

        parts = pmap(scan, range(0, q.shape[0], _QUERY_BATCH))
        out_s = np.concatenate([p[0] for p in parts])
        out_i = np.concatenate([p[1] for p in parts])
        if single:
            return out_s[0], out_i[0]
        return out_s, out_i


def build_exact(db: ComposedDatabase) -> ExactIndex:
    if db.n_blocks == 0:
        raise ValueError("empty database")
    return ExactIndex(db.vectors)


def _hits(scores, ids) -> list[SearchHit]:
    return [SearchHit(int(i), float(s)) for s, i in zip(scores, ids)]


def topk_exact(index: ExactIndex, q, K: int) -> list[SearchHit]:
    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 1:
        raise ValueError("topk_exact takes a single query vector")
    return _hits(*index.search(q, K))


# --- k-means ------------------------------------------------------------------


def _sq_dists(x: np.ndarray, c: np.ndarray, xx: np.ndarray | None = None) -> np.ndarray:
    if xx is None:
        xx = np.einsum("ij,ij->i", x, x)
    d = x @ c.T
    d *= -2.0
    d += np.einsum("ij,ij->i", c, c)[None, :]
    d += xx[:, None]
    return np.maximum(d, 0.0, out=d)


def _assign(x, c, xx, rows=65536):
    """Nearest centroid per row and its squared distance."""
    labels = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0], dtype=np.float32)
    cc = np.einsum("ij,ij->i", c, c)
    for lo in range(0, x.shape[0], rows):
        xb = x[lo : lo + rows]
        d = xb @ c.T
        d *= -2.0
        d += cc[None, :]
        lab = d.argmin(axis=1)
        labels[lo : lo + rows] = lab
        dist[lo : lo + rows] = np.maximum(d[np.arange(len(xb)), lab] + xx[lo : lo + rows], 0.0)
    return labels, dist


def kmeans(vectors, k: int, iters: int = 25, seed: int = 0) -> np.ndarray:
    """Lloyd's algorithm from a seeded k-means++ start.

    Empty clusters are re-seeded with the points farthest from their current
    centroid. Deterministic in all arguments.
    """
    x = np.asarray(vectors, dtype=np.float32)
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    n = x.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"k-means needs at least k={k} vectors, got {n}")
    rng = np.random.default_rng(seed)
    xx = np.einsum("ij,ij->i", x, x)

    cent = np.empty((k, x.shape[1]), dtype=np.float32)
    first = int(rng.integers(n))
    cent[0] = x[first]
    closest = _sq_dists(x, cent[:1], xx)[:, 0].astype(np.float64)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        cent[j] = x[pick]
        np.minimum(closest, _sq_dists(x, cent[j : j + 1], xx)[:, 0], out=closest)

    for _ in range(iters):
        labels, dist = _assign(x, cent, xx)
        counts = np.bincount(labels, minlength=k)
        nonempty = counts > 0
        if x.shape[1] <= 32:
            sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)
        else:
            onehot = np.zeros((n, k), dtype=np.float32)
            onehot[np.arange(n), labels] = 1.0
            sums = onehot.T @ x
            del onehot
        new = cent.copy()
        new[nonempty] = (sums[nonempty] / counts[nonempty, None]).astype(np.float32)
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            far = np.lexsort((np.arange(n), -dist))[: empty.size]
            new[empty] = x[far]
        if np.array_equal(new, cent):
            break
        cent = new
    return cent


# --- IVF-PQ -------------------------------------------------------------------


@dataclass
class IvfPqParams:
    C: int = 200
    S: int = 64
    nbits: int = 8
    iters: int = 25
    seed: int = 0
    max_train: int = 16384
    nprobe: int = 16


class IvfPqIndex:
    """Inverted lists over coarse centroids; residuals coded with S sub-quantizers."""

    kind = "ivfpq"

    def __init__(self, coarse, codebooks, assignments, codes, nprobe: int = 16):
        self.coarse = np.ascontiguousarray(coarse, dtype=np.float32)
        self.codebooks = np.ascontiguousarray(codebooks, dtype=np.float32)
        self.assignments = np.asarray(assignments, dtype=np.int64)
        self.codes = np.ascontiguousarray(codes, dtype=np.uint8)
        self.nprobe = int(nprobe)
        C, D = self.coarse.shape
        S, ks, dsub = self.codebooks.shape
        if S * dsub != D:
            raise ValueError(f"codebooks cover {S}x{dsub} dims, coarse centroids have D={D}")
        if self.codes.shape != (self.assignments.shape[0], S):
            raise ValueError("codes must be (n, S)")
        if self.assignments.size and (self.assignments.min() < 0 or self.assignments.max() >= C):
            raise ValueError("list assignment out of range")
        order = np.argsort(self.assignments, kind="stable")
        self.list_ids = order.astype(np.int64)
        self.list_offsets = np.concatenate([[0], np.cumsum(np.bincount(self.assignments, minlength=C))])

    @property
    def C(self) -> int:
        return self.coarse.shape[0]

    @property
    def S(self) -> int:
        return self.codebooks.shape[0]

    @property
    def dim(self) -> int:
        return self.coarse.shape[1]

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def nbits(self) -> int:
        return int(np.log2(self.codebooks.shape[1]))

    def list_sizes(self) -> np.ndarray:
        return np.diff(self.list_offsets)

    def decode(self, ids=None) -> np.ndarray:
        """Reconstruct centroid + decoded residual for the given block ids."""
        ids = np.arange(self.size) if ids is None else np.asarray(ids)
        codes = self.codes[ids]
        res = self.codebooks[np.arange(self.S)[None, :], codes]  # (n, S, dsub)
        return self.coarse[self.assignments[ids]] + res.reshape(len(ids), self.dim)

    def search(self, queries, k: int, nprobe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        if self.size == 0:
            raise ValueError("index holds no encoded blocks; train it first")
        nprobe = min(self.nprobe, self.C) if nprobe is None else int(nprobe)
        if not 1 <= nprobe <= self.C:
            raise ValueError(f"nprobe must be in 1..{self.C}, got {nprobe}")
        if k < 1:
            raise ValueError("K must be >= 1")
        q, single = _as_queries(queries, self.dim)
        nq = q.shape[0]
        k = min(k, self.size)
        coarse_scores = q @ self.coarse.T  # (nq, C)
        probes = _order(coarse_scores, np.arange(self.C), nprobe)[1]
        # Scoring against the reconstruction c + r equals the table-lookup
        # score q.c + sum_s q_s.r_s; decoding per list lets one GEMM do it.
        out_s = np.full((nq, k), -np.inf, dtype=np.float32)
        out_i = np.full((nq, k), -1, dtype=np.int64)
        for lst in np.unique(probes):
            lo, hi = self.list_offsets[lst], self.list_offsets[lst + 1]
            if hi == lo:
                continue
            qs = np.flatnonzero((probes == lst).any(axis=1))
            ids = self.list_ids[lo:hi]
            sc = q[qs] @ self.decode(ids).T
            ts, ti = _topk_rows(sc, ids, min(k, ids.size))
            out_s[qs], out_i[qs] = _merge(out_s[qs], out_i[qs], ts, ti, k)
        if single:
            return out_s[0], out_i[0]
        return out_s, out_i


def _training_sample(x: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if x.shape[0] <= cap:
        return x
    rng = np.random.default_rng(seed)
    return x[np.sort(rng.choice(x.shape[0], cap, replace=False))]


def train_ivfpq(data, params: IvfPqParams | None = None) -> IvfPqIndex:
    """Train coarse + residual product quantizers and encode every block.

    ``data`` is a ComposedDatabase or an (n, D) matrix; rows are length
    normalized first. At most ``params.max_train`` rows train the quantizers.
    """
    p = params or IvfPqParams()
    vectors = data.vectors if isinstance(data, ComposedDatabase) else data
    x = _normalize_rows(np.asarray(vectors, dtype=np.float32), "block")
    n, D = x.shape
    if not 1 <= p.nbits <= 8:
        raise ValueError("nbits must be in 1..8")
    ks = 1 << p.nbits
    if D % p.S:
        raise ValueError(f"D={D} is not divisible by S={p.S}")
    if n < p.C or n < ks:
        raise ValueError(f"need at least max(C={p.C}, {ks}) blocks to train, got {n}")
    dsub = D // p.S
    train = _training_sample(x, p.max_train, p.seed)
    coarse = kmeans(train, p.C, p.iters, p.seed)
    assign, _ = _assign(x, coarse, np.einsum("ij,ij->i", x, x))
    tassign, _ = _assign(train, coarse, np.einsum("ij,ij->i", train, train))
    tres = (train - coarse[tassign]).reshape(train.shape[0], p.S, dsub)
    codebooks = np.empty((p.S, ks, dsub), dtype=np.float32)
    for s in range(p.S):
        codebooks[s] = kmeans(tres[:, s, :], ks, p.iters, p.seed + 1 + s)
    codes = np.empty((n, p.S), dtype=np.uint8)
    for lo in range(0, n, 65536):
        res = (x[lo : lo + 65536] - coarse[assign[lo : lo + 65536]]).reshape(-1, p.S, dsub)
        for s in range(p.S):
            sub = np.ascontiguousarray(res[:, s, :])
            codes[lo : lo + 65536, s] = _assign(sub, codebooks[s], np.einsum("ij,ij->i", sub, sub))[0]
    return IvfPqIndex(coarse, codebooks, assign, codes, p.nprobe)


def topk_ivfpq(index: IvfPqIndex, q, K: int, nprobe: int | None = None) -> list[SearchHit]:
    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 1:
        raise ValueError("topk_ivfpq takes a single query vector")
    s, i = index.search(q, K, nprobe)
    keep = i >= 0
    return _hits(s[keep], i[keep])


# --- HRRI persistence -----------------------------------------------------------

INDEX_MAGIC = b"HRRI"
INDEX_VERSION = 1
_IHEADER = struct.Struct("<4sHIIIBII")


def save_index(index: IvfPqIndex, path) -> int:
    C, D = index.coarse.shape
    S, ks, _ = index.codebooks.shape
    buf = io.BytesIO()
    buf.write(_IHEADER.pack(INDEX_MAGIC, INDEX_VERSION, D, C, S, index.nbits, index.size, index.nprobe))
    buf.write(index.coarse.astype("<f4").tobytes())
    buf.write(index.codebooks.astype("<f4").tobytes())
    buf.write(index.assignments.astype("<u4").tobytes())
    buf.write(index.codes.tobytes())
    data = buf.getvalue()
    Path(path).write_bytes(data)
    return len(data)


def load_index(path) -> IvfPqIndex:
    data = Path(path).read_bytes()
    if len(data) < _IHEADER.size:
        raise FormatError("truncated index header")
    magic, version, D, C, S, nbits, n, nprobe = _IHEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {INDEX_MAGIC!r}")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported HRRI version {version}")
    if S == 0 or D % S:
        raise FormatError(f"corrupt header: D={D}, S={S}")
    ks, dsub = 1 << nbits, D // S
    sizes = [C * D * 4, S * ks * dsub * 4, n * 4, n * S]
    expected = _IHEADER.size + sum(sizes)
    if len(data) != expected:
        raise FormatError(f"index file has {len(data)} bytes, expected {expected}")
    pos = _IHEADER.size
    parts = []
    for size, dt in zip(sizes, ["<f4", "<f4", "<u4", "u1"]):
        parts.append(np.frombuffer(data, dtype=dt, count=size // np.dtype(dt).itemsize, offset=pos))
        pos += size
    coarse = parts[0].reshape(C, D)
    codebooks = parts[1].reshape(S, ks, dsub)
    return IvfPqIndex(coarse, codebooks, parts[2].astype(np.int64), parts[3].reshape(n, S), nprobe)
