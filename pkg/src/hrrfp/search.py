"""Containment search over composed databases.

HRR databases are probed with position-bound queries, so a hit names both the
block and the slot inside it. Baseline databases (summation, decimation) are
probed with raw queries and report slot 1. Sequence search accumulates scores
over query windows after compensating each window's own offset.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compose import ComposedDatabase, Method
from .hrr import PositionBasis


@dataclass(frozen=True)
class SingleMatch:
    block: int  # 0-based global block id
    position: int  # 1..M
    score: float
    track_id: str
    local_block: int  # 1-based within the track
    segment: int  # 1-based within the track
    offset_seconds: float
    M: int

    @property
    def global_segment(self) -> int:
        """(k̂ - 1) * M + m̂ with k̂ the 1-based global block."""
        return self.block * self.M + self.position


@dataclass(frozen=True)
class SequenceMatch:
    track_id: str
    block: int  # compensated block, 1-based within the track
    start_segment: int  # predicted query start, 1-based within the track
    phase: int
    score: float
    count: int
    offset_seconds: float


def _require(db: ComposedDatabase, hrr: bool):
    if hrr and db.method is not Method.HRR:
        raise ValueError(
            f"database method is {db.method.value!r}; use search_baseline for summation/decimation databases"
        )
    if not hrr and db.method is Method.HRR:
        raise ValueError("database method is 'hrr'; use search_single/search_sequence")


def _check_basis(db: ComposedDatabase, basis: PositionBasis | None) -> PositionBasis:
    if basis is None:
        return db.basis
    if basis.D != db.D or basis.M != db.M:
        raise ValueError(f"basis is D={basis.D}, M={basis.M} but database is D={db.D}, M={db.M}")
    return basis


def _check_dim(q: np.ndarray, db: ComposedDatabase):
    if q.shape[-1] != db.D:
        raise ValueError(f"query dim {q.shape[-1]} != database dim {db.D}")


def bind_positions(q, basis: PositionBasis) -> np.ndarray:
    """(n, D) queries -> (n, M, D) float32 with slot m holding q ⊛ p^(m)."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    spec = np.fft.rfft(q, axis=-1)[:, None, :] * basis.spectra()[None, :, :]
    return np.fft.irfft(spec, n=basis.D, axis=-1).astype(np.float32)


def compose_queries(q, basis: PositionBasis) -> np.ndarray:
    """Sliding composite queries: out[i] = sum_m q[i+m-1] ⊛ p^(m), stride 1."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError("compose_queries takes an (L, D) sequence")
    return _composite_windows(q[None], basis)[0].astype(np.float64)


def _composite_windows(qs: np.ndarray, basis: PositionBasis) -> np.ndarray:
    """(nq, L, D) -> (nq, L-M+1, D) composite queries."""
    nq, L, D = qs.shape
    M = basis.M
    if L < M:
        raise ValueError(f"query length L={L} is shorter than block size M={M}")
    spec = np.fft.rfft(qs.astype(np.float64), axis=-1)
    pspec = basis.spectra()
    acc = np.zeros((nq, L - M + 1, spec.shape[-1]), dtype=np.complex128)
    for m in range(M):
        acc += spec[:, m : m + L - M + 1, :] * pspec[m]
    return np.fft.irfft(acc, n=D, axis=-1)


def _single_match(db, k, m, score, hop) -> SingleMatch:
    t = db.tracks[int(db.track_index_of(k))]
    local = int(k) - t.start_block + 1
    seg = (local - 1) * db.M + int(m)
    return SingleMatch(int(k), int(m), float(score), t.track_id, local, seg, (seg - 1) * hop, db.M)


def search_single_batch(queries, db: ComposedDatabase, index, basis=None, K: int = 10,
                        nprobe: int | None = None, hop_seconds: float = 0.5) -> list[SingleMatch]:
    """Best (block, position) per query over all M position-bound probes."""
    _require(db, hrr=True)
    basis = _check_basis(db, basis)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float32))
    _check_dim(q, db)
    nq, M = q.shape[0], basis.M
    bound = bind_positions(q, basis).reshape(nq * M, db.D)
    scores, ids = index.search(bound, K, nprobe=nprobe)
    kk = scores.shape[1]
    scores = scores.reshape(nq, M * kk).astype(np.float64)
    ids = ids.reshape(nq, M * kk)
    pos = np.repeat(np.arange(1, M + 1), kk)[None, :].repeat(nq, axis=0)
    valid = (ids >= 0) & (pos <= db.fills[np.maximum(ids, 0)])
    scores = np.where(valid, scores, -np.inf)
    # best score; ties -> smallest block, then smallest position
    order = np.lexsort((pos, ids, -scores), axis=-1)[:, 0]
    r = np.arange(nq)
    return [_single_match(db, ids[i, order[i]], pos[i, order[i]], scores[i, order[i]], hop_seconds) for i in r]


def search_single(q, db: ComposedDatabase, index, basis: PositionBasis | None = None, K: int = 10,
                  nprobe: int | None = None, hop_seconds: float = 0.5) -> SingleMatch:
    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 1:
        raise ValueError("search_single takes one query vector; use search_sequence for sequences")
    return search_single_batch(q[None], db, index, basis, K, nprobe, hop_seconds)[0]


def _accumulate(db, offsets, hit_scores, hit_ids, L, phases, limit, hop):
    """Offset-compensated score accumulation for one query.

    A probe at query offset ``o`` hitting local block ``b`` votes for a query
    start of ``b*M - o`` in that block's track. Votes are kept per phase
    (o mod M); the phase with the strongest top candidate wins.
    """
    M = db.M
    tidx = db.track_index_of(hit_ids)
    starts = db._starts[tidx]
    best = None
    for phi in phases:
        sel = (offsets % M) == phi
        if not sel.any():
            continue
        o = np.broadcast_to(offsets[:, None], hit_ids.shape)[sel]
        ids, sc, tr = hit_ids[sel], hit_scores[sel], tidx[sel]
        ok = ids >= 0
        s0 = (ids - starts[sel]) * M - o
        ok &= (s0 >= 0) & (s0 < db._nseg[tr])
        if not ok.any():
            continue
        tr, s0, sc = tr[ok], s0[ok], sc[ok].astype(np.float64)
        key = tr.astype(np.int64) * (db.n_blocks * M + L + 1) + s0
        uniq, inv = np.unique(key, return_inverse=True)
        agg = np.bincount(inv, weights=sc)
        cnt = np.bincount(inv)
        rank_key = db._starts[uniq // (db.n_blocks * M + L + 1)] * M + uniq % (db.n_blocks * M + L + 1)
        order = np.lexsort((rank_key, -agg))
        if best is None or agg[order[0]] > best[0]:
            best = (agg[order[0]], phi, uniq, agg, cnt, order)
    if best is None:
        return []
    _, phi, uniq, agg, cnt, order = best
    base = db.n_blocks * M + L + 1
    out = []
    for j in order[:limit]:
        t = db.tracks[int(uniq[j] // base)]
        s0 = int(uniq[j] % base)
        out.append(SequenceMatch(t.track_id, (s0 + phi) // M + 1, s0 + 1, int(phi), float(agg[j]), int(cnt[j]),
                                 s0 * hop))
    return out


def _sequence_batch(queries, db, index, K, all_phases, nprobe, limit, hrr: bool, hop: float):
    qs = np.asarray(queries, dtype=np.float32)
    if qs.ndim == 2:
        qs = qs[None]
    if qs.ndim != 3:
        raise ValueError("sequence queries must be (L, D) or (n, L, D)")
    _check_dim(qs, db)
    nq, L, _ = qs.shape
    M = db.M
    if hrr:
        probes = _composite_windows(qs, db.basis).astype(np.float32)
    else:
        probes = qs
    nwin = probes.shape[1]
    offsets = np.arange(nwin)
    phases = range(M) if all_phases else [0]
    results = []
    # one index call per chunk of queries keeps memory bounded
    step = max(1, 4096 // nwin)
    for lo in range(0, nq, step):
        chunk = probes[lo : lo + step]
        scores, ids = index.search(chunk.reshape(-1, db.D), K, nprobe=nprobe)
        kk = scores.shape[1]
        scores = scores.reshape(len(chunk), nwin, kk)
        ids = ids.reshape(len(chunk), nwin, kk)
        for r in range(len(chunk)):
            results.append(_accumulate(db, offsets, scores[r], ids[r], L, phases, limit, hop))
    return results


def search_sequence_batch(queries, db: ComposedDatabase, index, basis=None, K: int = 10,
                          all_phases: bool = True, nprobe: int | None = None, limit: int | None = None,
                          hop_seconds: float = 0.5) -> list[list[SequenceMatch]]:
    _require(db, hrr=True)
    _check_basis(db, basis)
    return _sequence_batch(queries, db, index, K, all_phases, nprobe, limit, True, hop_seconds)


def search_sequence(q, db: ComposedDatabase, index, basis: PositionBasis | None = None, K: int = 10,
                    all_phases: bool = True, nprobe: int | None = None,
                    hop_seconds: float = 0.5) -> list[SequenceMatch]:
    """Rank (track, start) candidates for an (L, D) query sequence, L >= M."""
    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 2:
        raise ValueError("search_sequence takes an (L, D) sequence")
    return search_sequence_batch(q[None], db, index, basis, K, all_phases, nprobe, None, hop_seconds)[0]


def search_baseline_batch(queries, db: ComposedDatabase, index, K: int = 10,
                          nprobe: int | None = None, hop_seconds: float = 0.5) -> list[SingleMatch]:
    _require(db, hrr=False)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float32))
    _check_dim(q, db)
    scores, ids = index.search(q, K, nprobe=nprobe)
    return [_single_match(db, ids[i, 0], 1, scores[i, 0], hop_seconds) for i in range(q.shape[0])]


def search_baseline_sequence_batch(queries, db: ComposedDatabase, index, K: int = 10, all_phases: bool = True,
                                   nprobe: int | None = None, limit: int | None = None,
                                   hop_seconds: float = 0.5) -> list[list[SequenceMatch]]:
    _require(db, hrr=False)
    return _sequence_batch(queries, db, index, K, all_phases, nprobe, limit, False, hop_seconds)


def search_baseline(q, db: ComposedDatabase, index, method=None, K: int = 10, all_phases: bool = True,
                    nprobe: int | None = None, hop_seconds: float = 0.5):
    """Raw-query search for summation/decimation databases.

    A single vector returns a SingleMatch whose position is always 1; an
    (L, D) sequence returns ranked SequenceMatch candidates.
    """
    if method is not None and Method.parse(method) is not db.method:
        raise ValueError(f"method {Method.parse(method).value!r} does not match database {db.method.value!r}")
    q = np.asarray(q, dtype=np.float32)
    if q.ndim == 1:
        return search_baseline_batch(q[None], db, index, K, nprobe, hop_seconds)[0]
    if q.ndim == 2:
        return search_baseline_sequence_batch(q[None], db, index, K, all_phases, nprobe, None, hop_seconds)[0]
    raise ValueError("query must be a vector or an (L, D) sequence")
