"""Top-1 hit-rate metrics and the aggregation-method comparison runner."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .compose import FingerprintSequence, Method, compose_database
from .hrr import generate_position_basis
from .index import IvfPqParams, build_exact, train_ivfpq
from .search import (
    search_baseline_batch,
    search_baseline_sequence_batch,
    search_sequence_batch,
    search_single_batch,
)
from .synth import DUMMY_NAMESPACE, TEST_NAMESPACE, CorpusSpec, NoiseSpec, derive_seed, gen_matrix, perturb_query

CSV_FIELDS = ["method", "M", "query_len_s", "query_len_segments", "sigma", "index",
              "top1_exact", "top1_near", "queries", "elapsed_ms"]
METHODS = ("none", "summation", "decimation", "hrr")


@dataclass(frozen=True)
class QueryTruth:
    track_id: str
    segment: int  # 1-based start segment within the track
    length: int = 1


def _pairs(predictions, truths):
    predictions, truths = list(predictions), list(truths)
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} truths")
    if not truths:
        raise ValueError("no queries")
    return predictions, truths


def _unpack(pred):
    if pred is None:
        return None, None
    if isinstance(pred, tuple):
        return pred
    seg = getattr(pred, "start_segment", None)
    return pred.track_id, seg if seg is not None else pred.segment


def top1_hit_rate(predictions, truths) -> float:
    """Percentage of queries whose top-1 (track, segment) equals the truth."""
    predictions, truths = _pairs(predictions, truths)
    hits = 0
    for p, t in zip(predictions, truths):
        tid, seg = _unpack(p)
        hits += tid == t.track_id and seg == t.segment
    return 100.0 * hits / len(truths)


def top1_near_rate(predictions, truths, tol_segments: int = 1) -> float:
    """Percentage with the right track and |predicted - true| <= tol_segments."""
    predictions, truths = _pairs(predictions, truths)
    hits = 0
    for p, t in zip(predictions, truths):
        tid, seg = _unpack(p)
        hits += tid == t.track_id and seg is not None and abs(seg - t.segment) <= tol_segments
    return 100.0 * hits / len(truths)


def seconds_to_segments(seconds: float, window: float = 1.0, hop: float = 0.5) -> int:
    """Number of overlapping analysis windows covering ``seconds`` of audio."""
    if seconds < window:
        raise ValueError(f"query of {seconds} s is shorter than one {window} s window")
    return int(round((seconds - window) / hop)) + 1


@dataclass
class ExperimentConfig:
    tracks: int = 500
    segments: int = 59
    dim: int = 512
    distractors: int = 10000
    sigma: float = 1.0
    methods: tuple = METHODS
    block_sizes: tuple = (2, 4)
    query_lengths: tuple = (1, 2, 3, 5, 10)  # seconds
    queries: int = 2000
    topk: int = 10
    index: str = "exact"
    nprobe: int = 16
    ivf_centroids: int = 200
    pq_subquantizers: int = 64
    pq_bits: int = 8
    unitary: bool = True
    all_phases: bool = True
    window_seconds: float = 1.0
    hop_seconds: float = 0.5
    near_tolerance: int = 1
    seed: int = 0

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.block_sizes = tuple(int(m) for m in self.block_sizes)
        self.query_lengths = tuple(self.query_lengths)
        for m in self.methods:
            if m != "none":
                Method.parse(m)
        if self.index not in ("exact", "ivfpq"):
            raise ValueError(f"index must be 'exact' or 'ivfpq', got {self.index!r}")
        if self.index == "ivfpq" and not 1 <= self.nprobe <= self.ivf_centroids:
            raise ValueError(f"nprobe must be in 1..{self.ivf_centroids}, got {self.nprobe}")
        if self.queries < 1 or self.tracks < 1 or self.segments < 1:
            raise ValueError("tracks, segments and queries must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string values (config file / CLI); unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(known[name].default, raw, name)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def method_label(self, method: str) -> str:
        return Method.parse(method).value if method != "none" else "none"


def _coerce(default, raw, name):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        return tuple(float(x) if "." in x else int(x) for x in items)
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {raw!r}") from None
    return raw


@dataclass
class CellResult:
    method: str
    M: int
    query_len_s: float
    query_len_segments: int
    sigma: float
    index: str
    top1_exact: float | None
    top1_near: float | None
    queries: int
    elapsed_ms: float
    storage_bytes_per_track: int
    reason: str = ""

    @property
    def absent(self) -> bool:
        return self.top1_exact is None


@dataclass
class EvalReport:
    config: ExperimentConfig
    cells: list[CellResult] = field(default_factory=list)

    def cell(self, method: str, M: int, query_len_s: float, sigma: float | None = None) -> CellResult:
        for c in self.cells:
            if c.method == method and c.M == M and c.query_len_s == query_len_s and (
                    sigma is None or c.sigma == sigma):
                return c
        raise KeyError((method, M, query_len_s, sigma))

    def to_csv(self, timing: bool = False) -> str:
        """CSV rows; elapsed_ms stays empty unless ``timing`` so reruns are byte-identical."""
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(self.config.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c in self.cells:
            w.writerow([c.method, c.M, _fmt_len(c.query_len_s), c.query_len_segments, repr(float(c.sigma)), c.index,
                        "" if c.absent else f"{c.top1_exact:.2f}", "" if c.absent else f"{c.top1_near:.2f}",
                        c.queries, f"{c.elapsed_ms:.1f}" if timing else ""])
        return buf.getvalue()

    def to_table(self) -> str:
        """Exact-rate grid (methods x lengths) plus the 1-segment exact/near comparison."""
        cfg = self.config
        mapping = ", ".join(f"{_fmt_len(s)}s->{seconds_to_segments(s, cfg.window_seconds, cfg.hop_seconds)}"
                            for s in cfg.query_lengths)
        lines = [f"# config: {json.dumps(cfg.to_dict(), sort_keys=True)}",
                 f"# query length mapping (window {cfg.window_seconds} s, hop {cfg.hop_seconds} s): {mapping}"]
        for sigma in sorted({c.sigma for c in self.cells}):
            cells = [c for c in self.cells if c.sigma == sigma]
            rows = []
            for c in cells:
                if (c.method, c.M) not in rows:
                    rows.append((c.method, c.M))
            lens = []
            for c in cells:
                if c.query_len_s not in lens:
                    lens.append(c.query_len_s)
            lines.append("")
            lines.append(f"Top-1 hit rate (%)  sigma={sigma:g}  index={cfg.index}  D={cfg.dim}")
            head = f"{'Method':<12}{'M':>3}" + "".join(f"{_fmt_len(s) + 's':>8}" for s in lens) + f"{'bytes/track':>13}"
            lines.append(head)
            lines.append("-" * len(head))
            notes = []
            for method, M in rows:
                row = f"{method:<12}{M:>3}"
                storage = 0
                for s in lens:
                    c = next(x for x in cells if x.method == method and x.M == M and x.query_len_s == s)
                    storage = c.storage_bytes_per_track
                    if c.absent:
                        row += f"{'n/a':>8}"
                        notes.append(f"  n/a {method} M={M} {_fmt_len(s)}s: {c.reason}")
                    else:
                        row += f"{c.top1_exact:>8.1f}"
                lines.append(row + f"{storage:>13}")
            lines.extend(notes)
            short = min(lens)
            lines.append("")
            lines.append(f"Top-1 exact/near (+-{cfg.near_tolerance} segment) for {_fmt_len(short)}s queries")
            lines.append(f"{'Method':<12}{'M':>3}{'exact':>8}{'near':>8}")
            for method, M in rows:
                c = next(x for x in cells if x.method == method and x.M == M and x.query_len_s == short)
                if not c.absent:
                    lines.append(f"{method:<12}{M:>3}{c.top1_exact:>8.1f}{c.top1_near:>8.1f}")
        return "\n".join(lines) + "\n"


def _fmt_len(s: float) -> str:
    return f"{s:g}"


class Workbench:
    """Shared corpus, query sets and the current composed database for a config.

    Holds at most one composed database at a time so desk-scale corpora with
    10k distractor tracks fit in memory.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        cfg = config
        corpus_seed = derive_seed(cfg.seed, "corpus")
        self.test = gen_matrix(CorpusSpec(cfg.tracks, cfg.segments, cfg.dim, corpus_seed, TEST_NAMESPACE))
        self.dummy = (gen_matrix(CorpusSpec(cfg.distractors, cfg.segments, cfg.dim, corpus_seed, DUMMY_NAMESPACE))
                      if cfg.distractors > 0 else None)
        self.test_ids = [f"{TEST_NAMESPACE}-{t:05d}" for t in range(cfg.tracks)]
        self._current = None

    def with_index(self, kind: str, **overrides) -> "Workbench":
        """Same corpus arrays, different index backend (or other index settings)."""
        other = copy.copy(self)
        other.config = replace(self.config, index=kind, **overrides)
        other._current = None
        return other

    def release(self):
        self._current = None

    def sequences(self) -> list[FingerprintSequence]:
        seqs = [FingerprintSequence(tid, self.test[t], self.config.hop_seconds) for t, tid in enumerate(self.test_ids)]
        if self.dummy is not None:
            seqs += [FingerprintSequence(f"{DUMMY_NAMESPACE}-{t:05d}", self.dummy[t], self.config.hop_seconds)
                     for t in range(self.dummy.shape[0])]
        return seqs

    def database(self, method: str, M: int):
        key = (method, M)
        if self._current is not None and self._current[0] == key:
            return self._current[1], self._current[2]
        self._current = None
        cfg = self.config
        basis = generate_position_basis(cfg.dim, M, derive_seed(cfg.seed, "basis", M), cfg.unitary)
        db = compose_database(self.sequences(), basis, "decimation" if method == "none" else method)
        if cfg.index == "exact":
            index = build_exact(db)
        else:
            params = IvfPqParams(C=cfg.ivf_centroids, S=cfg.pq_subquantizers, nbits=cfg.pq_bits,
                                 seed=derive_seed(cfg.seed, "index", method, M), nprobe=cfg.nprobe)
            index = train_ivfpq(db, params)
        self._current = (key, db, index)
        return db, index

    def queries(self, L: int, sigma: float, n: int | None = None):
        """Noisy query sequences (n, L, D) and their truths; independent of method and M."""
        cfg = self.config
        n = cfg.queries if n is None else n
        if L > cfg.segments:
            raise ValueError(f"query length {L} exceeds track length {cfg.segments}")
        rng = np.random.default_rng(derive_seed(cfg.seed, "queries", L))
        tracks = rng.integers(0, cfg.tracks, n)
        starts = rng.integers(0, cfg.segments - L + 1, n)
        clean = self.test[tracks[:, None], starts[:, None] + np.arange(L)[None, :]]
        noise_rng = np.random.default_rng(derive_seed(cfg.seed, "noise", L))
        noisy = perturb_query(clean, NoiseSpec(sigma), rng=noise_rng)
        truths = [QueryTruth(self.test_ids[t], int(s) + 1, L) for t, s in zip(tracks, starts)]
        return noisy, truths

    def predict(self, method: str, M: int, qs: np.ndarray) -> list:
        cfg = self.config
        db, index = self.database(method, M)
        L = qs.shape[1]
        kw = dict(K=cfg.topk, nprobe=cfg.nprobe if cfg.index == "ivfpq" else None, hop_seconds=cfg.hop_seconds)
        if method == "hrr":
            if L == 1:
                return search_single_batch(qs[:, 0], db, index, **kw)
            res = search_sequence_batch(qs, db, index, all_phases=cfg.all_phases, limit=1, **kw)
        elif L == 1:
            return search_baseline_batch(qs[:, 0], db, index, **kw)
        else:
            res = search_baseline_sequence_batch(qs, db, index, all_phases=cfg.all_phases, limit=1, **kw)
        return [r[0] if r else None for r in res]

    def cell(self, method: str, M: int, seconds: float, sigma: float | None = None, n: int | None = None) -> CellResult:
        cfg = self.config
        sigma = cfg.sigma if sigma is None else sigma
        L = seconds_to_segments(seconds, cfg.window_seconds, cfg.hop_seconds)
        storage = math.ceil(cfg.segments / M) * cfg.dim * 4
        label = cfg.method_label(method)
        base = dict(method=label, M=M, query_len_s=seconds, query_len_segments=L, sigma=sigma, index=cfg.index,
                    storage_bytes_per_track=storage)
        if method == "hrr" and 1 < L < M:
            return CellResult(top1_exact=None, top1_near=None, queries=0, elapsed_ms=0.0,
                              reason=f"query of {L} segments is shorter than M={M}", **base)
        if L > cfg.segments:
            return CellResult(top1_exact=None, top1_near=None, queries=0, elapsed_ms=0.0,
                              reason=f"query of {L} segments exceeds track length {cfg.segments}", **base)
        qs, truths = self.queries(L, sigma, n)
        t0 = time.perf_counter()
        preds = self.predict(method, M, qs)
        elapsed = (time.perf_counter() - t0) * 1000.0
        return CellResult(top1_exact=top1_hit_rate(preds, truths),
                          top1_near=top1_near_rate(preds, truths, cfg.near_tolerance),
                          queries=len(truths), elapsed_ms=elapsed, **base)


def _grid(cfg: ExperimentConfig):
    for method in cfg.methods:
        for M in ((1,) if method == "none" else cfg.block_sizes):
            yield method, M


def run_experiment(config: ExperimentConfig, bench: Workbench | None = None, sigmas=None) -> EvalReport:
    """Every (method, M, query length[, sigma]) cell on one synthetic corpus."""
    bench = bench or Workbench(config)
    report = EvalReport(config)
    for method, M in _grid(config):
        for sigma in (sigmas or [config.sigma]):
            for seconds in config.query_lengths:
                report.cells.append(bench.cell(method, M, seconds, sigma))
    return report


def calibrate_sigma(bench: Workbench, target: tuple[float, float] = (60.0, 80.0), queries: int = 500,
                    lo: float = 0.0, hi: float = 16.0, max_iter: int = 20) -> float:
    """Bisect sigma until the no-aggregation 1-segment exact rate hits the target band's middle half."""
    lo_t, hi_t = target
    inner = (lo_t + (hi_t - lo_t) / 4, hi_t - (hi_t - lo_t) / 4)
    mid = (lo + hi) / 2
    for _ in range(max_iter):
        mid = (lo + hi) / 2
        rate = bench.cell("none", 1, bench.config.window_seconds, mid, queries).top1_exact
        if inner[0] <= rate <= inner[1]:
            return mid
        if rate > inner[1]:
            lo = mid
        else:
            hi = mid
    return mid


def capacity_sweep(base: ExperimentConfig, dims, block_sizes, sigma: float, threshold: float = 50.0,
                   queries: int | None = None) -> dict:
    """Largest M per D whose HRR 1-segment exact rate reaches ``threshold`` percent.

    Returns {D: {"max_M": int | None, "rates": {M: rate}}}.
    """
    out = {}
    for d in dims:
        cfg = replace(base, dim=int(d), methods=("hrr",), block_sizes=tuple(block_sizes), sigma=sigma)
        bench = Workbench(cfg)
        rates = {}
        for M in block_sizes:
            if M > d:
                continue
            rates[int(M)] = bench.cell("hrr", int(M), cfg.window_seconds, sigma, queries).top1_exact
        feasible = [M for M, r in rates.items() if r >= threshold]
        out[int(d)] = {"max_M": max(feasible) if feasible else None, "rates": rates}
        del bench
    return out


def capacity_table(result: dict, threshold: float, sigma: float) -> str:
    Ms = sorted({M for r in result.values() for M in r["rates"]})
    head = f"{'D':>6}" + "".join(f"{'M=' + str(M):>8}" for M in Ms) + f"{'max M':>8}"
    lines = [f"HRR 1-segment exact rate (%), sigma={sigma:g}, threshold {threshold:g}%", head, "-" * len(head)]
    for d, r in sorted(result.items()):
        row = f"{d:>6}" + "".join(f"{r['rates'][M]:>8.1f}" if M in r["rates"] else f"{'n/a':>8}" for M in Ms)
        lines.append(row + f"{r['max_M'] if r['max_M'] is not None else '-':>8}")
    return "\n".join(lines) + "\n"


__all__ = [
    "CellResult", "EvalReport", "ExperimentConfig", "QueryTruth", "Workbench", "calibrate_sigma",
    "capacity_sweep", "capacity_table", "run_experiment", "seconds_to_segments", "top1_hit_rate",
    "top1_near_rate",
]
