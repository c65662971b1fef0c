"""Synthetic fingerprint corpora, a vector-space query noise model, and
ingestion of externally computed embeddings."""
from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compose import FingerprintSequence
from .parallel import pmap

MANIFEST_NAME = "manifest.txt"
TEST_NAMESPACE = "test"
DUMMY_NAMESPACE = "dummy"


def derive_seed(root: int, *names) -> int:
    """Namespaced 64-bit sub-seed; independent streams per name path."""
    key = [int(root)] + [zlib.crc32(str(n).encode()) if not isinstance(n, int) else n for n in names]
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class CorpusSpec:
    tracks: int
    segments: int = 59
    dim: int = 512
    seed: int = 0
    namespace: str = TEST_NAMESPACE

    def __post_init__(self):
        for name in ("tracks", "segments", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and >= 0")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def track_rng(spec: CorpusSpec, track: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(spec.seed, spec.namespace, track))


def gen_matrix(spec: CorpusSpec) -> np.ndarray:
    """Corpus as one (tracks, N, D) float32 array of unit rows."""
    out = np.empty((spec.tracks, spec.segments, spec.dim), dtype=np.float32)

    def fill(t):
        out[t] = _unit_rows(track_rng(spec, t).standard_normal((spec.segments, spec.dim)))

    # each track has its own stream, so worker count cannot change the output
    pmap(fill, range(spec.tracks))
    return out


def track_ids(spec: CorpusSpec) -> list[str]:
    return [f"{spec.namespace}-{t:05d}" for t in range(spec.tracks)]


def gen_database(spec: CorpusSpec, hop_seconds: float = 0.5) -> list[FingerprintSequence]:
    mat = gen_matrix(spec)
    return [FingerprintSequence(tid, mat[t], hop_seconds) for t, tid in enumerate(track_ids(spec))]


def perturb_query(x, noise: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """normalize(x + sigma * n) with n ~ N(0, I/D); rows perturbed independently."""
    x = np.asarray(x, dtype=np.float64)
    if noise.sigma == 0.0:
        return x.astype(np.float32)
    rng = rng or np.random.default_rng(noise.seed)
    d = x.shape[-1]
    n = rng.standard_normal(x.shape) / np.sqrt(d)
    return _unit_rows(x + noise.sigma * n).astype(np.float32)


# --- on-disk corpus -----------------------------------------------------------


def write_corpus(seqs, out_dir, config: dict | None = None) -> int:
    """Write one raw little-endian float32 file per track plus a manifest.

    Returns the total number of payload bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seqs = list(seqs)
    if not seqs:
        raise ValueError("no sequences to write")
    dim = seqs[0].D
    lines = ["# hrrfp corpus manifest"]
    if config is not None:
        lines.append("# config: " + json.dumps(config, sort_keys=True))
    lines += ["format: f32le", f"dim: {dim}", f"hop_seconds: {seqs[0].hop_seconds}", f"tracks: {len(seqs)}"]
    total = 0
    for s in seqs:
        if s.D != dim:
            raise ValueError(f"dimension mismatch in track {s.track_id!r}")
        fname = f"{s.track_id}.f32"
        data = s.fingerprints.astype("<f4").tobytes()
        (out / fname).write_bytes(data)
        total += len(data)
        lines.append(f"track: {s.track_id} {s.N} {fname}")
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return total


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    info = {"format": "f32le", "hop_seconds": 0.5, "tracks": [], "root": path.parent, "config": None}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if line.startswith("# config:"):
            info["config"] = json.loads(line[len("# config:"):])
            continue
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key: value'")
        key, value = key.strip(), value.strip()
        if key == "track":
            parts = value.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: track line needs '<id> <N> <file>'")
            info["tracks"].append((parts[0], int(parts[1]), parts[2]))
        elif key == "dim":
            info["dim"] = int(value)
        elif key == "hop_seconds":
            info["hop_seconds"] = float(value)
        elif key == "format":
            if value not in ("f32le", "text"):
                raise ValueError(f"{path}:{lineno}: unknown format {value!r}")
            info["format"] = value
        elif key == "tracks":
            info["n_tracks"] = int(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown manifest key {key!r}")
    if "dim" not in info:
        raise ValueError(f"{path}: manifest lacks 'dim'")
    if "n_tracks" in info and info["n_tracks"] != len(info["tracks"]):
        raise ValueError(f"{path}: manifest declares {info['n_tracks']} tracks, lists {len(info['tracks'])}")
    return info


def _load_rows(file: Path, fmt: str, n: int, dim: int) -> np.ndarray:
    if fmt == "f32le":
        data = file.read_bytes()
        expected = n * dim * 4
        if len(data) != expected:
            raise ValueError(f"{file.name}: expected {expected} bytes ({n}x{dim} float32), found {len(data)}")
        return np.frombuffer(data, dtype="<f4").reshape(n, dim).astype(np.float64)
    rows = np.loadtxt(file, delimiter=None if file.suffix != ".csv" else ",", ndmin=2)
    if rows.shape != (n, dim):
        raise ValueError(f"{file.name}: expected shape ({n}, {dim}), found {rows.shape}")
    return rows


def ingest_external(path, format: str | None = None, hop_seconds: float | None = None) -> list[FingerprintSequence]:
    """Load a manifest-described corpus, renormalizing rows to unit length."""
    info = read_manifest(path)
    fmt = format or info["format"]
    hop = info["hop_seconds"] if hop_seconds is None else hop_seconds
    seqs = []
    for tid, n, fname in info["tracks"]:
        rows = _load_rows(info["root"] / fname, fmt, n, info["dim"])
        if not np.all(np.isfinite(rows)):
            raise ValueError(f"{fname}: non-finite values")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms == 0.0):
            raise ValueError(f"{fname}: zero-norm row {int(np.argmin(norms))}")
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > 1e-2:
            warnings.warn(f"{fname}: row norms deviate from 1 by up to {worst:.3g}; renormalizing", stacklevel=2)
        seqs.append(FingerprintSequence(tid, (rows / norms[:, None]).astype(np.float32), hop))
    return seqs
