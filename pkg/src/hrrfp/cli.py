"""Command-line entry point: hrrfp {gen,compose,inspect,index,query,search,eval,sweep}."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .compose import FormatError, Method, compose_database, read_database, read_header, write_database
from .evaluation import (
    ExperimentConfig,
    Workbench,
    calibrate_sigma,
    capacity_sweep,
    capacity_table,
    run_experiment,
)
from .hrr import generate_position_basis
from .index import INDEX_MAGIC, IvfPqParams, build_exact, load_index, save_index, train_ivfpq
from .search import search_baseline, search_sequence, search_single
from .synth import CorpusSpec, NoiseSpec, gen_database, ingest_external, perturb_query, write_corpus


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {self.prog}: {message}")


def _write_sidecar(path: Path, config: dict):
    Path(str(path) + ".json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_config_file(path) -> dict:
    """``key = value`` / ``key: value`` lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, value = line.partition(sep)
                values[key.strip()] = value.strip()
                break
        else:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
    return values


# --- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = CorpusSpec(args.tracks, args.segments, args.dim, args.seed, args.namespace)
    seqs = gen_database(spec, args.hop)
    config = {"command": "gen", "tracks": args.tracks, "segments": args.segments, "dim": args.dim,
              "seed": args.seed, "namespace": args.namespace, "hop_seconds": args.hop}
    try:
        nbytes = write_corpus(seqs, args.out, config)
    except OSError as e:
        raise CliError(f"cannot write corpus to {args.out}: {e}") from None
    print(f"tracks={spec.tracks} N={spec.segments} D={spec.dim} bytes={nbytes} out={args.out}")
    return 0


def cmd_compose(args) -> int:
    seqs = ingest_external(args.corpus)
    method = Method.parse(args.method)
    D = seqs[0].D
    basis = generate_position_basis(D, args.M, args.basis_seed, args.unitary)
    db = compose_database(seqs, basis, method)
    nbytes = write_database(db, args.out)
    _write_sidecar(Path(args.out), {"command": "compose", "corpus": str(args.corpus), "method": method.value,
                                    "M": args.M, "basis_seed": args.basis_seed, "unitary": args.unitary})
    per_track = sorted({t.block_count for t in db.tracks})
    print(f"tracks={len(db.tracks)} blocks={db.n_blocks} blocks_per_track={','.join(map(str, per_track))} "
          f"method={method.value} M={args.M} D={D} payload_bytes={db.payload_bytes} file_bytes={nbytes}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.file)
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == INDEX_MAGIC:
        idx = load_index(path)
        print(f"format=HRRI D={idx.dim} C={idx.C} S={idx.S} nbits={idx.nbits} blocks={idx.size} nprobe={idx.nprobe}")
        return 0
    info = read_header(path)
    print(f"format=HRRC D={info['D']} M={info['M']} method={info['method'].value} seed={info['seed']} "
          f"unitary={str(info['unitary']).lower()} tracks={len(info['tracks'])} blocks={info['n_blocks']}")
    if args.tracks:
        for t in info["tracks"]:
            print(f"  {t.track_id} N={t.n_segments} blocks={t.block_count}")
    return 0


def cmd_index(args) -> int:
    db = read_database(args.db)
    params = IvfPqParams(C=args.centroids, S=args.subquantizers, nbits=args.bits, iters=args.iters,
                         seed=args.seed, max_train=args.max_train, nprobe=args.nprobe)
    idx = train_ivfpq(db, params)
    nbytes = save_index(idx, args.out)
    _write_sidecar(Path(args.out), {"command": "index", "db": str(args.db), "centroids": args.centroids,
                                    "subquantizers": args.subquantizers, "bits": args.bits, "iters": args.iters,
                                    "seed": args.seed, "max_train": args.max_train, "nprobe": args.nprobe})
    print(f"blocks={idx.size} C={idx.C} S={idx.S} code_bytes_per_block={idx.S * idx.nbits // 8} file_bytes={nbytes}")
    return 0


def load_query(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        q = np.load(path)
    else:
        q = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
    q = np.asarray(q, dtype=np.float32)
    if q.ndim == 1:
        q = q[None]
    if q.ndim != 2:
        raise CliError(f"query file {path} must hold an (L, D) matrix")
    return q


def cmd_query(args) -> int:
    seqs = {s.track_id: s for s in ingest_external(args.corpus)}
    if args.track not in seqs:
        raise CliError(f"track {args.track!r} not in corpus")
    fp = seqs[args.track].fingerprints
    if not 1 <= args.start <= fp.shape[0] - args.length + 1:
        raise CliError(f"start {args.start} with length {args.length} outside track of {fp.shape[0]} segments")
    clean = fp[args.start - 1 : args.start - 1 + args.length]
    q = perturb_query(clean, NoiseSpec(args.sigma, args.seed))
    np.save(args.out, q)
    _write_sidecar(Path(args.out), {"command": "query", "corpus": str(args.corpus), "track": args.track,
                                    "start": args.start, "length": args.length, "sigma": args.sigma,
                                    "seed": args.seed})
    print(f"track={args.track} start={args.start} length={args.length} sigma={args.sigma} out={args.out}")
    return 0


def cmd_search(args) -> int:
    db = read_database(args.db)
    q = load_query(args.query)
    if q.shape[1] != db.D:
        raise CliError(f"query dim {q.shape[1]} != database dim {db.D}")
    if args.index:
        index = load_index(args.index)
        if index.dim != db.D or index.size != db.n_blocks:
            raise CliError("index does not match database")
    else:
        index = build_exact(db)
    nprobe = args.nprobe if args.index else None
    hrr = db.method is Method.HRR
    if q.shape[0] == 1:
        if hrr:
            m = search_single(q[0], db, index, K=args.topk, nprobe=nprobe)
        else:
            m = search_baseline(q[0], db, index, K=args.topk, nprobe=nprobe)
        print(f"track={m.track_id} block={m.local_block} position={m.position} segment={m.segment} "
              f"offset_s={m.offset_seconds:.1f} score={m.score:.4f}")
        return 0
    if hrr and q.shape[0] < db.M:
        raise CliError(f"query of {q.shape[0]} segments is shorter than M={db.M}")
    search = search_sequence if hrr else search_baseline
    matches = search(q, db, index, K=args.topk, all_phases=not args.single_phase, nprobe=nprobe)
    for rank, m in enumerate(matches[: args.limit], 1):
        print(f"rank={rank} track={m.track_id} block={m.block} start_segment={m.start_segment} "
              f"offset_s={m.offset_seconds:.1f} phase={m.phase} score={m.score:.4f} windows={m.count}")
    return 0


_EVAL_FIELDS = [f.name for f in fields(ExperimentConfig)]


def _experiment_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in _EVAL_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return ExperimentConfig.from_mapping(values)
    except (TypeError, ValueError) as e:
        raise CliError(str(e)) from None


def _write_report(report, out: str, timing: bool):
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out + ".csv").write_text(report.to_csv(timing), encoding="utf-8")
    Path(out + ".txt").write_text(report.to_table(), encoding="utf-8")


def cmd_eval(args) -> int:
    cfg = _experiment_config(args)
    bench = Workbench(cfg)
    if args.calibrate:
        lo, hi = (float(x) for x in args.calibrate.split(","))
        cfg.sigma = calibrate_sigma(bench, (lo, hi))
    report = run_experiment(cfg, bench)
    _write_report(report, args.out, args.timing)
    sys.stdout.write(report.to_table())
    return 0


_SWEEPABLE = {"sigma", "dim", "tracks", "distractors", "topk", "nprobe", "queries", "segments"}


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    if args.param not in _SWEEPABLE:
        raise CliError(f"cannot sweep {args.param!r}; choose from {', '.join(sorted(_SWEEPABLE))}")
    raw = [v for v in args.values.split(",") if v.strip()]
    if args.target_rate is not None:
        if args.param != "dim":
            raise CliError("--target-rate runs a capacity sweep and needs --param dim")
        dims = [int(v) for v in raw]
        res = capacity_sweep(cfg, dims, cfg.block_sizes, cfg.sigma, args.target_rate)
        text = f"# config: {json.dumps(cfg.to_dict(), sort_keys=True)}\n" + capacity_table(
            res, args.target_rate, cfg.sigma)
        lines = ["# config: " + json.dumps(cfg.to_dict(), sort_keys=True), "dim,M,top1_exact,max_feasible_M"]
        for d, r in sorted(res.items()):
            for M, rate in sorted(r["rates"].items()):
                lines.append(f"{d},{M},{rate:.2f},{r['max_M'] if r['max_M'] is not None else ''}")
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out + ".csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        Path(args.out + ".txt").write_text(text, encoding="utf-8")
        sys.stdout.write(text)
        return 0
    if args.param == "sigma":
        sigmas = [float(v) for v in raw]
        report = run_experiment(cfg, sigmas=sigmas)
    else:
        report = None
        for v in raw:
            sub = replace(cfg, **{args.param: int(v)})
            r = run_experiment(sub)
            if report is None:
                report = r
            else:
                report.cells.extend(r.cells)
    _write_report(report, args.out, args.timing)
    sys.stdout.write(report.to_table())
    return 0


# --- parser ---------------------------------------------------------------------


def _add_eval_flags(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    for f in fields(ExperimentConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")
    p.add_argument("--out", required=True, help="output prefix for .csv and .txt")
    p.add_argument("--timing", action="store_true", help="fill elapsed_ms (makes output run-dependent)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hrrfp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic fingerprint corpus")
    p.add_argument("--tracks", type=int, required=True)
    p.add_argument("--segments", type=int, default=59)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--namespace", default="test")
    p.add_argument("--hop", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compose", help="aggregate a corpus into an HRRC database")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="hrr", choices=["hrr", "sum", "dec", "summation", "decimation"])
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--basis-seed", type=int, default=0)
    p.add_argument("--unitary", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("inspect", help="print an HRRC or HRRI header")
    p.add_argument("file")
    p.add_argument("--tracks", action="store_true", help="also list the track table")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("index", help="train an IVF-PQ index for an HRRC database")
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--centroids", type=int, default=200)
    p.add_argument("--subquantizers", type=int, default=64)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--max-train", type=int, default=16384)
    p.add_argument("--nprobe", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="cut a noisy query sequence out of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--start", type=int, required=True, help="1-based start segment")
    p.add_argument("--length", type=int, default=1)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".npy output path")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("search", help="search a query file against a database")
    p.add_argument("--db", required=True)
    p.add_argument("--index", help="HRRI file; exact scan when omitted")
    p.add_argument("--query", required=True, help=".npy, .txt or .csv with one fingerprint per row")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--nprobe", type=int, default=16)
    p.add_argument("--limit", type=int, default=5)
    p.add_argument("--single-phase", action="store_true")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="run the aggregation-method comparison")
    _add_eval_flags(p)
    p.add_argument("--calibrate", metavar="LO,HI",
                   help="first bisect sigma so the no-aggregation 1 s exact rate lands in [LO, HI]")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="repeat the comparison over one parameter")
    _add_eval_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--target-rate", type=float, help="capacity mode: max M per dim reaching this exact rate")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if str(e).startswith("usage:") else 1
    except (ValueError, KeyError, OSError, FormatError) as e:
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
