"""Command-line entry point: ``skdtree {gen-data,gen-workload,build,bench,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import bench
from .construction import BuildConfig, build
from .model import read_csv, read_dataset, write_dataset


def _load_data(path: str):
    if Path(path).suffix.lower() == ".csv":
        return read_csv(path)
    return read_dataset(path)


def _config(args) -> BuildConfig:
    return BuildConfig(
        leaf_capacity=args.leaf_capacity,
        seed=args.seed,
        layouts=args.layouts,
        simd=args.simd == "auto",
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_data(args) -> int:
    coords, ids = bench.gen_dataset(args.dist, args.n, args.dims, args.seed, args.bits)
    write_dataset(args.out, coords, ids)
    return 0


def cmd_gen_workload(args) -> int:
    coords, ids = _load_data(args.data)
    wl = bench.gen_workload(
        coords,
        ids,
        args.kind,
        count=args.count,
        selectivity=args.selectivity,
        k=args.k,
        insert_frac=args.insert_frac,
        delete_frac=args.delete_frac,
        batches=args.batches,
        seed=args.seed,
    )
    bench.write_workload(args.out, wl)
    return 0


def cmd_build(args) -> int:
    coords, ids = _load_data(args.data)
    t0 = time.perf_counter()
    tree = build(coords, ids, _config(args))
    report = bench.BenchReport(
        {"n": int(coords.shape[0]), "dims": int(coords.shape[1]), "leaf_capacity": args.leaf_capacity,
         "layouts": args.layouts, "simd": args.simd},
        time.perf_counter() - t0,
        tree.structure_stats(),
    )
    _emit(bench.report_emit(report, args.format), args.out)
    return 0


def cmd_bench(args) -> int:
    coords, ids = _load_data(args.data)
    wl = bench.read_workload(args.workload)
    try:
        report = bench.run_bench(coords, ids, wl, _config(args), verify=args.verify, reps=args.reps)
    except bench.VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 1
    _emit(bench.report_emit(report, args.format), args.out)
    return 0


def cmd_verify(args) -> int:
    args.verify = True
    args.reps = 1
    rc = cmd_bench(args)
    if rc == 0:
        print("verify: all queries match the oracle", file=sys.stderr)
    return rc


def _build_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--leaf-capacity", type=int, default=128)
    p.add_argument("--layouts", choices=("auto", "n64-only"), default="auto")
    p.add_argument("--simd", choices=("auto", "scalar"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--out", default=None, help="report path (default: stdout)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skdtree", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=int, required=True)
    p.add_argument("--dist", choices=bench.KINDS, default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", type=int, default=64, help="coordinate width in bits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-workload", help="write a query/update workload for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=bench.WORKLOAD_KINDS, default="range")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--selectivity", type=float, default=1e-4)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--insert-frac", type=float, default=0.0)
    p.add_argument("--delete-frac", type=float, default=0.0)
    p.add_argument("--batches", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("build", help="build the index and report its structure")
    p.add_argument("--data", required=True)
    _build_flags(p)
    p.set_defaults(func=cmd_build)

    for name, func, text in (
        ("bench", cmd_bench, "run a workload and report timings"),
        ("verify", cmd_verify, "run a workload checking every query against the oracle"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", required=True)
        p.add_argument("--workload", required=True)
        p.add_argument("--verify", action="store_true")
        p.add_argument("--reps", type=int, default=3, help="timing repetitions per sweep")
        _build_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
