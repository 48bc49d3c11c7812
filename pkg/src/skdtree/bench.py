"""Dataset and workload generation, benchmark runs and report output."""

from __future__ import annotations

import csv
import gc
import io
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import median

import numpy as np

from .construction import BuildConfig, build
from .model import MAXVAL
from .nodes import QueryStats
from .oracle import FlatStore, scan_knn, scan_range

log = logging.getLogger(__name__)

KINDS = ("uniform", "gaussian", "duplicate")
WORKLOAD_KINDS = ("range", "knn", "mixed")
WORKLOAD_MAGIC = b"SKW1"
_WL_HEADER = struct.Struct("<4sIIIIdddQQQQQ")


class VerificationError(AssertionError):
    pass


def _domain_max(bits: int) -> int:
    if not 1 <= bits <= 64:
        raise ValueError("bits must be in [1, 64]")
    return min((1 << bits) - 1, MAXVAL - 1)


def gen_dataset(kind: str, n: int, dims: int, seed: int = 0, bits: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic points over [0, 2**bits) (capped below MAXVAL); ids are row numbers.

    ``uniform`` draws i.i.d. coordinates, ``gaussian`` uses a random mean and a
    per-dimension sigma between 5% and 30% of the domain (clamped), and
    ``duplicate`` picks each coordinate from 32 values per dimension with
    Zipf-like weights.
    """
    if n < 1 or dims < 1:
        raise ValueError("need n >= 1 and dims >= 1")
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    rng = np.random.default_rng(seed)
    top = _domain_max(bits)
    coords = np.empty((n, dims), dtype=np.uint64)
    for d in range(dims):
        if kind == "uniform":
            coords[:, d] = rng.integers(0, top, size=n, dtype=np.uint64, endpoint=True)
        elif kind == "gaussian":
            mean = rng.uniform(0, top)
            sigma = rng.uniform(0.05, 0.30) * top
            # float64(top) rounds up to 2**64 for wide domains, which does not cast
            vals = np.clip(rng.normal(mean, sigma, size=n), 0, min(float(top), np.nextafter(2.0**64, 0)))
            coords[:, d] = np.minimum(vals.astype(np.uint64), np.uint64(top))
        else:
            values = rng.integers(0, top, size=32, dtype=np.uint64, endpoint=True)
            weights = 1.0 / np.arange(1, 33)
            coords[:, d] = values[rng.choice(32, size=n, p=weights / weights.sum())]
    return coords, np.arange(n, dtype=np.uint64)


@dataclass
class Workload:
    kind: str
    dims: int
    k: int = 10
    selectivity: float = 0.0
    insert_frac: float = 0.0
    delete_frac: float = 0.0
    batches: int = 1
    seed: int = 0
    ranges: list[tuple[tuple[int, ...], tuple[int, ...], int]] = field(default_factory=list)
    knn_points: list[tuple[int, ...]] = field(default_factory=list)
    inserts: list[tuple[tuple[int, ...], int]] = field(default_factory=list)
    deletes: list[tuple[tuple[int, ...], int]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        for name in ("insert_frac", "delete_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _linf(coords: np.ndarray, center: np.ndarray) -> np.ndarray:
    out = np.zeros(coords.shape[0], dtype=np.uint64)
    for d in range(coords.shape[1]):
        col = coords[:, d]
        c = center[d]
        np.maximum(out, np.maximum(col, c) - np.minimum(col, c), out=out)
    return out


def _box(center, r: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    c = [int(v) for v in center]
    return tuple(max(0, v - r) for v in c), tuple(min(MAXVAL, v + r) for v in c)


def _best_radius(dist: np.ndarray, target: int) -> tuple[int, int]:
    """Radius (and its count) of the cube closest to ``target`` points, given all distances within it."""
    r = int(np.partition(dist, target - 1)[target - 1])
    achieved = int(np.count_nonzero(dist <= np.uint64(r)))
    if achieved > target and r > 0:
        below = int(np.count_nonzero(dist <= np.uint64(r - 1)))
        if below > 0 and abs(below - target) < abs(achieved - target):
            r, achieved = r - 1, below
    return r, achieved


def calibrate_box(coords: np.ndarray, center: np.ndarray, target: int) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    """Hypercube around ``center`` whose result count is as close to ``target`` as ties allow.

    A cube of half-width r holds exactly the points within Chebyshev distance
    r, so the target-th smallest such distance is the tightest cube that
    reaches the target count.
    """
    n = coords.shape[0]
    if target >= n:
        return (0,) * coords.shape[1], (MAXVAL,) * coords.shape[1], n
    r, achieved = _best_radius(_linf(coords, center), target)
    return (*_box(center, r), achieved)


class BoxCalibrator:
    """Same answers as :func:`calibrate_box`, but only scans a slab of the data.

    Points are sorted once on dimension 0. For a guessed radius R, every point
    within Chebyshev distance R lies in the slab |x0 - c0| <= R, so if the slab
    already holds ``target`` such points the exact radius is found there;
    otherwise R doubles. The first guess comes from a fixed sample.
    """

    def __init__(self, coords: np.ndarray, sample: int = 4096, seed: int = 0):
        self.coords = coords
        self.order = np.argsort(coords[:, 0], kind="stable")
        self.sorted = coords[self.order]
        self.key = np.ascontiguousarray(self.sorted[:, 0])
        rng = np.random.default_rng(seed)
        n = coords.shape[0]
        self.sample = coords[rng.choice(n, size=min(sample, n), replace=False)]

    def __call__(self, center: np.ndarray, target: int):
        n, dims = self.coords.shape
        if target >= n:
            return (0,) * dims, (MAXVAL,) * dims, n
        m = self.sample.shape[0]
        k = min(m, max(1, int(np.ceil(target * m / n))))
        guess = int(np.partition(_linf(self.sample, center), k - 1)[k - 1])
        radius = min(MAXVAL, max(1, 2 * guess))
        c0 = int(center[0])
        while True:
            lo, hi = max(0, c0 - radius), min(MAXVAL, c0 + radius)
            a = int(np.searchsorted(self.key, np.uint64(lo), "left"))
            b = int(np.searchsorted(self.key, np.uint64(hi), "right"))
            dist = _linf(self.sorted[a:b], center)
            if np.count_nonzero(dist <= np.uint64(radius)) >= target or (a == 0 and b == n):
                break
            radius = min(MAXVAL, 2 * radius)
        r, achieved = _best_radius(dist, target)
        return (*_box(center, r), achieved)


def gen_range_workload(coords: np.ndarray, count: int, selectivity: float, seed: int = 0):
    """``count`` hypercubes centred on data points, each calibrated to the selectivity."""
    if not 0.0 < selectivity <= 1.0:
        raise ValueError("selectivity must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n = coords.shape[0]
    target = max(1, int(round(selectivity * n)))
    centers = rng.integers(0, n, size=count)
    calibrate = BoxCalibrator(coords, seed=seed)
    return [calibrate(coords[i], target) for i in centers]


def gen_knn_workload(coords: np.ndarray, count: int, seed: int = 0) -> list[tuple[int, ...]]:
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, coords.shape[0], size=count)
    return [tuple(coords[i].tolist()) for i in picks]


def gen_workload(
    coords: np.ndarray,
    ids: np.ndarray,
    kind: str,
    count: int = 1000,
    selectivity: float = 1e-4,
    k: int = 10,
    insert_frac: float = 0.0,
    delete_frac: float = 0.0,
    batches: int = 5,
    seed: int = 0,
) -> Workload:
    """Build a workload file's contents.

    Mixed workloads carry both query kinds plus the update stream: inserted
    points combine coordinates of random existing points per dimension (so
    marginals match the data) and get fresh ids; deletions sample initial
    points without replacement.
    """
    wl = Workload(kind, coords.shape[1], k, selectivity, insert_frac, delete_frac, batches if kind == "mixed" else 1, seed)
    if kind in ("range", "mixed"):
        wl.ranges = gen_range_workload(coords, count, selectivity, seed)
    if kind in ("knn", "mixed"):
        wl.knn_points = gen_knn_workload(coords, count, seed + 1)
    if kind == "mixed":
        n, dims = coords.shape
        rng = np.random.default_rng(seed + 2)
        n_ins = int(round(insert_frac * n))
        n_del = min(n, int(round(delete_frac * n)))
        donors = rng.integers(0, n, size=(n_ins, dims))
        new = coords[donors, np.arange(dims)]
        next_id = int(ids.max()) + 1 if n else 0
        wl.inserts = [(tuple(row), next_id + j) for j, row in enumerate(new.tolist())]
        victims = rng.choice(n, size=n_del, replace=False)
        wl.deletes = [(tuple(coords[i].tolist()), int(ids[i])) for i in victims]
    return wl


def write_workload(path: str | Path, wl: Workload) -> None:
    header = _WL_HEADER.pack(
        WORKLOAD_MAGIC,
        WORKLOAD_KINDS.index(wl.kind),
        wl.dims,
        wl.k,
        wl.batches,
        wl.selectivity,
        wl.insert_frac,
        wl.delete_frac,
        wl.seed,
        len(wl.ranges),
        len(wl.knn_points),
        len(wl.inserts),
        len(wl.deletes),
    )
    parts = [header]
    if wl.ranges:
        parts.append(np.array([lo + hi + (a,) for lo, hi, a in wl.ranges], dtype="<u8").tobytes())
    if wl.knn_points:
        parts.append(np.array(wl.knn_points, dtype="<u8").tobytes())
    for stream in (wl.inserts, wl.deletes):
        if stream:
            parts.append(np.array([c + (i,) for c, i in stream], dtype="<u8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_workload(path: str | Path) -> Workload:
    raw = Path(path).read_bytes()
    fields = _WL_HEADER.unpack_from(raw)
    magic, kind, dims, k, batches, sel, ins, dele, seed, nr, nk, ni, nd = fields
    if magic != WORKLOAD_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _WL_HEADER.size + 8 * (nr * (2 * dims + 1) + nk * dims + (ni + nd) * (dims + 1))
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<u8", offset=_WL_HEADER.size)
    wl = Workload(WORKLOAD_KINDS[kind], dims, k, sel, ins, dele, batches, seed)
    pos = 0

    def take(rows, width):
        nonlocal pos
        block = body[pos : pos + rows * width].reshape(rows, width).tolist()
        pos += rows * width
        return block

    wl.ranges = [(tuple(r[:dims]), tuple(r[dims : 2 * dims]), r[2 * dims]) for r in take(nr, 2 * dims + 1)]
    wl.knn_points = [tuple(r) for r in take(nk, dims)]
    wl.inserts = [(tuple(r[:dims]), r[dims]) for r in take(ni, dims + 1)]
    wl.deletes = [(tuple(r[:dims]), r[dims]) for r in take(nd, dims + 1)]
    return wl


@dataclass
class PhaseReport:
    name: str
    ops: int
    wall_s: float
    qps: float
    wall_min_s: float = 0.0
    nodes_visited: int = 0
    leaves_scanned: int = 0
    points_compared: int = 0
    verified: int = 0


@dataclass
class BenchReport:
    config: dict
    build_s: float
    structure: dict
    phases: list[PhaseReport] = field(default_factory=list)
    structure_final: dict = field(default_factory=dict)

    def phase(self, name: str) -> PhaseReport:
        for p in self.phases:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "config": dict(self.config),
            "build_s": self.build_s,
            "structure": dict(self.structure),
            "phases": [asdict(p) for p in self.phases],
            "structure_final": dict(self.structure_final),
        }


def _timed_sweep(run, reps: int) -> tuple[float, float, QueryStats]:
    """Median and fastest wall time of ``reps`` sweeps; counters come from the first.

    The fastest sweep is the least disturbed by other load on the machine and
    is the better basis for comparing sweeps taken at different times.

    As with ``timeit``, garbage left over from earlier phases is collected
    first and the collector is paused while the clock runs, so a full
    collection triggered by update churn is not billed to the queries.
    """
    times = []
    first = None
    gc.collect()
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(reps):
            stats = QueryStats()
            t0 = time.perf_counter()
            run(stats)
            times.append(time.perf_counter() - t0)
            first = first or stats
    finally:
        if enabled:
            gc.enable()
    return median(times), min(times), first


def _phase(
    name: str, ops: int, wall: float, stats: QueryStats | None = None, verified: int = 0, wall_min: float | None = None
) -> PhaseReport:
    stats = stats or QueryStats()
    return PhaseReport(
        name,
        ops,
        wall,
        ops / wall if wall > 0 else 0.0,
        wall if wall_min is None else wall_min,
        stats.nodes_visited,
        stats.leaves_scanned,
        stats.points_compared,
        verified,
    )


def _dump(kind: str, i: int, query, got, want) -> str:
    return f"{kind} query #{i} {query}: index returned {len(got)} results, oracle {len(want)}"


def _range_sweep(tree, wl: Workload, reps: int, store: FlatStore | None, name: str) -> PhaseReport:
    queries = [(lo, hi) for lo, hi, _ in wl.ranges]

    def run(stats):
        for q in queries:
            tree.range_query(q, stats)

    wall, fastest, stats = _timed_sweep(run, reps)
    verified = 0
    if store is not None:
        for i, q in enumerate(queries):
            got = tree.range_query(q)
            _, want_ids = scan_range(store, *q)
            if sorted(got.ids.tolist()) != sorted(want_ids.tolist()):
                raise VerificationError(_dump("range", i, q, got.ids, want_ids))
            verified += 1
    return _phase(name, len(queries), wall, stats, verified, fastest)


def _knn_sweep(tree, wl: Workload, reps: int, store: FlatStore | None, name: str) -> PhaseReport:
    def run(stats):
        for q in wl.knn_points:
            tree.knn(q, wl.k, stats)

    wall, fastest, stats = _timed_sweep(run, reps)
    verified = 0
    if store is not None:
        for i, q in enumerate(wl.knn_points):
            got = tree.knn(q, wl.k).dists
            want = scan_knn(store, q, wl.k)[0]
            if got != want:
                raise VerificationError(_dump("knn", i, q, got, want))
            verified += 1
    return _phase(name, len(wl.knn_points), wall, stats, verified, fastest)


def run_bench(
    coords: np.ndarray,
    ids: np.ndarray,
    wl: Workload,
    config: BuildConfig | None = None,
    verify: bool = False,
    reps: int = 3,
) -> BenchReport:
    """Build the index, run the workload and collect timings, counters and structure stats."""
    config = config or BuildConfig()
    if wl.dims != coords.shape[1]:
        raise ValueError(f"workload has {wl.dims} dimensions, data has {coords.shape[1]}")
    t0 = time.perf_counter()
    tree = build(coords, ids, config)
    build_s = time.perf_counter() - t0
    report = BenchReport(
        {
            "n": int(coords.shape[0]),
            "dims": int(coords.shape[1]),
            "workload": wl.kind,
            "leaf_capacity": config.leaf_capacity,
            "layouts": config.layouts,
            "simd": "auto" if config.simd else "scalar",
        },
        build_s,
        tree.structure_stats(),
    )
    store = FlatStore(coords, ids) if verify else None

    def sweep(suffix: str):
        if wl.ranges:
            report.phases.append(_range_sweep(tree, wl, reps, store, f"range{suffix}"))
        if wl.knn_points:
            report.phases.append(_knn_sweep(tree, wl, reps, store, f"knn{suffix}"))

    if wl.kind != "mixed":
        sweep("")
    else:
        sweep("_0")
        ins_chunks = np.array_split(np.arange(len(wl.inserts)), wl.batches)
        del_chunks = np.array_split(np.arange(len(wl.deletes)), wl.batches)
        for b in range(wl.batches):
            batch = [wl.inserts[i] for i in ins_chunks[b]]
            t0 = time.perf_counter()
            for c, pid in batch:
                tree.insert(c, pid)
            report.phases.append(_phase(f"insert_{b + 1}", len(batch), time.perf_counter() - t0))
            batch = [wl.deletes[i] for i in del_chunks[b]]
            t0 = time.perf_counter()
            for c, pid in batch:
                tree.delete(c, pid)
            report.phases.append(_phase(f"delete_{b + 1}", len(batch), time.perf_counter() - t0))
            if store is not None:
                for c, pid in (wl.inserts[i] for i in ins_chunks[b]):
                    store.append(c, pid)
                for c, pid in batch:
                    store.remove(c, pid)
            log.info("batch %d/%d applied", b + 1, wl.batches)
            sweep(f"_{b + 1}")
    report.structure_final = tree.structure_stats()
    return report


def _fmt(value):
    if isinstance(value, float):
        return float(f"{value:.6g}")
    return value


def _flatten(prefix: str, value, out: list) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    elif isinstance(value, list):
        for i, v in enumerate(value):
            key = v.get("name", str(i)) if isinstance(v, dict) else str(i)
            _flatten(f"{prefix}.{key}", {k: x for k, x in v.items() if k != "name"} if isinstance(v, dict) else v, out)
    else:
        out.append((prefix, value))


def report_emit(report: BenchReport, fmt: str = "json", path: str | Path | None = None) -> str:
    """Serialise a report with a stable key order and 6 significant digits on floats."""
    data = report.to_dict()
    if fmt == "json":
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return _fmt(v)

        text = json.dumps(clean(data), indent=2) + "\n"
    elif fmt == "csv":
        rows: list = []
        _flatten("", data, rows)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["key", "value"])
        for k, v in rows:
            writer.writerow([k, f"{v:.6g}" if isinstance(v, float) else v])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text
