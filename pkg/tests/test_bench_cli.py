from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from skdtree import bench
from skdtree.bench import (
    BenchReport,
    BoxCalibrator,
    VerificationError,
    Workload,
    calibrate_box,
    gen_dataset,
    gen_range_workload,
    gen_workload,
    read_workload,
    report_emit,
    run_bench,
    write_workload,
)
from skdtree.cli import main
from skdtree.model import MAXVAL, read_dataset, write_dataset
from skdtree.oracle import FlatStore, scan_count


@pytest.fixture(scope="module")
def uniform_1e5():
    return gen_dataset("uniform", 100_000, 2, seed=3)


# --- datasets --------------------------------------------------------------


def test_same_seed_gives_byte_identical_files(tmp_path):
    for name in ("a.bin", "b.bin"):
        write_dataset(tmp_path / name, *gen_dataset("uniform", 1000, 2, seed=7))
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    other = gen_dataset("uniform", 1000, 2, seed=8)[0]
    assert not np.array_equal(other, read_dataset(tmp_path / "a.bin")[0])


def test_gaussian_samples_stay_in_domain():
    for bits in (16, 64):
        coords, _ = gen_dataset("gaussian", 50_000, 3, seed=1, bits=bits)
        assert int(coords.max()) <= min((1 << bits) - 1, MAXVAL - 1)


def test_uniform_mean_is_near_domain_midpoint():
    n = 1_000_000
    coords, _ = gen_dataset("uniform", n, 2, seed=11)
    mid = (MAXVAL - 1) / 2
    # standard error of the mean is domain / sqrt(12 n); 2% is far beyond 3 of those
    assert 3 * (MAXVAL / np.sqrt(12 * n)) < 0.02 * mid
    for d in range(2):
        mean = coords[:, d].astype(np.float64).mean()
        assert abs(mean - mid) <= 0.02 * mid


def test_duplicate_kind_has_few_distinct_values():
    coords, _ = gen_dataset("duplicate", 10_000, 2, seed=2)
    assert all(np.unique(coords[:, d]).size <= 32 for d in range(2))


def test_dataset_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_dataset("uniform", 0, 2)
    with pytest.raises(ValueError):
        gen_dataset("zipf", 10, 2)
    with pytest.raises(ValueError):
        gen_dataset("uniform", 10, 2, bits=65)


# --- workloads -------------------------------------------------------------


def test_selectivity_calibration_hits_target(uniform_1e5):
    coords, _ = uniform_1e5
    store = FlatStore(coords)
    boxes = gen_range_workload(coords, 200, 1e-4, seed=4)
    for lo, hi, achieved in boxes:
        count = scan_count(store, lo, hi)
        assert count == achieved
        assert 9 <= count <= 11


@pytest.mark.parametrize("kind", ["uniform", "gaussian", "duplicate"])
@pytest.mark.parametrize("dims", [1, 3])
def test_slab_calibration_matches_full_scan(kind, dims):
    coords, _ = gen_dataset(kind, 20_000, dims, seed=6)
    calibrate = BoxCalibrator(coords, sample=256)
    rng = np.random.default_rng(6)
    for target in (1, 7, 200, 19_999):
        for i in rng.integers(0, 20_000, size=10):
            assert calibrate(coords[i], target) == calibrate_box(coords, coords[i], target)


def test_full_selectivity_gives_whole_domain_boxes(uniform_1e5):
    coords, _ = uniform_1e5
    lo, hi, achieved = gen_range_workload(coords, 3, 1.0, seed=1)[0]
    assert lo == (0, 0) and hi == (MAXVAL, MAXVAL) and achieved == coords.shape[0]


def test_unreachable_selectivity_records_achieved_count():
    coords = np.full((100, 2), 5, dtype=np.uint64)
    lo, hi, achieved = calibrate_box(coords, coords[0], 10)
    assert achieved == 100 and lo == hi == (5, 5)


def test_same_seed_gives_identical_workload_file(tmp_path, uniform_1e5):
    coords, ids = uniform_1e5
    for name in ("a.skw", "b.skw"):
        write_workload(tmp_path / name, gen_workload(coords[:5000], ids[:5000], "mixed", count=50, insert_frac=0.1, delete_frac=0.05, seed=9))
    assert (tmp_path / "a.skw").read_bytes() == (tmp_path / "b.skw").read_bytes()


def test_workload_file_round_trip(tmp_path, uniform_1e5):
    coords, ids = uniform_1e5
    wl = gen_workload(coords[:5000], ids[:5000], "mixed", count=20, k=7, insert_frac=0.3, delete_frac=0.06, seed=2)
    write_workload(tmp_path / "w.skw", wl)
    back = read_workload(tmp_path / "w.skw")
    assert back == wl
    assert len(back.inserts) == 1500 and len(back.deletes) == 300
    assert min(pid for _, pid in back.inserts) == 5000
    raw = (tmp_path / "w.skw").read_bytes()
    (tmp_path / "w.skw").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_workload(tmp_path / "w.skw")


def test_workload_validation():
    with pytest.raises(ValueError):
        Workload("range", 2, batches=0)
    with pytest.raises(ValueError):
        Workload("mixed", 2, insert_frac=1.5)
    with pytest.raises(ValueError):
        Workload("scan", 2)


# --- benchmark runs --------------------------------------------------------


@pytest.fixture(scope="module")
def mixed_report():
    coords, ids = gen_dataset("uniform", 20_000, 2, seed=5)
    wl = gen_workload(coords, ids, "mixed", count=100, k=5, insert_frac=0.3, delete_frac=0.06, batches=5, seed=5)
    return run_bench(coords, ids, wl, verify=True, reps=1)


def test_mixed_run_reports_every_batch(mixed_report):
    names = [p.name for p in mixed_report.phases]
    assert names[:2] == ["range_0", "knn_0"]
    for b in range(1, 6):
        for prefix in ("insert", "delete", "range", "knn"):
            assert f"{prefix}_{b}" in names
    assert sum(mixed_report.phase(f"insert_{b}").ops for b in range(1, 6)) == 6000
    assert sum(mixed_report.phase(f"delete_{b}").ops for b in range(1, 6)) == 1200
    assert mixed_report.structure_final["points"] == 20_000 + 6000 - 1200


def test_verified_run_has_zero_mismatches(mixed_report):
    sweeps = [p for p in mixed_report.phases if p.name.startswith(("range", "knn"))]
    assert sweeps and all(p.verified == p.ops == 100 for p in sweeps)


def test_verification_mismatch_aborts(monkeypatch):
    coords, ids = gen_dataset("uniform", 2000, 2, seed=1)
    wl = gen_workload(coords, ids, "range", count=10, selectivity=0.01, seed=1)
    empty = (np.empty((0, 2), dtype=np.uint64), np.empty(0, dtype=np.uint64))
    monkeypatch.setattr(bench, "scan_range", lambda store, lo, hi: empty)
    with pytest.raises(VerificationError, match="range query #0"):
        run_bench(coords, ids, wl, verify=True, reps=1)


def test_uniform_build_average_capacity(uniform_1e5):
    coords, ids = uniform_1e5
    wl = gen_workload(coords, ids, "knn", count=10, seed=1)
    report = run_bench(coords, ids, wl, reps=1)
    assert 64 <= report.structure["avg_leaf_capacity"] <= 128


def test_dimension_mismatch_is_rejected(uniform_1e5):
    coords, ids = uniform_1e5
    with pytest.raises(ValueError):
        run_bench(coords, ids, Workload("range", 3))


# --- reports ---------------------------------------------------------------


def test_csv_is_byte_identical_and_stable(mixed_report):
    a, b = report_emit(mixed_report, "csv"), report_emit(mixed_report, "csv")
    assert a == b
    rows = list(csv.reader(io.StringIO(a)))
    assert rows[0] == ["key", "value"]
    keys = [r[0] for r in rows[1:]]
    assert "phases.range_0.qps" in keys and "structure.avg_leaf_capacity" in keys
    for key, value in rows[1:]:
        if key.endswith("wall_s"):
            assert len(value.replace(".", "").replace("-", "").split("e")[0].lstrip("0")) <= 6


def test_json_round_trips(mixed_report, tmp_path):
    text = report_emit(mixed_report, "json", tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data == json.loads(text)
    assert list(data) == ["config", "build_s", "structure", "phases", "structure_final"]
    assert data["phases"][0]["name"] == "range_0"


def test_leaf_type_percentages_sum_to_100(mixed_report):
    for s in (mixed_report.structure, mixed_report.structure_final):
        assert abs(s["light_pct"] + s["heavy_pct"] + s["outlier_pct"] - 100) <= 0.01


def test_unknown_report_format():
    with pytest.raises(ValueError):
        report_emit(BenchReport({}, 0.0, {}), "xml")


# --- command line ----------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    data, wl, out = tmp_path / "d.bin", tmp_path / "w.skw", tmp_path / "r.json"
    assert main(["gen-data", "--n", "3000", "--dims", "2", "--dist", "gaussian", "--seed", "4", "--out", str(data)]) == 0
    assert read_dataset(data)[0].shape == (3000, 2)
    assert main(["gen-workload", "--data", str(data), "--kind", "mixed", "--count", "20", "--insert-frac", "0.3",
                 "--delete-frac", "0.06", "--out", str(wl)]) == 0
    assert main(["build", "--data", str(data), "--leaf-capacity", "32", "--layouts", "n64-only", "--format", "csv"]) == 0
    build_csv = capsys.readouterr().out
    assert "structure.layout_n16,0" in build_csv and "structure.layout_n32,0" in build_csv
    assert main(["bench", "--data", str(data), "--workload", str(wl), "--simd", "scalar", "--reps", "1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["config"]["simd"] == "scalar"
    assert main(["verify", "--data", str(data), "--workload", str(wl)]) == 0
    assert "match the oracle" in capsys.readouterr().err


def test_cli_reads_csv_data(tmp_path, capsys):
    path = tmp_path / "d.csv"
    path.write_text("".join(f"{i % 17},{i * 3 % 101}\n" for i in range(500)))
    assert main(["build", "--data", str(path), "--leaf-capacity", "16"]) == 0
    assert json.loads(capsys.readouterr().out)["structure"]["points"] == 500


def test_cli_reports_bad_input(tmp_path, capsys):
    (tmp_path / "junk.bin").write_bytes(b"nope")
    assert main(["build", "--data", str(tmp_path / "junk.bin")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["gen-data", "--n", "5"])


def test_cli_verify_failure_exit_code(tmp_path, monkeypatch, capsys):
    data, wl = tmp_path / "d.bin", tmp_path / "w.skw"
    main(["gen-data", "--n", "500", "--dims", "2", "--out", str(data)])
    main(["gen-workload", "--data", str(data), "--count", "5", "--selectivity", "0.1", "--out", str(wl)])
    monkeypatch.setattr(bench, "scan_range", lambda store, lo, hi: (None, np.empty(0, dtype=np.uint64)))
    assert main(["verify", "--data", str(data), "--workload", str(wl)]) == 1
    assert "verification failed" in capsys.readouterr().err
