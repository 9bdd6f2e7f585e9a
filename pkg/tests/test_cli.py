import random
from pathlib import Path

import pytest

from concealer.cli import EXIT_AUTH, EXIT_INTEGRITY, EXIT_OK, EXIT_USAGE, main
from concealer.workload import read_rows, write_rows

from helpers import MASTER, T1_ROWS, tamper_bitflip


@pytest.fixture
def table1_dirs(tmp_path):
    data = tmp_path / "epoch.tsv"
    write_rows(data, T1_ROWS)
    store = tmp_path / "store"
    key = tmp_path / "master.key"
    key.write_bytes(MASTER.bytes)
    return data, store, key


def _ingest(data, store, key, fake_mode="binpack"):
    return main([
        "ingest", "--data", str(data), "--store", str(store),
        "--grid", "2,2,3", "--epoch-secs", "600", "--seed", "4",
        "--fake-mode", fake_mode, "--epoch-start", "0",
        "--key-file", str(key),
    ])


def test_gen_data_deterministic(tmp_path, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    args = ["gen-data", "--rows", "120", "--epochs", "2", "--epoch-secs", "900",
            "--locations", "6", "--observations", "9", "--seed", "5"]
    assert main(args + ["--out", str(out_a)]) == EXIT_OK
    assert main(args + ["--out", str(out_b)]) == EXIT_OK
    for name in ("epoch_0.tsv", "epoch_900.tsv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    rows = read_rows(out_a / "epoch_0.tsv")
    assert len(rows) == 60
    assert all(0 <= r.time < 900 for r in rows)


def test_gen_data_zipf_skew(tmp_path):
    out = tmp_path / "z"
    assert main(["gen-data", "--out", str(out), "--rows", "3000", "--epoch-secs", "4000",
                 "--locations", "100", "--zipf", "1.2", "--seed", "8"]) == EXIT_OK
    rows = read_rows(out / "epoch_0.tsv")
    counts = {}
    for r in rows:
        counts[r.location] = counts.get(r.location, 0) + 1
    assert max(counts.values()) / min(counts.values()) > 5


def test_ingest_report(table1_dirs, capsys):
    data, store, key = table1_dirs
    assert _ingest(data, store, key) == EXIT_OK
    out = capsys.readouterr().out
    assert "n_real=6" in out
    assert "n_fake=2" in out
    assert "bins=2" in out
    assert "bin_size=4" in out
    assert "bounds_certificate bins_ok=True fakes_ok=True" in out


def test_ingest_empty_file_fails(tmp_path):
    data = tmp_path / "empty.tsv"
    data.write_text("")
    rc = main(["ingest", "--data", str(data), "--store", str(tmp_path / "s"),
               "--grid", "2,2,3", "--epoch-secs", "600"])
    assert rc not in (EXIT_OK,)


def test_query_worked_example(table1_dirs, capsys):
    data, store, key = table1_dirs
    _ingest(data, store, key)
    capsys.readouterr()
    rc = main(["query", "--store", str(store), "--qa", "count", "--loc", "l2",
               "--t0", "390", "--t1", "390", "--verify", "on", "--key-file", str(key)])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    assert "count=1 rows_fetched=4 verified=true" in out


def test_query_tampered_store_exits_integrity(table1_dirs, capsys):
    data, store, key = table1_dirs
    _ingest(data, store, key)
    from concealer.store import Store

    tamper_bitflip(Store(store), MASTER, 0, random.Random(1))
    # The flipped row sits in one of the two bins; verified queries over
    # both bins must surface exactly one integrity failure.
    codes = []
    for loc, t in (("l1", "30"), ("l2", "390")):
        codes.append(main(["query", "--store", str(store), "--qa", "count", "--loc", loc,
                           "--t0", t, "--t1", t, "--verify", "on", "--key-file", str(key)]))
    assert sorted(codes) == [EXIT_OK, EXIT_INTEGRITY]


def test_query_unknown_user_exits_auth(table1_dirs):
    data, store, key = table1_dirs
    _ingest(data, store, key)
    rc = main(["query", "--store", str(store), "--qa", "count", "--loc", "l1",
               "--t0", "30", "--t1", "30", "--user", "ghost", "--key-file", str(key)])
    assert rc == EXIT_AUTH


def test_query_foreign_observation_exits_auth(table1_dirs):
    data, store, key = table1_dirs
    _ingest(data, store, key)
    rc = main(["query", "--store", str(store), "--qa", "count", "--obs", "o2",
               "--t0", "0", "--t1", "599", "--user", "o3", "--key-file", str(key)])
    assert rc == EXIT_AUTH


def test_usage_error_exit_code():
    assert main(["query", "--store", "/nope"]) == EXIT_USAGE
    assert main(["bench", "--suite", "warp"]) == EXIT_USAGE


def test_query_methods_agree(table1_dirs, capsys):
    data, store, key = table1_dirs
    _ingest(data, store, key, fake_mode="equal")
    for extra in (["--method", "bpb"], ["--method", "ebpb"],
                  ["--method", "winsec", "--interval", "2"]):
        capsys.readouterr()
        rc = main(["query", "--store", str(store), "--qa", "count", "--loc", "l1",
                   "--t0", "0", "--t1", "250", "--key-file", str(key)] + extra)
        assert rc == EXIT_OK
        assert "count=3 " in capsys.readouterr().out  # t1=30, t2=90, t4=210


def test_leakcheck_passes_on_honest_store(table1_dirs, capsys):
    data, store, key = table1_dirs
    _ingest(data, store, key, fake_mode="equal")
    capsys.readouterr()
    rc = main(["leakcheck", "--store", str(store), "--epoch", "0",
               "--data", str(data), "--interval", "1", "--key-file", str(key)])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    assert "PASS point-volume constant" in out
    assert "PASS winsec" in out


def test_bench_csv_schema(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    rc = main(["bench", "--suite", "cells", "--csv", str(csv_path), "--seed", "3"])
    assert rc == EXIT_OK
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "suite,case,metric,value"
    # Fetch size is nonincreasing as the id count grows.
    fetched = [int(l.split(",")[-1]) for l in lines[1:] if ",rows_fetched," in l]
    assert fetched == sorted(fetched, reverse=True)


def test_bench_point_includes_full_scan_baseline(capsys):
    rc = main(["bench", "--suite", "point", "--seed", "3"])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    bin_fetch = [l for l in out.splitlines() if l.startswith("point") and "bpb" in l and "rows_fetched" in l]
    scan_fetch = [l for l in out.splitlines() if "full_scan" in l and "rows_fetched" in l]
    assert bin_fetch and scan_fetch
    assert int(scan_fetch[0].split()[-1]) > int(bin_fetch[0].split()[-1])
