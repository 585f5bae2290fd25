import csv
import subprocess
import sys

import numpy as np
import pytest

from ppcr import cli
from ppcr.geometry import RigidTransform, apply
from ppcr.io_formats import read_trace, read_transform, write_cloud, write_transform
from ppcr.metrics import aggregate, resolution
from ppcr.synthetic import random_cube, random_motion


@pytest.fixture
def pair(tmp_path):
    src = random_cube(600, 0)
    truth = random_motion(8.0, 0.04, 0)
    write_cloud(tmp_path / "src.ply", src)
    write_cloud(tmp_path / "tgt.xyz", apply(truth, src))
    write_transform(tmp_path / "gt.txt", truth)
    return tmp_path, src, truth


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_register_self(tmp_path, capsys):
    pts = random_cube(500, 1)
    write_cloud(tmp_path / "a.xyz", pts)
    out = tmp_path / "t.txt"
    code = cli.main(["register", str(tmp_path / "a.xyz"), str(tmp_path / "a.xyz"), "-o", str(out)])
    assert code == cli.EXIT_OK
    # ten near-uniformly weighted candidates bias small clouds by ~0.1 resolution
    drift = np.linalg.norm(apply(read_transform(out), pts) - pts, axis=1).mean()
    assert drift < 0.25 * resolution(pts)
    text = capsys.readouterr().out
    assert "termination: converged" in text
    assert "iterations:" in text and "final cost:" in text


def test_register_missing_target(tmp_path):
    write_cloud(tmp_path / "a.xyz", random_cube(10, 2))
    code = cli.main(["register", str(tmp_path / "a.xyz"), str(tmp_path / "missing.xyz")])
    assert code == cli.EXIT_INPUT


def test_register_malformed_cloud(tmp_path, capsys):
    (tmp_path / "bad.xyz").write_text("1 2 3\n4 five 6\n")
    code = cli.main(["register", str(tmp_path / "bad.xyz"), str(tmp_path / "bad.xyz")])
    assert code == cli.EXIT_INPUT
    assert "bad.xyz:2" in capsys.readouterr().err


def test_register_no_overlap(tmp_path):
    pts = random_cube(50, 3)
    write_cloud(tmp_path / "a.xyz", pts)
    write_transform(tmp_path / "far.txt", RigidTransform.from_translation([50, 0, 0]))
    code = cli.main(["register", str(tmp_path / "a.xyz"), str(tmp_path / "a.xyz"),
                     "--initial-guess", str(tmp_path / "far.txt"), "--max-dist", "0.5"])
    assert code == cli.EXIT_NO_OVERLAP


def test_register_bad_parameter(tmp_path):
    write_cloud(tmp_path / "a.xyz", random_cube(50, 3))
    code = cli.main(["register", str(tmp_path / "a.xyz"), str(tmp_path / "a.xyz"), "--threshold", "2"])
    assert code == cli.EXIT_USAGE


def test_register_with_ground_truth(pair):
    d, src, truth = pair
    code = cli.main(["register", str(d / "src.ply"), str(d / "tgt.xyz"), "--ground-truth", str(d / "gt.txt"),
                     "-o", str(d / "out.txt"), "--trace", str(d / "trace.csv")])
    assert code == cli.EXIT_OK
    rows = read_trace(d / "trace.csv")
    assert rows and all(r["mse_gt"] is not None for r in rows)
    assert rows[-1]["mse_gt"] < 1e-4


def test_register_flags_reach_config(pair):
    d, _, _ = pair
    code = cli.main(["register", str(d / "src.ply"), str(d / "tgt.xyz"), "--criterion", "fixed", "--cap", "3",
                     "--weight-model", "gaussian", "-k", "4", "--max-dist", "0.2", "--trace", str(d / "t.csv"),
                     "-o", str(d / "o.txt")])
    assert code == cli.EXIT_OK
    assert len(read_trace(d / "t.csv")) == 3


def test_register_deterministic(pair):
    d, _, _ = pair
    outputs = []
    for run in range(2):
        cli.main(["register", str(d / "src.ply"), str(d / "tgt.xyz"), "--ground-truth", str(d / "gt.txt"),
                  "-o", str(d / f"o{run}.txt"), "--trace", str(d / f"t{run}.csv")])
        outputs.append(((d / f"o{run}.txt").read_bytes(), (d / f"t{run}.csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_compare_criteria(pair):
    d, _, _ = pair
    out = d / "cmp.csv"
    code = cli.main(["compare-criteria", str(d / "src.ply"), str(d / "tgt.xyz"),
                     "--ground-truth", str(d / "gt.txt"), "-o", str(out)])
    assert code == cli.EXIT_OK
    rows = read_csv(out)
    assert [r["criterion"] for r in rows] == ["fixed-100", "cost-drop"]
    fixed, cd = rows
    assert int(fixed["iterations"]) == 100
    assert int(cd["iterations"]) < int(fixed["iterations"])


def test_compare_criteria_aligned(tmp_path):
    pts = random_cube(400, 4)
    write_cloud(tmp_path / "a.xyz", pts)
    write_transform(tmp_path / "gt.txt", RigidTransform.identity())
    out = tmp_path / "cmp.csv"
    assert cli.main(["compare-criteria", str(tmp_path / "a.xyz"), str(tmp_path / "a.xyz"),
                     "--ground-truth", str(tmp_path / "gt.txt"), "-o", str(out)]) == 0
    for r in read_csv(out):
        assert float(r["mse_gt"]) < (0.25 * resolution(pts)) ** 2


def test_compare_criteria_requires_ground_truth(pair):
    d, _, _ = pair
    with pytest.raises(SystemExit) as e:
        cli.main(["compare-criteria", str(d / "src.ply"), str(d / "tgt.xyz")])
    assert e.value.code == cli.EXIT_USAGE


def _write_problems(d, n, size=300):
    lines = ["# source target ground_truth"]
    for i in range(n):
        src = random_cube(size, 100 + i)
        truth = random_motion(5.0, 0.03, 100 + i)
        write_cloud(d / f"s{i}.xyz", src)
        write_cloud(d / f"t{i}.xyz", apply(truth, src))
        write_transform(d / f"g{i}.txt", truth)
        lines.append(f"s{i}.xyz t{i}.xyz g{i}.txt")
    return lines


def test_batch_single(tmp_path):
    (tmp_path / "m.txt").write_text("\n".join(_write_problems(tmp_path, 1)) + "\n")
    code = cli.main(["batch", str(tmp_path / "m.txt"), "--out-dir", str(tmp_path / "out")])
    assert code == cli.EXIT_OK
    summary = read_csv(tmp_path / "out" / "summary.csv")
    assert len(summary) == 1 and summary[0]["count"] == "1"
    assert (tmp_path / "out" / "problem_0000.transform.txt").exists()
    assert (tmp_path / "out" / "problem_0000.trace.csv").exists()


def test_batch_failed_row(tmp_path):
    lines = _write_problems(tmp_path, 2)
    lines.append("s0.xyz nonexistent.xyz g0.txt")
    (tmp_path / "m.txt").write_text("\n".join(lines) + "\n")
    assert cli.main(["batch", str(tmp_path / "m.txt"), "--out-dir", str(tmp_path / "out")]) == cli.EXIT_OK
    rows = read_csv(tmp_path / "out" / "results.csv")
    assert [r["status"] for r in rows] == ["ok", "ok", "failed"]
    assert read_csv(tmp_path / "out" / "summary.csv")[0]["count"] == "2"


def test_batch_all_failed(tmp_path):
    (tmp_path / "m.txt").write_text("a.xyz b.xyz c.txt\n")
    assert cli.main(["batch", str(tmp_path / "m.txt"), "--out-dir", str(tmp_path / "out")]) == cli.EXIT_ALL_FAILED


def test_batch_bad_manifest(tmp_path):
    (tmp_path / "m.txt").write_text("only two\n")
    assert cli.main(["batch", str(tmp_path / "m.txt"), "--out-dir", str(tmp_path / "out")]) == cli.EXIT_INPUT


def test_batch_summary_matches_aggregate(tmp_path):
    (tmp_path / "m.txt").write_text("\n".join(_write_problems(tmp_path, 20, size=200)) + "\n")
    assert cli.main(["batch", str(tmp_path / "m.txt"), "--out-dir", str(tmp_path / "out"), "-j", "2"]) == 0
    rows = read_csv(tmp_path / "out" / "results.csv")
    assert len(rows) == 20 and all(r["status"] == "ok" for r in rows)
    expected = aggregate([float(r["mse_gt"]) for r in rows], [int(r["iterations"]) for r in rows])
    got = read_csv(tmp_path / "out" / "summary.csv")[0]
    assert float(got["median"]) == pytest.approx(expected.median, rel=1e-8)
    assert float(got["q75"]) == pytest.approx(expected.q75, rel=1e-8)
    assert float(got["q95"]) == pytest.approx(expected.q95, rel=1e-8)
    assert float(got["mean_iterations"]) == pytest.approx(expected.mean_iterations, rel=1e-8)


def test_module_entry_point(tmp_path):
    pts = random_cube(100, 5)
    write_cloud(tmp_path / "a.xyz", pts)
    proc = subprocess.run([sys.executable, "-m", "ppcr", "register", str(tmp_path / "a.xyz"),
                           str(tmp_path / "a.xyz"), "-k", "1"], capture_output=True, text=True)
    assert proc.returncode == 0
    m = np.array([[float(v) for v in line.split()] for line in proc.stdout.splitlines()[:4]])
    np.testing.assert_allclose(m, np.eye(4), atol=1e-9)
