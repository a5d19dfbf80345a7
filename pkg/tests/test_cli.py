import json
import math

import numpy as np
import pytest

from conftest import DATA_DIR
from reidkit import EmbeddingSet, write_embeddings
from reidkit.cli import main
from reidkit.datasets import DatasetManifest, ImageRecord, save_manifest


def write_cluster_pair(tmp_path, rng, ids=5, per_id=4, dim=8, noise=0.02, prefix=""):
    """Perfectly separated id clusters: query file + gallery file."""
    centers = rng.normal(size=(ids, dim)) * 20.0
    q_vecs, g_vecs, g_pids, g_cams = [], [], [], []
    for pid in range(ids):
        q_vecs.append(centers[pid] + rng.normal(size=dim) * noise)
        for j in range(per_id):
            g_vecs.append(centers[pid] + rng.normal(size=dim) * noise)
            g_pids.append(pid)
            g_cams.append(1 + j % 3)
    query = EmbeddingSet(np.array(q_vecs), [f"{prefix}q{i}" for i in range(ids)],
                         np.arange(ids), np.zeros(ids, int))
    gallery = EmbeddingSet(np.array(g_vecs), [f"{prefix}g{i}" for i in range(len(g_pids))],
                           g_pids, g_cams)
    qpath, gpath = tmp_path / f"{prefix}query.reid", tmp_path / f"{prefix}gallery.reid"
    write_embeddings(query, qpath)
    write_embeddings(gallery, gpath)
    return qpath, gpath


def read_report(path):
    return json.loads(path.read_text())


def strip_timestamp(text):
    data = json.loads(text)
    data.pop("timestamp")
    return json.dumps(data, sort_keys=True)


class TestEval:
    def test_perfect_fixture(self, tmp_path):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(0))
        out = tmp_path / "report.json"
        code = main(["eval", "--query", str(qpath), "--gallery", str(gpath),
                     "--out", str(out)])
        assert code == 0
        report = read_report(out)
        assert report["result"]["map"] == pytest.approx(1.0)
        assert report["result"]["cmc"]["1"] == pytest.approx(1.0)
        assert report["config"]["distance"] == "euclidean"
        assert len(report["inputs"]) == 4
        csv_text = out.with_suffix(".csv").read_text()
        assert csv_text.splitlines()[0] == "mAP,R-1,R-5,R-10,R-50"
        assert csv_text.splitlines()[1].startswith("100.0,100.0")

    def test_committed_fixture_matches_oracle_numbers(self, tmp_path):
        expected = json.loads((DATA_DIR / "eval_expected.json").read_text())
        out = tmp_path / "report.json"
        code = main([
            "eval",
            "--query", str(DATA_DIR / "eval_query.reid"),
            "--gallery", str(DATA_DIR / "eval_gallery.reid"),
            "--distance", "euclidean",
            "--out", str(out),
        ])
        assert code == 0
        result = read_report(out)["result"]
        assert result["map"] == pytest.approx(expected["map"], abs=1e-9)
        for rank, value in expected["cmc"].items():
            assert result["cmc"][rank] == pytest.approx(value, abs=1e-9)
        assert result["num_valid_queries"] == expected["num_valid_queries"]

    def test_missing_manifest_column(self, tmp_path, capsys):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(1))
        sidecar = tmp_path / "query.reid.csv"
        sidecar.write_text(sidecar.read_text().replace("person_id", "pid"))
        code = main(["eval", "--query", str(qpath), "--gallery", str(gpath)])
        assert code == 2
        assert "sidecar header" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        code = main(["eval", "--query", "/nonexistent.reid", "--gallery", "/also-missing.reid"])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_no_evaluable_queries_exit_3(self, tmp_path, capsys):
        query = EmbeddingSet(np.eye(2), ("a", "b"), [50, 51], [0, 0])
        gallery = EmbeddingSet(np.eye(2), ("c", "d"), [1, 2], [1, 1])
        qpath, gpath = tmp_path / "q.reid", tmp_path / "g.reid"
        write_embeddings(query, qpath)
        write_embeddings(gallery, gpath)
        code = main(["eval", "--query", str(qpath), "--gallery", str(gpath)])
        assert code == 3
        assert "no evaluable queries" in capsys.readouterr().err

    def test_precomputed_distance_shape_check(self, tmp_path, capsys):
        from reidkit import formats

        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(2))
        bad = tmp_path / "bad.rdmx"
        formats.write_matrix(bad, np.zeros((2, 2)))
        code = main(["eval", "--query", str(qpath), "--gallery", str(gpath),
                     "--distances", str(bad)])
        assert code == 2
        assert "does not match" in capsys.readouterr().err


class TestRerankPipeline:
    def test_lambda_one_matches_direct_eval(self, tmp_path):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(3),
                                          ids=6, per_id=4, noise=4.0)
        matrix = tmp_path / "rr.rdmx"
        code = main(["rerank", "--query", str(qpath), "--gallery", str(gpath),
                     "--method", "k-reciprocal", "--k1", "5", "--k2", "2",
                     "--lambda", "1.0", "--out", str(matrix)])
        assert code == 0
        direct, viarr = tmp_path / "direct.json", tmp_path / "viarr.json"
        assert main(["eval", "--query", str(qpath), "--gallery", str(gpath),
                     "--out", str(direct)]) == 0
        assert main(["eval", "--query", str(qpath), "--gallery", str(gpath),
                     "--distances", str(matrix), "--out", str(viarr)]) == 0
        a, b = read_report(direct)["result"], read_report(viarr)["result"]
        assert a["map"] == pytest.approx(b["map"], abs=1e-12)
        assert a["cmc"] == b["cmc"]

    def test_ecn_pipeline_composes(self, tmp_path):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(4),
                                          ids=6, per_id=4, noise=6.0)
        matrix = tmp_path / "ecn.rdmx"
        assert main(["rerank", "--query", str(qpath), "--gallery", str(gpath),
                     "--method", "ecn", "--t", "3", "--out", str(matrix)]) == 0
        report_path = tmp_path / "eval.json"
        assert main(["eval", "--query", str(qpath), "--gallery", str(gpath),
                     "--distances", str(matrix), "--out", str(report_path)]) == 0
        result = read_report(report_path)["result"]
        assert 0.0 <= result["map"] <= 1.0
        side = read_report(tmp_path / "ecn.rdmx.json")
        assert side["config"]["method"] == "ecn"
        assert side["result"]["shape"] == [6, 24]

    def test_oversize_cap_refused(self, tmp_path, capsys):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(5))
        code = main(["rerank", "--query", str(qpath), "--gallery", str(gpath),
                     "--max-points", "10", "--out", str(tmp_path / "x.rdmx")])
        assert code == 2
        err = capsys.readouterr().err
        assert "union of 25 points" in err and "10" in err


class TestScalability:
    def test_drop_columns_consistent(self, tmp_path):
        out = tmp_path / "scal.json"
        code = main([
            "scalability",
            "--query", str(DATA_DIR / "scal_query.reid"),
            "--gallery", str(DATA_DIR / "scal_gallery.reid"),
            "--pool", str(DATA_DIR / "scal_pool.reid"),
            "--steps", "0,500,2000", "--seed", "11", "--out", str(out),
        ])
        assert code == 0
        rows = read_report(out)["result"]["rows"]
        assert [r["n"] for r in rows] == [0, 500, 2000]
        assert rows[0]["map_drop_pct"] == 0.0
        base = rows[0]
        from reidkit.metrics import relative_drop

        for row in rows:
            assert row["map_drop_pct"] == relative_drop(base["map"], row["map"])
            assert row["r1_drop_pct"] == relative_drop(base["r1"], row["r1"])
        csv_lines = out.with_suffix(".csv").read_text().splitlines()
        assert csv_lines[0] == "n,map,r1,map_drop_pct,r1_drop_pct"
        assert len(csv_lines) == 4

    def test_monotone_decay_matches_recorded_values(self, tmp_path):
        expected = json.loads((DATA_DIR / "scal_expected.json").read_text())
        out = tmp_path / "scal.json"
        code = main([
            "scalability",
            "--query", str(DATA_DIR / "scal_query.reid"),
            "--gallery", str(DATA_DIR / "scal_gallery.reid"),
            "--pool", str(DATA_DIR / "scal_pool.reid"),
            "--steps", ",".join(str(s) for s in expected["steps"]),
            "--seed", str(expected["seed"]),
            "--backend", "numpy",
            "--out", str(out),
        ])
        assert code == 0
        rows = read_report(out)["result"]["rows"]
        maps = [row["map"] for row in rows]
        assert all(a >= b for a, b in zip(maps, maps[1:]))
        for row, want in zip(rows, expected["rows"]):
            assert row["n"] == want["n"]
            assert row["map"] == pytest.approx(want["map"], abs=1e-9)
            assert row["r1"] == pytest.approx(want["r1"], abs=1e-9)

    def test_steps_zero_only(self, tmp_path):
        out = tmp_path / "one.json"
        code = main([
            "scalability",
            "--query", str(DATA_DIR / "scal_query.reid"),
            "--gallery", str(DATA_DIR / "scal_gallery.reid"),
            "--pool", str(DATA_DIR / "scal_pool.reid"),
            "--steps", "0", "--seed", "1", "--out", str(out),
        ])
        assert code == 0
        rows = read_report(out)["result"]["rows"]
        assert rows[0]["map_drop_pct"] == 0.0 and rows[0]["r1_drop_pct"] == 0.0

    def test_pool_must_be_junk(self, tmp_path, capsys):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(6))
        code = main(["scalability", "--query", str(qpath), "--gallery", str(gpath),
                     "--pool", str(gpath), "--steps", "0,1", "--seed", "0"])
        assert code == 2
        assert "person_id -1" in capsys.readouterr().err


def synthetic_tracklet_manifest(tmp_path, rng, ids):
    records = []
    counter = 0
    for pid in ids:
        for cam in range(2):
            for t in range(2):
                records.append(ImageRecord(
                    image_id=f"m{counter:05d}", person_id=pid, camera_id=cam,
                    split="test", tracklet_id=f"t{pid}c{cam}n{t}",
                ))
                counter += 1
    path = tmp_path / "tracklets.csv"
    save_manifest(DatasetManifest("tracklets", tuple(records)), path)
    return path


def reference_manifest(tmp_path, train_ids, test_ids):
    records = [
        ImageRecord(image_id=f"ref{pid}", person_id=pid, camera_id=0, split="train")
        for pid in train_ids
    ] + [
        ImageRecord(image_id=f"ref{pid}", person_id=pid, camera_id=0, split="test")
        for pid in test_ids
    ]
    path = tmp_path / "reference.csv"
    save_manifest(DatasetManifest("reference", tuple(records)), path)
    return path


class TestSplitAndOverlap:
    def test_xmars_split_invariants(self, tmp_path):
        rng = np.random.default_rng(7)
        source = synthetic_tracklet_manifest(tmp_path, rng, list(range(30)))
        reference = reference_manifest(tmp_path, range(0, 15), range(15, 30))
        out = tmp_path / "split.json"
        code = main(["xmars-split", "--source", str(source),
                     "--reference", str(reference), "--seed", "3", "--out", str(out)])
        assert code == 0
        spec = read_report(out)["result"]
        assert not set(spec["train_ids"]) & set(spec["test_ids"])
        assert set(spec["query_tracklets"]) <= set(spec["test_tracklets"])
        assert spec["seed"] == 3

    def test_orphan_exit_code(self, tmp_path, capsys):
        rng = np.random.default_rng(8)
        source = synthetic_tracklet_manifest(tmp_path, rng, [1, 2, 99])
        reference = reference_manifest(tmp_path, [1], [2])
        code = main(["xmars-split", "--source", str(source),
                     "--reference", str(reference), "--seed", "0"])
        assert code == 2
        assert "99" in capsys.readouterr().err

    def test_overlap_matrix(self, tmp_path):
        a = reference_manifest(tmp_path, [1, 2, 3], [4, 5])
        b_records = [
            ImageRecord(image_id=f"btr{pid}", person_id=pid, camera_id=0, split="train")
            for pid in (2, 3)
        ] + [
            ImageRecord(image_id=f"bte{pid}", person_id=pid, camera_id=0, split="test")
            for pid in (3, 4)
        ]
        b = tmp_path / "b.csv"
        save_manifest(DatasetManifest("b", tuple(b_records)), b)
        out = tmp_path / "overlap.json"
        code = main(["overlap", "--a", str(a), "--b", str(b), "--out", str(out)])
        assert code == 0
        result = read_report(out)["result"]
        assert result["matrix"] == [[2, 1], [0, 1]]


class TestSweep:
    def test_four_targets_monotone(self, tmp_path):
        meta = json.loads((DATA_DIR / "sweep_meta.json").read_text())
        out = tmp_path / "sweep.json"
        code = main(["sweep", "--manifest", str(DATA_DIR / "sweep_detections.csv"),
                     "--num-frames", str(meta["num_frames"]),
                     "--targets", "3,5,10,20", "--out", str(out)])
        assert code == 0
        points = read_report(out)["result"]["points"]
        assert len(points) == 4
        thresholds = [p["threshold"] for p in points]
        assert all(a >= b for a, b in zip(thresholds, thresholds[1:]))
        for point in points:
            manifest_path = tmp_path / json.loads(json.dumps(point))["manifest"].split("/")[-1]
            assert (tmp_path / manifest_path.name).exists()
            assert abs(point["achieved_average"] - point["target"]) <= 1.0 / meta["num_frames"]

    def test_unreachable_target_exit_3(self, tmp_path, capsys):
        code = main(["sweep", "--manifest", str(DATA_DIR / "sweep_detections.csv"),
                     "--num-frames", "1", "--targets", "99999"])
        assert code == 3
        assert "unreachable" in capsys.readouterr().err


class TestFusionCommands:
    def test_gradcheck_report(self, tmp_path):
        out = tmp_path / "grad.json"
        code = main(["gradcheck", "--seed", "5", "--instances", "20", "--out", str(out)])
        assert code == 0
        result = read_report(out)["result"]
        assert result["max_rel_error"] < 1e-4
        assert result["instances"] == 20
        assert result["step"] == 1e-5

    def test_fuse_demo(self, tmp_path, capsys):
        code = main(["fuse-demo", "--seed", "2", "--logits", "1.5,0.0,-0.5"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        weights = report["result"]["weights"]
        assert len(weights) == 3
        assert sum(weights) == pytest.approx(1.0, abs=1e-9)
        assert report["result"]["gradient_check"]["max_rel_error"] < 1e-4

    def test_fuse_demo_from_tensor_file(self, tmp_path):
        from reidkit import formats

        stack_path = tmp_path / "stack.rten"
        formats.write_tensor(stack_path, np.random.default_rng(3).normal(size=(3, 2, 4, 4)))
        out = tmp_path / "demo.json"
        code = main(["fuse-demo", "--stack", str(stack_path), "--seed", "9",
                     "--out", str(out)])
        assert code == 0
        result = read_report(out)["result"]
        assert len(result["map_norms"]) == 3
        assert result["fused_norm"] > 0


class TestDeterminism:
    def run_twice(self, argv, out_a, out_b):
        assert main(argv + ["--out", str(out_a)]) == 0
        assert main(argv + ["--out", str(out_b)]) == 0
        assert strip_timestamp(out_a.read_text()) == strip_timestamp(out_b.read_text())

    def test_eval_reports_identical(self, tmp_path):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(9))
        self.run_twice(
            ["eval", "--query", str(qpath), "--gallery", str(gpath)],
            tmp_path / "a.json", tmp_path / "b.json",
        )
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_rerank_outputs_identical(self, tmp_path):
        qpath, gpath = write_cluster_pair(tmp_path, np.random.default_rng(10), noise=5.0)
        out = tmp_path / "a.rdmx"
        argv = ["rerank", "--query", str(qpath), "--gallery", str(gpath),
                "--k1", "5", "--k2", "2", "--out", str(out)]
        assert main(argv) == 0
        first_matrix = out.read_bytes()
        first_report = strip_timestamp((tmp_path / "a.rdmx.json").read_text())
        assert main(argv) == 0
        assert out.read_bytes() == first_matrix
        assert strip_timestamp((tmp_path / "a.rdmx.json").read_text()) == first_report
