import numpy as np
import pytest

import oracles
from reidkit import (
    EvalProtocolConfig,
    average_precision,
    build_valid_mask,
    evaluate,
    rank_gallery,
    relative_drop,
)
from reidkit.errors import ComputationError, ValidationError
from reidkit.metrics import EvalReport, round_half_away


def random_instance(rng, nq=None, ng=None):
    nq = nq or int(rng.integers(1, 31))
    ng = ng or int(rng.integers(5, 101))
    return {
        "dist": rng.random((nq, ng)),
        "q_pids": rng.integers(0, 8, size=nq),
        "q_cams": rng.integers(0, 4, size=nq),
        "g_pids": rng.integers(-1, 8, size=ng),
        "g_cams": rng.integers(0, 4, size=ng),
    }


class TestValidMask:
    def test_definition_case(self):
        mask = build_valid_mask(5, 1, np.array([5, 5, 7]), np.array([1, 2, 1]))
        assert mask.tolist() == [False, True, True]

    def test_distractors_stay_valid(self):
        mask = build_valid_mask(5, 1, np.full(4, -1), np.array([0, 1, 2, 3]))
        assert mask.all()

    def test_cross_camera_off(self):
        config = EvalProtocolConfig(cross_camera=False)
        mask = build_valid_mask(5, 1, np.array([5, 5]), np.array([1, 2]), config)
        assert mask.tolist() == [True, True]

    def test_matches_predicate_oracle(self):
        rng = np.random.default_rng(10)
        g_pids = rng.integers(-1, 20, size=1000)
        g_cams = rng.integers(0, 6, size=1000)
        for q_pid, q_cam in [(3, 2), (-1, 0), (19, 5)]:
            got = build_valid_mask(q_pid, q_cam, g_pids, g_cams)
            want = oracles.valid_mask(q_pid, q_cam, g_pids.tolist(), g_cams.tolist())
            assert got.tolist() == want


class TestRankGallery:
    def test_sorting(self):
        order = rank_gallery(np.array([0.3, 0.1, 0.2]), np.ones(3, dtype=bool))
        assert order.tolist() == [1, 2, 0]

    def test_masking(self):
        order = rank_gallery(np.array([0.3, 0.1, 0.2]), np.array([True, False, True]))
        assert order.tolist() == [2, 0]

    def test_tie_break_by_index(self):
        order = rank_gallery(np.array([0.5, 0.5]), np.ones(2, dtype=bool))
        assert order.tolist() == [0, 1]

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError, match="non-finite"):
            rank_gallery(np.array([0.1, np.nan]), np.ones(2, dtype=bool))


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([1, 1]) == pytest.approx(1.0)

    def test_hand_evaluated_pattern(self):
        # hits at positions 1 and 3: (1/2) * (1/1 + 2/3)
        assert average_precision([1, 0, 1]) == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_matches_prefix_walk_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            size = int(rng.integers(1, 40))
            pattern = rng.integers(0, 2, size=size).astype(bool)
            if not pattern.any():
                pattern[int(rng.integers(size))] = True
            got = average_precision(pattern)
            want = oracles.average_precision(pattern.tolist())
            assert got == pytest.approx(want, abs=1e-12)

    def test_no_relevant_raises(self):
        with pytest.raises(ComputationError, match="no relevant"):
            average_precision([0, 0, 0])

    def test_append_worse_nonrelevant_keeps_ap(self):
        base = [1, 0, 1, 1]
        assert average_precision(base + [0, 0, 0]) == pytest.approx(average_precision(base))

    def test_prepend_better_nonrelevant_lowers_ap(self):
        base = [1, 0, 1, 1]
        assert average_precision([0] + base) < average_precision(base)


class TestEvaluate:
    def test_cmc_hand_example(self):
        # first hits at position 1 (query 0) and 3 (query 1)
        dist = np.array([
            [0.1, 0.2, 0.3, 0.4],
            [0.1, 0.2, 0.3, 0.4],
        ])
        q_pids, q_cams = np.array([1, 2]), np.array([0, 0])
        g_pids = np.array([1, 3, 2, 4])
        g_cams = np.array([1, 1, 1, 1])
        report = evaluate(dist, q_pids, q_cams, g_pids, g_cams,
                          EvalProtocolConfig(ranks_reported=(1, 2, 3, 4)))
        assert report.cmc[1] == pytest.approx(0.5)
        assert report.cmc[2] == pytest.approx(0.5)
        assert report.cmc[3] == pytest.approx(1.0)

    def test_perfect_separation(self):
        rng = np.random.default_rng(3)
        centers = rng.normal(size=(5, 16)) * 50
        q = np.vstack([c + rng.normal(size=16) * 0.01 for c in centers])
        g = np.vstack([c + rng.normal(size=(4, 16)) * 0.01 for c in centers])
        dist = np.linalg.norm(q[:, None] - g[None], axis=2)
        q_pids, g_pids = np.arange(5), np.repeat(np.arange(5), 4)
        report = evaluate(dist, q_pids, np.zeros(5, int), g_pids, np.ones(20, int))
        assert report.map == pytest.approx(1.0)
        assert report.cmc[1] == pytest.approx(1.0)

    def test_matches_full_oracle(self):
        rng = np.random.default_rng(77)
        inst = random_instance(rng, nq=30, ng=100)
        ranks = (1, 2, 5, 10, 50)
        report = evaluate(
            inst["dist"], inst["q_pids"], inst["q_cams"], inst["g_pids"],
            inst["g_cams"], EvalProtocolConfig(ranks_reported=ranks),
        )
        want = oracles.evaluate(
            inst["dist"].tolist(), inst["q_pids"].tolist(), inst["q_cams"].tolist(),
            inst["g_pids"].tolist(), inst["g_cams"].tolist(), ranks,
        )
        assert report.map == pytest.approx(want["map"], abs=1e-12)
        for rank in ranks:
            assert report.cmc[rank] == pytest.approx(want["cmc"][rank], abs=1e-12)
        assert report.num_valid_queries == want["num_valid_queries"]

    def test_gallery_permutation_invariance(self):
        rng = np.random.default_rng(5)
        inst = random_instance(rng, nq=8, ng=40)
        report = evaluate(inst["dist"], inst["q_pids"], inst["q_cams"],
                          inst["g_pids"], inst["g_cams"])
        perm = rng.permutation(40)
        permuted = evaluate(inst["dist"][:, perm], inst["q_pids"], inst["q_cams"],
                            inst["g_pids"][perm], inst["g_cams"][perm])
        assert permuted.map == pytest.approx(report.map, abs=1e-12)
        assert permuted.cmc == report.cmc

    def test_cmc_monotone_and_saturates(self):
        rng = np.random.default_rng(6)
        ng = 30
        dist = rng.random((10, ng))
        g_pids = rng.integers(0, 5, size=ng)
        q_pids = np.array([g_pids[i] for i in range(0, 30, 3)])
        report = evaluate(dist, q_pids, np.zeros(10, int), g_pids, np.ones(ng, int),
                          EvalProtocolConfig(ranks_reported=tuple(range(1, ng + 1))))
        curve = [report.cmc[r] for r in range(1, ng + 1)]
        assert all(a <= b + 1e-12 for a, b in zip(curve, curve[1:]))
        assert curve[-1] == pytest.approx(1.0)
        assert 0.0 <= report.map <= 1.0

    def test_excluded_queries_reported(self):
        dist = np.array([[0.1, 0.2], [0.3, 0.1]])
        report = evaluate(dist, np.array([1, 9]), np.zeros(2, int),
                          np.array([1, 2]), np.ones(2, int),
                          query_ids=("good", "hopeless"))
        assert report.excluded_queries == ("hopeless",)
        assert report.num_valid_queries == 1

    def test_no_evaluable_queries(self):
        dist = np.ones((1, 2))
        with pytest.raises(ComputationError, match="no evaluable queries"):
            evaluate(dist, np.array([9]), np.zeros(1, int),
                     np.array([1, 2]), np.ones(2, int))

    def test_label_misalignment(self):
        with pytest.raises(ValidationError, match="matrix rows"):
            evaluate(np.ones((2, 2)), np.array([1]), np.array([0]),
                     np.array([1, 2]), np.array([0, 0]))


class TestRelativeDrop:
    # reference cells from the published distractor-drop table
    @pytest.mark.parametrize(
        "base,value,expected",
        [(69.0, 56.5, -18.1), (59.8, 47.5, -20.6), (87.7, 80.8, -7.9)],
    )
    def test_reference_cells(self, base, value, expected):
        assert relative_drop(base, value) == pytest.approx(expected, abs=1e-9)

    def test_zero_base_rejected(self):
        with pytest.raises(ValidationError, match="positive base"):
            relative_drop(0.0, 1.0)

    def test_rounding_is_half_away_from_zero(self):
        assert round_half_away(-0.05) == -0.1
        assert round_half_away(0.05) == 0.1
        assert round_half_away(-0.04999) == -0.0


class TestReportSerialization:
    def test_json_schema(self):
        report = EvalReport(0.5, {1: 0.25, 5: 0.75}, (0.5,), 1, ("x",))
        data = report.to_json_dict()
        assert data == {
            "map": 0.5,
            "cmc": {"1": 0.25, "5": 0.75},
            "num_valid_queries": 1,
            "excluded_queries": ["x"],
        }

    def test_csv_layout(self):
        report = EvalReport(0.690, {1: 0.877, 5: 0.945, 10: 0.968, 50: 0.990}, (), 10)
        text = report.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "mAP,R-1,R-5,R-10,R-50"
        assert lines[1] == "69.0,87.7,94.5,96.8,99.0"
