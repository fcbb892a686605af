"""Ranking metrics against hand-worked fixtures."""

import json

import numpy as np
import pytest

from mcretrieval import ValidationError
from mcretrieval.evaluation import (
    average_precision,
    evaluate,
    mc_sweep,
    modality_ablation,
    write_report,
)


class TestAveragePrecision:
    def test_hand_values(self):
        assert average_precision([1, 0, 0]) == pytest.approx(1.0)
        assert average_precision([0, 1]) == pytest.approx(0.5)
        assert average_precision([1, 0, 1]) == pytest.approx((1.0 + 2.0 / 3.0) / 2)
        assert average_precision([0, 0, 1, 1]) == pytest.approx((1 / 3 + 2 / 4) / 2)
        assert average_precision([1, 1, 1]) == pytest.approx(1.0)

    def test_all_relevant_is_perfect_any_length(self):
        for n in (1, 4, 9):
            assert average_precision([1] * n) == 1.0

    def test_requires_a_relevant_item(self):
        with pytest.raises(ValidationError):
            average_precision([0, 0, 0])


# five planar points whose leave-one-out rankings were worked out by hand
FIX_IDS = ["a0", "a1", "a2", "b3", "b4"]
FIX_EMB = np.array([
    [0.0, 0.0],
    [1.0, 0.0],
    [0.0, 1.1],
    [1.0, -0.75],
    [1.0, -0.2],
])
FIX_LABELS = ["A", "A", "A", "B", "B"]
FIX_APS = {"a0": 5 / 6, "a1": 5 / 12, "a2": 1.0, "b3": 1.0, "b4": 0.5}


class TestEvaluate:
    def test_hand_fixture_per_query(self):
        rep = evaluate(FIX_IDS, FIX_EMB, FIX_LABELS)
        got = {r["id"]: r["ap"] for r in rep.per_query}
        assert got == pytest.approx(FIX_APS)

    def test_hand_fixture_aggregates(self):
        rep = evaluate(FIX_IDS, FIX_EMB, FIX_LABELS)
        assert rep.micro_map == pytest.approx(0.75)
        assert rep.macro_map == pytest.approx(0.75)
        assert rep.top1 == pytest.approx(0.6)
        assert rep.top5 == pytest.approx(1.0)
        assert rep.queries == 5
        assert rep.skipped_singletons == 0

    def test_per_class_means(self):
        rep = evaluate(FIX_IDS, FIX_EMB, FIX_LABELS)
        assert rep.per_class["A"] == pytest.approx((5 / 6 + 5 / 12 + 1.0) / 3)
        assert rep.per_class["B"] == pytest.approx(0.75)

    def test_micro_equals_macro_when_balanced(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(12, 6))
        labels = ["x", "y", "z"] * 4
        rep = evaluate([f"i{k}" for k in range(12)], emb, labels)
        assert rep.micro_map == pytest.approx(np.mean([r["ap"] for r in rep.per_query]), abs=1e-12)
        # balanced classes: macro re-weights equal-size groups, same number
        assert rep.macro_map == pytest.approx(
            np.mean([rep.per_class[c] for c in ("x", "y", "z")]), abs=1e-12
        )

    def test_rotation_invariance(self):
        theta = 0.77
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        a = evaluate(FIX_IDS, FIX_EMB, FIX_LABELS)
        b = evaluate(FIX_IDS, FIX_EMB @ rot.T, FIX_LABELS)
        assert a.micro_map == pytest.approx(b.micro_map, abs=1e-12)
        assert a.top1 == b.top1

    def test_singletons_skipped_but_kept_in_gallery(self):
        ids = ["a0", "a1", "lone"]
        emb = np.array([[0.0, 0.0], [0.1, 0.0], [0.05, 0.0]])
        rep = evaluate(ids, emb, ["A", "A", "Z"])
        assert rep.queries == 2
        assert rep.skipped_singletons == 1
        # the singleton sits between the pair, demoting each true match to rank 2
        assert rep.micro_map == pytest.approx(0.5)

    def test_tie_break_is_ascending_id(self):
        ids = ["q", "zz", "aa"]
        emb = np.array([[0.0], [1.0], [1.0]])
        rep = evaluate(ids, emb, ["A", "B", "A"])
        q = next(r for r in rep.per_query if r["id"] == "q")
        # both candidates at distance 1; "aa" must outrank "zz"
        assert q["ap"] == pytest.approx(1.0)

    def test_input_validation(self):
        with pytest.raises(ValidationError):
            evaluate(["a"], np.zeros((1, 2)), ["A"])
        with pytest.raises(ValidationError):
            evaluate(["a", "a"], np.zeros((2, 2)), ["A", "A"])
        with pytest.raises(ValidationError):
            evaluate(["a", "b"], np.zeros((2, 2)), ["A"])
        with pytest.raises(ValidationError):
            evaluate(["a", "b"], np.zeros((2, 2)), ["A", "B"])


def fake_embed_factory():
    """Deterministic stand-in for mc_embed: accuracy grows with mc."""
    rng = np.random.default_rng(7)
    protos = {"A": np.array([1.0, 0.0]), "B": np.array([0.0, 1.0])}
    labels = ["A", "A", "A", "B", "B", "B"]
    base_noise = rng.normal(size=(len(labels), 2))

    def embed_fn(mc, seed, stochastic):
        scale = 1.2 / np.sqrt(mc) if stochastic else 1.2
        means = np.stack([protos[lab] for lab in labels]) + scale * base_noise
        variances = np.full_like(means, 1.0 / mc if stochastic else 0.0)
        ids = [f"i{k}" for k in range(len(labels))]
        return ids, means, variances

    return embed_fn, labels


class TestSweepAndAblation:
    def test_sweep_has_baseline_row_and_mc_rows(self):
        embed_fn, labels = fake_embed_factory()
        rows = mc_sweep(embed_fn, [1, 4, 16], labels, base_seed=3)
        assert [r["mc"] for r in rows] == [0, 1, 4, 16]
        assert rows[0]["stochastic"] is False
        assert rows[0]["mean_variance"] == 0.0
        assert all(0.0 <= r["micro_map"] <= 1.0 for r in rows)

    def test_sweep_improves_with_passes_for_shrinking_noise(self):
        embed_fn, labels = fake_embed_factory()
        rows = mc_sweep(embed_fn, [1, 4, 64], labels)
        by_mc = {r["mc"]: r["micro_map"] for r in rows}
        assert by_mc[64] >= by_mc[1]
        assert by_mc[64] >= by_mc[0] - 1e-12

    def test_sweep_validation(self):
        embed_fn, labels = fake_embed_factory()
        with pytest.raises(ValidationError):
            mc_sweep(embed_fn, [], labels)
        with pytest.raises(ValidationError):
            mc_sweep(embed_fn, [0, 2], labels)

    def test_ablation_rows(self):
        labels = ["A", "A", "B", "B"]
        full = np.array([[0.0, 0.0], [0.1, 0.0], [1.0, 1.0], [1.1, 1.0]])

        def embed_fn(subset):
            ids = [f"i{k}" for k in range(4)]
            if subset is None:
                return ids, full, np.zeros_like(full)
            # single-modality view collapses the informative axis
            return ids, full * np.array([1.0, 0.0]), np.zeros_like(full)

        rows = modality_ablation(embed_fn, [None, ["cam"]], labels)
        assert rows[0]["modalities"] == "all"
        assert rows[1]["modalities"] == "cam"
        assert rows[0]["micro_map"] >= rows[1]["micro_map"]


class TestReportFile:
    def test_flat_table(self, tmp_path):
        path = tmp_path / "rows.json"
        write_report(path, [{"mc": 1, "v": 0.5}, {"mc": 2, "v": 0.75}])
        doc = json.loads(path.read_text())
        assert doc["columns"] == ["mc", "v"]
        assert doc["rows"] == [[1, 0.5], [2, 0.75]]

    def test_report_object(self, tmp_path):
        rep = evaluate(FIX_IDS, FIX_EMB, FIX_LABELS)
        path = tmp_path / "rep.json"
        write_report(path, rep)
        doc = json.loads(path.read_text())
        assert doc["micro_map"] == pytest.approx(0.75)
        assert doc["queries"] == 5

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            write_report(tmp_path / "x.json", [])
