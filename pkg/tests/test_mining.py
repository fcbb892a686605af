"""Mining against exhaustive brute-force oracles."""

import numpy as np
import pytest

from mcretrieval import MiningError, RngStream, SamplingError
from mcretrieval.mining import (
    MiningEpochPlan,
    batch_hard_triplets,
    pairwise_distances,
    pk_sample,
    semi_hard_epoch,
    semi_hard_negative,
)


class TestPairwiseDistances:
    def test_orthonormal_pair(self):
        d = pairwise_distances(np.eye(2))
        np.testing.assert_allclose(d[0, 1], np.sqrt(2.0), atol=1e-15)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=(17, 5))
        d = pairwise_distances(e, block=4)  # force the blocked path
        for i in range(17):
            for j in range(17):
                assert d[i, j] == pytest.approx(np.linalg.norm(e[i] - e[j]), abs=1e-12)

    def test_exactly_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(1)
        e = rng.normal(size=(40, 8))
        d = pairwise_distances(e, block=7)
        assert np.array_equal(d, d.T)
        assert np.all(np.diag(d) == 0.0)


class TestPkSample:
    def test_layout_and_no_replacement(self):
        labels = ["a"] * 5 + ["b"] * 5 + ["c"] * 5
        batch = pk_sample(labels, p=2, k=4, rng=RngStream(3, 0))
        assert len(batch.indices) == 8
        assert len(set(batch.indices.tolist())) == 8
        assert len(batch.classes) == 2
        for c, chunk in zip(batch.classes, batch.indices.reshape(2, 4)):
            assert all(labels[i] == c for i in chunk)

    def test_uniform_over_classes(self):
        labels = ["a", "a", "b", "b", "c", "c", "d", "d"]
        rng = RngStream(17, 0)
        counts = {c: 0 for c in "abcd"}
        n = 10_000
        for _ in range(n):
            for c in pk_sample(labels, p=2, k=2, rng=rng).classes:
                counts[c] += 1
        for c in counts:
            assert abs(counts[c] / n - 0.5) < 0.02

    def test_deficient_classes_reported(self):
        labels = ["a"] * 4 + ["b"] * 1 + ["c"] * 2
        with pytest.raises(SamplingError) as e:
            pk_sample(labels, p=3, k=3, rng=RngStream(0, 0))
        assert set(e.value.deficient_classes) == {"b", "c"}

    def test_reproducible(self):
        labels = ["a"] * 6 + ["b"] * 6 + ["c"] * 6
        a = pk_sample(labels, 2, 3, RngStream(5, 9))
        b = pk_sample(labels, 2, 3, RngStream(5, 9))
        assert np.array_equal(a.indices, b.indices)


def brute_force_batch_hard(emb, labels):
    # scan every candidate pair per anchor, lowest index wins ties
    n = len(labels)
    d = np.array([[np.linalg.norm(emb[i] - emb[j]) for j in range(n)] for i in range(n)])
    out = []
    for a in range(n):
        best_p, best_pd = -1, -1.0
        best_n, best_nd = -1, np.inf
        for j in range(n):
            if j == a:
                continue
            if labels[j] == labels[a]:
                if d[a, j] > best_pd:
                    best_p, best_pd = j, d[a, j]
            elif d[a, j] < best_nd:
                best_n, best_nd = j, d[a, j]
        if best_p >= 0 and best_n >= 0:
            out.append((a, best_p, best_n))
    return out


class TestBatchHard:
    def test_hand_built_case(self):
        emb = np.array([[0.0], [1.0], [0.4], [2.0]])
        labels = ["x", "x", "y", "y"]
        got = batch_hard_triplets(emb, labels)
        want = [(0, 1, 2), (1, 0, 2), (2, 3, 0), (3, 2, 1)]
        assert [tuple(t) for t in got] == want

    def test_matches_brute_force_on_random_batches(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            n = int(rng.integers(4, 20))
            emb = rng.normal(size=(n, 4))
            labels = [str(l) for l in rng.integers(0, 4, size=n)]
            if len(set(labels)) < 2:
                continue
            try:
                got = [tuple(t) for t in batch_hard_triplets(emb, labels)]
            except MiningError:
                assert not brute_force_batch_hard(emb, labels)
                continue
            assert got == brute_force_batch_hard(emb, labels)

    def test_single_class_rejected(self):
        with pytest.raises(MiningError):
            batch_hard_triplets(np.eye(3), ["a", "a", "a"])

    def test_all_singletons_rejected(self):
        with pytest.raises(MiningError):
            batch_hard_triplets(np.eye(3), ["a", "b", "c"])

    def test_singleton_anchor_skipped(self):
        emb = np.array([[0.0], [1.0], [5.0]])
        got = [tuple(t) for t in batch_hard_triplets(emb, ["x", "x", "y"])]
        assert got == [(0, 1, 2), (1, 0, 2)]


def brute_force_semi_hard(dist_row, dap, neg_idx, margin):
    # explicit three-stage rule: window, then beyond-positive, then farthest
    window = [j for j in neg_idx if dap < dist_row[j] < dap + margin]
    if window:
        return min(window, key=lambda j: (dist_row[j], j))
    beyond = [j for j in neg_idx if dist_row[j] > dap]
    if beyond:
        return min(beyond, key=lambda j: (dist_row[j], j))
    return max(neg_idx, key=lambda j: (dist_row[j], -j))


class TestSemiHardNegative:
    def test_window_example(self):
        # negatives at 0.55/0.65/0.9 with the positive at 0.5: 0.55 wins
        row = np.array([0.0, 0.5, 0.55, 0.65, 0.9])
        mask = np.array([False, False, True, True, True])
        assert semi_hard_negative(row, 0.5, mask) == 2

    def test_fallback_nearest_beyond(self):
        row = np.array([0.0, 0.5, 0.75, 0.9])
        mask = np.array([False, False, True, True])
        assert semi_hard_negative(row, 0.5, mask) == 2

    def test_fallback_overall_farthest(self):
        row = np.array([0.0, 0.5, 0.3, 0.4])
        mask = np.array([False, False, True, True])
        assert semi_hard_negative(row, 0.5, mask) == 3

    def test_no_negatives(self):
        assert semi_hard_negative(np.zeros(3), 0.1, np.zeros(3, dtype=bool)) == -1

    def test_matches_staged_oracle(self):
        rng = np.random.default_rng(303)
        for _ in range(1000):
            n = int(rng.integers(3, 30))
            row = np.abs(rng.normal(size=n))
            mask = rng.random(n) < 0.5
            if not mask.any():
                continue
            dap = float(np.abs(rng.normal()))
            got = semi_hard_negative(row, dap, mask)
            want = brute_force_semi_hard(row, dap, np.flatnonzero(mask).tolist(), 0.2)
            assert got == want


class TestSemiHardEpoch:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.n = 60
        self.emb = rng.normal(size=(self.n, 6))
        self.labels = [str(l) for l in rng.integers(0, 5, size=self.n)]
        self.sessions = [f"s{i % 6}" for i in range(self.n)]
        self.embed = lambda idx: self.emb[np.asarray(idx, dtype=int)]

    def test_every_item_embedded_once_per_epoch(self):
        seen = []
        embed = lambda idx: (seen.extend(idx), self.emb[np.asarray(idx, dtype=int)])[1]
        plan = MiningEpochPlan(sessions_per_draw=2, chunk_size=16, triplet_cap=1000)
        list(semi_hard_epoch(self.labels, self.sessions, embed, plan, RngStream(1, 0)))
        assert sorted(seen) == list(range(self.n))

    def test_reproducible_from_seed(self):
        plan = MiningEpochPlan(sessions_per_draw=2, chunk_size=64, triplet_cap=50)
        a = list(semi_hard_epoch(self.labels, self.sessions, self.embed, plan, RngStream(2, 1)))
        b = list(semi_hard_epoch(self.labels, self.sessions, self.embed, plan, RngStream(2, 1)))
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_cap_401_pairs_to_400(self):
        # class sizes 14,14,14,14,9,2 give 4*91 + 36 + 1 = 401 unordered pairs
        sizes = [14, 14, 14, 14, 9, 2]
        labels = [f"c{i}" for i, s in enumerate(sizes) for _ in range(s)]
        n = len(labels)
        rng = np.random.default_rng(8)
        emb = rng.normal(size=(n, 4))
        plan = MiningEpochPlan(sessions_per_draw=3, chunk_size=512, triplet_cap=400)
        batches = list(
            semi_hard_epoch(labels, ["s0"] * n, lambda idx: emb[np.asarray(idx, int)], plan, RngStream(3, 3))
        )
        assert len(batches) == 1
        assert batches[0].shape == (400, 3)

    def test_uncapped_pair_count(self):
        sizes = [3, 2]
        labels = [f"c{i}" for i, s in enumerate(sizes) for _ in range(s)]
        emb = np.random.default_rng(9).normal(size=(5, 3))
        plan = MiningEpochPlan(triplet_cap=400)
        (batch,) = semi_hard_epoch(labels, ["s"] * 5, lambda idx: emb[np.asarray(idx, int)], plan, RngStream(4, 0))
        assert batch.shape == (3 + 1, 3)  # C(3,2) + C(2,2)

    def test_triplet_labels_valid(self):
        plan = MiningEpochPlan(sessions_per_draw=2, chunk_size=32, triplet_cap=500)
        for batch in semi_hard_epoch(self.labels, self.sessions, self.embed, plan, RngStream(5, 0)):
            for a, p, n in batch:
                assert self.labels[a] == self.labels[p] and self.labels[a] != self.labels[n]

    def test_sessionless_partition(self):
        seen = []
        embed = lambda idx: (seen.extend(idx), self.emb[np.asarray(idx, dtype=int)])[1]
        plan = MiningEpochPlan(sessions_per_draw=2, synthetic_session_size=13, triplet_cap=1000)
        list(semi_hard_epoch(self.labels, None, embed, plan, RngStream(6, 0)))
        assert sorted(seen) == list(range(self.n))

    def test_single_class_draw_skipped_without_error(self):
        labels = ["a"] * 8
        emb = np.random.default_rng(10).normal(size=(8, 3))
        plan = MiningEpochPlan()
        out = list(semi_hard_epoch(labels, ["s"] * 8, lambda idx: emb[np.asarray(idx, int)], plan, RngStream(7, 0)))
        assert out == []
