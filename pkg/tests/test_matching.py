"""Similarity scoring, ranking loss oracles, and store round-trips."""

import numpy as np
import pytest

from crossmodal.autodiff import Tensor
from crossmodal.errors import ContractError, DataError, DimensionError
from crossmodal.matching import (
    load_store,
    rank_store_videos,
    ranking_loss,
    save_store,
    score_matrix,
    similarity,
)

from gradcheck import fd_grad, grads_close


def unit_rows(rng, shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


class TestSimilarity:
    def test_equal_weights_unit_dots(self):
        psi = np.stack([np.eye(4)[0], np.eye(4)[1]])
        phi = psi.copy()
        w = np.array([0.5, 0.5])
        assert similarity(psi, phi, w) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_weight_selects_one_expert(self):
        psi = np.stack([np.array([0.3, 0.0]), np.array([42.0, 0.0])])
        phi = np.stack([np.array([1.0, 0.0]), np.array([1.0, 0.0])])
        w = np.array([1.0, 0.0])
        got = similarity(psi, phi, w, normalize_video=False)
        assert got == pytest.approx(0.3, abs=1e-12)

    def test_matches_scalar_loop_oracle(self, rng):
        n, d = 3, 6
        psi, phi = rng.normal(size=(n, d)), unit_rows(rng, (n, d))
        w = rng.random(n)
        w /= w.sum()
        want = 0.0
        for e in range(n):
            psi_hat = psi[e] / np.linalg.norm(psi[e])
            want += w[e] * float(psi_hat @ phi[e])
        assert similarity(psi, phi, w) == pytest.approx(want, abs=1e-12)

    def test_expert_count_mismatch(self, rng):
        with pytest.raises(DimensionError):
            similarity(rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), np.ones(2))


class TestScoreMatrix:
    def test_one_by_one_equals_similarity(self, rng):
        psi, phi = rng.normal(size=(2, 5)), unit_rows(rng, (2, 5))
        w = np.array([0.6, 0.4])
        m = score_matrix(psi[None], None, phi[None], w[None]).data
        assert m.shape == (1, 1)
        assert m[0, 0] == pytest.approx(similarity(psi, phi, w), abs=1e-15)

    def test_matches_pairwise_loop(self, rng):
        psi = rng.normal(size=(4, 3, 5))
        phi = unit_rows(rng, (6, 3, 5))
        w = rng.random((6, 3))
        w /= w.sum(axis=1, keepdims=True)
        m = score_matrix(psi, None, phi, w).data
        for i in range(4):
            for j in range(6):
                want = similarity(psi[i], phi[j], w[j])
                assert m[i, j] == pytest.approx(want, abs=1e-12)

    def test_renormalizes_over_present_experts(self, rng):
        psi = rng.normal(size=(2, 3, 4))
        presence = np.array([[True, False, True], [True, True, True]])
        psi[0, 1] = 0.0  # absent expert contributes nothing
        phi = unit_rows(rng, (2, 3, 4))
        w = rng.random((2, 3))
        w /= w.sum(axis=1, keepdims=True)
        m = score_matrix(psi, presence, phi, w, renormalize_missing=True).data
        for i, j in [(0, 0), (0, 1), (1, 0)]:
            num = sum(
                w[j, e] * float(psi[i, e] / np.linalg.norm(psi[i, e]) @ phi[j, e])
                for e in range(3) if presence[i, e])
            den = sum(w[j, e] for e in range(3) if presence[i, e])
            assert m[i, j] == pytest.approx(num / den, abs=1e-12)

    def test_renormalize_requires_presence(self, rng):
        psi, phi = rng.normal(size=(1, 2, 3)), unit_rows(rng, (1, 2, 3))
        with pytest.raises(ContractError):
            score_matrix(psi, None, phi, np.ones((1, 2)) / 2, renormalize_missing=True)

    def test_precompute_equals_online_16x16(self, rng, tmp_path):
        psi = rng.normal(size=(16, 3, 8))
        presence = np.ones((16, 3), dtype=bool)
        phi = unit_rows(rng, (16, 3, 8))
        w = rng.random((16, 3))
        w /= w.sum(axis=1, keepdims=True)
        online = score_matrix(psi, presence, phi, w).data
        save_store(tmp_path / "s", [f"v{i}" for i in range(16)], psi, presence,
                   {"normalize_video": True, "renormalize_missing": False},
                   caption_ids=[f"c{i}" for i in range(16)], phi=phi, w=w)
        offline = load_store(tmp_path / "s").score()
        assert np.max(np.abs(online - offline)) <= 1e-9


class TestRankingLoss:
    def test_hand_case_zero(self):
        loss = ranking_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), margin=0.05)
        assert abs(float(loss.data)) <= 1e-12

    def test_hand_case_all_equal(self):
        loss = ranking_loss(np.full((2, 2), 0.5), margin=0.05)
        assert abs(float(loss.data) - 0.1) <= 1e-12

    def test_hand_case_single_active_hinge(self):
        s = np.array([[0.5, 0.48], [0.2, 0.9]])
        loss = ranking_loss(s, margin=0.05)
        assert abs(float(loss.data) - 0.015) <= 1e-12

    def test_rejects_non_square_and_tiny(self):
        with pytest.raises(DimensionError):
            ranking_loss(np.zeros((2, 3)), margin=0.1)
        with pytest.raises(DimensionError):
            ranking_loss(np.zeros((1, 1)), margin=0.1)
        with pytest.raises(ContractError):
            ranking_loss(np.zeros((2, 2)), margin=-0.1)

    def test_nonnegative_and_zero_iff_margins_met(self, rng):
        for _ in range(100):
            b = int(rng.integers(2, 7))
            s = rng.normal(size=(b, b))
            margin = float(rng.random() * 0.3)
            val = float(ranking_loss(s, margin).data)
            assert val >= 0.0
            diag = np.diag(s)
            slack_cols = s - diag[None, :] + margin
            slack_rows = s - diag[:, None] + margin
            off = ~np.eye(b, dtype=bool)
            satisfied = (slack_cols[off] <= 0).all() and (slack_rows[off] <= 0).all()
            assert (val == 0.0) == satisfied

    def test_invariant_under_joint_relabeling(self, rng):
        for _ in range(100):
            b = int(rng.integers(2, 7))
            s = rng.normal(size=(b, b))
            perm = rng.permutation(b)
            relabeled = s[np.ix_(perm, perm)]
            a = float(ranking_loss(s, 0.07).data)
            c = float(ranking_loss(relabeled, 0.07).data)
            assert a == pytest.approx(c, abs=1e-12)

    def test_gradient_matches_finite_differences_off_kinks(self, rng):
        s = rng.normal(size=(4, 4))
        margin = 0.09
        slack_cols = s - np.diag(s)[None, :] + margin
        slack_rows = s - np.diag(s)[:, None] + margin
        off = ~np.eye(4, dtype=bool)
        assert (np.abs(slack_cols[off]) > 1e-4).all()
        assert (np.abs(slack_rows[off]) > 1e-4).all()
        t = Tensor(s.copy(), requires_grad=True)
        loss = ranking_loss(t, margin)
        loss.backward()
        numeric = fd_grad(lambda: float(ranking_loss(t.data, margin).data), t.data)
        assert grads_close(t.grad, numeric)


class TestStore:
    def test_round_trip_preserves_bits(self, rng, tmp_path):
        psi = rng.normal(size=(5, 2, 6))
        presence = rng.random((5, 2)) > 0.3
        presence[:, 0] = True
        phi = unit_rows(rng, (4, 2, 6))
        w = rng.random((4, 2))
        meta = {"normalize_video": True, "renormalize_missing": False, "tag": "x"}
        save_store(tmp_path / "s", [f"v{i}" for i in range(5)], psi, presence, meta,
                   caption_ids=[f"c{i}" for i in range(4)], phi=phi, w=w)
        store = load_store(tmp_path / "s")
        assert np.array_equal(store.psi, psi)
        assert np.array_equal(store.phi, phi)
        assert np.array_equal(store.w, w)
        assert np.array_equal(store.presence, presence)
        assert store.video_ids == [f"v{i}" for i in range(5)]
        assert store.meta["tag"] == "x"

    def test_video_only_store(self, rng, tmp_path):
        psi = rng.normal(size=(3, 2, 4))
        save_store(tmp_path / "s", ["a", "b", "c"], psi, np.ones((3, 2), dtype=bool),
                   {"normalize_video": True, "renormalize_missing": False})
        store = load_store(tmp_path / "s")
        assert store.phi is None
        with pytest.raises(DataError):
            store.score()

    def test_missing_index_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_store(tmp_path / "nothing")

    def test_rank_videos_order_and_tie_break(self, rng, tmp_path):
        # psi rows engineered so scores are (1, 2, 2, 0) for a fixed query
        base = np.zeros((4, 1, 3))
        base[0, 0] = [1.0, 0, 0]
        base[1, 0] = [2.0, 0, 0]
        base[2, 0] = [2.0, 0, 0]
        base[3, 0] = [0.0, 1.0, 0]
        save_store(tmp_path / "s", ["a", "b", "c", "d"], base,
                   np.ones((4, 1), dtype=bool),
                   {"normalize_video": False, "renormalize_missing": False})
        store = load_store(tmp_path / "s")
        phi = np.array([[1.0, 0.0, 0.0]])
        w = np.array([1.0])
        hits = rank_store_videos(store, phi, w, k=3)
        assert [h[0] for h in hits] == ["b", "c", "a"]
        assert [h[1] for h in hits] == [2.0, 2.0, 1.0]
