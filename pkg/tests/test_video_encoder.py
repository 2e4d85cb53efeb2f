"""Video encoder: bucketing, assembly, pooling, and bit-level invariances."""

import numpy as np
import pytest

from crossmodal.autodiff import Tensor
from crossmodal.config import tiny_model_config
from crossmodal.data.manifest import ExpertFeatures, ExpertSpec
from crossmodal.encoders import VideoEncoder, num_buckets, temporal_bucket
from crossmodal.errors import ContractError

from gradcheck import fd_grad, grads_close

EXPERTS = [ExpertSpec("motion", 5), ExpertSpec("audio", 3)]


def make_encoder(rng, **overrides):
    cfg = tiny_model_config(**overrides)
    return VideoEncoder(cfg, EXPERTS, t_max=4.0, rng=rng)


def feats(rng, name_dims, rows):
    """rows: {name: [(t, scale), ...]}; features are scaled arange vectors."""
    out = {}
    for name, dim in name_dims:
        if rows.get(name) is None:
            out[name] = None
            continue
        ts = np.array([t for t, _ in rows[name]], dtype=np.float64)
        mat = np.stack([np.full(dim, s, dtype=np.float64) for _, s in rows[name]])
        out[name] = ExpertFeatures(ts, mat)
    return out


class TestTemporalBucket:
    def test_unit_intervals(self):
        assert temporal_bucket(0.0, 8.0) == 1
        assert temporal_bucket(0.999, 8.0) == 1
        assert temporal_bucket(1.0, 8.0) == 2
        assert temporal_bucket(7.4, 8.0) == 8

    def test_past_horizon_raises_or_clamps(self):
        with pytest.raises(ContractError):
            temporal_bucket(8.0, 8.0)
        assert temporal_bucket(9.3, 8.0, clamp=True) == 8

    def test_negative_raises(self):
        with pytest.raises(ContractError):
            temporal_bucket(-0.1, 8.0)

    def test_fractional_horizon_rounds_up(self):
        assert num_buckets(7.4) == 8
        assert temporal_bucket(7.3, 7.4) == 8


class TestPrepare:
    def test_shapes_and_presence(self, rng):
        enc = make_encoder(rng)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0), (2.5, 2.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        cap = enc.cfg.max_features_per_expert
        assert prepared.features[0].shape == (1, cap, 5)
        assert prepared.token_mask.shape == (1, 2 * (cap + 1))
        assert prepared.presence.tolist() == [[True, False]]
        # aggregate slots stay valid even for the absent expert
        assert prepared.token_mask[0, prepared.agg_positions].all()
        assert prepared.valid[1].sum() == 0

    def test_bucket_rows_follow_timestamps(self, rng):
        enc = make_encoder(rng)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0), (2.5, 2.0), (3.9, 3.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        assert prepared.bucket_rows[0][0, :3].tolist() == [0, 2, 3]
        assert (prepared.bucket_rows[0][0, 3:] == enc.unk_row).all()

    def test_canonical_order_sorts_by_time_then_bytes(self, rng):
        enc = make_encoder(rng)
        rows = np.array([[3.0] * 5, [1.0] * 5, [2.0] * 5])
        ts = np.array([1.5, 0.5, 1.5])
        fd = {"motion": ExpertFeatures(ts, rows), "audio": None}
        prepared = enc.prepare([fd], ["v0"])
        got = prepared.features[0][0, :3, 0]
        assert got.tolist() == [1.0, 2.0, 3.0]  # t=0.5 first, then tied-t by bytes

    def test_truncation_keeps_earliest(self, rng):
        enc = make_encoder(rng, max_features_per_expert=2)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0), (1.5, 2.0), (2.5, 3.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        assert prepared.features[0][0, :, 0].tolist() == [1.0, 2.0]

    def test_unk_override_routes_all_rows(self, rng):
        enc = make_encoder(rng)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"], temporal="unk")
        assert (prepared.bucket_rows[0] == enc.unk_row).all()

    def test_non_temporal_expert_uses_unk_row(self, rng):
        cfg = tiny_model_config()
        enc = VideoEncoder(cfg, [ExpertSpec("motion", 5), ExpertSpec("scene", 3, temporal=False)],
                           t_max=4.0, rng=rng)
        fd = {
            "motion": ExpertFeatures(np.array([0.5]), np.ones((1, 5))),
            "scene": ExpertFeatures(np.array([0.5]), np.ones((1, 3))),
        }
        prepared = enc.prepare([fd], ["v0"])
        assert prepared.bucket_rows[0][0, 0] == 0
        assert prepared.bucket_rows[1][0, 0] == enc.unk_row

    def test_shuffled_order_is_deterministic_per_video(self, rng):
        enc = make_encoder(rng, feature_order="shuffled")
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0), (1.5, 2.0), (2.5, 3.0), (3.5, 4.0)],
                    "audio": None})
        a = enc.prepare([fd], ["v0"]).bucket_rows[0]
        b = enc.prepare([fd], ["v0"]).bucket_rows[0]
        assert np.array_equal(a, b)
        assert sorted(a[0, :4].tolist()) == [0, 1, 2, 3]
        # across many videos the shuffle cannot always equal sorted order
        others = [enc.prepare([fd], [f"v{i}"]).bucket_rows[0][0, :4].tolist()
                  for i in range(1, 9)]
        assert all(sorted(o) == [0, 1, 2, 3] for o in others)
        assert any(o != [0, 1, 2, 3] for o in others)


class TestPooling:
    def test_zero_mode_returns_zeros(self, rng):
        enc = make_encoder(rng, agg_init="zero")
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        pooled = enc._pool(enc.projections[0](Tensor(prepared.features[0])),
                           prepared.valid[0])
        assert np.array_equal(pooled.data, np.zeros_like(pooled.data))

    def test_mean_ignores_padding(self, rng):
        enc = make_encoder(rng, agg_init="mean")
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0), (1.5, 3.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        projected = enc.projections[0](Tensor(prepared.features[0]))
        pooled = enc._pool(projected, prepared.valid[0])
        want = projected.data[0, :2].mean(axis=0)
        np.testing.assert_allclose(pooled.data[0], want, rtol=0, atol=1e-15)

    def test_max_matches_numpy_on_valid_rows(self, rng):
        enc = make_encoder(rng, agg_init="max")
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, -1.0), (1.5, 2.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        projected = enc.projections[0](Tensor(prepared.features[0]))
        pooled = enc._pool(projected, prepared.valid[0])
        want = projected.data[0, :2].max(axis=0)
        np.testing.assert_array_equal(pooled.data[0], want)


class TestForward:
    def test_output_shape(self, rng):
        enc = make_encoder(rng)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0)], "audio": [(1.5, 2.0)]})
        out = enc.forward(enc.prepare([fd, fd], ["a", "b"]))
        assert out.shape == (2, 2, enc.cfg.d_model)

    def test_none_encoder_missing_expert_is_exact_zero(self, rng):
        enc = make_encoder(rng, encoder="none")
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0)], "audio": None})
        out = enc.forward(enc.prepare([fd], ["v0"]))
        assert np.array_equal(out.data[0, 1], np.zeros(enc.cfg.d_model))
        assert np.abs(out.data[0, 0]).sum() > 0

    def test_fused_missing_expert_still_contextualized(self, rng):
        enc = make_encoder(rng)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0)], "audio": None})
        out = enc.forward(enc.prepare([fd], ["v0"]))
        # absent expert's aggregate slot passes through the fusion stack
        assert np.abs(out.data[0, 1]).sum() > 0

    def test_permutation_of_rows_bit_identical(self, rng):
        enc = make_encoder(rng)
        ts = np.array([0.5, 1.5, 2.5, 3.5])
        rows = rng.normal(size=(4, 5))
        base = {"motion": ExpertFeatures(ts, rows), "audio": None}
        out1 = enc.forward(enc.prepare([base], ["v0"])).data
        perm = [2, 0, 3, 1]
        shuffled = {"motion": ExpertFeatures(ts[perm], rows[perm]), "audio": None}
        out2 = enc.forward(enc.prepare([shuffled], ["v0"])).data
        assert np.array_equal(out1, out2)

    def test_garbage_in_masked_slots_bit_identical(self, rng):
        enc = make_encoder(rng)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0), (1.5, 2.0)], "audio": [(0.5, 1.0)]})
        prepared = enc.prepare([fd], ["v0"])
        out1 = enc.forward(prepared).data
        for e in range(2):
            invalid = ~prepared.valid[e]
            prepared.features[e][np.broadcast_to(invalid[:, :, None],
                                                 prepared.features[e].shape)] = 7.7
            prepared.bucket_rows[e][invalid] = 0
        out2 = enc.forward(prepared).data
        assert np.array_equal(out1, out2)

    def test_dropout_requires_rng_and_changes_output(self, rng):
        enc = make_encoder(rng, dropout=0.5)
        fd = feats(rng, [("motion", 5), ("audio", 3)],
                   {"motion": [(0.5, 1.0)], "audio": None})
        prepared = enc.prepare([fd], ["v0"])
        with pytest.raises(ContractError):
            enc.forward(prepared, train=True, rng=None)
        out_train = enc.forward(prepared, train=True,
                                rng=np.random.default_rng(3)).data
        out_eval = enc.forward(prepared).data
        assert not np.array_equal(out_train, out_eval)

    def test_gradients_match_finite_differences(self, rng):
        enc = make_encoder(rng, d_model=8, heads=2, intermediate_dim=16,
                           max_features_per_expert=3)
        ts = np.array([0.5, 2.5])
        fd = {"motion": ExpertFeatures(ts, rng.normal(size=(2, 5))),
              "audio": ExpertFeatures(ts, rng.normal(size=(2, 3)))}
        prepared = enc.prepare([fd], ["v0"])
        weights = rng.normal(size=(1, 2, 8))

        def loss_value():
            out = enc.forward(prepared)
            return float((out.data * weights).sum())

        out = enc.forward(prepared)
        loss = (out * Tensor(weights)).sum()
        loss.backward()
        for p in enc.parameters():
            numeric = fd_grad(loss_value, p.data)
            assert grads_close(p.grad, numeric), p.name
