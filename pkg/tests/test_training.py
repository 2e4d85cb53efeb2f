"""Schedule, batching, train loop determinism, and checkpoint container."""

import dataclasses
import json

import numpy as np
import pytest

from crossmodal.autodiff import Adam
from crossmodal.config import tiny_model_config, tiny_train_config
from crossmodal.data.synthetic import SyntheticSpec, generate_synthetic
from crossmodal.errors import CheckpointError, ConfigError
from crossmodal.matching import ranking_loss, score_matrix
from crossmodal.model import RetrievalModel
from crossmodal.training import (
    batch_indices,
    clip_gradients,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    step_rng,
    train,
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    spec = SyntheticSpec(n_train=16, n_val=4, n_test=4, n_experts=2,
                         n_events=12, event_dim=4, t_max=8.0)
    return generate_synthetic(spec, tmp_path_factory.mktemp("ds"), seed=7)


def small_cfg(**overrides):
    base = dict(
        model=tiny_model_config(d_model=16, intermediate_dim=32, d_h=16,
                                max_features_per_expert=3, max_tokens=6),
        batch_size=8,
        total_steps=3,
        seed=11,
    )
    base.update(overrides)
    return tiny_train_config(**base)


def snapshot(model):
    return {p.name: p.data.copy() for p in model.parameters()}


class TestSchedule:
    def test_staircase_values(self):
        cfg = tiny_train_config(initial_lr=5e-5, lr_decay=0.95, lr_decay_every=1000)
        assert lr_at(0, cfg) == 5e-5
        assert lr_at(999, cfg) == 5e-5
        assert lr_at(1000, cfg) == pytest.approx(4.75e-5, rel=1e-12)
        assert lr_at(2500, cfg) == pytest.approx(5e-5 * 0.95**2, rel=1e-12)

    def test_decay_one_is_constant(self):
        cfg = tiny_train_config(initial_lr=1e-3, lr_decay=1.0)
        assert lr_at(0, cfg) == lr_at(10_000, cfg) == 1e-3

    def test_negative_step_rejected(self):
        with pytest.raises(ConfigError):
            lr_at(-1, tiny_train_config())


class TestBatches:
    def test_deterministic(self):
        a = batch_indices(100, 8, seed=3, step=5)
        b = batch_indices(100, 8, seed=3, step=5)
        assert np.array_equal(a, b)

    def test_epoch_samples_without_replacement(self):
        steps_per_epoch = 100 // 8
        seen = np.concatenate([batch_indices(100, 8, seed=3, step=s)
                               for s in range(steps_per_epoch)])
        assert len(seen) == 96
        assert len(set(seen.tolist())) == 96
        assert seen.min() >= 0 and seen.max() < 100

    def test_epochs_reshuffle(self):
        first = np.concatenate([batch_indices(100, 8, 3, s) for s in range(12)])
        second = np.concatenate([batch_indices(100, 8, 3, s) for s in range(12, 24)])
        assert not np.array_equal(first, second)

    def test_pool_smaller_than_batch_rejected(self):
        with pytest.raises(ConfigError):
            batch_indices(4, 8, seed=0, step=0)

    def test_step_rng_streams_differ(self):
        a = step_rng(0, 1).random(4)
        b = step_rng(0, 2).random(4)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, step_rng(0, 1).random(4))


class TestStepMechanics:
    def _loss(self, model, manifest, cfg):
        pairs = [(v.video_id, c) for c, v in manifest.all_pairs("train")]
        batch = pairs[: cfg.batch_size]
        psi, presence, phi, w = model.encode_pair_batch(
            manifest, batch, train=True, rng=step_rng(cfg.seed, 0))
        scores = score_matrix(psi, presence, phi, w)
        return ranking_loss(scores, cfg.margin)

    def test_zero_lr_changes_nothing(self, dataset):
        cfg = small_cfg()
        model = RetrievalModel.from_manifest(cfg.model, dataset, seed=cfg.seed)
        opt = Adam(model.parameters())
        before = snapshot(model)
        loss = self._loss(model, dataset, cfg)
        opt.zero_grad()
        loss.backward()
        opt.step(0.0)
        for p in model.parameters():
            assert np.array_equal(p.data, before[p.name])

    def test_freeze_pins_caption_side_only(self, dataset):
        cfg = small_cfg(total_steps=1, freeze_caption_encoder=True)
        model = RetrievalModel.from_manifest(cfg.model, dataset, seed=cfg.seed)
        before = snapshot(model)
        train(dataset, cfg, model=model)
        caption_names = {p.name for p in model.caption.parameters()}
        moved = {p.name for p in model.parameters()
                 if not np.array_equal(p.data, before[p.name])}
        assert not moved & caption_names
        assert moved

    def test_clip_caps_global_norm(self, dataset):
        cfg = small_cfg()
        model = RetrievalModel.from_manifest(cfg.model, dataset, seed=cfg.seed)
        self._loss(model, dataset, cfg).backward()
        params = model.parameters()
        raw = clip_gradients(params, max_norm=1e-3)
        assert raw > 1e-3
        after = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
        assert after == pytest.approx(1e-3, rel=1e-9)

    def test_clip_below_threshold_is_identity(self, dataset):
        cfg = small_cfg()
        model = RetrievalModel.from_manifest(cfg.model, dataset, seed=cfg.seed)
        self._loss(model, dataset, cfg).backward()
        params = model.parameters()
        grads = [p.grad.copy() for p in params]
        clip_gradients(params, max_norm=1e9)
        for p, g in zip(params, grads):
            assert np.array_equal(p.grad, g)


class TestTrainLoop:
    def test_trace_covers_every_step(self, dataset):
        result = train(dataset, small_cfg(total_steps=3))
        assert [t["step"] for t in result.trace] == [0, 1, 2]
        for t in result.trace:
            assert set(t) == {"step", "loss", "lr"}
            assert np.isfinite(t["loss"])

    def test_two_runs_bit_identical(self, dataset):
        cfg = small_cfg(total_steps=3)
        a, b = train(dataset, cfg), train(dataset, cfg)
        assert a.trace == b.trace
        sa, sb = snapshot(a.model), snapshot(b.model)
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)

    def test_dataset_smaller_than_batch_rejected(self, dataset):
        with pytest.raises(ConfigError):
            train(dataset, small_cfg(batch_size=32))

    def test_loss_drops_on_small_pool(self, dataset):
        result = train(dataset, small_cfg(total_steps=20, initial_lr=5e-3))
        assert result.trace[-1]["loss"] < result.trace[0]["loss"]

    def test_eval_every_records_validation(self, dataset):
        result = train(dataset, small_cfg(total_steps=4, eval_every=2))
        assert [v["step"] for v in result.val_trace] == [2, 4]
        for v in result.val_trace:
            assert v["gmr"] >= 0.0
            assert set(v["metrics"]) == {"t2v", "v2t"}


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, dataset, tmp_path):
        cfg = small_cfg(total_steps=2)
        result = train(dataset, cfg)
        first = tmp_path / "a.mmck"
        save_checkpoint(first, result.model, result.optimizer, step=2, cfg=cfg,
                        vocabulary=dataset.vocabulary)
        ck = load_checkpoint(first, manifest=dataset)
        assert ck.step == 2
        assert ck.vocabulary.words == dataset.vocabulary.words
        assert ck.cfg == cfg
        sa, sb = snapshot(result.model), snapshot(ck.model)
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)
        second = tmp_path / "b.mmck"
        save_checkpoint(second, ck.model, ck.optimizer, step=ck.step, cfg=ck.cfg,
                        vocabulary=ck.vocabulary)
        assert first.read_bytes() == second.read_bytes()

    def test_sidecar_config_written(self, dataset, tmp_path):
        cfg = small_cfg(total_steps=1)
        result = train(dataset, cfg)
        path = tmp_path / "m.mmck"
        save_checkpoint(path, result.model, result.optimizer, 1, cfg)
        sidecar = json.loads((tmp_path / "m.mmck.config.json").read_text())
        assert sidecar["batch_size"] == cfg.batch_size
        assert sidecar["model"]["d_model"] == cfg.model.d_model

    def test_resume_matches_uninterrupted_run(self, dataset, tmp_path):
        cfg = small_cfg(total_steps=4)
        full = train(dataset, cfg)

        half = train(dataset, dataclasses.replace(cfg, total_steps=2))
        path = tmp_path / "half.mmck"
        save_checkpoint(path, half.model, half.optimizer, step=2, cfg=cfg,
                        vocabulary=dataset.vocabulary)
        ck = load_checkpoint(path, manifest=dataset)
        rest = train(dataset, ck.cfg, model=ck.model, optimizer=ck.optimizer,
                     start_step=ck.step)

        assert half.trace + rest.trace == full.trace
        sa, sb = snapshot(full.model), snapshot(rest.model)
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)

    def test_foreign_manifest_rejected(self, dataset, tmp_path):
        cfg = small_cfg(total_steps=1)
        result = train(dataset, cfg)
        path = tmp_path / "m.mmck"
        save_checkpoint(path, result.model, result.optimizer, 1, cfg)
        other_spec = SyntheticSpec(n_train=8, n_val=2, n_test=2, n_experts=1,
                                   n_events=12, event_dim=4, t_max=8.0)
        other = generate_synthetic(other_spec, tmp_path / "other", seed=9)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, manifest=other)

    def test_corrupted_container_rejected(self, dataset, tmp_path):
        cfg = small_cfg(total_steps=1)
        result = train(dataset, cfg)
        path = tmp_path / "m.mmck"
        save_checkpoint(path, result.model, result.optimizer, 1, cfg)
        blob = path.read_bytes()

        bad_magic = tmp_path / "bad_magic.mmck"
        bad_magic.write_bytes(b"XXCK" + blob[4:])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad_magic)

        truncated = tmp_path / "truncated.mmck"
        truncated.write_bytes(blob[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(truncated)


class TestInitialLoss:
    def test_first_loss_matches_hinge_resampling_estimate(self, dataset):
        cfg = small_cfg(batch_size=16)
        model = RetrievalModel.from_manifest(cfg.model, dataset, seed=3)
        pairs = [(v.video_id, c) for c, v in dataset.all_pairs("train")]
        psi, presence, phi, w = model.encode_pair_batch(
            dataset, pairs[:16], train=False, rng=None)
        scores = score_matrix(psi, presence, phi, w)
        loss = float(ranking_loss(scores, cfg.margin).data)

        s = scores.data
        b = s.shape[0]
        rng = np.random.default_rng(0)
        i = rng.integers(0, b, size=200_000)
        j = rng.integers(0, b, size=200_000)
        keep = i != j
        i, j = i[keep], j[keep]
        hinge = (np.maximum(s[i, j] - s[i, i] + cfg.margin, 0.0)
                 + np.maximum(s[j, i] - s[i, i] + cfg.margin, 0.0))
        estimate = (b - 1) * hinge.mean()
        assert loss == pytest.approx(estimate, rel=0.2)
