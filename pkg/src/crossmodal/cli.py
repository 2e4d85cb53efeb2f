"""Command-line surface: synth | validate | train | eval | precompute | retrieve.

Exit codes: 0 ok, 2 configuration problems, 3 data/file problems,
1 anything else. CROSSMODAL_THREADS caps BLAS threads and is the only
environment variable read.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .autodiff import no_grad
from .config import (
    TrainConfig,
    apply_ablations,
    config_from_dict,
    config_to_dict,
    tiny_train_config,
)
from .data.manifest import load_manifest, validate_manifest
from .data.synthetic import SyntheticSpec, generate_synthetic
from .errors import ConfigError, CrossmodalError, DataError
from .evaluation import (
    evaluate_matrix,
    evaluate_split,
    geometric_mean_recall,
    order_discrimination_eval,
    ranks_from_matrix,
    split_score_matrix,
)
from .matching import load_store, rank_store_videos, save_store
from .model import RetrievalModel
from .reporting import (
    write_aggregate_report,
    write_eval_report,
    write_train_report,
)
from .training import (
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

# Eval-time ablations change behavior, not architecture, so they may be
# applied to a trained checkpoint; anything else must match the fingerprint.
EVAL_ABLATIONS = {"temporal"}


def _parse_ablations(items: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"ablation {item!r} is not KEY=VALUE")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def _read_json(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    raw = _read_json(args.config) if args.config else {}
    fields = {f.name for f in dataclasses.fields(SyntheticSpec)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
    if "events_per_video" in raw:
        raw["events_per_video"] = tuple(raw["events_per_video"])
    try:
        spec = SyntheticSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc
    seed = args.seed[0] if args.seed else 0
    out_dir = Path(args.out)
    manifest = generate_synthetic(spec, out_dir, seed=seed)
    _echo_config(out_dir, {"spec": dataclasses.asdict(spec), "seed": seed})
    summary = {
        "manifest": str(out_dir / "manifest.json"),
        "videos": len(manifest.videos),
        "captions": len(manifest.captions),
        "splits": {s: len(ids) for s, ids in manifest.splits.items()},
        "contrastive_pairs": len(manifest.synthetic.get("contrastive_pairs", [])),
        "vocabulary_size": len(manifest.vocabulary),
    }
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    stats = validate_manifest(manifest)
    print(json.dumps(stats, indent=1, sort_keys=True))
    return EXIT_OK


def _load_run_config(args: argparse.Namespace) -> tuple[TrainConfig, dict]:
    raw = _read_json(args.config)
    known = {"train", "manifest", "out", "seeds", "split", "checkpoint", "resume"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    if "manifest" not in raw:
        raise ConfigError("run config needs a 'manifest' path")
    train_cfg = config_from_dict(raw.get("train", config_to_dict(tiny_train_config())))
    return train_cfg, raw


def cmd_train(args: argparse.Namespace) -> int:
    train_cfg, raw = _load_run_config(args)
    manifest_path = Path(raw["manifest"])
    if not manifest_path.is_file():
        raise ConfigError(f"manifest not found: {manifest_path}")
    ablations = _parse_ablations(args.ablation)
    train_cfg = apply_ablations(train_cfg, ablations)
    seeds = list(args.seed) if args.seed else list(raw.get("seeds", [train_cfg.seed]))
    if not seeds:
        raise ConfigError("at least one seed is required")
    out_dir = Path(args.out or raw.get("out") or "run_out")
    manifest = load_manifest(manifest_path)

    _echo_config(out_dir, {
        "command": "train",
        "manifest": str(manifest_path),
        "seeds": seeds,
        "ablations": ablations,
        "train": config_to_dict(train_cfg),
    })

    traces: dict[int, list[dict]] = {}
    val_traces: dict[int, list[dict]] = {}
    per_seed_metrics: dict[int, dict] = {}
    for seed in seeds:
        cfg = dataclasses.replace(train_cfg, seed=seed)
        start_step = 0
        model = optimizer = None
        resume = raw.get("resume")
        if resume:
            ckpt = load_checkpoint(resume, manifest)
            model, optimizer, start_step = ckpt.model, ckpt.optimizer, ckpt.step
        print(f"[seed {seed}] training for {cfg.total_steps - start_step} steps")
        result = train(manifest, cfg, model=model, optimizer=optimizer,
                       start_step=start_step, log=print)
        seed_dir = out_dir / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(seed_dir / "checkpoint.mmck", result.model, result.optimizer,
                        cfg.total_steps, cfg, vocabulary=manifest.vocabulary)
        traces[seed] = result.trace
        val_traces[seed] = result.val_trace
        report = evaluate_split(result.model, manifest, "val")
        per_seed_metrics[seed] = report
        print(f"[seed {seed}] val gmr {geometric_mean_recall(report):.2f}")

    write_train_report(out_dir, traces, val_traces,
                       {"manifest": str(manifest_path), "seeds": seeds})
    if len(seeds) >= 2:
        write_aggregate_report(out_dir, per_seed_metrics,
                               {"split": "val", "seeds": seeds})
    print(f"wrote checkpoints and reports under {out_dir}")
    return EXIT_OK


def _model_from_checkpoint(args: argparse.Namespace, manifest) -> RetrievalModel:
    ckpt = load_checkpoint(args.checkpoint, manifest)
    return ckpt.model


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    model = _model_from_checkpoint(args, manifest)
    ablations = _parse_ablations(args.ablation)
    unknown = set(ablations) - EVAL_ABLATIONS
    if unknown:
        raise ConfigError(
            f"eval-time ablations support only {sorted(EVAL_ABLATIONS)}, got {sorted(unknown)}")
    temporal = ablations.get("temporal")
    scores, video_ids, caption_ids = split_score_matrix(model, manifest, args.split,
                                                        temporal=temporal)
    report = evaluate_matrix(scores)
    ranks = {d: ranks_from_matrix(scores, d) for d in report}
    meta = {
        "checkpoint": str(args.checkpoint),
        "manifest": str(args.manifest),
        "split": args.split,
        "pairs": len(video_ids),
        "gmr": geometric_mean_recall(report),
        "ablations": ablations,
        "fingerprint": model.fingerprint(),
    }
    if manifest.synthetic and manifest.synthetic.get("contrastive_pairs"):
        in_split = set(manifest.splits[args.split])
        if any(a in in_split and b in in_split
               for a, b in manifest.synthetic["contrastive_pairs"]):
            meta["order_discrimination"] = order_discrimination_eval(
                model, manifest, args.split, temporal=temporal)
    out_dir = Path(args.out or "eval_out")
    paths = write_eval_report(out_dir, report, meta, ranks)
    _echo_config(out_dir, {"command": "eval", **meta})
    print((out_dir / "report.txt").read_text(), end="")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_precompute(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    model = _model_from_checkpoint(args, manifest)
    pairs = manifest.aligned_pairs(args.split)
    video_ids = [v.video_id for _, v in pairs]
    caps = [c for c, _ in pairs]
    psi, presence = model.video_representations(manifest, video_ids)
    phi, w = model.caption_representations(manifest, caps)
    meta = {
        "fingerprint": model.fingerprint(),
        "normalize_video": model.cfg.normalize_video,
        "renormalize_missing": model.cfg.encoder == "none",
        "split": args.split,
        "manifest": str(args.manifest),
    }
    out_dir = Path(args.out or "store_out")
    save_store(out_dir, video_ids, psi, presence, meta,
               caption_ids=[c.caption_id for c in caps], phi=phi, w=w)
    _echo_config(out_dir, {"command": "precompute", **meta})
    print(json.dumps({"store": str(out_dir), "videos": len(video_ids),
                      "captions": len(caps)}, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    store = load_store(args.store)
    if store.meta.get("fingerprint") != ckpt.fingerprint:
        raise DataError("store was precomputed with a different checkpoint "
                        f"({store.meta.get('fingerprint')} vs {ckpt.fingerprint})")
    if ckpt.vocabulary is None:
        raise DataError("checkpoint carries no vocabulary; cannot tokenize queries")
    model = ckpt.model
    k = args.k
    if k > len(store.video_ids):
        print(f"warning: k={k} exceeds store size {len(store.video_ids)}; "
              "returning all", file=sys.stderr)
        k = len(store.video_ids)
    ids = ckpt.vocabulary.encode(args.query, max_tokens=model.cfg.max_tokens,
                                 remove_stop_words=model.cfg.remove_stop_words)
    with no_grad():
        phi, w = model.caption.forward_tokens([ids])
    hits = rank_store_videos(store, phi.data[0], w.data[0], k)
    print(json.dumps({"query": args.query,
                      "results": [{"video_id": v, "score": s} for v, s in hits]},
                     indent=1, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossmodal",
        description="Train and evaluate video-caption retrieval models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a dataset manifest and its files")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--seed", type=int, action="append",
                   help="override config seeds (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ablation", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="report directory")
    p.add_argument("--ablation", action="append", metavar="KEY=VALUE",
                   help="eval-time behavior switches, e.g. temporal=unk")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("precompute", help="write an offline representation store")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="store directory")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("retrieve", help="query a store with caption text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_retrieve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CrossmodalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
