"""Command-line entrypoint.

Subcommands: synth | build-ovad | detect | eval | losses-check |
provider-probe.  Every command echoes its effective configuration (with the
resolved seed) on stdout and fails with a machine-readable JSON error on
stderr; exit codes are 1 for configuration errors, 2 for data errors, and 3
for provider errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config, run_config_to_dict
from .errors import ConfigError, DataError, OvodaError, ProviderError
from .evaluation import (
    DetObject,
    GtObject,
    PredictedEvent,
    evaluate_detections,
    gt_attribute_items,
    sr_ad_od,
    sr_ad_only,
)
from .geometry import Box3D
from .losses import (
    alignment_value_and_grad,
    classification_value_and_grad,
    grad_check,
    softmax_ce_value_and_grad,
)
from .pipeline import build_pair_records, run_attribute_oracle, run_detection
from .proposals import load_proposals
from .providers import RemoteProvider
from .scene_io import canonical_json, generate_synthetic, load_dataset, write_dataset
from .vocab import load_vocabulary

GRAD_TOLERANCE = 1e-4


def _echo_config(cfg: RunConfig) -> None:
    print(canonical_json({"effective_config": run_config_to_dict(cfg)}))


def _write_records(records: list[dict], path: Path) -> None:
    lines = [canonical_json(r) for r in records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def _read_records(path: Path) -> list[dict]:
    if not path.exists():
        raise DataError(f"file not found: {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"missing required path for {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file not found: {path}")
    return p


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(cfg.synth, cfg.seed)
    write_dataset(ds, out / "dataset.json")
    _echo_config(cfg)
    print(canonical_json({"written": str(out / "dataset.json"), "scenes": len(ds.scenes)}))
    return 0


def cmd_build_ovad(cfg: RunConfig) -> int:
    dataset = load_dataset(_require_file(cfg.dataset, "dataset"))
    records, counts = build_pair_records(
        dataset, cfg.thresholds.max_pair_distance_m, cfg.thresholds.pair_distance_3d
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_records(records, out / "ovad_pairs.jsonl")
    _echo_config(cfg)
    print(canonical_json({"pairs": len(records), "relation_counts": counts}))
    return 0


def cmd_detect(cfg: RunConfig) -> int:
    dataset = load_dataset(_require_file(cfg.dataset, "dataset"))
    vocab = load_vocabulary(cfg.vocabulary or dataset.vocabulary_ref)
    provider = cfg.make_provider()
    proposals = None
    if cfg.proposals:
        proposals = load_proposals(_require_file(cfg.proposals, "proposals"), dataset)
    detections, events = run_detection(
        dataset,
        provider,
        cfg.settings(),
        proposals=proposals,
        proposer_noise=cfg.proposer,
        vocabulary=vocab,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_records(detections, out / "detections.jsonl")
    _write_records(events, out / "events.jsonl")
    summary = {"detections": len(detections), "events": len(events)}
    if cfg.emit_attribute_oracle:
        oracle = run_attribute_oracle(dataset, provider, cfg.settings(), vocabulary=vocab)
        _write_records(oracle, out / "events_oracle.jsonl")
        summary["oracle_events"] = len(oracle)
    _echo_config(cfg)
    print(canonical_json(summary))
    return 0


def _detections_to_objects(records: list[dict]) -> list[DetObject]:
    return [
        DetObject(
            (r["scene"], int(r["frame"])),
            r["class_name"],
            Box3D.from_dict(r["box"]),
            float(r["score"]),
        )
        for r in records
    ]


def _events_to_predictions(records: list[dict]) -> list[PredictedEvent]:
    return [
        PredictedEvent(
            r["kind"],
            r["scene"],
            int(r["frame"]),
            tuple(r["member_classes"]),
            r["predicted_attribute"],
            Box3D.from_dict(r["box"]),
            float(r.get("score", 0.0)),
            tuple(r["gt_keys"]) if r.get("gt_keys") else None,
        )
        for r in records
    ]


def cmd_eval(cfg: RunConfig, detections_path: str, events_path: str, oracle_path: str) -> int:
    dataset = load_dataset(_require_file(cfg.dataset, "dataset"))
    vocab = load_vocabulary(cfg.vocabulary or dataset.vocabulary_ref)
    gts = [
        GtObject((scene.scene_id, fi), ann.class_name, ann.box)
        for scene in dataset.scenes
        for fi, frame in enumerate(scene.frames)
        for ann in frame.annotations
    ]
    dets = _detections_to_objects(_read_records(_require_file(detections_path, "detections")))
    report = evaluate_detections(
        gts, dets, cfg.matching, novel_classes=vocab.novel_objects
    )
    items = gt_attribute_items(
        dataset, vocab, cfg.thresholds.max_pair_distance_m, cfg.thresholds.pair_distance_3d
    )
    if events_path:
        events = _events_to_predictions(_read_records(Path(events_path)))
        report.sr_ad_od_value = sr_ad_od(items, events)
    if oracle_path:
        oracle = _events_to_predictions(_read_records(Path(oracle_path)))
        predictions = {
            (ev.kind, ev.scene_id, ev.frame_index, ev.gt_keys): ev.attribute
            for ev in oracle
            if ev.gt_keys is not None
        }
        report.sr_ad_only_value = sr_ad_only(items, predictions)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canonical_json(report.to_dict()))
    _echo_config(cfg)
    print(report.render_table())
    return 0


def cmd_losses_check(cfg: RunConfig, trials: int) -> int:
    rng = np.random.default_rng(cfg.seed)
    results = []
    for trial in range(trials):
        a = rng.normal(size=(4, 6))
        offset = rng.uniform(0.5, 1.5, size=(4, 6)) * rng.choice([-1.0, 1.0], size=(4, 6))
        b = a + offset
        err_l1 = grad_check(lambda x: alignment_value_and_grad(x, b), a)
        logits = rng.normal(size=(1, 5))
        onehot = np.eye(5)[rng.integers(0, 5)]
        err_ce = grad_check(
            lambda x: softmax_ce_value_and_grad(x.ravel(), onehot), logits
        )
        # Feature scale 0.5 keeps probabilities above the log clamp, where
        # the loss is smooth and the analytic gradient is exact.
        V = 0.5 * rng.normal(size=(3, 6))
        T = 0.5 * rng.normal(size=(4, 6))
        H = np.eye(4)[rng.integers(0, 4, size=3)]
        indicators = np.ones(3)
        err_cls = grad_check(
            lambda x: classification_value_and_grad(x, T, 1.0, H, indicators), V
        )
        results.append(
            {
                "trial": trial,
                "alignment_l1": err_l1,
                "softmax_ce": err_ce,
                "gated_classification": err_cls,
            }
        )
    worst = float(
        max(max(r["alignment_l1"], r["softmax_ce"], r["gated_classification"]) for r in results)
    )
    ok = bool(worst <= GRAD_TOLERANCE)
    _echo_config(cfg)
    print(
        json.dumps(
            {"trials": trials, "max_relative_error": worst, "tolerance": GRAD_TOLERANCE, "pass": ok},
            sort_keys=True,
        )
    )
    return 0 if ok else 2


def cmd_provider_probe(url: str) -> int:
    provider = RemoteProvider(url)
    t0 = time.monotonic()
    dim = provider.dimension
    health_ms = (time.monotonic() - t0) * 1000.0
    t0 = time.monotonic()
    vecs = provider.embed_text(["probe"])
    embed_ms = (time.monotonic() - t0) * 1000.0
    print(
        canonical_json(
            {
                "url": url,
                "dim": dim,
                "vector_dim": int(vecs.shape[1]),
                "health_latency_ms": health_ms,
                "embed_latency_ms": embed_ms,
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovoda",
        description="Open-vocabulary 3D object and attribute detection pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key (dotted path)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", dest="out_dir", default=None, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)

    p = sub.add_parser("build-ovad", help="build the ground-truth pair dataset")
    common(p)
    p.add_argument("--dataset", default=None)

    p = sub.add_parser("detect", help="run the detection + event pipeline")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--proposals", default=None)
    p.add_argument("--provider-url", default=None, help="use a remote embedding service")

    p = sub.add_parser("eval", help="score detections and events against ground truth")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--detections", required=True)
    p.add_argument("--events", default="")
    p.add_argument("--events-oracle", default="")

    p = sub.add_parser("losses-check", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--trials", type=int, default=20)

    p = sub.add_parser("provider-probe", help="check a remote embedding endpoint")
    p.add_argument("--url", required=True)
    return parser


def _config_from_args(args) -> RunConfig:
    direct: dict = {}
    if args.seed is not None:
        direct["seed"] = args.seed
    if args.out_dir is not None:
        direct["out_dir"] = args.out_dir
    if getattr(args, "dataset", None):
        direct["dataset"] = args.dataset
    if getattr(args, "proposals", None):
        direct["proposals"] = args.proposals
    if getattr(args, "provider_url", None):
        direct["provider"] = {"kind": "remote", "url": args.provider_url}
    return load_run_config(args.config, args.overrides, direct)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "provider-probe":
            return cmd_provider_probe(args.url)
        cfg = _config_from_args(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "build-ovad":
            return cmd_build_ovad(cfg)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.detections, args.events, args.events_oracle)
        if args.command == "losses-check":
            return cmd_losses_check(cfg, args.trials)
        raise ConfigError(f"unknown command {args.command!r}")
    except OvodaError as exc:
        code = getattr(exc, "exit_code", None)
        if code is None:
            code = 2 if isinstance(exc, DataError) else 1
        kind = {1: "config", 2: "data", 3: "provider"}.get(code, "error")
        print(json.dumps({"error": str(exc), "kind": kind}), file=sys.stderr)
        return code
    except OSError as exc:
        print(json.dumps({"error": str(exc), "kind": "data"}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
