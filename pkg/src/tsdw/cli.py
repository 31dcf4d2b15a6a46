"""Command-line pipeline: generate, train, eval, inspect.

One optional JSON config file carries command-specific sections
("generate", "train", "eval"); flags override config values. All
randomness funnels through the single seed, so identical inputs give
byte-identical outputs (wall-clock timestamps live only in the
training log).

Exit codes: 0 success, 2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, EvalError, FormatError, NumericsError
from .evaluator import EvalProtocol, ablation_sweep, evaluate
from .fusion import fused_matrix, load_dwt_checkpoint, save_dwt_checkpoint
from .nn import LrSchedule
from .store import load_embeddings, save_embeddings
from .synth import SynthConfig, generate
from .trainer import PkSamplerConfig, TrainConfig, apply_adapters_to_set, train_fusion

_USAGE_ERRORS = (ConfigError, DimensionError, FormatError, EvalError, FileNotFoundError,
                 IsADirectoryError, NotADirectoryError, KeyError, TypeError,
                 json.JSONDecodeError, ValueError)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _resolve_seed(args, section: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(section.get("seed", 0))


def cmd_generate(args) -> int:
    section = _load_config(args.config).get("generate", {})
    section["seed"] = _resolve_seed(args, section)
    cfg = SynthConfig.from_dict(section)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    train, query, gallery = generate(cfg)
    paths = {}
    for name, eset in (("train", train), ("query", query), ("gallery", gallery)):
        path = out_dir / f"{name}.tsdw"
        save_embeddings(eset, path)
        paths[name] = {
            "path": str(path),
            "records": len(eset),
            "face_absent": int((~eset.face_present).sum()),
        }
    manifest = {"config": cfg.to_dict(), "files": paths, "seed": cfg.seed}
    print(json.dumps(manifest, sort_keys=True, indent=2))
    return 0


def _train_config(section: dict, seed: int) -> TrainConfig:
    schedule = LrSchedule(
        base_lr=float(section.get("base_lr", 5e-6)),
        milestones=tuple(section.get("milestones", (20, 40))),
        gamma=float(section.get("lr_gamma", 0.1)),
    )
    sampler = PkSamplerConfig(
        p_identities=int(section.get("p_identities", 4)),
        k_per_identity=int(section.get("k_per_identity", 8)),
        seed=seed,
    )
    return TrainConfig(
        epochs=int(section.get("epochs", 50)),
        freeze_epochs=int(section.get("freeze_epochs", 10)),
        schedule=schedule,
        weight_decay=float(section.get("weight_decay", 5e-4)),
        margin=float(section.get("margin", 0.3)),
        branch_temperature=float(section.get("branch_temperature", 0.1)),
        adapter_enabled=bool(section.get("adapter_enabled", False)),
        seed=seed,
        sampler=sampler,
        hidden_dim=int(section.get("hidden_dim", 64)),
    )


def cmd_train(args) -> int:
    section = _load_config(args.config).get("train", {})
    seed = _resolve_seed(args, section)
    cfg = _train_config(section, seed)
    train_set = load_embeddings(args.train, role="train")
    result = train_fusion(train_set, cfg)
    out = Path(args.out or "dwt.ckpt")
    save_dwt_checkpoint(out, result.params,
                        meta={"epoch": cfg.epochs, "seed": seed},
                        adapters=result.adapters)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    with open(log_path, "w") as fh:
        for entry in result.history:
            fh.write(json.dumps({**entry, "wall_time": time.time()}, sort_keys=True) + "\n")
    final = result.history[-1]["mean_loss"] if result.history else None
    print(json.dumps({"checkpoint": str(out), "log": str(log_path),
                      "epochs": cfg.epochs, "final_mean_loss": final, "seed": seed},
                     sort_keys=True))
    return 0


def _report_payload(report, include_per_query: bool) -> dict:
    return json.loads(report.to_json(include_per_query=include_per_query))


def cmd_eval(args) -> int:
    section = _load_config(args.config).get("eval", {})
    seed = _resolve_seed(args, section)
    params, meta, adapters = load_dwt_checkpoint(args.checkpoint)
    query = load_embeddings(args.query, role="query")
    gallery = load_embeddings(args.gallery, role="gallery")
    query = apply_adapters_to_set(query, adapters)
    gallery = apply_adapters_to_set(gallery, adapters)
    mode = args.mode or section.get("mode", "standard")
    protocol = EvalProtocol(mode=mode, cross_camera_only=not args.no_cross_camera)

    if args.ablate:
        reports = ablation_sweep(query, gallery, params, protocol)
        payload = {name: _report_payload(r, args.per_query) for name, r in reports.items()}
    else:
        matrix_mode = "soft" if args.soft else "hard"
        matrix = fused_matrix(params, query, gallery, mode=matrix_mode,
                              temperature=args.temperature)
        report = evaluate(matrix, query, gallery, protocol, seed=seed)
        payload = _report_payload(report, args.per_query)

    text = json.dumps(payload, sort_keys=True, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_inspect(args) -> int:
    eset = load_embeddings(args.file)
    present = eset.face_present
    payload = {
        "records": len(eset),
        "dims": list(eset.dims),
        "identities": int(np.unique(eset.person_ids).size) if len(eset) else 0,
        "cameras": int(np.unique(eset.camera_ids).size) if len(eset) else 0,
        "clothes_classes": int(np.unique(eset.clothes_ids).size) if len(eset) else 0,
        "face_present": int(present.sum()),
        "face_absent": int((~present).sum()),
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsdw", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p):
        p.add_argument("--config", help="JSON config with command sections")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--deterministic", action="store_true",
                       help="force serial execution (computation is serial already)")
        p.add_argument("--out", help="output path")

    p_gen = sub.add_parser("generate", help="write synthetic train/query/gallery files")
    add_shared(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train the fusion head on an embedding file")
    add_shared(p_train)
    p_train.add_argument("--train", required=True, help="training embedding file")
    p_train.add_argument("--log", help="JSONL training log path")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on query/gallery files")
    add_shared(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--query", required=True)
    p_eval.add_argument("--gallery", required=True)
    p_eval.add_argument("--mode", choices=("standard", "same_clothes", "cloth_changing"))
    p_eval.add_argument("--ablate", action="store_true",
                        help="full sweep: single streams, fixed fusions, dynamic head")
    mode_group = p_eval.add_mutually_exclusive_group()
    mode_group.add_argument("--hard", action="store_true", help="discrete branching (default)")
    mode_group.add_argument("--soft", action="store_true", help="tempered relaxation")
    p_eval.add_argument("--temperature", type=float, default=None,
                        help="soft-mode branch temperature override")
    p_eval.add_argument("--no-cross-camera", action="store_true",
                        help="keep same-camera matches of the same identity")
    p_eval.add_argument("--per-query", action="store_true", help="include per-query AP")
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect", help="summarize an embedding file")
    p_inspect.add_argument("file")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
