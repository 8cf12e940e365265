"""Command-line interface.

Subcommands: gen-data, train, edit, traverse, trajectory, eval, metrics.
Every run takes an optional YAML config plus ``--set section.key=value``
overrides and a ``--seed``. Exit codes: 0 success, 2 validation error,
1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError


def _load_config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    overrides = getattr(args, "set", None) or []
    cfg.apply_overrides(overrides)
    return cfg


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")
    p.add_argument("--seed", type=int, default=None)


def cmd_gen_data(args) -> int:
    from . import scenes

    cfg = _load_config(args)
    out = args.out or cfg.data.root
    manifest = scenes.generate_dataset(
        seed=cfg.seed, n_train=args.n_train or cfg.data.n_train,
        n_test=args.n_test or cfg.data.n_test,
        resolution=args.resolution or cfg.data.resolution,
        out_dir=out, overwrite=args.overwrite)
    print(f"wrote {manifest}")
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = _load_config(args)
    data_root = args.data or cfg.data.root
    summary = train(cfg, data_root, args.out, max_steps=args.max_steps)
    print(json.dumps({k: summary[k] for k in ("steps", "seconds", "checkpoint", "log")},
                     indent=2))
    return 0


def _load_clip_by_id(data_root, clip_id):
    from . import scenes

    records = {r["clip_id"]: r for r in scenes.load_manifest(data_root)}
    if clip_id not in records:
        raise ConfigError(f"clip {clip_id!r} not found in {data_root}")
    return scenes.load_clip(data_root, records[clip_id])


def cmd_edit(args) -> int:
    from PIL import Image

    from .evaluation import eval_solver, load_networks
    from .textenc import build_text_encoder
    from .tranet import manipulate_clip

    cfg, nets = load_networks(args.checkpoint)
    clip = _load_clip_by_id(args.data, args.clip)
    text_encoder = build_text_encoder(cfg.text)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    edited = manipulate_clip(clip, args.text, nets["repnet"], nets["tranet"],
                             text_encoder, k_random=cfg.train.k_random, rng=rng,
                             solver=eval_solver(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(edited.numpy()):
        arr = np.round(frame.transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out / f"edited_{i:04d}.png")
    print(f"wrote {len(edited)} frames to {out}")
    return 0


def cmd_traverse(args) -> int:
    from . import metrics
    from .evaluation import eval_solver, load_networks
    from .textenc import build_text_encoder

    cfg, nets = load_networks(args.checkpoint)
    clip = _load_clip_by_id(args.data, args.clip)
    dims = [int(d) for d in args.dims.split(",")]
    values = [float(v) for v in args.values.split(",")]
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    tra = nets["tranet"] if args.with_translation else None
    metrics.traversal_grid(nets["repnet"], clip, dims, values, tra_net=tra,
                           text_encoder=build_text_encoder(cfg.text) if tra else None,
                           k_random=cfg.train.k_random, rng=rng,
                           solver=eval_solver(cfg), out_path=args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_trajectory(args) -> int:
    from . import metrics
    from .evaluation import eval_solver, load_networks

    cfg, nets = load_networks(args.checkpoint)
    clip = _load_clip_by_id(args.data, args.clip)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seed)
    dense = np.linspace(0.0, 1.0, args.points)
    metrics.dyn_trajectory_report(nets["repnet"], clip, dense, out_csv=args.out_csv,
                                  out_png=args.out_png, k_random=cfg.train.k_random,
                                  rng=rng, solver=eval_solver(cfg))
    print(f"wrote {args.out_csv}" + (f" and {args.out_png}" if args.out_png else ""))
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate, load_networks

    cfg, nets = load_networks(args.checkpoint)
    seed = args.seed if args.seed is not None else cfg.seed
    report = evaluate(cfg, args.data, nets, n_samples=args.n_samples, seed=seed,
                      out_dir=args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_metrics(args) -> int:
    from .metrics import CodeFactorTable, aam, mig

    table = CodeFactorTable.load(args.codes, args.factors)
    report = {"mig": mig(table, bins=args.bins), "aam": aam(table, bins=args.bins),
              "n_samples": int(table.codes.shape[0])}
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videdit",
                                     description="text-driven video editing workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--out", help="dataset directory (default: data.root)")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--resolution", type=int, choices=(32, 64))
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the full model")
    _add_common(p)
    p.add_argument("--data", help="dataset directory (default: data.root)")
    p.add_argument("--out", required=True, help="run directory for logs/checkpoints")
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="manipulate a clip with a target description")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True, help="clip id from the manifest")
    p.add_argument("--text", required=True, help="target description")
    p.add_argument("--out", required=True, help="output frame directory")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("traverse", help="latent traversal grid PNG")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--dims", default="0", help="comma-separated latent dims")
    p.add_argument("--values", default="-2,-1,0,1,2", help="comma-separated values")
    p.add_argument("--with-translation", action="store_true")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("trajectory", help="dynamic-code trajectory CSV/plot")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--points", type=int, default=60)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-png", default=None)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("eval", help="full metric report on the test split")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n-samples", type=int, default=64)
    p.add_argument("--out", default=None, help="directory for metrics.json and CSV dumps")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="MIG/AAM from dumped code/factor CSVs")
    _add_common(p, config=False)
    p.add_argument("--codes", required=True)
    p.add_argument("--factors", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)
    return parser


VALIDATION_ERRORS = (ConfigError, ValueError, FileExistsError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
