"""Command-line surface.

Verbs: generate, train, eval, robustness, export-views, ablate.
Exit codes: 0 success, 1 usage error (including refused overwrites),
2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import sys

from . import experiment as exp
from .config import load_config
from .data import CorruptionSpec
from .errors import (EmptySequence, ModelError, ParseError, RefusedOverwrite,
                     SpecError, TrainingDiverged, UnsupportedSkeleton)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p, config_required=True):
    p.add_argument("--config", required=config_required,
                   help="path to a SAPCFG1 config file")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's run seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty output directory")


def _corruption_args(p):
    p.add_argument("--corrupt-kind", default=None,
                   choices=["rotation", "remove_joints", "disturb_joints"])
    p.add_argument("--rotation-bound", type=float, default=0.0)
    p.add_argument("--frame-fraction", type=float, default=0.0)
    p.add_argument("--joints-per-frame", type=int, default=0)
    p.add_argument("--noise-mean", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--corrupt-seed", type=int, default=0)


def _corruption_from_args(args):
    if args.corrupt_kind is None:
        return None
    return CorruptionSpec(
        kind=args.corrupt_kind, rotation_bound=args.rotation_bound,
        affected_frame_fraction=args.frame_fraction,
        joints_per_frame=args.joints_per_frame,
        noise_mean=args.noise_mean, noise_std=args.noise_std,
        seed=args.corrupt_seed)


def build_parser() -> _Parser:
    parser = _Parser(prog="skelview",
                     description="Multi-view angle features for skeleton "
                                 "action recognition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset to disk")
    _add_common(p)

    p = sub.add_parser("train", help="train a model from a config")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a stored run")
    p.add_argument("--checkpoint", required=True,
                   help="run directory or checkpoint file")
    p.add_argument("--split", default="eval",
                   choices=["train", "eval", "all"])
    p.add_argument("--manifest", default=None,
                   help="evaluate on this manifest instead of the run's "
                        "dataset")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    _corruption_args(p)

    p = sub.add_parser("robustness",
                       help="corruption-grid accuracy for stored runs")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="run directory or checkpoint file (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("export-views",
                       help="export anchors, provenance, and angles for one "
                            "sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True,
                   help="SKL1 or raw NTU .skeleton file")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("ablate", help="sweep one ablation axis")
    _add_common(p)
    p.add_argument("--axis", required=True,
                   choices=["heads", "fusion", "location"])
    return parser


def _resolved_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_updates(seed=args.seed)
    return cfg


def _require_out(args):
    if args.out is None:
        raise _UsageError("--out is required")
    return args.out


def run(argv) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        cfg = _resolved_config(args)
        manifest = exp.run_generate(cfg, _require_out(args), force=args.force)
        print(f"wrote {manifest}")
    elif args.command == "train":
        cfg = _resolved_config(args)
        _, metrics = exp.run_train(cfg, _require_out(args), force=args.force)
        final = [m for m in metrics if m["split"] == "val"]
        if final:
            print(f"final val accuracy {final[-1]['accuracy']:.4f}")
        print(f"run written to {args.out}")
    elif args.command == "eval":
        result = exp.run_eval(args.checkpoint,
                              corruption=_corruption_from_args(args),
                              split=args.split, manifest=args.manifest)
        lines = ["metric,value"] + [f"{k},{result[k]!r}"
                                    for k in sorted(result)]
        text = "\n".join(lines) + "\n"
        if args.out is not None:
            import os
            out = exp.ensure_out_dir(args.out, args.force)
            with open(os.path.join(out, "eval.csv"), "w") as f:
                f.write(text)
        sys.stdout.write(text)
    elif args.command == "robustness":
        report = exp.run_robustness(args.checkpoint, args.out,
                                    force=args.force)
        sys.stdout.write(report.to_csv())
    elif args.command == "export-views":
        exp.run_export_views(args.checkpoint, args.sequence, args.out,
                             force=args.force)
        print(f"views exported to {args.out}")
    elif args.command == "ablate":
        cfg = _resolved_config(args)
        rows = exp.run_ablate(cfg, args.axis, _require_out(args),
                              force=args.force)
        for axis, arm, acc in rows:
            print(f"{axis} {arm}: {acc:.4f}")
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except (_UsageError, RefusedOverwrite) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (ParseError, UnsupportedSkeleton, EmptySequence, SpecError,
            ModelError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except TrainingDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
