"""Command line interface.

Subcommands: ``synth`` (write a synthetic embedding dataset), ``train``,
``eval``, ``gradcheck``, ``report``. Exit codes: 0 ok, 2 config error,
3 numeric error, 4 format error, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_run_config, load_synth_spec
from .data import generate_synthetic, load_dataset_dir, save_dataset
from .errors import ConfigError, FormatError, MstdtError, NumericError
from .model import VideoTextModel
from .params import load_checkpoint
from .training import evaluate_model, grad_check, train


def _cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    ds = generate_synthetic(spec)
    paths = save_dataset(ds, args.out)
    print(f"wrote {len(ds.videos)} videos, {len(ds.captions)} captions, "
          f"{len(ds.pairs)} pairs to {args.out}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def _cmd_train(args) -> int:
    from .reporting import render_history_report, save_history, write_report_files

    cfg = load_run_config(args.config)
    result = train(cfg, out_dir=args.out)
    out = Path(args.out)
    save_history(result.history, out / "history.json")
    render_history_report(result.history, out)
    if result.history.steps:
        print(f"trained {len(result.history.steps)} steps; "
              f"final loss {result.history.steps[-1]['loss']:.6f}")
    else:
        print("no training steps (epochs = 0)")
    t2v, v2t = evaluate_model(result.model, result.params, result.dataset, tie=cfg.tie)
    write_report_files(t2v, v2t, out)
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    print(f"t2v R@1 {t2v.r_at[1]:.1f}  v2t R@1 {v2t.r_at[1]:.1f}  "
          f"rsum {t2v.r_sum + v2t.r_sum:.1f}")
    return 0


def _find_config(checkpoint: Path, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    sibling = checkpoint.parent / "config.txt"
    if not sibling.exists():
        raise ConfigError(
            f"no config next to {checkpoint}; pass --config explicitly"
        )
    return sibling


def _cmd_eval(args) -> int:
    from .metrics import report_lines
    from .reporting import write_report_files

    checkpoint = Path(args.checkpoint)
    cfg = load_run_config(_find_config(checkpoint, args.config))
    ds = load_dataset_dir(args.data)
    model = VideoTextModel(cfg.model)
    params = model.init_params(cfg.seed)
    params.load_arrays(load_checkpoint(checkpoint))
    t2v, v2t = evaluate_model(model, params, ds, tie=cfg.tie)
    for line in report_lines(t2v, v2t):
        print(line)
    if args.out:
        paths = write_report_files(t2v, v2t, args.out)
        print(f"wrote {paths['text']} and {paths['json']}")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config)
    report = grad_check(cfg)
    for line in report.lines():
        print(line)
    return 0


def _cmd_report(args) -> int:
    from .reporting import load_history, render_history_report

    history_path = Path(args.history)
    out_dir = Path(args.out) if args.out else history_path.parent
    history = load_history(history_path)
    written = render_history_report(history, out_dir)
    if not written:
        print("history is empty; nothing to render")
        return 0
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstdt",
        description="Multi-scale temporal difference transformer harness "
                    "over pre-extracted video/caption embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--spec", required=True, help="synth.* key-value file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, help="run config key-value file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory with videos/captions/pairs.bin")
    p.add_argument("--config", default=None,
                   help="run config (default: config.txt next to the checkpoint)")
    p.add_argument("--out", default=None, help="also write report files here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("report", help="render figures and CSV tables from a history file")
    p.add_argument("--history", required=True)
    p.add_argument("--out", default=None, help="output directory (default: alongside history)")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 4
    except MstdtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
