"""Command-line entry point: ``deepselect <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import SwitchGraphConfig, dijkstra_smooth
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .evaluate import EvalReport, evaluate, score_sequences
from .model import forward
from .plotting import PlotError, contact_sheet, plot
from .synthdata import DatasetError, SceneConfig, write_pgm, generate_dataset, read_dataset, write_dataset
from .tensor import NonFiniteError
from .train import (
    PROTOCOLS,
    ConfigError,
    DataError,
    NumericError,
    TrainConfig,
    Trainer,
    format_loss_log,
    split_dataset,
)

log = logging.getLogger("deepselect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_range(text: str) -> list[int]:
    """'a..b' (inclusive) or 'a,b,c' or 'a'."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a..b' or comma-separated integers, got {text!r}") from None


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def scene_config_from_json(data: dict):
    """Scene config plus the list of scene ids to generate."""
    data = dict(data)
    scenes = data.pop("scenes", [0, 1, 2, 3, 4])
    try:
        return SceneConfig.from_dict(data), [int(s) for s in scenes]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"scene config: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    base, scenes = scene_config_from_json(_load_json(args.config))
    if args.scenes is not None:
        scenes = args.scenes
    seqs = generate_dataset(base, scenes, args.seeds)
    write_dataset(seqs, args.out)
    log.info("wrote %d sequences to %s", len(seqs), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    seqs = read_dataset(args.data)
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        cfg = TrainConfig.from_dict(ckpt.train_config or {})
    else:
        ckpt = None
        try:
            cfg = TrainConfig.from_dict(_load_json(args.config))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    if args.epochs is not None:
        cfg.epochs = args.epochs
    train_seqs, _ = split_dataset(seqs, cfg.protocol, cfg.train_fraction, cfg.heldout_scenes)
    if ckpt is None:
        trainer = Trainer(cfg, train_seqs)
    else:
        trainer = Trainer(
            cfg, train_seqs, params=ckpt.params, adam=ckpt.adam, rng_state=ckpt.rng_state,
            epoch=ckpt.epoch, loss_log=ckpt.loss_log,
        )
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".loss.csv")

    def checkpoint(tr):
        save_checkpoint(trainer_checkpoint(tr), out)
        log_path.write_text(format_loss_log(tr.loss_log))

    trainer.fit(callback=checkpoint)
    if trainer.epoch == 0 or not out.exists():
        checkpoint(trainer)
    return EXIT_OK


def trainer_checkpoint(trainer: Trainer) -> Checkpoint:
    return Checkpoint(
        params=trainer.params,
        model_config=trainer.model_cfg,
        adam=trainer.adam,
        train_config=trainer.cfg.to_dict(),
        rng_state=trainer.rng.bit_generator.state,
        epoch=trainer.epoch,
        loss_log=trainer.loss_log,
    )


def _heldout(args, ckpt=None):
    if args.heldout is not None:
        return args.heldout
    if ckpt is not None and ckpt.train_config:
        return ckpt.train_config.get("heldout_scenes")
    return None


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    seqs = read_dataset(args.data)
    frac = (ckpt.train_config or {}).get("train_fraction", 0.8)
    report = evaluate(ckpt.params, ckpt.model_config, seqs, args.protocol, frac, _heldout(args, ckpt))
    report.write_csv(args.report)
    print(f"{args.protocol}: mean dice {report.overall:.4f} over {len(report.per_scene)} scenes")
    return EXIT_OK


def cmd_select(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    seqs = read_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_max = max(s.num_cameras for s in seqs)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "t", "label"] + [f"p{n}" for n in range(n_max)])
        for s in seqs:
            res = forward(s, ckpt.params, ckpt.model_config)
            for t in range(s.num_frames):
                w.writerow([s.seq_id, t, int(res.labels[t])] + [f"{p:.6f}" for p in res.probs[t]])
            if args.montage:
                mdir = Path(args.montage)
                mdir.mkdir(parents=True, exist_ok=True)
                write_pgm(mdir / f"{s.seq_id}.pgm", contact_sheet(s.frames, res.labels, s.labels, args.every))
    return EXIT_OK


def cmd_baseline(args) -> int:
    seqs = read_dataset(args.data)
    if args.protocol:
        _, seqs = split_dataset(seqs, args.protocol, 0.8, args.heldout)
    missing = [s.seq_id for s in seqs if s.visibility is None]
    if missing:
        raise DataError(f"baseline needs visibility scores; missing for {missing}")
    cfg = SwitchGraphConfig(switch_penalty=args.lam)
    rows = score_sequences(seqs, lambda s: dijkstra_smooth(s.visibility, cfg))
    report = EvalReport.from_predictions(rows, config={"baseline": "area+dijkstra", "lambda": args.lam})
    report.write_csv(args.report)
    print(f"area+dijkstra (lambda={args.lam}): mean dice {report.overall:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    for p in plot(args.inp, args.out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepselect", description="Best-view camera selection for multi-camera recordings.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", help="scene config JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seeds", type=_int_range, default=[0, 1, 2, 3], help="sequence seeds per scene, e.g. 0..3")
    g.add_argument("--scenes", type=_int_range, default=None, help="scene ids, overrides the config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a selection model")
    t.add_argument("--config", help="train config JSON")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="loss log CSV (default: <out>.loss.csv)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--epochs", type=int, help="override total epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", choices=PROTOCOLS, required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--heldout", type=_int_range, default=None, help="held-out scene ids for surgery-out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("select", help="write per-frame camera selections")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--montage", help="directory for contact-sheet PGMs")
    s.add_argument("--every", type=int, default=10, help="montage sampling interval in frames")
    s.set_defaults(func=cmd_select)

    b = sub.add_parser("baseline", help="area + Dijkstra smoothing on oracle visibility")
    b.add_argument("--data", required=True)
    b.add_argument("--lambda", dest="lam", type=float, default=0.5)
    b.add_argument("--report", required=True)
    b.add_argument("--protocol", choices=PROTOCOLS, default=None, help="score only the protocol's test side")
    b.add_argument("--heldout", type=_int_range, default=None)
    b.set_defaults(func=cmd_baseline)

    pl = sub.add_parser("plot", help="SVG charts from a loss log or report CSV")
    pl.add_argument("--in", dest="inp", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, DataError, CheckpointError, PlotError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
