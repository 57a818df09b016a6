"""``csfnet`` command line: build, infer, train, eval, bench, describe, gradcheck, aolp."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from .accounting import count_parameters, describe, estimate_flops
from .bench import benchmark_fps
from .checks import MODULES, run_check
from .data import (
    DataError,
    IGNORE,
    Sample,
    class_histogram,
    compute_aolp,
    default_palette,
    load_folder,
    load_gray,
    load_image,
    load_label,
    load_palette,
    make_x_input,
    normalize_depth,
    save_gray_png,
    save_prediction,
    synth_dataset,
)
from .data.folder import find, stems
from .engine.gradcheck import RTOL
from .metrics import accumulate_confusion, evaluate, predict, report
from .network import build
from .runconfig import ConfigError, RunConfig
from .trainer import TrainingDiverged, train_loop


class CliError(Exception):
    pass


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    return RunConfig()


def _need(path: Optional[str], flag: str) -> Path:
    if not path:
        raise CliError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{flag} {p} does not exist")
    return p


def _model(run: RunConfig, checkpoint: Optional[str], seed: int = 0):
    net, store = build(run.model(), seed)
    if checkpoint:
        ckpt.restore(store, _need(checkpoint, "--checkpoint"))
    return net, store


def cmd_build(args) -> int:
    run = _config(args)
    net, store = build(run.model(), args.seed)
    print(f"parameters {count_parameters(store):,}")
    if args.save:
        ckpt.save_checkpoint(store, args.save)
        print(f"wrote {args.save}")
    return 0


def cmd_infer(args) -> int:
    run = _config(args)
    cfg = run.model()
    rgb = load_image(_need(args.rgb, "--rgb"))
    raw = load_gray(_need(args.x, "--x"))
    if run.modality == "depth":
        raw = normalize_depth(raw)
    if raw.shape != rgb.shape[1:]:
        raise CliError(f"--x is {raw.shape[1]}x{raw.shape[0]} but --rgb is {rgb.shape[2]}x{rgb.shape[1]}")
    x = make_x_input(run.modality, raw, rgb)
    net, _ = _model(run, args.checkpoint)
    sample = Sample(rgb, x, np.zeros(rgb.shape[1:], np.uint8))
    pred = next(iter(predict(net, [sample])))
    palette = load_palette(run.get("palette")) if run.get("palette") else default_palette()
    save_prediction(pred, args.out_png, args.out_pgm, palette)
    hist = class_histogram(pred, cfg.num_classes)
    for c, n in enumerate(hist):
        print(f"class {c:>3} {n:>10} px")
    return 0


def _dataset(run: RunConfig, args):
    cfg = run.model()
    if args.synthetic:
        n = run.get("synthetic_samples", 20)
        return synth_dataset(run.get("seed", 0), n, (cfg.width, cfg.height), cfg.num_classes)
    data_dir = args.data_dir or run.get("data_dir")
    if not data_dir:
        raise CliError("give --synthetic or --data-dir (or data_dir in the config)")
    return load_folder(_need(str(data_dir), "--data-dir"), run.modality)


def cmd_train(args) -> int:
    run = RunConfig.load(args.config) if args.config else RunConfig.toy()
    if args.iters is not None and args.iters < 1:
        raise CliError(f"--iters must be at least 1, got {args.iters}")
    tcfg = run.train(**({"max_iters": args.iters} if args.iters is not None else {}))
    dataset = _dataset(run, args)
    net, store = build(run.model(), tcfg.seed)

    def log(row):
        if row.iter % args.log_every == 0 or row.iter == tcfg.max_iters - 1:
            print(f"iter {row.iter:>5}  loss {row.loss:.4f}  lr {row.lr:.6f}", flush=True)

    history = train_loop(net, store, dataset, tcfg, on_iter=log)
    if args.save:
        ckpt.save_checkpoint(store, args.save)
        hist_path = Path(args.history) if args.history else Path(args.save).with_suffix(".csv")
    else:
        hist_path = Path(args.history) if args.history else None
    if hist_path is not None:
        with open(hist_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "loss", "lr"])
            for row in history:
                w.writerow([row.iter, f"{row.loss:.6f}", f"{row.lr:.8f}"])
        print(f"wrote {hist_path}")
    print(f"loss {history[0].loss:.4f} -> {history[-1].loss:.4f}")
    return 0


def cmd_eval(args) -> int:
    run = _config(args)
    cfg = run.model()
    data_dir = _need(args.data_dir or (str(run.get("data_dir")) if run.get("data_dir") else None), "--data-dir")
    k = cfg.num_classes
    if args.pred_dir:
        pred_dir = _need(args.pred_dir, "--pred-dir")
        conf = np.zeros((k, k), np.int64)
        label_dir = data_dir / "labels" if (data_dir / "labels").is_dir() else data_dir
        for stem in stems(label_dir):
            label = load_label(find(label_dir, stem))
            pred = load_label(find(pred_dir, stem))
            accumulate_confusion(pred, label, k, IGNORE, conf)
        rep = report(conf)
    else:
        net, _ = _model(run, args.checkpoint)
        rep = evaluate(net, load_folder(data_dir, run.modality), k)
    print(rep.format())
    return 0


def cmd_bench(args) -> int:
    run = _config(args)
    w = args.width or run.model().width
    h = args.height or run.model().height
    cfg = run.model(width=w, height=h)
    net, store = build(cfg, 0)
    rep = benchmark_fps(
        net, (1, cfg.rgb_channels, h, w), cfg.x_channels, args.warmup, args.iters,
        params=count_parameters(store), flops=estimate_flops(cfg),
    )
    print(rep.format())
    if args.csv:
        Path(args.csv).write_text(rep.csv())
        print(f"wrote {args.csv}")
    return 0


def cmd_describe(args) -> int:
    run = _config(args)
    cfg = run.model(**{k: v for k, v in (("width", args.width), ("height", args.height)) if v})
    print(describe(cfg, macs=args.macs))
    return 0


def cmd_gradcheck(args) -> int:
    names = MODULES if args.module == "all" else (args.module,)
    ok = True
    for name in names:
        res = run_check(name, args.seed)
        status = "PASS" if res.passed else "FAIL"
        ok &= res.passed
        print(f"{name:<8} max rel error {res.max_error:.3e}  "
              f"({res.failures}/{res.checked} over {RTOL:g})  {status}")
    return 0 if ok else 1


def cmd_aolp(args) -> int:
    maps = [load_gray(_need(p, f"--{n}")) for p, n in
            ((args.i0, "i0"), (args.i45, "i45"), (args.i90, "i90"), (args.i135, "i135"))]
    save_gray_png(compute_aolp(*maps), args.out)
    print(f"wrote {args.out}")
    return 0


def parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="csfnet", description=__doc__, formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("build", cmd_build, "build a model, print its size, optionally save the initial checkpoint")
    sp.add_argument("--config", help="run configuration file")
    sp.add_argument("--seed", type=int, default=0, help="initialization seed")
    sp.add_argument("--save", help="checkpoint path to write")

    sp = add("infer", cmd_infer, "segment one RGB + X pair")
    sp.add_argument("--config", help="run configuration file")
    sp.add_argument("--rgb", required=True, help="RGB image")
    sp.add_argument("--x", required=True, help="single-channel X modality image")
    sp.add_argument("--checkpoint", help="trained checkpoint (default: seeded init)")
    sp.add_argument("--out-png", default="pred.png", help="indexed-color prediction")
    sp.add_argument("--out-pgm", default="pred.pgm", help="class-index prediction (P5)")

    sp = add("train", cmd_train, "train on synthetic scenes or a data directory")
    sp.add_argument("--config", help="run configuration file (default: built-in toy setup)")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="use generated RGB-D scenes")
    src.add_argument("--data-dir", help="directory with rgb/, x/ and labels/")
    sp.add_argument("--iters", type=int, default=None, help="iterations (default: max_iters of the config)")
    sp.add_argument("--save", help="checkpoint path to write")
    sp.add_argument("--history", help="CSV history path (default: checkpoint path with .csv)")
    sp.add_argument("--log-every", type=int, default=10, help="print every N iterations")

    sp = add("eval", cmd_eval, "mIoU of a checkpoint, or of saved predictions, against labels")
    sp.add_argument("--config", help="run configuration file")
    sp.add_argument("--checkpoint", help="trained checkpoint")
    sp.add_argument("--data-dir", help="directory with rgb/, x/ and labels/")
    sp.add_argument("--pred-dir", help="directory of predicted class maps named like the labels")

    sp = add("bench", cmd_bench, "latency and FPS at batch size 1")
    sp.add_argument("--config", help="run configuration file")
    sp.add_argument("--width", type=int, default=None, help="input width (default: config)")
    sp.add_argument("--height", type=int, default=None, help="input height (default: config)")
    sp.add_argument("--warmup", type=int, default=50, help="untimed forwards")
    sp.add_argument("--iters", type=int, default=200, help="timed forwards")
    sp.add_argument("--csv", help="also write the report as CSV")

    sp = add("describe", cmd_describe, "parameter and FLOPs table")
    sp.add_argument("--config", help="run configuration file")
    sp.add_argument("--width", type=int, default=None, help="input width (default: config)")
    sp.add_argument("--height", type=int, default=None, help="input height (default: config)")
    sp.add_argument("--macs", action="store_true", help="report multiply-accumulates instead of FLOPs")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient check of a module")
    sp.add_argument("--module", choices=MODULES + ("all",), default="csafm", help="module to check")
    sp.add_argument("--seed", type=int, default=0, help="instance seed")

    sp = add("aolp", cmd_aolp, "angle of linear polarization as an 8-bit PNG")
    for n in ("i0", "i45", "i90", "i135"):
        sp.add_argument(f"--{n}", required=True, help=f"intensity behind the {n[1:]} degree polarizer")
    sp.add_argument("--out", required=True, help="output PNG")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parser().parse_args(argv)
    threads = os.environ.get("CSFNET_THREADS", "1")
    try:
        n_threads = max(1, int(threads))
    except ValueError:
        print(f"csfnet: CSFNET_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=n_threads):
            return args.fn(args)
    except (CliError, ConfigError, DataError, ckpt.CheckpointError, TrainingDiverged, ValueError) as e:
        print(f"csfnet {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
