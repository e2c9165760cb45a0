"""Command-line entry point: ``hbdr train|pretrain|eval|export``."""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataio
from .dbn import dbn_config_from, finetune, greedy_pretrain
from .filters import gabor_bank, gaussian_bank
from .modelfile import (ModelFile, ModelFormatError, network_from_file, network_to_file,
                        stack_from_file, stack_to_file)
from .tensor import make_rng
from .training import (VARIANTS, ConfigError, NetworkConfig, build_network, evaluate,
                       param_count, parse_config, predict_labels, train)

DATA_ENV = "HBDR_DATA"
MISSING_DATA_HELP = """\
no dataset found at {path!r}.

Point --data (or the HBDR_DATA environment variable) at either
  * a directory tree  <root>/<digit>/<image>.pgm|png  of 32x32 grayscale
    digits, e.g. an unpacked copy of CMATERdb 3.1.1 sorted into folders 0..9,
  * or an IDX pair written as  idx:<images-file>,<labels-file>
    (MNIST-format files; 28x28 images are padded to 32x32).
CMATERdb is distributed by the CMATER research lab at Jadavpur University
and must be obtained separately."""


class CliError(Exception):
    pass


# ------------------------------------------------------------------ argument parsing

def _add_config_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--keep-prob", type=float)
    p.add_argument("--freeze-c1", action="store_const", const=True, default=None)
    p.add_argument("--binarize", type=float, metavar="THRESHOLD")
    p.add_argument("--loss", choices=("xent", "mse"))
    p.add_argument("--pretrain-epochs", type=int)


def _add_common(p):
    p.add_argument("--data", help="class-directory root or idx:<images>,<labels> "
                                  f"(default: ${DATA_ENV})")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for evaluation (results do not depend on it)")


def build_parser():
    parser = argparse.ArgumentParser(prog="hbdr", description="Train and evaluate "
                                     "CNN / DBN handwritten digit recognizers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write model + reports")
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--save-best", action="store_true",
                   help="keep the parameters of the most accurate epoch")
    p.add_argument("--stack", help="pretrained rbm-stack file to fine-tune (dbn only)")

    p = sub.add_parser("pretrain", help="greedy RBM pretraining, writes stack.hbdr")
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="accuracy and per-class recall on the test split")
    p.add_argument("--model", required=True)
    _add_common(p)

    for name, what in (("export", None), ("export-filters", "filters"),
                       ("export-weights", "weights")):
        p = sub.add_parser(name, help="write PGM images of filters, weights or errors")
        p.add_argument("--model", help="model file (optional for filters with --bank)")
        if what is None:
            p.add_argument("--what", required=True, help="filters | weights | misclassified")
        else:
            p.set_defaults(what=what)
        p.add_argument("--bank", choices=("gabor", "gaussian"),
                       help="export a freshly generated C1 bank instead of a model's")
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--out", required=True)
        _add_common(p)
    return parser


def resolve_config(args) -> NetworkConfig:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {k: getattr(args, k, None) for k in
                 ("variant", "epochs", "batch_size", "lr", "seed", "train_per_class",
                  "test_per_class", "keep_prob", "freeze_c1", "binarize", "loss",
                  "pretrain_epochs")}
    try:
        return parse_config(text, overrides)
    except ConfigError as exc:
        where = f"{args.config}: " if args.config else ""
        raise CliError(f"{where}{exc}") from exc


def load_dataset(spec: str | None):
    spec = spec or os.environ.get(DATA_ENV)
    if not spec:
        raise CliError(MISSING_DATA_HELP.format(path=""))
    if not spec.startswith("idx:") and not Path(spec).exists():
        raise CliError(MISSING_DATA_HELP.format(path=spec))
    try:
        return dataio.load_data(spec)
    except (OSError, dataio.DatasetError) as exc:
        raise CliError(str(exc)) from exc


def split_dataset(ds, cfg: NetworkConfig):
    try:
        return dataio.stratified_split(ds, cfg.train_per_class, cfg.seed, cfg.test_per_class)
    except dataio.DatasetError as exc:
        raise CliError(str(exc)) from exc


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _epoch_logger(tag):
    def log(epoch, report):
        _log(f"[{tag}] epoch {epoch + 1}: loss {report.train_loss[-1]:.4f} "
             f"test acc {report.test_accuracy[-1]:.4f} ({report.epoch_seconds[-1]:.1f}s)")
    return log


def _load_model(path) -> ModelFile:
    try:
        return ModelFile.load(path)
    except FileNotFoundError as exc:
        raise CliError(f"model file not found: {path}") from exc
    except (OSError, ModelFormatError) as exc:
        raise CliError(f"{path}: {exc}") from exc


def _pretrain_stack(cfg, split):
    dcfg = dbn_config_from(cfg)
    train_x = split.images[split.train_idx]
    return greedy_pretrain(train_x, dcfg, make_rng(cfg.seed, "gibbs"),
                           on_epoch=lambda l, e, p: _log(f"[pretrain] layer {l + 1} epoch {e + 1}"))


def _write_mosaic(images, path):
    tiles = [img[0] for img in images] or [np.zeros((dataio.IMAGE_SIZE, dataio.IMAGE_SIZE))]
    dataio.export_grid(tiles, 10, path)


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    split = split_dataset(load_dataset(args.data), cfg)
    t0 = time.perf_counter()
    if cfg.variant == "dbn":
        if args.stack:
            mf = _load_model(args.stack)
            try:
                stack = stack_from_file(mf)
            except ModelFormatError as exc:
                raise CliError(f"{args.stack}: {exc}") from exc
        else:
            stack = _pretrain_stack(cfg, split)
        try:
            net, report = finetune(stack, split, dbn_config_from(cfg), make_rng(cfg.seed, "init"),
                                   save_best=args.save_best, on_epoch=_epoch_logger(cfg.variant),
                                   workers=args.threads)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    else:
        if args.stack:
            raise CliError("--stack only applies to the dbn variant")
        net = build_network(cfg, make_rng(cfg.seed, "init"))
        report = train(net, split, cfg, save_best=args.save_best,
                       on_epoch=_epoch_logger(cfg.variant), workers=args.threads)
    out.mkdir(parents=True, exist_ok=True)
    network_to_file(net, cfg.to_text()).save(out / "model.hbdr")
    report.write_csv(out)
    wrong = [i for i, _, _ in report.misclassified]
    _write_mosaic(split.images[wrong], out / "misclassified.pgm")
    _log(f"{cfg.variant}: {param_count(net)} parameters, final test accuracy "
         f"{report.final_accuracy:.4f}, best {report.best_accuracy:.4f} "
         f"({time.perf_counter() - t0:.0f}s)")
    print(f"{report.final_accuracy:.6f}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    if cfg.variant != "dbn":
        cfg = parse_config(cfg.to_text(), {"variant": "dbn"})
    split = split_dataset(load_dataset(args.data), cfg)
    stack = _pretrain_stack(cfg, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stack_to_file(stack, cfg.to_text()).save(out / "stack.hbdr")
    return 0


def _model_and_split(args):
    mf = _load_model(args.model)
    try:
        net = network_from_file(mf)
        cfg = parse_config(mf.config_text)
    except (ModelFormatError, ConfigError) as exc:
        raise CliError(f"{args.model}: {exc}") from exc
    split = split_dataset(load_dataset(args.data), cfg)
    expected = (1, cfg.image_size, cfg.image_size)
    if split.images.shape[1:] != expected:
        raise CliError(f"input shape mismatch: model expects {expected}, "
                       f"data has {split.images.shape[1:]}")
    return mf, net, cfg, split


def cmd_eval(args) -> int:
    _, net, cfg, split = _model_and_split(args)
    x, y = split.images[split.test_idx], split.labels[split.test_idx]
    try:
        acc, cm = evaluate(net, x, y, cfg.n_classes, args.threads)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print(f"accuracy {acc:.6f} ({int(np.trace(cm))}/{int(cm.sum())})")
    for c in range(cfg.n_classes):
        total = cm[c].sum()
        recall = cm[c, c] / total if total else float("nan")
        print(f"class {c}: recall {recall:.4f} ({cm[c, c]}/{total})")
    return 0


def cmd_export(args) -> int:
    what = args.what
    out = Path(args.out)
    if what == "filters":
        if args.bank:
            bank = gabor_bank(32) if args.bank == "gabor" else \
                gaussian_bank(32, 5, 0.1, make_rng(args.seed, "init"))
        else:
            if not args.model:
                raise CliError("export filters needs --model or --bank")
            mf = _load_model(args.model)
            if "c1.kernels" not in mf.tensors:
                raise CliError(f"{args.model}: {mf.kind} model has no convolution filters")
            bank = mf.tensors["c1.kernels"]
        tiles = [k[0] for k in bank]
        dataio.export_tiles(tiles, out, "filter", columns=8)
        print(f"wrote {len(tiles)} filters to {out}")
    elif what == "weights":
        if not args.model:
            raise CliError("export weights needs --model")
        mf = _load_model(args.model)
        if mf.kind == "rbm-stack":
            mats = [p.w.T for p in stack_from_file(mf)]
        elif mf.kind == "dbn":
            mats = [layer.weights for layer in network_from_file(mf).hidden]
        else:
            raise CliError(f"{args.model}: weights export needs a dbn or rbm-stack model")
        for depth, w in enumerate(mats, 1):
            side = int(round(np.sqrt(w.shape[1])))
            if side * side != w.shape[1]:
                raise CliError(f"layer {depth} fan-in {w.shape[1]} is not a square image")
            tiles = [row.reshape(side, side) for row in w]
            dataio.export_tiles(tiles, out / f"layer{depth}", "unit")
            print(f"wrote {len(tiles)} layer-{depth} tiles of {side}x{side} to {out / f'layer{depth}'}")
    elif what == "misclassified":
        if not args.model:
            raise CliError("export misclassified needs --model")
        _, net, cfg, split = _model_and_split(args)
        idx = split.test_idx
        preds = predict_labels(net, split.images[idx], workers=args.threads)
        wrong = np.flatnonzero(preds != split.labels[idx])
        out.mkdir(parents=True, exist_ok=True)
        _write_mosaic(split.images[idx[wrong]], out / "misclassified.pgm")
        with open(out / "misclassified.csv", "w") as fh:
            fh.write("index,true,predicted\n")
            for i in wrong:
                fh.write(f"{idx[i]},{split.labels[idx[i]]},{preds[i]}\n")
        print(f"{len(wrong)} misclassified test images written to {out}")
    else:
        raise CliError(f"unknown export target {what!r} (filters, weights, misclassified)")
    return 0


COMMANDS = {"train": cmd_train, "pretrain": cmd_pretrain, "eval": cmd_eval,
            "export": cmd_export, "export-filters": cmd_export, "export-weights": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.threads = max(1, args.threads or 1)
    try:
        # Multi-threaded BLAS splits reductions differently per thread count,
        # so BLAS stays single-threaded and --threads only sizes our own pool.
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"hbdr: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hbdr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
