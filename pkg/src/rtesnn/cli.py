"""Command-line entry point: ``rtesnn {train,eval,transfer-matrix,loss-surface}``.

Exit codes: 0 success, 1 configuration error, 2 I/O or file-format error,
3 runtime contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as rc
from .analysis import loss_surface_grid, robust_accuracy, transferability_matrix, write_matrix
from .attacks import AttackConfig
from .data import load_idx, synth_blobs, train_test_split
from .errors import ConfigError, ConsistencyError, FormatError, RteError
from .snn import LifConfig, SnnModel, load_checkpoint, save_checkpoint
from .tensor import SurrogateSpec
from .training import TrainConfig, train

log = logging.getLogger("rtesnn")

COMMANDS = ("train", "eval", "transfer-matrix", "loss-surface")
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 1, 2, 3

IDX_TRAIN_IMAGES = "train-images-idx3-ubyte"
IDX_TRAIN_LABELS = "train-labels-idx1-ubyte"


# --- builders from a resolved config dict ------------------------------------


def build_dataset(cfg):
    spec = cfg["dataset"]
    if spec == "blobs":
        return synth_blobs(cfg["n_samples"], cfg["n_classes"], cfg["dim"], cfg["spread"], seed=cfg["seed"])
    target = spec[len("idx:"):]
    if "," in target:
        images, labels = (p.strip() for p in target.split(",", 1))
    else:
        images, labels = Path(target) / IDX_TRAIN_IMAGES, Path(target) / IDX_TRAIN_LABELS
    return load_idx(images, labels)


def split_dataset(cfg, dataset):
    return train_test_split(dataset, cfg["test_fraction"], seed=cfg["seed"])


def build_model(cfg, n_features, n_classes):
    hidden = [int(w) for w in cfg["hidden"].split(",") if w.strip()]
    model = SnnModel.init(
        [n_features, *hidden, n_classes],
        LifConfig(cfg["leak"], cfg["threshold"], cfg["timesteps"]),
        SurrogateSpec(cfg["surrogate"], cfg["surrogate_width"]),
        seed=cfg["seed"],
        detach_reset=cfg["detach_reset"],
    )
    if not cfg["readout_bias"]:
        model.biases[-1] = None
    return model


def eval_attacks(cfg):
    attacks = {}
    for name, kind, eps, steps, alpha in rc.parse_attacks(cfg["attacks"]):
        if kind == "fgsm":
            attacks[name] = AttackConfig(epsilon=eps, alpha=eps if eps > 0 else 1.0, steps=1, random_start=False)
        else:
            attacks[name] = AttackConfig(epsilon=eps, alpha=alpha if alpha > 0 else 1.0, steps=steps,
                                         random_start=cfg["random_start"])
    return attacks


def train_config(cfg):
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        gamma=cfg["gamma"],
        attack=AttackConfig(epsilon=cfg["epsilon"], alpha=cfg["alpha"], steps=cfg["steps"],
                            random_start=cfg["random_start"]),
        seed=cfg["seed"],
        method=cfg["method"],
        grad_clip=cfg["grad_clip"] or None,
        cosine=cfg["cosine"],
        kl_epsilon=cfg["kl_epsilon"],
        kl_direction=cfg["kl_direction"],
        eval_attacks=tuple(eval_attacks(cfg).values()),
    )


def checkpoint_path(cfg):
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out"]) / "model.json"


def _load_model(cfg):
    path = checkpoint_path(cfg)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --- commands ------------------------------------------------------------------


def cmd_train(cfg, out):
    train_set, test_set = split_dataset(cfg, build_dataset(cfg))
    model = build_model(cfg, train_set.n_features, train_set.n_classes)
    tcfg = train_config(cfg)
    report = train(model, train_set, tcfg, test_set, log_path=out / "train_log.jsonl",
                   eval_every=cfg["eval_every"])
    save_checkpoint(model, out / "model.json")
    final = report.final
    summary = {"clean_acc": final.clean_acc, "robust_acc": final.robust_acc, "loss": final.loss,
               "epochs": len(report.epochs), "checkpoint": "model.json"}
    _write_json(out / "train_summary.json", summary)
    # wall-clock times are the only non-reproducible output; kept apart
    _write_json(out / "timing.json", {"wall_time": [r.wall_time for r in report.epochs]})
    return summary


def cmd_eval(cfg, out):
    model = _load_model(cfg)
    _, test_set = split_dataset(cfg, build_dataset(cfg))
    report = robust_accuracy(model, test_set, eval_attacks(cfg), seed=cfg["seed"])
    doc = report.to_dict()
    _write_json(out / "eval.json", doc)
    return doc


def cmd_transfer_matrix(cfg, out):
    model = _load_model(cfg)
    _, test_set = split_dataset(cfg, build_dataset(cfg))
    tm = transferability_matrix(model, test_set, cfg["epsilon"], cfg["metric"], steps=cfg["steps"],
                                alpha=cfg["alpha"], seed=cfg["seed"], n_samples=cfg["matrix_samples"],
                                random_start=cfg["random_start"])
    write_matrix(tm.values, out / "matrix.csv", tm.metadata())
    return {"diagonal_mean": tm.diagonal_mean, "off_diagonal_mean": tm.off_diagonal_mean,
            "matrix": "matrix.csv"}


def cmd_loss_surface(cfg, out):
    model = _load_model(cfg)
    _, test_set = split_dataset(cfg, build_dataset(cfg))
    i = cfg["surface_index"]
    if i >= len(test_set):
        raise ConfigError("surface_index", f"{i} exceeds test split size {len(test_set)}")
    x, y = test_set.inputs[i], int(test_set.labels[i])
    grid, a, b = loss_surface_grid(model, x, y, extent=cfg["surface_extent"],
                                   resolution=cfg["surface_resolution"], seed=cfg["seed"])
    meta = {"kind": "loss-surface", "seed": cfg["seed"], "example_index": i, "label": y,
            "extent": cfg["surface_extent"], "resolution": cfg["surface_resolution"],
            "a": a.tolist(), "b": b.tolist(), "rows": "a", "columns": "b"}
    write_matrix(grid, out / "surface.csv", meta)
    return {"center": float(grid[len(a) // 2, len(b) // 2]), "surface": "surface.csv"}


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "transfer-matrix": cmd_transfer_matrix,
    "loss-surface": cmd_loss_surface,
}


def dispatch(command, cfg):
    """Run ``command`` with a resolved config dict and return its summary."""
    if command not in HANDLERS:
        raise ConfigError("command", f"unknown command {command!r}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.config.txt").write_text(rc.dump(cfg))
    return HANDLERS[command](cfg, out)


# --- argument parsing ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="rtesnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        for key in rc.KEYS:
            p.add_argument("--" + key.name.replace("_", "-"), dest=key.name, metavar=key.type.__name__.upper(),
                           default=None, help=f"{key.help} [default: {rc.format_value(key.default)}]")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k.name: getattr(args, k.name) for k in rc.KEYS if getattr(args, k.name) is not None}
    try:
        cfg = rc.resolve(args.config, overrides)
        summary = dispatch(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError, ConsistencyError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RteError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
