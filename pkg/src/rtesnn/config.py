"""Flat ``key = value`` run configuration.

Every key has a type, a default and an optional constraint. Files may contain
blank lines and ``#`` comments; command-line flags (``--key value``) mirror
the keys one to one and override file values. The resolved configuration is
written back with every key, so a run can be replayed from its output
directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def check(v):
        if v not in options:
            return f"must be one of {', '.join(options)}"
        return None

    return check


def _at_least(lo, strict=False):
    def check(v):
        if strict and not v > lo:
            return f"must be > {lo}"
        if not strict and not v >= lo:
            return f"must be >= {lo}"
        return None

    return check


def _in_open_unit(v):
    return None if 0 < v < 1 else "must lie strictly between 0 and 1"


def _leak(v):
    return None if 0 < v <= 1 else "must lie in (0, 1]"


def _momentum(v):
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _widths(v):
    try:
        widths = [int(w) for w in v.split(",") if w.strip()]
    except ValueError:
        return "must be a comma-separated list of integers"
    if not widths or min(widths) < 1:
        return "must list at least one positive width"
    return None


def _dataset(v):
    if v == "blobs" or (v.startswith("idx:") and len(v) > 4):
        return None
    return "must be 'blobs' or 'idx:PATH'"


def parse_attacks(text):
    """``fgsm:EPS`` or ``pgd:EPS:K[:ALPHA]`` items, comma-separated.

    Returns ``(name, kind, epsilon, steps, alpha)`` tuples; PGD defaults to
    ``alpha = eps / 4``.
    """
    items = []
    for raw in text.split(","):
        item = raw.strip()
        if not item:
            continue
        parts = item.split(":")
        try:
            if parts[0] == "fgsm" and len(parts) == 2:
                eps = float(parts[1])
                items.append((item, "fgsm", eps, 1, eps))
            elif parts[0] == "pgd" and len(parts) in (3, 4):
                eps, k = float(parts[1]), int(parts[2])
                alpha = float(parts[3]) if len(parts) == 4 else eps / 4
                items.append((item, "pgd", eps, k, alpha))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"cannot parse attack {item!r}") from None
        _, _, eps, k, _ = items[-1]
        if eps < 0 or k < 0:
            raise ValueError(f"attack {item!r} has a negative budget or step count")
    if not items:
        raise ValueError("at least one attack is required")
    return items


def _attacks(v):
    try:
        parse_attacks(v)
    except ValueError as exc:
        return str(exc)
    return None


@dataclass(frozen=True)
class Key:
    name: str
    type: type
    default: object
    check: object = None
    help: str = ""


KEYS = [
    Key("seed", int, 0, _at_least(0), "master seed for data, init, shuffling and attacks"),
    Key("out", str, "runs/default", None, "output directory"),
    Key("checkpoint", str, "", None, "model file for eval/transfer-matrix/loss-surface (default OUT/model.json)"),
    Key("method", str, "rte", _choice("rte", "at", "trades", "clean"), "training objective"),
    # dataset
    Key("dataset", str, "blobs", _dataset, "'blobs' or 'idx:IMAGES,LABELS' / 'idx:DIR'"),
    Key("n_samples", int, 1200, _at_least(2), "blobs: number of points"),
    Key("n_classes", int, 2, _at_least(2), "blobs: number of classes"),
    Key("dim", int, 2, _at_least(2), "blobs: input dimension"),
    Key("spread", float, 0.08, _at_least(0.0), "blobs: per-axis standard deviation"),
    Key("test_fraction", float, 0.3333, _in_open_unit, "held-out fraction used for all evaluation"),
    # model
    Key("hidden", str, "32,32", _widths, "hidden layer widths"),
    Key("timesteps", int, 4, _at_least(1), "simulation timesteps T"),
    Key("leak", float, 0.5, _leak, "membrane leak"),
    Key("threshold", float, 0.5, _at_least(0.0, strict=True), "firing threshold"),
    Key("readout_bias", bool, True, None, "bias on the readout layer"),
    Key("surrogate", str, "triangle", _choice("triangle", "sigmoid-derivative", "rectangle"), "surrogate gradient"),
    Key("surrogate_width", float, 1.0, _at_least(0.0, strict=True), "surrogate support half-width"),
    Key("detach_reset", bool, True, None, "treat the reset factor as a constant in backward"),
    # optimization
    Key("epochs", int, 30, _at_least(1), "training epochs"),
    Key("batch_size", int, 32, _at_least(1), "mini-batch size"),
    Key("lr", float, 0.05, _at_least(0.0, strict=True), "learning rate"),
    Key("momentum", float, 0.9, _momentum, "SGD momentum"),
    Key("cosine", bool, False, None, "cosine learning-rate decay"),
    Key("grad_clip", float, 5.0, _at_least(0.0), "global gradient-norm clip (0 disables)"),
    Key("gamma", float, 6.0, _at_least(0.0), "regularization weight (RTE gamma, TRADES beta)"),
    Key("kl_direction", str, "ref-first", _choice("ref-first", "adv-first"), "argument order of the RTE KL term"),
    Key("kl_epsilon", float, 1e-12, _at_least(0.0, strict=True), "probability clamp inside logarithms"),
    # attacks
    Key("epsilon", float, 0.05, _at_least(0.0), "L-inf budget for training and transfer-matrix attacks"),
    Key("alpha", float, 0.0125, _at_least(0.0, strict=True), "PGD step size for training and transfer-matrix attacks"),
    Key("steps", int, 7, _at_least(0), "PGD iterations for training and transfer-matrix attacks"),
    Key("random_start", bool, True, None, "uniform random start inside the ball"),
    Key("attacks", str, "pgd:0.05:10", _attacks, "evaluation attacks, e.g. 'fgsm:0.05,pgd:0.05:10[:alpha]'"),
    Key("eval_every", int, 1, _at_least(1), "evaluate every N epochs during training"),
    # analysis
    Key("metric", str, "kl", _choice("kl", "l2"), "transfer-matrix distance"),
    Key("matrix_samples", int, 256, _at_least(1), "transfer-matrix evaluation subset size"),
    Key("surface_index", int, 0, _at_least(0), "loss-surface: index into the test split"),
    Key("surface_extent", float, 0.1, _at_least(0.0), "loss-surface: half-width of the lattice"),
    Key("surface_resolution", int, 21, _at_least(2), "loss-surface: points per axis"),
]
KEY_INDEX = {k.name: k for k in KEYS}


def defaults():
    return {k.name: k.default for k in KEYS}


def convert(key, text, line=None):
    spec = KEY_INDEX.get(key)
    if spec is None:
        raise ConfigError(key, "unknown key", line)
    try:
        if spec.type is bool:
            value = _bool(text)
        elif spec.type is int:
            value = int(text.strip())
        elif spec.type is float:
            value = float(text.strip())
        else:
            value = text.strip()
    except ValueError as exc:
        raise ConfigError(key, f"expected {spec.type.__name__}: {exc}", line) from None
    if spec.check is not None:
        problem = spec.check(value)
        if problem:
            raise ConfigError(key, f"{value!r} {problem}", line)
    return value


def parse_text(text):
    """Parse config text into ``{key: (value, line)}``."""
    found = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(stripped, "expected 'key = value'", lineno)
        key, value = (part.strip() for part in stripped.split("=", 1))
        found[key] = (convert(key, value, lineno), lineno)
    return found


def resolve(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides`` (raw strings)."""
    cfg = defaults()
    if path is not None:
        for key, (value, _) in parse_text(Path(path).read_text()).items():
            cfg[key] = value
    for key, text in (overrides or {}).items():
        cfg[key] = convert(key, text)
    return cfg


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump(cfg):
    lines = [f"{k.name} = {format_value(cfg[k.name])}" for k in KEYS]
    return "\n".join(lines) + "\n"
