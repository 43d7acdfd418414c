"""SGD and the four training loops: clean TET, AT, TRADES and RTE.

All randomness is derived from ``TrainConfig.seed`` plus the epoch and batch
index, so a run is reproducible bit for bit on a single thread.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import objectives as obj
from . import tensor as tn
from .analysis import accuracy, robust_accuracy
from .attacks import AttackConfig, pgd, subnet_pgd
from .data import batch_iter
from .errors import ContractError
from .snn import forward_timesteps

log = logging.getLogger(__name__)

METHODS = ("rte", "at", "trades", "clean")

# independent RNG streams per (seed, epoch[, batch])
_SHUFFLE_STREAM = 1
_BATCH_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    gamma: float = 6.0
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.05, alpha=0.0125, steps=7))
    seed: int = 0
    method: str = "rte"
    grad_clip: float | None = 5.0
    cosine: bool = False
    kl_epsilon: float = 1e-12
    kl_direction: str = "ref-first"
    eval_attacks: tuple = (AttackConfig(epsilon=0.05, alpha=0.0125, steps=10),)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ContractError(f"epochs must be a positive integer, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ContractError(f"batch_size must be a positive integer, got {self.batch_size}")
        if not self.lr > 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.gamma >= 0:
            raise ContractError(f"gamma must be >= 0, got {self.gamma}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ContractError(f"grad_clip must be positive or None, got {self.grad_clip}")

    @property
    def loss_config(self):
        return obj.LossConfig(self.gamma, self.kl_epsilon, self.kl_direction)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    clean_acc: float | None = None
    robust_acc: float | None = None
    wall_time: float = 0.0
    sampled_timesteps: list = field(default_factory=list)

    def to_dict(self, timing=True):
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    checkpoint: str | None = None

    @property
    def final(self):
        return self.epochs[-1] if self.epochs else None


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """In-place SGD with heavy-ball momentum.

    ``v <- momentum·v + g`` then ``p <- p - lr·v``; ``velocity`` is a list of
    arrays updated in place (created as zeros when ``None``) and returned.
    """
    if grads is None or any(g is None for g in grads):
        raise ContractError("sgd_step called without gradients; run backward first")
    if len(grads) != len(params):
        raise ContractError(f"{len(grads)} gradients for {len(params)} parameters")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p -= lr * v
    return velocity


def clip_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return [g * factor for g in grads], norm


def _epoch_lr(cfg, epoch):
    if not cfg.cosine:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / cfg.epochs))


def batch_loss(model, x, y, cfg, rng):
    """Build the method's loss for one batch on a fresh tape.

    Returns ``(tape, loss, param_tensors, sampled_m)``; ``sampled_m`` is the
    1-based attacked sub-network for RTE and ``None`` otherwise.
    """
    m = None
    if cfg.method == "rte":
        m = int(rng.integers(1, model.lif.timesteps + 1))
        x_in = subnet_pgd(model, x, m, cfg.attack, rng)
    elif cfg.method == "at":
        x_in = pgd(model, x, y, replace(cfg.attack, objective="ce-on-aggregate"), rng)
    elif cfg.method == "trades":
        x_in = pgd(model, x, y, replace(cfg.attack, objective="kl-on-aggregate"), rng)
    else:
        x_in = None
    tape = tn.Tape(cfg.seed)
    layers, flat = model.bind(tape)
    if cfg.method == "at":
        loss = obj.tet_ce_loss(forward_timesteps(model, x_in, layers), y, cfg.kl_epsilon)
    elif cfg.method == "clean":
        loss = obj.tet_ce_loss(forward_timesteps(model, x, layers), y, cfg.kl_epsilon)
    else:
        clean = forward_timesteps(model, x, layers)
        adv = forward_timesteps(model, x_in, layers)
        if cfg.method == "rte":
            loss = obj.rte_loss(clean, adv, y, cfg.loss_config)
        else:
            loss = obj.trades_loss(clean, adv, y, cfg.gamma, cfg.kl_epsilon)
    return tape, loss, flat, m


def train_epoch(model, dataset, cfg, epoch=1, velocity=None):
    """One pass over ``dataset`` with ``cfg.method``; mutates ``model``.

    Returns ``(EpochRecord, velocity)``; accuracies are left unset.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    start = time.perf_counter()
    lr = _epoch_lr(cfg, epoch)
    params = model.parameters()
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    losses, weights, sampled = [], [], []
    shuffle = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch])
    for b, (x, y) in enumerate(batch_iter(dataset, cfg.batch_size, shuffle)):
        rng = np.random.default_rng([cfg.seed, _BATCH_STREAM, epoch, b])
        tape, loss, flat, m = batch_loss(model, x, y, cfg, rng)
        tn.backward(tape, loss)
        grads, _ = clip_global_norm([t.grad for t in flat], cfg.grad_clip)
        sgd_step(params, grads, lr, cfg.momentum, velocity)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise FloatingPointError(f"non-finite parameter after epoch {epoch} batch {b}")
        losses.append(loss.item())
        weights.append(len(y))
        if m is not None:
            sampled.append(m)
    record = EpochRecord(epoch, float(np.average(losses, weights=weights)), sampled_timesteps=sampled)
    record.wall_time = time.perf_counter() - start
    return record, velocity


def _method_epoch(method):
    def run(model, dataset, cfg, epoch=1, velocity=None):
        if cfg.method != method:
            raise ContractError(f"train_epoch_{method} needs method={method!r}, got {cfg.method!r}")
        return train_epoch(model, dataset, cfg, epoch, velocity)

    run.__name__ = f"train_epoch_{method}"
    run.__doc__ = f"One {method.upper()} epoch; see :func:`train_epoch`."
    return run


train_epoch_rte = _method_epoch("rte")
train_epoch_at = _method_epoch("at")
train_epoch_trades = _method_epoch("trades")
train_epoch_clean = _method_epoch("clean")


def evaluate(model, dataset, cfg):
    """Clean accuracy and worst case over ``cfg.eval_attacks`` (``None`` if empty)."""
    clean = accuracy(model, dataset.inputs, dataset.labels)
    if not cfg.eval_attacks:
        return clean, None
    report = robust_accuracy(model, dataset, list(cfg.eval_attacks), seed=cfg.seed)
    return clean, report.worst_case


def train(model, train_set, cfg, eval_set=None, log_path=None, eval_every=1):
    """Run ``cfg.epochs`` epochs; evaluate on ``eval_set`` every ``eval_every``
    epochs and always after the last one.

    ``log_path`` receives one JSON record per epoch, without wall time so that
    reruns produce identical logs.
    """
    report = TrainReport()
    velocity = None
    handle = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            record, velocity = train_epoch(model, train_set, cfg, epoch, velocity)
            if eval_set is not None and (epoch % eval_every == 0 or epoch == cfg.epochs):
                record.clean_acc, record.robust_acc = evaluate(model, eval_set, cfg)
            log.info("epoch %d loss %.4f clean %s robust %s (%.2fs)", epoch, record.loss,
                     record.clean_acc, record.robust_acc, record.wall_time)
            report.epochs.append(record)
            if handle is not None:
                handle.write(json.dumps(record.to_dict(timing=False)) + "\n")
                handle.flush()
    finally:
        if handle is not None:
            handle.close()
    return report
