"""Probability transforms, divergences and training losses.

Every loss returns a scalar :class:`~rtesnn.tensor.Tensor` so it can be fed
straight to :func:`~rtesnn.tensor.backward`; call ``.item()`` for a float.
Per-timestep logits are laid out ``T×batch×classes``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError

KL_DIRECTIONS = ("ref-first", "adv-first")


@dataclass(frozen=True)
class LossConfig:
    """``gamma`` weights the clean-vs-adversarial KL term.

    ``kl_direction="ref-first"`` computes ``KL(p_t(x) || p_t(x'))``;
    ``"adv-first"`` swaps the arguments.
    """

    gamma: float = 1.0
    kl_epsilon: float = 1e-12
    kl_direction: str = "ref-first"

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ContractError(f"gamma must be >= 0, got {self.gamma}")
        if not self.kl_epsilon > 0:
            raise ContractError(f"kl_epsilon must be > 0, got {self.kl_epsilon}")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ContractError(f"kl_direction must be one of {KL_DIRECTIONS}")


def softmax(logits):
    return tn.softmax(logits)


def _labels(y, n_classes):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ContractError(f"label out of range for {n_classes} classes")
    return y


def cross_entropy_onehot(p, y, eps=1e-12):
    """``-log(max(p[y], eps))`` row by row.

    ``p`` is ``classes`` (returns a scalar) or ``batch×classes`` (returns one
    value per row).
    """
    p = tn.as_tensor(p)
    if p.data.ndim == 1:
        y = _labels(y, p.shape[0])
        if y.size != 1:
            raise DimensionError("a single distribution takes a single label")
        picked = tn.gather_rows(tn.reshape(p, (1, -1)), y)
        return tn.reshape(tn.neg(tn.log(tn.clamp(picked, lo=eps))), ())
    y = _labels(y, p.shape[-1])
    picked = tn.gather_rows(p, y)
    return tn.neg(tn.log(tn.clamp(picked, lo=eps)))


def kl_divergence(p, q, eps=1e-12):
    """``Σ_i p_i·log(p_i / q_i)`` over the last axis.

    Both arguments are clamped below by ``eps`` inside the logarithm, so zero
    entries of ``p`` contribute exactly zero.
    """
    p, q = tn.as_tensor(p), tn.as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence: {p.shape} vs {q.shape}")
    log_ratio = tn.sub(tn.log(tn.clamp(p, lo=eps)), tn.log(tn.clamp(q, lo=eps)))
    return tn.sum_(tn.mul(p, log_ratio), axis=-1)


def l2_distance(p, q):
    """Euclidean distance between distributions over the last axis."""
    p, q = tn.as_tensor(p), tn.as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"l2_distance: {p.shape} vs {q.shape}")
    d = tn.sub(p, q)
    return tn.sqrt(tn.sum_(tn.mul(d, d), axis=-1))


def _flatten_time(logits):
    logits = tn.as_tensor(logits)
    if logits.data.ndim != 3:
        raise DimensionError(f"expected T×batch×classes logits, got {logits.shape}")
    T, B, C = logits.shape
    return tn.reshape(logits, (T * B, C)), T, B, C


def tet_ce_loss(logits_per_t, y, eps=1e-12):
    """Cross-entropy of every sub-network, averaged over time and batch."""
    flat, T, B, C = _flatten_time(logits_per_t)
    y = _labels(y, C)
    if y.size != B:
        raise DimensionError(f"{y.size} labels for batch of {B}")
    return tn.mean(cross_entropy_onehot(tn.softmax(flat), np.tile(y, T), eps))


def aggregate_ce_loss(logits_per_t, y, eps=1e-12):
    """Cross-entropy of the time-averaged output."""
    agg = tn.mean(tn.as_tensor(logits_per_t), axis=0)
    return tn.mean(cross_entropy_onehot(tn.softmax(agg), y, eps))


def rte_loss(logits_clean, logits_adv, y, cfg=LossConfig()):
    """Temporal self-ensemble loss.

    ``(1/T)·Σ_t [CE(p_t(x), y) + gamma·KL(p_t(x) || p_t(x'))]``, batch-averaged.
    Gradients flow through both logit blocks.
    """
    logits_clean, logits_adv = tn.as_tensor(logits_clean), tn.as_tensor(logits_adv)
    if logits_clean.shape != logits_adv.shape:
        raise DimensionError(f"rte_loss: clean {logits_clean.shape} vs adversarial {logits_adv.shape}")
    flat_c, T, B, C = _flatten_time(logits_clean)
    flat_a, _, _, _ = _flatten_time(logits_adv)
    y = _labels(y, C)
    if y.size != B:
        raise DimensionError(f"{y.size} labels for batch of {B}")
    p_clean = tn.softmax(flat_c)
    p_adv = tn.softmax(flat_a)
    ce = cross_entropy_onehot(p_clean, np.tile(y, T), cfg.kl_epsilon)
    if cfg.kl_direction == "ref-first":
        kl = kl_divergence(p_clean, p_adv, cfg.kl_epsilon)
    else:
        kl = kl_divergence(p_adv, p_clean, cfg.kl_epsilon)
    return tn.mean(tn.add(ce, tn.scale(kl, cfg.gamma)))


def trades_loss(logits_clean, logits_adv, y, beta, eps=1e-12):
    """TRADES on aggregated outputs: ``CE(p(x), y) + beta·KL(p(x) || p(x'))``."""
    logits_clean, logits_adv = tn.as_tensor(logits_clean), tn.as_tensor(logits_adv)
    if logits_clean.shape != logits_adv.shape:
        raise DimensionError(f"trades_loss: clean {logits_clean.shape} vs adversarial {logits_adv.shape}")
    if beta < 0:
        raise ContractError(f"beta must be >= 0, got {beta}")
    p_clean = tn.softmax(tn.mean(logits_clean, axis=0))
    p_adv = tn.softmax(tn.mean(logits_adv, axis=0))
    ce = cross_entropy_onehot(p_clean, y, eps)
    kl = kl_divergence(p_clean, p_adv, eps)
    return tn.mean(tn.add(ce, tn.scale(kl, beta)))
