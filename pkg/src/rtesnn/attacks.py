"""L-infinity perturbation generators: projection, FGSM, PGD and sub-network PGD."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import objectives as obj
from . import tensor as tn
from .errors import ContractError, DimensionError
from .snn import forward_timesteps

OBJECTIVES = ("ce-on-aggregate", "kl-on-aggregate", "ce-subnet", "kl-subnet", "l2-subnet")
SUBNET_OBJECTIVES = ("ce-subnet", "kl-subnet", "l2-subnet")
REFERENCE_OBJECTIVES = ("kl-on-aggregate", "kl-subnet", "l2-subnet")


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings. ``timestep`` is 1-based and used by ``*-subnet`` objectives."""

    epsilon: float = 0.05
    alpha: float = 0.0125
    steps: int = 10
    random_start: bool = True
    objective: str = "ce-on-aggregate"
    timestep: int = 1
    box: tuple = (0.0, 1.0)
    kl_epsilon: float = 1e-12

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ContractError(f"epsilon must be >= 0, got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ContractError(f"steps must be a non-negative integer, got {self.steps}")
        if self.steps >= 1 and not self.alpha > 0:
            raise ContractError(f"alpha must be > 0 when steps >= 1, got {self.alpha}")
        if self.objective not in OBJECTIVES:
            raise ContractError(f"unknown attack objective {self.objective!r}; expected one of {OBJECTIVES}")
        lo, hi = self.box
        if not lo <= hi:
            raise ContractError(f"empty box {self.box}")


def project_ball(x_adv, x, epsilon, box=(0.0, 1.0)):
    """Clip ``x_adv`` into ``[x - eps, x + eps] ∩ box`` elementwise."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_adv.shape != x.shape:
        raise DimensionError(f"project_ball: {x_adv.shape} vs {x.shape}")
    lo = np.maximum(x - epsilon, box[0])
    hi = np.minimum(x + epsilon, box[1])
    return np.minimum(np.maximum(x_adv, lo), hi)


def _subnet_index(model, m):
    T = model.lif.timesteps
    if int(m) != m or not 1 <= m <= T:
        raise ContractError(f"timestep {m} outside 1..{T}")
    return int(m) - 1


def reference_probs(model, x, cfg):
    """Clean-input distribution the divergence objectives compare against.

    Computed without a tape, so it is a constant during the attack.
    """
    logits = forward_timesteps(model, x)
    if cfg.objective == "kl-on-aggregate":
        return tn.softmax(tn.mean(logits, axis=0)).data
    return tn.softmax(logits.data[_subnet_index(model, cfg.timestep)]).data


def objective_terms(model, x_adv, y, cfg, ref=None):
    """Per-example attack objective at ``x_adv`` (a tensor, possibly tracked)."""
    logits = forward_timesteps(model, x_adv)
    kind = cfg.objective
    if kind in REFERENCE_OBJECTIVES and ref is None:
        raise ContractError(f"objective {kind} needs reference probabilities")
    if kind == "ce-on-aggregate":
        return obj.cross_entropy_onehot(tn.softmax(tn.mean(logits, axis=0)), y, cfg.kl_epsilon)
    if kind == "kl-on-aggregate":
        return obj.kl_divergence(tn.Tensor._wrap(ref), tn.softmax(tn.mean(logits, axis=0)), cfg.kl_epsilon)
    p = tn.softmax(tn.take(logits, _subnet_index(model, cfg.timestep)))
    if kind == "ce-subnet":
        return obj.cross_entropy_onehot(p, y, cfg.kl_epsilon)
    if kind == "kl-subnet":
        return obj.kl_divergence(tn.Tensor._wrap(ref), p, cfg.kl_epsilon)
    return obj.l2_distance(tn.Tensor._wrap(ref), p)


def objective_values(model, x, x_adv, y, cfg):
    """Per-example objective as a numpy array, reference taken at ``x``."""
    ref = reference_probs(model, x, cfg) if cfg.objective in REFERENCE_OBJECTIVES else None
    return objective_terms(model, tn.Tensor(x_adv), y, cfg, ref).data


def input_gradient(model, x_adv, y, cfg, ref=None):
    """Gradient of the summed objective with respect to the input batch."""
    tape = tn.Tape()
    xa = tape.watch(tn.Tensor(x_adv))
    loss = tn.sum_(objective_terms(model, xa, y, cfg, ref))
    tn.backward(tape, loss)
    return xa.grad


def pgd(model, x, y, cfg, rng=None):
    """Projected sign-gradient ascent on ``cfg.objective``.

    With ``random_start`` the iterate starts at ``x + U(-eps, eps)`` (one draw
    per coordinate, then projected); each step is
    ``x' <- proj(x' + alpha·sign(grad))`` with ``sign(0) = 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"pgd expects a batch×features input, got {x.shape}")
    if cfg.objective in SUBNET_OBJECTIVES:
        _subnet_index(model, cfg.timestep)
    ref = reference_probs(model, x, cfg) if cfg.objective in REFERENCE_OBJECTIVES else None
    x_adv = x.copy()
    if cfg.random_start:
        if rng is None:
            raise ContractError("random_start needs an rng")
        x_adv = project_ball(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon, cfg.box)
    for _ in range(cfg.steps):
        g = input_gradient(model, x_adv, y, cfg, ref)
        x_adv = project_ball(x_adv + cfg.alpha * np.sign(g), x, cfg.epsilon, cfg.box)
    return x_adv


def fgsm(model, x, y, epsilon, box=(0.0, 1.0)):
    """One sign step of size ``epsilon`` on aggregate cross-entropy, box-clipped."""
    x = np.asarray(x, dtype=np.float64)
    if epsilon < 0:
        raise ContractError(f"epsilon must be >= 0, got {epsilon}")
    cfg = AttackConfig(epsilon=epsilon, alpha=1.0, steps=1, random_start=False,
                       objective="ce-on-aggregate", box=tuple(box))
    g = input_gradient(model, x, y, cfg)
    return np.clip(x + epsilon * np.sign(g), box[0], box[1])


def subnet_pgd(model, x, m, cfg, rng=None, metric="kl"):
    """PGD that maximizes the shift of sub-network ``m`` away from its clean output.

    The clean distribution ``p_m(x)`` is computed once and held fixed. ``metric``
    picks KL or Euclidean distance as the shift measure; labels are not used.
    """
    if metric not in ("kl", "l2"):
        raise ContractError(f"metric must be 'kl' or 'l2', got {metric!r}")
    _subnet_index(model, m)
    cfg = replace(cfg, objective="kl-subnet" if metric == "kl" else "l2-subnet", timestep=int(m))
    x = np.asarray(x, dtype=np.float64)
    return pgd(model, x, np.zeros(x.shape[0], dtype=np.int64), cfg, rng)
