"""Robustness evaluation, cross-timestep transferability, and loss surfaces."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as obj
from . import tensor as tn
from .attacks import AttackConfig, pgd, subnet_pgd
from .errors import ContractError
from .snn import forward_timesteps, predict

METRICS = ("kl", "l2")


@dataclass
class EvalReport:
    clean: float
    robust: dict = field(default_factory=dict)
    worst_case: float = 0.0
    tradeoff: float = 0.0
    n_examples: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class TransferMatrix:
    """``values[t, m]``: mean shift of sub-network ``m`` under the attack crafted
    against sub-network ``t`` (0-based indices)."""

    values: np.ndarray
    metric: str
    epsilon: float
    n_samples: int
    steps: int = 0
    alpha: float = 0.0
    seed: int = 0

    @property
    def diagonal_mean(self):
        return float(np.mean(np.diag(self.values)))

    @property
    def off_diagonal_mean(self):
        T = self.values.shape[0]
        if T < 2:
            return 0.0
        return float(self.values[~np.eye(T, dtype=bool)].mean())

    def gap_means(self):
        """Mean entry for each timestep gap ``|t - m| = 1..T-1``."""
        T = self.values.shape[0]
        t, m = np.indices((T, T))
        gap = np.abs(t - m)
        return {int(d): float(self.values[gap == d].mean()) for d in range(1, T)}

    def metadata(self):
        return {
            "kind": "transfer-matrix",
            "metric": self.metric,
            "epsilon": self.epsilon,
            "steps": self.steps,
            "alpha": self.alpha,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "timesteps": int(self.values.shape[0]),
        }


def accuracy(model, inputs, labels):
    """Percentage of examples whose aggregated prediction is correct."""
    return 100.0 * float(np.mean(predict(model, inputs) == np.asarray(labels)))


def tradeoff_metric(clean, robust):
    for name, v in (("clean", clean), ("robust", robust)):
        if not 0 <= v <= 100:
            raise ContractError(f"{name} accuracy {v} outside [0, 100]")
    return clean + robust


def attack_name(cfg):
    start = "rs" if cfg.random_start else "zs"
    return f"pgd{cfg.steps}-{cfg.objective}-eps{cfg.epsilon:g}-a{cfg.alpha:g}-{start}"


def robust_accuracy(model, dataset, attacks, seed=0, batch_size=None):
    """Clean, per-attack and worst-case accuracy.

    ``attacks`` is a list of :class:`AttackConfig` or a name -> config mapping.
    An example counts toward the worst case only if it survives every attack.
    """
    if len(dataset) == 0:
        raise ContractError("robust_accuracy needs a nonempty dataset")
    if not attacks:
        raise ContractError("robust_accuracy needs at least one attack")
    if not isinstance(attacks, dict):
        named = {}
        for cfg in attacks:
            name = attack_name(cfg)
            while name in named:
                name += "'"
            named[name] = cfg
        attacks = named
    X, y = dataset.inputs, dataset.labels
    n = len(y)
    bs = batch_size or n
    clean_ok = np.concatenate([predict(model, X[i:i + bs]) == y[i:i + bs] for i in range(0, n, bs)])
    all_ok = np.ones(n, dtype=bool)
    robust = {}
    for k, (name, cfg) in enumerate(attacks.items()):
        rng = np.random.default_rng([seed, k])
        ok = []
        for i in range(0, n, bs):
            x_adv = pgd(model, X[i:i + bs], y[i:i + bs], cfg, rng)
            ok.append(predict(model, x_adv) == y[i:i + bs])
        ok = np.concatenate(ok)
        robust[name] = 100.0 * float(ok.mean())
        all_ok &= ok
    clean = 100.0 * float(clean_ok.mean())
    worst = 100.0 * float(all_ok.mean())
    return EvalReport(clean, robust, worst, tradeoff_metric(clean, worst), n)


def distribution_shift(p, q, metric):
    """Per-example ``D[p, q]`` for numpy probability arrays."""
    if metric == "kl":
        return obj.kl_divergence(tn.Tensor._wrap(p), tn.Tensor._wrap(q)).data
    if metric == "l2":
        return obj.l2_distance(tn.Tensor._wrap(p), tn.Tensor._wrap(q)).data
    raise ContractError(f"metric must be one of {METRICS}, got {metric!r}")


def transferability_matrix(model, dataset, epsilon, metric="kl", steps=10, alpha=None,
                           seed=0, n_samples=256, random_start=True):
    """Cross-timestep transfer of worst-case per-sub-network perturbations.

    For each source ``t`` the input is attacked to maximize the shift of
    ``p_t`` (same metric as the reported distance); entry ``(t, m)`` is the
    per-sample mean of ``D[p_m(x), p_m(x'_t)]``. ``n_samples`` caps the
    evaluation set with a seeded subset.
    """
    if metric not in METRICS:
        raise ContractError(f"metric must be one of {METRICS}, got {metric!r}")
    if len(dataset) == 0:
        raise ContractError("transferability_matrix needs a nonempty dataset")
    n = len(dataset)
    idx = np.arange(n) if n <= n_samples else np.sort(np.random.default_rng(seed).choice(n, n_samples, replace=False))
    X = dataset.inputs[idx]
    if alpha is None:
        # the step size is irrelevant once the ball has collapsed
        alpha = 2.5 * epsilon / steps if steps and epsilon > 0 else 1.0
    cfg = AttackConfig(epsilon=epsilon, alpha=alpha, steps=steps, random_start=random_start)
    T = model.lif.timesteps
    clean_p = tn.softmax(forward_timesteps(model, X)).data
    values = np.zeros((T, T))
    for t in range(T):
        rng = np.random.default_rng([seed, t])
        x_adv = subnet_pgd(model, X, t + 1, cfg, rng, metric=metric)
        adv_p = tn.softmax(forward_timesteps(model, x_adv)).data
        for m in range(T):
            values[t, m] = distribution_shift(clean_p[m], adv_p[m], metric).mean()
    return TransferMatrix(values, metric, float(epsilon), len(idx), int(steps), float(alpha), int(seed))


def default_directions(model, x, y, seed=0):
    """Sign of the input gradient of CE and a random direction orthogonal to it,
    each rescaled to unit max-norm."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    tape = tn.Tape()
    xt = tape.watch(tn.Tensor(x))
    loss = obj.aggregate_ce_loss(forward_timesteps(model, xt), [y])
    tn.backward(tape, loss)
    rng = np.random.default_rng(seed)
    d1 = np.sign(xt.grad.reshape(-1))
    if not np.any(d1):
        d1 = rng.choice([-1.0, 1.0], size=d1.shape)
    d2 = rng.choice([-1.0, 1.0], size=d1.shape)
    d2 = d2 - (d2 @ d1) / (d1 @ d1) * d1
    if not np.any(np.abs(d2) > 1e-12):
        d2 = np.roll(d1, 1) * np.where(np.arange(d1.size) % 2, 1.0, -1.0)
        d2 = d2 - (d2 @ d1) / (d1 @ d1) * d1
    return d1 / np.abs(d1).max(), d2 / np.abs(d2).max()


def loss_surface_grid(model, x, y, dir1=None, dir2=None, extent=0.1, resolution=21, seed=0):
    """Aggregate cross-entropy on the lattice ``x + a_i·dir1 + b_j·dir2``.

    ``a`` and ``b`` both run over ``linspace(-extent, extent, resolution)``.
    Returns ``(grid, a, b)`` with ``grid[i, j]`` at ``(a[i], b[j])``.
    """
    if resolution < 2:
        raise ContractError(f"resolution must be >= 2, got {resolution}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if dir1 is None or dir2 is None:
        d1, d2 = default_directions(model, x, y, seed)
        dir1 = d1 if dir1 is None else dir1
        dir2 = d2 if dir2 is None else dir2
    dir1 = np.asarray(dir1, dtype=np.float64).reshape(-1)
    dir2 = np.asarray(dir2, dtype=np.float64).reshape(-1)
    a = np.linspace(-extent, extent, resolution)
    b = np.linspace(-extent, extent, resolution)
    pts = x[None, None, :] + a[:, None, None] * dir1 + b[None, :, None] * dir2
    flat = pts.reshape(-1, x.size)
    labels = np.full(len(flat), int(y))
    logits = forward_timesteps(model, flat)
    ce = obj.cross_entropy_onehot(tn.softmax(tn.mean(logits, axis=0)), labels).data
    return ce.reshape(resolution, resolution), a, b


# --- result files -----------------------------------------------------------


def write_matrix(values, path, metadata):
    """Comma-separated rows plus a ``<name>.meta.json`` sidecar."""
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    path.write_text("".join(",".join(repr(float(v)) for v in row) + "\n" for row in values))
    meta_path = path.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(metadata, indent=1, sort_keys=True) + "\n")
    return path, meta_path


def read_matrix(path):
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in line.split(",")] for line in rows])
