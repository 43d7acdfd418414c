"""Desk-scale blobs experiment shared by the acceptance and experiment tests.

Each (method, T, seed) model is trained once per test session.
"""

import time
from functools import lru_cache

import numpy as np

from rtesnn.analysis import robust_accuracy, transferability_matrix
from rtesnn.attacks import AttackConfig
from rtesnn.data import synth_blobs, train_test_split
from rtesnn.snn import LifConfig, SnnModel
from rtesnn.training import TrainConfig, train

SEEDS = (0, 1, 2)
EPOCHS = 30
N_SAMPLES = 1200
SPREAD = 0.08
TEST_FRACTION = 1 / 3
PGD10 = AttackConfig(epsilon=0.05, alpha=0.0125, steps=10)


@lru_cache(maxsize=None)
def split(seed):
    ds = synth_blobs(N_SAMPLES, n_classes=2, dim=2, spread=SPREAD, seed=seed)
    return train_test_split(ds, TEST_FRACTION, seed=seed)


@lru_cache(maxsize=None)
def run(method, T, seed):
    """Train 2-32-32-2 and return ``(model, clean, robust, seconds)`` on the test split."""
    train_set, test_set = split(seed)
    model = SnnModel.init([2, 32, 32, 2], LifConfig(0.5, 0.5, T), seed=seed)
    cfg = TrainConfig(epochs=EPOCHS, method=method, seed=seed, gamma=6.0,
                      attack=AttackConfig(epsilon=0.05, alpha=0.0125, steps=7), eval_attacks=(PGD10,))
    start = time.perf_counter()
    report = train(model, train_set, cfg, eval_set=test_set, eval_every=EPOCHS)
    seconds = time.perf_counter() - start
    return model, report.final.clean_acc, report.final.robust_acc, seconds


def tradeoff(method, T=4):
    """Per-seed clean + robust for a configuration."""
    return [run(method, T, s)[1] + run(method, T, s)[2] for s in SEEDS]


@lru_cache(maxsize=None)
def matrix(method, T, seed, metric="kl"):
    model = run(method, T, seed)[0]
    return transferability_matrix(model, split(seed)[1], 0.05, metric, steps=10, seed=seed, n_samples=256)


def pgd_accuracy(method, T, seed, steps):
    model = run(method, T, seed)[0]
    cfg = AttackConfig(epsilon=0.05, alpha=0.0125, steps=steps)
    return robust_accuracy(model, split(seed)[1], [cfg], seed=seed).worst_case


def mean(values):
    return float(np.mean(values))
