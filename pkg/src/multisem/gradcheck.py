"""Finite-difference verification of the full fusion model's gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import fusion
from .data import SynthSpec, generate_synthetic, sample_episode
from .neural import TRAIN, finite_diff_check
from .numeric import Rng, derive_seed

SUITE_CONFIGS = ("", "l/l", "l/l,d/v", "l/l,d/v,d/l")
SUITE_WAYS = (2, 5)
TOLERANCE = 1e-4
STEP = 1e-6
EPS = float(np.finfo(np.float64).eps)


@dataclass
class GradCase:
    branches: str
    branch_losses: bool
    way: int
    loss: float
    rel_error: float        # worst relative error, denominator floor 1e-8
    abs_error: float        # worst |analytic - numeric|
    noise_units: float      # abs_error / (eps * max(1, |loss|) / step)
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE

    def line(self) -> str:
        return (f"GRAD branches={self.branches or '-'} branch_losses={int(self.branch_losses)} "
                f"way={self.way} entries={self.n_entries} rel={self.rel_error:.3e} "
                f"abs={self.abs_error:.3e} noise_units={self.noise_units:.1f} "
                f"{'ok' if self.passed else 'FAIL'}")


def entry_errors(loss_fn, params, grads, step=STEP):
    """Per-entry ``(analytic, numeric)`` pairs for every tensor."""
    out = []
    for name in params:
        flat = params[name].reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            out.append((g[i], (up - down) / (2.0 * step)))
    return np.array(out)


def random_check_model(rng: Rng, config: fusion.BranchConfig, visual_dim: int, semantic_dims,
                       embed_dim: int = 8, hidden: int = 12, scale: float = 0.3) -> fusion.FusionModel:
    """Small model with every tensor (biases included) drawn from N(0, scale^2).

    Non-zero biases keep ReLU pre-activations off their kink at exactly 0,
    where one-sided and two-sided derivatives disagree.
    """
    model = fusion.init_fusion_model(rng, config, visual_dim, semantic_dims, embed_dim,
                                     hidden, hidden, hidden, dropout_rate=0.7)
    for arr in model.parameters().values():
        arr[...] = rng.normal(0.0, scale, arr.shape)
    return model


def check_case(branches: str, branch_losses: bool, way: int, seed: int = 0,
               dataset=None, step: float = STEP) -> GradCase:
    if dataset is None:
        dataset = check_dataset()
    config = fusion.parse_branch_config(branches, branch_losses)
    key = (branches, int(branch_losses), way)
    model = random_check_model(Rng(derive_seed(seed, "model", *key)), config,
                               dataset.feature_dim, dataset.semantic_dims)
    episode = sample_episode(Rng(derive_seed(seed, "episode", way)), dataset, "train", way, 1, 3)
    mask_seed = derive_seed(seed, "masks", *key)
    loss, grads = fusion.episode_loss_and_grads(model, episode, Rng(mask_seed), TRAIN)

    def loss_fn():
        # reseeding reproduces the same dropout masks on every call
        return fusion.episode_loss(model, episode, TRAIN, Rng(mask_seed))

    params = model.parameters()
    pairs = entry_errors(loss_fn, params, grads, step)
    a, n = np.abs(pairs[:, 0]), np.abs(pairs[:, 1])
    diff = np.abs(pairs[:, 0] - pairs[:, 1])
    rel = diff / np.maximum(np.maximum(a, n), 1e-8)
    roundoff = EPS * max(1.0, abs(loss)) / step
    return GradCase(branches, branch_losses, way, loss, float(rel.max()), float(diff.max()),
                    float(diff.max() / roundoff), len(pairs))


def check_dataset():
    return generate_synthetic(SynthSpec(
        n_classes=20, instances_per_class=8, feature_dim=8,
        modalities={"label": (6, 0.9), "description": (6, 0.9), "attributes": (5, 0.9)},
        split=(10, 5, 5), seed=7))


def gradient_suite(configs: Sequence[str] = SUITE_CONFIGS, ways: Sequence[int] = SUITE_WAYS,
                   branch_losses: Sequence[bool] = (True, False), seed: int = 0,
                   step: float = STEP) -> List[GradCase]:
    dataset = check_dataset()
    return [check_case(c, bl, w, seed, dataset, step)
            for c in configs for bl in branch_losses for w in ways]


def quadratic_check(theta: float = 3.0, corrupt: float = 1.0) -> float:
    """Sanity check of the checker itself on ``L = theta^2``."""
    params = {"theta": np.array([theta])}
    grads = {"theta": np.array([2.0 * theta * corrupt])}
    return finite_diff_check(lambda: float(params["theta"][0] ** 2), params, grads)


def run_suite(seed: int = 0, out=print) -> List[GradCase]:
    start = time.perf_counter()
    cases = gradient_suite(seed=seed)
    for case in cases:
        out(case.line())
    worst = max(c.rel_error for c in cases)
    noise = max(c.noise_units for c in cases)
    out(f"worst relative error {worst:.3e} (tolerance {TOLERANCE:g}); "
        f"worst discrepancy {noise:.1f} round-off units; {time.perf_counter() - start:.1f}s")
    return cases
