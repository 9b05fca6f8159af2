"""Synthetic exposure-bias generator with known ground truth.

A per-item latent confounder drives both which items get exposed
(train split, skew controlled by beta) and the outcome probabilities,
while the test split is exposed uniformly at random. Ground-truth
preference probabilities and the exposure distribution are kept alongside
the data so debiasing can be verified directly.

The confounder is drawn from a bounded uniform range so that even the
least-exposed items keep a handful of training observations (matching the
density of the real benchmark data, where every item is rated by some
users); the exposure ratio between the most- and least-exposed items is
still about 20:1 at the default skew. User latents carry a positive mean
so items differ in an average quality the model can learn.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cclrec.data import DatasetBundle, ExposureMatrix, InteractionTable


@dataclass
class SimConfig:
    m: int = 500
    n: int = 100
    latent_dim: int = 8
    exposure_skew: float = 3.0  # strength of confounder -> exposure
    exposures_per_user: int = 20
    confounder_outcome_weight: float = 1.0  # confounder -> outcome path
    confounder_half_range: float = 0.5  # z ~ Uniform(-r, r)
    latent_scale: float = 0.8  # per-vector norm scale of the latents
    user_latent_mean: float = 1.2  # positive shift giving items a mean quality
    test_exposures_per_user: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.exposure_skew < 0:
            raise ValueError("exposure_skew must be >= 0")
        if self.confounder_half_range <= 0:
            raise ValueError("confounder_half_range must be positive")
        if self.exposures_per_user + self.test_exposures_per_user > self.n:
            raise ValueError("per-user exposure counts exceed item count")


@dataclass
class SyntheticBundle:
    dataset: DatasetBundle
    true_preference: np.ndarray  # m x n probability matrix
    exposure_weights: np.ndarray  # length n, per-draw softmax weights
    inclusion_probs: np.ndarray  # length n, P(item in a user's train split)
    confounder: np.ndarray  # length n latent scores


def _sample_without_replacement(weights: np.ndarray, k: int,
                                rng: np.random.Generator) -> np.ndarray:
    """Sequential weighted draws with renormalization."""
    w = weights.copy()
    out = np.empty(k, dtype=np.int64)
    for j in range(k):
        p = w / w.sum()
        pick = rng.choice(len(w), p=p)
        out[j] = pick
        w[pick] = 0.0
    return out


def estimate_inclusion_probs(weights: np.ndarray, k: int, draws: int = 10_000,
                             seed: int = 0) -> np.ndarray:
    """Monte-Carlo marginal inclusion probability of the train sampler."""
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(weights), dtype=np.int64)
    for _ in range(draws):
        counts[_sample_without_replacement(weights, k, rng)] += 1
    return counts / draws


def generate(config: SimConfig, inclusion_draws: int = 10_000) -> SyntheticBundle:
    """Draw a full biased-train / uniform-test bundle; deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    scale = config.latent_scale / np.sqrt(config.latent_dim)
    shift = config.user_latent_mean / np.sqrt(config.latent_dim)
    u_lat = rng.normal(shift, scale, size=(config.m, config.latent_dim))
    i_lat = rng.normal(0.0, 1.0, size=(config.n, config.latent_dim)) * scale
    z = rng.uniform(-config.confounder_half_range, config.confounder_half_range,
                    size=config.n)
    logits = u_lat @ i_lat.T + config.confounder_outcome_weight * z[None, :]
    pref = 1.0 / (1.0 + np.exp(-logits))

    weights = np.exp(config.exposure_skew * z)
    weights /= weights.sum()

    users, items, ratings, split = [], [], [], []
    for u in range(config.m):
        train_items = _sample_without_replacement(weights, config.exposures_per_user, rng)
        rest = np.setdiff1d(np.arange(config.n), train_items)
        test_items = rng.choice(rest, size=config.test_exposures_per_user, replace=False)
        for part, chosen in (("train", train_items), ("test", test_items)):
            labels = (rng.random(len(chosen)) < pref[u, chosen]).astype(np.int64)
            users.extend([u] * len(chosen))
            items.extend(chosen.tolist())
            ratings.extend((labels * 4 + 1).tolist())  # 5 = positive, 1 = negative
            split.extend([part] * len(chosen))

    users = np.array(users)
    items = np.array(items)
    ratings = np.array(ratings)
    is_train = np.array([s == "train" for s in split])
    train = InteractionTable.from_lists(users[is_train], items[is_train], ratings[is_train])
    test = InteractionTable.from_lists(users[~is_train], items[~is_train], ratings[~is_train])
    bundle = DatasetBundle(m=config.m, n=config.n, train=train, test=test,
                           exposure=ExposureMatrix(config.m, config.n, train))
    inclusion = estimate_inclusion_probs(weights, config.exposures_per_user,
                                         draws=inclusion_draws, seed=config.seed + 1)
    return SyntheticBundle(bundle, pref, weights, inclusion, z)


def oracle_propensities(synth: SyntheticBundle, table: InteractionTable,
                        floor: float = 1e-3) -> np.ndarray:
    """Ground-truth per-pair propensities (marginal inclusion probabilities)."""
    return np.maximum(synth.inclusion_probs[table.items], floor)


def save_bundle(synth: SyntheticBundle, directory) -> None:
    """Write triple files the dataset loader reads, plus the ground truth."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, table in (("train.txt", synth.dataset.train), ("test.txt", synth.dataset.test)):
        with open(directory / name, "w") as f:
            for u, i, r in zip(table.users, table.items, table.ratings):
                f.write(f"{u} {i} {r}\n")
    np.savez(directory / "ground_truth.npz",
             true_preference=synth.true_preference,
             exposure_weights=synth.exposure_weights,
             inclusion_probs=synth.inclusion_probs,
             confounder=synth.confounder)
