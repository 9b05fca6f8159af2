"""Contrastive counterfactual module: positive samplers and the NT-Xent-style loss.

A mini-batch of N observed pairs is expanded to 2N interleaved views
[anchor_1, positive_1, ..., anchor_N, positive_N]; each positive keeps the
anchor's user and swaps in an item chosen by one of three samplers:

  * cf  - uniform over the user's unexposed items (random counterfactual);
  * ps  - item with the largest propensity difference from the anchor item;
  * pop - item with the largest popularity difference from the anchor item.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cclrec.data import DatasetBundle, unexposed_items
from cclrec.model import GradientSet, ModelParams
from cclrec.propensity import PopularityTable, PropensityTable

SAMPLER_KINDS = ("cf", "ps", "pop")


@dataclass
class CCLBatch:
    """2N interleaved representations; row 2k is the anchor of row 2k+1."""

    representations: np.ndarray  # 2N x 2d
    temperature: float
    users: np.ndarray | None = None  # length N
    anchor_items: np.ndarray | None = None
    positive_items: np.ndarray | None = None


def sample_random_counterfactual(bundle: DatasetBundle, user: int, item: int,
                                 rng: np.random.Generator) -> int:
    """Uniform draw from the user's unexposed items.

    Falls back to a uniform draw over all other items when every item is
    exposed (cannot happen on the benchmark datasets).
    """
    candidates = unexposed_items(bundle, user)
    if len(candidates) == 0:
        if bundle.n < 2:
            raise ValueError("no candidate item exists (n=1, all exposed)")
        pick = int(rng.integers(0, bundle.n - 1))
        return pick if pick < item else pick + 1
    return int(candidates[rng.integers(0, len(candidates))])


def sample_propensity_difference(propensities: PropensityTable, user: int, item: int) -> int:
    """Item maximizing |P_{u,i'} - P_{u,item}| over i' != item; lowest index wins ties."""
    row = propensities.row(user)
    diff = np.abs(row - row[item])
    diff[item] = -np.inf
    return int(np.argmax(diff))


def sample_popularity_difference(popularity: PopularityTable, item: int) -> int:
    """Item maximizing |pop(i') - pop(item)| over i' != item; lowest index wins ties."""
    pop = popularity.values
    diff = np.abs(pop - pop[item])
    diff[item] = -np.inf
    return int(np.argmax(diff))


def _pairwise_logits(reps: np.ndarray, tau: float, cosine: bool) -> np.ndarray:
    h = reps
    if cosine:
        norms = np.linalg.norm(h, axis=1, keepdims=True)
        h = h / np.maximum(norms, 1e-12)
    return (h @ h.T) / tau


def ccl_loss(batch: CCLBatch, cosine: bool = False) -> float:
    """Symmetric NT-Xent over the 2N views with dot-product similarity.

    l(a, b) = -log softmax_b over {m != a} of exp(sim(a, m)/tau);
    total is the mean of both directions over the N pairs.
    """
    return _ccl_loss_impl(batch, cosine, want_grad=False)[0]


def ccl_loss_and_grad(batch: CCLBatch, cosine: bool = False) -> tuple[float, np.ndarray]:
    """Loss plus its exact gradient w.r.t. every representation row."""
    return _ccl_loss_impl(batch, cosine, want_grad=True)


def _ccl_loss_impl(batch: CCLBatch, cosine: bool, want_grad: bool):
    reps = batch.representations
    tau = batch.temperature
    if tau <= 0:
        raise ValueError("temperature must be positive")
    two_n = reps.shape[0]
    if two_n < 2 or two_n % 2:
        raise ValueError("batch must hold an even number (>= 2) of views")

    h = reps
    norms = None
    if cosine:
        norms = np.maximum(np.linalg.norm(reps, axis=1, keepdims=True), 1e-12)
        h = reps / norms
    logits = (h @ h.T) / tau
    np.fill_diagonal(logits, -np.inf)  # m != anchor index
    row_max = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - row_max)
    denom = exp.sum(axis=1)
    partner = np.arange(two_n) ^ 1
    pos_logit = logits[np.arange(two_n), partner]
    losses = -(pos_logit - row_max[:, 0]) + np.log(denom)
    loss = float(losses.sum() / two_n)
    if not want_grad:
        return loss, None

    soft = exp / denom[:, None]
    grad_logits = soft
    grad_logits[np.arange(two_n), partner] -= 1.0
    grad_logits /= two_n
    np.fill_diagonal(grad_logits, 0.0)
    grad_s = grad_logits / tau
    grad_h = (grad_s + grad_s.T) @ h
    if cosine:
        # chain through the row normalization
        inner = (grad_h * h).sum(axis=1, keepdims=True)
        grad_h = (grad_h - inner * h) / norms
    return loss, grad_h


def build_views(bundle: DatasetBundle, params: ModelParams,
                users: np.ndarray, items: np.ndarray,
                sampler: str, tau: float,
                rng: np.random.Generator | None = None,
                propensities: PropensityTable | None = None,
                popularity: PopularityTable | None = None) -> CCLBatch:
    """Expand a mini-batch to the interleaved 2N-view representation matrix.

    Both views of a pair share the user-embedding half; only the item half
    differs (anchor item vs. sampled counterfactual item).
    """
    if sampler not in SAMPLER_KINDS:
        raise ValueError(f"sampler must be one of {SAMPLER_KINDS}, got {sampler!r}")
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    n_pairs = len(users)
    pos_items = np.empty(n_pairs, dtype=np.int64)
    for k in range(n_pairs):
        u, i = int(users[k]), int(items[k])
        if sampler == "cf":
            if rng is None:
                raise ValueError("cf sampler needs an explicit rng")
            pos_items[k] = sample_random_counterfactual(bundle, u, i, rng)
        elif sampler == "ps":
            if propensities is None:
                raise ValueError("ps sampler needs a propensity table")
            pos_items[k] = sample_propensity_difference(propensities, u, i)
        else:
            if popularity is None:
                raise ValueError("pop sampler needs a popularity table")
            pos_items[k] = sample_popularity_difference(popularity, i)
    reps = assemble_views(params, users, items, pos_items)
    return CCLBatch(reps, tau, users=users, anchor_items=items, positive_items=pos_items)


def assemble_views(params: ModelParams, users: np.ndarray, items: np.ndarray,
                   pos_items: np.ndarray) -> np.ndarray:
    """Interleaved 2N x 2d matrix of concatenated embeddings."""
    n_pairs = len(users)
    d = params.d
    reps = np.empty((2 * n_pairs, 2 * d))
    h_u = params.user_embeddings[users]
    reps[0::2, :d] = h_u
    reps[1::2, :d] = h_u
    reps[0::2, d:] = params.item_embeddings[items]
    reps[1::2, d:] = params.item_embeddings[pos_items]
    return reps


def scatter_view_grads(params: ModelParams, batch: CCLBatch, grad_reps: np.ndarray,
                       grads: GradientSet, scale: float = 1.0) -> None:
    """Accumulate representation gradients into embedding-row gradients."""
    d = params.d
    g = scale * grad_reps
    np.add.at(grads.user_embeddings, batch.users, g[0::2, :d] + g[1::2, :d])
    np.add.at(grads.item_embeddings, batch.anchor_items, g[0::2, d:])
    np.add.at(grads.item_embeddings, batch.positive_items, g[1::2, d:])
