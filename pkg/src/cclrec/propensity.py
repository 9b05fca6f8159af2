"""Exposure-probability (propensity) and item-popularity estimation.

Propensities feed the IPS/SNIPS objectives and the propensity-difference
positive sampler; popularity feeds the popularity-difference sampler.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from cclrec.data import DatasetBundle, FeatureTable, InteractionTable

DEFAULT_FLOOR = 0.05
POPULARITY_FLOOR = 1e-3


@dataclass(frozen=True)
class PopularityTable:
    """Per-item popularity in (0, 1]; sqrt of count normalized by the max."""

    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)


def estimate_popularity(bundle: DatasetBundle, floor: float = POPULARITY_FLOOR) -> PopularityTable:
    """pop(i) = sqrt(count(i) / max_j count(j)); zero-count items get `floor`."""
    counts = bundle.exposure.item_counts().astype(np.float64)
    return popularity_from_counts(counts, floor)


def popularity_from_counts(counts: np.ndarray, floor: float = POPULARITY_FLOOR) -> PopularityTable:
    counts = np.asarray(counts, dtype=np.float64)
    top = counts.max()
    if top <= 0:
        raise ValueError("no interactions: all item counts are zero")
    pop = np.sqrt(counts / top)
    pop[counts == 0] = floor
    return PopularityTable(pop)


class PropensityTable:
    """Estimated exposure probabilities P_{u,i}, clipped to [floor, 1].

    Two storage layouts:
      * dense: full m x n matrix (logistic-regression estimator);
      * per-class: one probability per observed label class (naive-Bayes
        estimator), expanded on demand. Pairs without an observed label
        get the marginal exposure rate.
    """

    def __init__(self, m: int, n: int, floor: float,
                 dense: Optional[np.ndarray] = None,
                 class_probs: Optional[tuple[float, float]] = None,
                 marginal: Optional[float] = None,
                 train_labels: Optional[InteractionTable] = None):
        if (dense is None) == (class_probs is None):
            raise ValueError("exactly one of dense / class_probs must be given")
        self.m = m
        self.n = n
        self.floor = floor
        if dense is not None:
            self.kind = "dense"
            self.dense = np.clip(dense, floor, 1.0)
            self.dense.setflags(write=False)
        else:
            self.kind = "per-class"
            self.class_probs = (min(max(class_probs[0], floor), 1.0),
                                min(max(class_probs[1], floor), 1.0))
            self.marginal = min(max(marginal, floor), 1.0)
            self._label_grid = None
            if train_labels is not None:
                grid = np.full((m, n), -1, dtype=np.int8)
                grid[train_labels.users, train_labels.items] = train_labels.labels
                grid.setflags(write=False)
                self._label_grid = grid

    def gather(self, users: np.ndarray, items: np.ndarray,
               labels: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-sample propensities for observed pairs."""
        if self.kind == "dense":
            return self.dense[users, items]
        if labels is None:
            if self._label_grid is None:
                raise ValueError("per-class table needs labels (none recorded)")
            labels = self._label_grid[users, items]
            if (labels < 0).any():
                raise ValueError("pair without observed label; pass labels explicitly")
        p0, p1 = self.class_probs
        return np.where(np.asarray(labels) == 1, p1, p0)

    def row(self, user: int) -> np.ndarray:
        """Length-n propensity vector for one user (sampler input)."""
        if self.kind == "dense":
            return self.dense[user]
        out = np.full(self.n, self.marginal)
        if self._label_grid is not None:
            lab = self._label_grid[user]
            p0, p1 = self.class_probs
            out[lab == 0] = p0
            out[lab == 1] = p1
        return out


def clip_propensity(table: PropensityTable, floor: float) -> PropensityTable:
    """Re-clip a table to [floor, 1]."""
    if not (0 < floor < 1):
        raise ValueError(f"floor must be in (0, 1), got {floor}")
    if table.kind == "dense":
        return PropensityTable(table.m, table.n, floor, dense=np.clip(table.dense, floor, 1.0))
    out = PropensityTable(table.m, table.n, floor,
                          class_probs=table.class_probs, marginal=table.marginal)
    out._label_grid = table._label_grid
    return out


def estimate_propensity_nb(train: InteractionTable, mcar: InteractionTable,
                           m: int, n: int, floor: float = DEFAULT_FLOOR) -> PropensityTable:
    """Naive-Bayes propensity from a small MCAR sample.

    P(O=1 | Y=y) = P(Y=y | O=1) * P(O=1) / P(Y=y), with the label
    likelihood and marginal exposure rate from the biased training data
    and the label prior from the MCAR sample.
    """
    if len(train) == 0 or len(mcar) == 0:
        raise ValueError("train and MCAR tables must be non-empty")
    p_o = len(train) / (m * n)
    p_y1_given_o = train.labels.mean()
    p_y1 = mcar.labels.mean()
    if p_y1 == 0.0 or p_y1 == 1.0:
        raise ValueError("MCAR sample is missing one label class")
    p1 = p_y1_given_o * p_o / p_y1
    p0 = (1.0 - p_y1_given_o) * p_o / (1.0 - p_y1)
    return PropensityTable(m, n, floor, class_probs=(p0, p1), marginal=p_o,
                           train_labels=train)


@dataclass
class LogisticHyper:
    learning_rate: float = 0.5
    epochs: int = 300
    negative_rate: float = 1.0
    seed: int = 0
    l2: float = 1e-4


def estimate_propensity_lr(bundle: DatasetBundle,
                           hyper: Optional[LogisticHyper] = None,
                           floor: float = DEFAULT_FLOOR) -> PropensityTable:
    """Logistic regression on concatenated user/item features predicting exposure.

    Positives are the exposed training pairs; negatives are unexposed pairs
    sampled uniformly at `negative_rate` : 1 with a fixed seed. Full-batch
    gradient descent; deterministic for a fixed seed.
    """
    if bundle.user_features is None or bundle.item_features is None:
        raise ValueError("logistic propensity needs user and item features; "
                         "use popularity or naive Bayes instead")
    hyper = hyper or LogisticHyper()
    m, n = bundle.m, bundle.n
    xu = bundle.user_features.values
    xi = bundle.item_features.values

    pos_u = bundle.train.users
    pos_i = bundle.train.items
    rng = np.random.default_rng(hyper.seed)
    n_neg = int(round(hyper.negative_rate * len(pos_u)))
    neg_u = np.empty(n_neg, dtype=np.int64)
    neg_i = np.empty(n_neg, dtype=np.int64)
    filled = 0
    while filled < n_neg:
        cu = rng.integers(0, m, size=n_neg - filled)
        ci = rng.integers(0, n, size=n_neg - filled)
        keep = np.array([(u, i) not in bundle.exposure for u, i in zip(cu, ci)])
        take = keep.sum()
        neg_u[filled:filled + take] = cu[keep]
        neg_i[filled:filled + take] = ci[keep]
        filled += take

    X = np.hstack([
        np.vstack([xu[pos_u], xu[neg_u]]),
        np.vstack([xi[pos_i], xi[neg_i]]),
    ])
    y = np.concatenate([np.ones(len(pos_u)), np.zeros(n_neg)])

    w = np.zeros(X.shape[1])
    b = 0.0
    lr = hyper.learning_rate
    for _ in range(hyper.epochs):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
        err = p - y
        w -= lr * (X.T @ err / len(y) + hyper.l2 * w)
        b -= lr * err.mean()

    su = xu @ w[:xu.shape[1]]
    si = xi @ w[xu.shape[1]:]
    dense = 1.0 / (1.0 + np.exp(-(su[:, None] + si[None, :] + b)))
    return PropensityTable(m, n, floor, dense=dense)


def save_table(path, table) -> None:
    """Flat serialization: one header line, then row-major float64 payload."""
    path = Path(path)
    if isinstance(table, PopularityTable):
        header = f"popularity 1 {len(table.values)} 0\n"
        payload = table.values
    elif table.kind == "dense":
        header = f"dense {table.m} {table.n} {table.floor}\n"
        payload = table.dense
    else:
        header = f"per-class {table.m} {table.n} {table.floor}\n"
        payload = np.array([*table.class_probs, table.marginal])
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(np.ascontiguousarray(payload, dtype=np.float64).tobytes())


def load_table(path):
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline().decode().split()
        kind, m, n, floor = header[0], int(header[1]), int(header[2]), float(header[3])
        payload = np.frombuffer(f.read(), dtype=np.float64)
    if kind == "popularity":
        return PopularityTable(payload.copy())
    if kind == "dense":
        return PropensityTable(m, n, floor, dense=payload.reshape(m, n).copy())
    p0, p1, marginal = payload
    return PropensityTable(m, n, floor, class_probs=(p0, p1), marginal=marginal)
