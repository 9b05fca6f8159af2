"""Training loop: multi-task objective L = L_rec + lambda * L_ccl.

Single-threaded, fully seeded, bit-reproducible. Supports plain log-loss,
focal, IPS and SNIPS rating objectives, the three contrastive samplers,
joint multi-task training and a pretrain-then-finetune mode, and early
stopping on validation total loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from cclrec import model as M
from cclrec import contrastive as C
from cclrec.data import DatasetBundle, InteractionTable, holdout_split
from cclrec.propensity import (
    PopularityTable,
    PropensityTable,
    estimate_popularity,
    estimate_propensity_lr,
    estimate_propensity_nb,
)


@dataclass
class TrainConfig:
    lam: float = 1.0  # weight of the contrastive term
    tau: float = 1.0
    batch_size: int = 512
    embed_dim: int = 8
    hidden_layers: int = 1
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    max_epochs: int = 500
    patience: int = 5
    seed: int = 0
    loss_kind: str = "log"  # log | focal
    focal_gamma: float = 0.0
    sampler: str = "cf"  # cf | ps | pop
    rec_objective: str = "plain"  # plain | ips | snips
    propensity_source: str = "auto"  # auto | lr | nb | oracle
    cosine: bool = False
    val_fraction: float = 0.1
    mode: str = "joint"  # joint | pretrain
    pretrain_epochs: int = 20
    log_batches: bool = False

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sampler not in C.SAMPLER_KINDS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.loss_kind not in ("log", "focal"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.rec_objective not in ("plain", "ips", "snips"):
            raise ValueError(f"unknown rec objective {self.rec_objective!r}")
        if not (0 <= self.val_fraction < 1):
            raise ValueError("val_fraction must be in [0, 1)")

    def to_kv(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @staticmethod
    def from_kv(text: str) -> "TrainConfig":
        casts = {f.name: f.type for f in fields(TrainConfig)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in casts:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kind = casts[key]
            if kind in ("bool", bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            elif kind in ("int", int):
                kwargs[key] = int(value)
            elif kind in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return TrainConfig(**kwargs)


@dataclass
class TrainReport:
    rec_losses: list[float] = field(default_factory=list)
    ccl_losses: list[float] = field(default_factory=list)
    total_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    wall_clock: float = 0.0
    sampler_calls: int = 0
    batch_logs: list[tuple[float, float, float]] = field(default_factory=list)


def batch_objective(params: M.ModelParams, users: np.ndarray, items: np.ndarray,
                    labels: np.ndarray, weights: np.ndarray,
                    lam: float, tau: float,
                    pos_items: Optional[np.ndarray] = None,
                    loss_kind: str = "log", gamma: float = 0.0,
                    cosine: bool = False):
    """Total loss (rec + lam * ccl) and its exact gradient for one batch.

    The rec term is sum_k weights_k * delta_k over the anchor pairs; the
    contrastive term consumes the interleaved concatenated embeddings.
    """
    batch = M.forward(params, users, items)
    if loss_kind == "focal":
        per = M.focal_loss_per_sample(batch.y, labels, gamma)
    else:
        per = M.log_loss_per_sample(batch.y, labels)
    rec = float((np.asarray(weights) * per).sum())
    grads = M.backward(params, batch, labels, weights, loss_kind=loss_kind, gamma=gamma)

    cclv = 0.0
    if lam > 0 and pos_items is not None:
        reps = C.assemble_views(params, batch.users, batch.items, pos_items)
        cbatch = C.CCLBatch(reps, tau, users=batch.users,
                            anchor_items=batch.items, positive_items=pos_items)
        cclv, grad_reps = C.ccl_loss_and_grad(cbatch, cosine=cosine)
        C.scatter_view_grads(params, cbatch, grad_reps, grads, scale=lam)
    total = rec + lam * cclv
    return total, rec, cclv, grads


def _resolve_propensity(bundle: DatasetBundle, config: TrainConfig,
                        propensity: Optional[PropensityTable]) -> PropensityTable:
    if propensity is not None:
        return propensity
    source = config.propensity_source
    if source == "oracle":
        raise ValueError("oracle propensity must be passed in explicitly")
    if source == "auto":
        source = "lr" if bundle.user_features is not None and bundle.item_features is not None else "nb"
    if source == "lr":
        return estimate_propensity_lr(bundle)
    return estimate_propensity_nb(bundle.train, bundle.test, bundle.m, bundle.n)


def train(bundle: DatasetBundle, config: TrainConfig,
          propensity: Optional[PropensityTable] = None,
          popularity: Optional[PopularityTable] = None):
    """Run the full training loop; returns (best ModelParams, TrainReport)."""
    config.validate()
    start = time.perf_counter()
    needs_prop = config.rec_objective in ("ips", "snips") or (
        config.lam > 0 and config.sampler == "ps")
    if needs_prop:
        propensity = _resolve_propensity(bundle, config, propensity)
    if config.lam > 0 and config.sampler == "pop" and popularity is None:
        popularity = estimate_popularity(bundle)

    rng = np.random.default_rng(config.seed)
    params = M.init_params(bundle.m, bundle.n, config.embed_dim, config.hidden_layers, rng)
    state = M.AdamState.for_params(params)
    report = TrainReport()

    if bundle.validation is not None:
        train_part, val_part = bundle.train, bundle.validation
    else:
        train_part, val_part = holdout_split(bundle.train, config.val_fraction,
                                             seed=config.seed + 1)
    if len(train_part) == 0:
        raise ValueError("empty training table")

    train_prop = None
    if config.rec_objective in ("ips", "snips"):
        train_prop = propensity.gather(train_part.users, train_part.items, train_part.labels)

    val_rng = np.random.default_rng(config.seed + 2)
    best_val = np.inf
    best_params = params.copy()
    best_epoch = -1
    since_best = 0

    def sample_positives(users, items, counting=True):
        pos = np.empty(len(users), dtype=np.int64)
        for k, (u, i) in enumerate(zip(users.tolist(), items.tolist())):
            if config.sampler == "cf":
                pos[k] = C.sample_random_counterfactual(bundle, u, i, rng if counting else val_rng)
            elif config.sampler == "ps":
                pos[k] = C.sample_propensity_difference(propensity, u, i)
            else:
                pos[k] = C.sample_popularity_difference(popularity, i)
        if counting:
            report.sampler_calls += len(users)
        return pos

    def run_epochs(n_epochs, lam_rec_scale, lam_ccl, early_stop):
        nonlocal best_val, best_params, best_epoch, since_best
        k_train = len(train_part)
        for _ in range(n_epochs):
            perm = rng.permutation(k_train)
            sums = np.zeros(3)
            n_batches = 0
            for lo in range(0, k_train, config.batch_size):
                idx = perm[lo:lo + config.batch_size]
                users = train_part.users[idx]
                items = train_part.items[idx]
                labels = train_part.labels[idx]
                props = train_prop[idx] if train_prop is not None else None
                weights = M.rec_weights(config.rec_objective, props, len(idx)) * lam_rec_scale
                pos = sample_positives(users, items) if lam_ccl > 0 else None
                total, rec, cclv, grads = batch_objective(
                    params, users, items, labels, weights, lam_ccl, config.tau,
                    pos_items=pos, loss_kind=config.loss_kind,
                    gamma=config.focal_gamma, cosine=config.cosine)
                if not np.isfinite(total):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {report.epochs_run}, batch {n_batches}: "
                        f"rec={rec}, ccl={cclv}")
                grads.assert_finite()
                M.adam_step(params, grads, state, config.learning_rate,
                            weight_decay=config.weight_decay)
                sums += (rec, cclv, total)
                n_batches += 1
                if config.log_batches:
                    report.batch_logs.append((rec, cclv, total))
            report.rec_losses.append(sums[0] / n_batches)
            report.ccl_losses.append(sums[1] / n_batches)
            report.total_losses.append(sums[2] / n_batches)
            report.epochs_run += 1

            if len(val_part) == 0:
                report.val_losses.append(float("nan"))
                best_params = params.copy()
                best_epoch = report.epochs_run - 1
                continue
            val_loss = _validation_loss(params, bundle, config, val_part,
                                        lam_ccl, val_rng, propensity, popularity)
            report.val_losses.append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_params = params.copy()
                best_epoch = report.epochs_run - 1
                since_best = 0
            else:
                since_best += 1
                if early_stop and since_best > config.patience:
                    break

    if config.mode == "pretrain" and config.lam > 0:
        run_epochs(config.pretrain_epochs, lam_rec_scale=0.0, lam_ccl=config.lam,
                   early_stop=False)
        best_val, since_best, best_epoch = np.inf, 0, -1
        run_epochs(config.max_epochs, lam_rec_scale=1.0, lam_ccl=0.0, early_stop=True)
    else:
        run_epochs(config.max_epochs, lam_rec_scale=1.0, lam_ccl=config.lam,
                   early_stop=True)

    report.best_epoch = best_epoch
    report.wall_clock = time.perf_counter() - start
    return best_params, report


def _validation_loss(params, bundle, config, val_part: InteractionTable,
                     lam_ccl, val_rng, propensity, popularity) -> float:
    batch = M.forward(params, val_part.users, val_part.items)
    if config.loss_kind == "focal":
        rec = M.focal_loss(batch.y, val_part.labels, config.focal_gamma)
    else:
        rec = M.log_loss(batch.y, val_part.labels)
    if lam_ccl <= 0:
        return float(rec)
    pos = np.empty(len(val_part), dtype=np.int64)
    for k, (u, i) in enumerate(zip(val_part.users.tolist(), val_part.items.tolist())):
        if config.sampler == "cf":
            pos[k] = C.sample_random_counterfactual(bundle, u, i, val_rng)
        elif config.sampler == "ps":
            pos[k] = C.sample_propensity_difference(propensity, u, i)
        else:
            pos[k] = C.sample_popularity_difference(popularity, i)
    reps = C.assemble_views(params, val_part.users, val_part.items, pos)
    cclv = C.ccl_loss(C.CCLBatch(reps, config.tau), cosine=config.cosine)
    return float(rec + lam_ccl * cclv)


def run_ablation(bundle: DatasetBundle, config: TrainConfig, seeds: list[int],
                 ks=(5, 10)) -> list[dict]:
    """Train {with CCL, without CCL} on shared seeds; one metrics row per arm per seed."""
    from cclrec.metrics import evaluate

    rows = []
    for arm, lam in (("with_ccl", config.lam), ("without_ccl", 0.0)):
        for seed in seeds:
            cfg = replace(config, lam=lam, seed=seed)
            params, _ = train(bundle, cfg)
            rows.append({"arm": arm, "seed": seed, **evaluate(params, bundle, ks=ks).as_dict()})
    return rows


def run_sampler_sweep(bundle: DatasetBundle, config: TrainConfig, seeds: list[int],
                      ks=(5, 10)) -> list[dict]:
    """Train {cf, ps, pop, no-ssl} arms on shared seeds and evaluate each."""
    from cclrec.metrics import evaluate

    arms = [("cf", config.lam, "cf"), ("ps", config.lam, "ps"),
            ("pop", config.lam, "pop"), ("no-ssl", 0.0, config.sampler)]
    rows = []
    for arm, lam, sampler in arms:
        for seed in seeds:
            cfg = replace(config, lam=lam, sampler=sampler, seed=seed)
            params, _ = train(bundle, cfg)
            rows.append({"arm": arm, "seed": seed, **evaluate(params, bundle, ks=ks).as_dict()})
    return rows
