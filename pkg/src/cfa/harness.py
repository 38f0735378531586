"""Episodic sampling, training loop, and evaluation.

Training repeatedly samples X-way Y-shot episodes from the base split,
aggregates each class's support shots into a descriptor, classifies the
queries, and updates the prototypes by Adam on the averaged episode
gradients. Evaluation reports mean episode accuracy with a 95% confidence
interval. Everything is driven by seeded numpy generators so that a fixed
(seed, config, manifest) triple reproduces runs bit-for-bit on one machine.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .aggregation import (
    CfaParams,
    cfa_backward,
    cfa_forward,
    init_prototypes,
    mean_pool,
)
from .classifier import classification_grads, ortho_penalty, ortho_penalty_grad
from .decomposition import split_channels
from .errors import ConfigError, DataError, NumericError
from .tensor_io import DatasetManifest, read_tensor


@dataclass
class TrainConfig:
    """Hyperparameters for episodic training and evaluation."""

    n_subspaces: int = 4
    n_prototypes: int = 32
    alpha: float = 100.0
    gamma: float = 2e-4
    learning_rate: float = 1e-3
    batch_size: int = 16
    iterations: int = 60000
    way: int = 5
    shot: int = 1
    queries_per_class: int = 16
    rng_seed: int = 0
    cosine_scale: float = 1.0
    intra_normalize: bool = False
    val_every: int = 500
    val_episodes: int = 100
    init_sample_files: int = 64
    init_sample_points: int = 4096

    def __post_init__(self):
        positive = {
            "n_subspaces": self.n_subspaces, "n_prototypes": self.n_prototypes,
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "way": self.way, "shot": self.shot,
            "queries_per_class": self.queries_per_class,
            "val_every": self.val_every, "val_episodes": self.val_episodes,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be nonnegative, got {self.iterations}")
        if self.alpha < 0 or self.gamma < 0:
            raise ConfigError("alpha and gamma must be nonnegative")


@dataclass
class Episode:
    """One sampled X-way Y-shot task with per-class queries."""

    way: int
    shot: int
    class_ids: list[int]                 # global class ids, episode order
    support: list[list[np.ndarray]]      # way x shot feature maps
    queries: list[np.ndarray]
    query_labels: list[int]              # indices into class_ids


@dataclass
class EvalReport:
    episode_count: int
    mean_accuracy: float  # percent
    ci95: float           # percent half-width

    def __str__(self):
        return (f"{self.episode_count} episodes: "
                f"{self.mean_accuracy:.2f}% +/- {self.ci95:.2f}%")


@dataclass
class CurvePoint:
    iteration: int
    loss: float
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    params: CfaParams                 # best-validation parameters (final if no validation)
    curve: list[CurvePoint]
    best_val_accuracy: float | None
    best_iteration: int | None
    final_params: CfaParams


def worker_count() -> int:
    """Evaluation worker cap: CFA_THREADS env var, default min(8, cpus)."""
    raw = os.environ.get("CFA_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"CFA_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"CFA_THREADS must be >= 1, got {n}")
        return n
    return min(8, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Episode sampling
# ---------------------------------------------------------------------------


def sample_episode(manifest: DatasetManifest, split: str, cfg: TrainConfig,
                   rng: np.random.Generator) -> Episode:
    """Uniformly sample classes then samples, without replacement.

    Support and query samples are disjoint by construction. Deterministic
    for a given generator state.
    """
    by_class = manifest.classes_in_split(split)
    class_ids = list(by_class.keys())
    if len(class_ids) < cfg.way:
        raise DataError(
            f"split {split!r} has {len(class_ids)} classes, need {cfg.way}"
        )
    need = cfg.shot + cfg.queries_per_class
    chosen = [class_ids[i] for i in rng.choice(len(class_ids), size=cfg.way, replace=False)]

    support, queries, query_labels = [], [], []
    for slot, cid in enumerate(chosen):
        records = by_class[cid]
        if len(records) < need:
            raise DataError(
                f"class {cid} has {len(records)} samples, need {need}"
            )
        picks = rng.choice(len(records), size=need, replace=False)
        tensors = [read_tensor(records[i].path) for i in picks]
        support.append(tensors[:cfg.shot])
        queries.extend(tensors[cfg.shot:])
        query_labels.extend([slot] * cfg.queries_per_class)
    return Episode(cfg.way, cfg.shot, chosen, support, queries, query_labels)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros_like(values: np.ndarray) -> "AdamState":
        return AdamState(np.zeros_like(values, dtype=np.float64),
                         np.zeros_like(values, dtype=np.float64))


def adam_step(values: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              ) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns (new values, new state)."""
    if grad.shape != values.shape:
        raise DataError(f"grad shape {grad.shape} does not match values {values.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    updated = values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Episode loss and gradients
# ---------------------------------------------------------------------------


def episode_grads(episode: Episode, params: CfaParams, gamma: float,
                  scale: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean query loss of one episode and its prototype gradient.

    The loss is the query-averaged cross-entropy plus gamma times the
    orthogonality penalty. Support tapes are reused across queries: the
    upstream gradients on each class descriptor are accumulated first and
    backpropagated once.
    """
    banks = [cfa_forward(shots, params) for shots in episode.support]
    descs = np.stack([d for d, _ in banks])

    bank_grad = np.zeros_like(descs)
    proto_grad = np.zeros_like(params.prototypes)
    cls_loss = 0.0
    for query, label in zip(episode.queries, episode.query_labels):
        q_desc, q_tape = cfa_forward([query], params)
        loss, d_query, d_bank = classification_grads(descs, q_desc, label, scale)
        cls_loss += loss
        bank_grad += d_bank
        proto_grad += cfa_backward(q_tape, d_query).prototypes
    for (_, tape), upstream in zip(banks, bank_grad):
        proto_grad += cfa_backward(tape, upstream).prototypes

    n_queries = len(episode.queries)
    total = cls_loss / n_queries + gamma * ortho_penalty(params)
    grad = proto_grad / n_queries + gamma * ortho_penalty_grad(params)
    return total, grad


def episode_loss_and_grads(support: list[list[np.ndarray]], query: np.ndarray,
                           true_class: int, params: CfaParams, gamma: float,
                           scale: float = 1.0):
    """Single-query episode loss with gradients for every input.

    Returns (total loss, prototype grad, per-class support grads, query
    grad). The gradient checker needs d(loss)/d(input features) as well as
    d(loss)/d(prototypes), so unlike `episode_grads` this propagates into
    the support and query tensors too.
    """
    banks = [cfa_forward(shots, params) for shots in support]
    descs = np.stack([d for d, _ in banks])
    q_desc, q_tape = cfa_forward([query], params)
    cls_loss, d_query, d_bank = classification_grads(descs, q_desc, true_class, scale)

    query_bundle = cfa_backward(q_tape, d_query)
    proto_grad = query_bundle.prototypes.copy()
    support_grads = []
    for (_, tape), upstream in zip(banks, d_bank):
        bundle = cfa_backward(tape, upstream)
        proto_grad += bundle.prototypes
        support_grads.append(bundle.inputs)

    total = cls_loss + gamma * ortho_penalty(params)
    proto_grad += gamma * ortho_penalty_grad(params)
    return total, proto_grad, support_grads, query_bundle.inputs[0]


# ---------------------------------------------------------------------------
# Prototype initialization
# ---------------------------------------------------------------------------


def init_params_from_manifest(manifest: DatasetManifest, cfg: TrainConfig,
                              rng: np.random.Generator) -> CfaParams:
    """K-means prototype initialization from a sample of base-split features.

    Falls back to random draws when the base split is empty or too small.
    """
    records = manifest.split_records("base")
    if manifest.channels is not None and manifest.channels % cfg.n_subspaces != 0:
        raise ConfigError(
            f"subspace count {cfg.n_subspaces} does not divide "
            f"channel count {manifest.channels}"
        )
    if not records:
        if manifest.channels is None:
            raise DataError("cannot initialize parameters from an empty manifest")
        return CfaParams.random(manifest.channels, cfg.n_subspaces, cfg.n_prototypes,
                                alpha=cfg.alpha, rng=rng,
                                intra_normalize=cfg.intra_normalize)

    take = min(len(records), cfg.init_sample_files)
    picks = rng.choice(len(records), size=take, replace=False)
    collected: list[list[np.ndarray]] = [[] for _ in range(cfg.n_subspaces)]
    for i in picks:
        tensor = read_tensor(records[i].path)
        for n, view in enumerate(split_channels(tensor, cfg.n_subspaces)):
            collected[n].append(np.asarray(view, dtype=np.float64).T)
    subspace_points = []
    for chunks in collected:
        points = np.concatenate(chunks, axis=0)
        if points.shape[0] > cfg.init_sample_points:
            keep = rng.choice(points.shape[0], size=cfg.init_sample_points, replace=False)
            points = points[keep]
        subspace_points.append(points)
    return init_prototypes(subspace_points, cfg.n_prototypes, cfg.alpha, rng,
                           intra_normalize=cfg.intra_normalize)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _split_usable(manifest: DatasetManifest, split: str, cfg: TrainConfig) -> bool:
    by_class = manifest.classes_in_split(split)
    if len(by_class) < cfg.way:
        return False
    need = cfg.shot + cfg.queries_per_class
    enough = [cid for cid, recs in by_class.items() if len(recs) >= need]
    return len(enough) >= cfg.way


def train(manifest: DatasetManifest, cfg: TrainConfig) -> TrainResult:
    """Episodic training of the prototype bank on the base split.

    Each iteration averages the episode gradient over `batch_size` episodes
    and applies one Adam step. Validation accuracy is measured every
    `val_every` iterations on a fixed set of validation episodes, and the
    parameters with the best validation accuracy are returned (final
    parameters when the manifest has no usable validation split).
    """
    root_ss = np.random.SeedSequence(cfg.rng_seed)
    init_ss, train_ss, val_ss = root_ss.spawn(3)
    params = init_params_from_manifest(manifest, cfg, np.random.default_rng(init_ss))
    if cfg.iterations > 0 and not _split_usable(manifest, "base", cfg):
        raise DataError("base split cannot populate a full episode")

    rng = np.random.default_rng(train_ss)
    val_seed = int(val_ss.generate_state(1)[0])
    validate = _split_usable(manifest, "validation", cfg)

    state = AdamState.zeros_like(params.prototypes)
    curve: list[CurvePoint] = []
    best_acc: float | None = None
    best_iter: int | None = None
    best_params = params.copy()

    for it in range(1, cfg.iterations + 1):
        loss_sum = 0.0
        grad_sum = np.zeros_like(params.prototypes)
        for _ in range(cfg.batch_size):
            episode = sample_episode(manifest, "base", cfg, rng)
            loss, grad = episode_grads(episode, params, cfg.gamma, cfg.cosine_scale)
            loss_sum += loss
            grad_sum += grad
        mean_loss = loss_sum / cfg.batch_size
        if not np.isfinite(mean_loss):
            raise NumericError(f"non-finite loss {mean_loss} at iteration {it}")
        new_protos, state = adam_step(params.prototypes, grad_sum / cfg.batch_size,
                                      state, cfg.learning_rate)
        params.prototypes = new_protos

        val_acc = None
        if validate and it % cfg.val_every == 0:
            report = evaluate(manifest, "validation", params, cfg,
                              cfg.val_episodes, seed=val_seed)
            val_acc = report.mean_accuracy
            if best_acc is None or val_acc > best_acc:
                best_acc, best_iter, best_params = val_acc, it, params.copy()
        curve.append(CurvePoint(it, mean_loss, val_acc))

    if best_acc is None:
        best_params = params.copy()
    return TrainResult(params=best_params, curve=curve, best_val_accuracy=best_acc,
                       best_iteration=best_iter, final_params=params)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _episode_accuracy(episode: Episode, class_rep, query_rep) -> float:
    """Fraction of queries whose best-scoring class is correct (ties -> lowest index)."""
    bank = np.stack([class_rep(shots) for shots in episode.support])
    correct = 0
    for query, label in zip(episode.queries, episode.query_labels):
        sims = bank @ query_rep(query)
        if int(np.argmax(sims)) == label:
            correct += 1
    return correct / len(episode.queries)


def report_from_accuracies(accuracies) -> EvalReport:
    """Mean and 95% CI half-width, both in percent.

    ci95 = 1.96 * sample-stddev (ddof 1) / sqrt(episode count).
    """
    accs = np.asarray(accuracies, dtype=np.float64)
    if accs.size < 2:
        raise DataError(f"need at least 2 episode accuracies, got {accs.size}")
    mean = float(accs.mean() * 100.0)
    ci95 = float(1.96 * accs.std(ddof=1) / np.sqrt(accs.size) * 100.0)
    return EvalReport(episode_count=int(accs.size), mean_accuracy=mean, ci95=ci95)


def _eval_episodes(manifest: DatasetManifest, split: str, cfg: TrainConfig,
                   episodes: int, seed: int, class_rep, query_rep) -> EvalReport:
    if episodes < 2:
        raise DataError(f"need at least 2 evaluation episodes, got {episodes}")
    children = np.random.SeedSequence(seed).spawn(episodes)

    def run_one(child) -> float:
        rng = np.random.default_rng(child)
        episode = sample_episode(manifest, split, cfg, rng)
        return _episode_accuracy(episode, class_rep, query_rep)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(run_one, children))
    else:
        accs = [run_one(c) for c in children]
    return report_from_accuracies(accs)


def evaluate(manifest: DatasetManifest, split: str, params: CfaParams,
             cfg: TrainConfig, episodes: int, seed: int | None = None) -> EvalReport:
    """Mean episode accuracy (percent) with 95% CI over sampled episodes.

    ci95 = 1.96 * sample-stddev(per-episode accuracies) / sqrt(episodes).
    Parameters are never mutated.
    """
    return _eval_episodes(
        manifest, split, cfg, episodes,
        cfg.rng_seed if seed is None else seed,
        class_rep=lambda shots: cfa_forward(shots, params)[0],
        query_rep=lambda q: cfa_forward([q], params)[0],
    )


def baseline_eval(manifest: DatasetManifest, split: str, cfg: TrainConfig,
                  episodes: int, seed: int | None = None) -> EvalReport:
    """Mean-pool + cosine comparison arm, same protocol as `evaluate`.

    A class is represented by the mean of its shots' pooled vectors,
    re-normalized; queries by their own pooled vector.
    """
    def class_rep(shots):
        pooled = np.stack([mean_pool([s]) for s in shots]).mean(axis=0)
        norm = np.linalg.norm(pooled)
        if norm < 1e-12:
            raise NumericError("degenerate pooled class representation")
        return pooled / norm

    return _eval_episodes(
        manifest, split, cfg, episodes,
        cfg.rng_seed if seed is None else seed,
        class_rep=class_rep,
        query_rep=lambda q: mean_pool([q]),
    )


# ---------------------------------------------------------------------------
# Parameter persistence
# ---------------------------------------------------------------------------


def save_params(params: CfaParams, path) -> None:
    np.savez(path, prototypes=params.prototypes, alpha=params.alpha,
             intra_normalize=params.intra_normalize)


def load_params(path) -> CfaParams:
    try:
        with np.load(path) as data:
            return CfaParams(data["prototypes"], float(data["alpha"]),
                             bool(data["intra_normalize"]))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load parameters from {path}: {exc}") from None
