"""Cosine nearest-neighbor classification and the training objective.

A query descriptor is scored against one aggregated descriptor per episode
class by cosine similarity; a softmax over the similarities gives class
probabilities. The training loss is cross-entropy plus a weighted
orthogonality penalty that drives each subspace's prototype Gram matrix
toward the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import CfaParams
from .errors import DataError

PROB_FLOOR = 1e-12
_UNIT_TOL = 1e-6


@dataclass
class ClassBank:
    """Unit-norm descriptors for the X classes of one episode."""

    descriptors: np.ndarray  # (X, C*K)
    labels: list[int]

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] < 2:
            raise DataError("class bank needs at least 2 descriptors")
        if len(self.labels) != self.descriptors.shape[0]:
            raise DataError("one label per descriptor required")
        norms = np.linalg.norm(self.descriptors, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise DataError("class descriptors must be L2-normalized")


@dataclass(frozen=True)
class LossBreakdown:
    classification: float
    orthogonality: float
    gamma: float

    @property
    def total(self) -> float:
        return self.classification + self.gamma * self.orthogonality


def classify(bank: ClassBank, query: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Class probabilities: softmax over cosine similarities.

    Inputs are unit-norm, so cosine similarity is the plain dot product.
    `scale` is an optional softmax temperature; the default leaves the raw
    similarities untouched.
    """
    sims = bank.descriptors @ np.asarray(query, dtype=np.float64)
    return _softmax(scale * sims)


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def cross_entropy(probs: np.ndarray, true_class: int) -> float:
    """-log of the true-class probability, clamped at 1e-12 before the log."""
    p = max(float(probs[true_class]), PROB_FLOOR)
    return -np.log(p)


def ortho_penalty(params: CfaParams) -> float:
    """Sum over subspaces of the elementwise |C_n C_n^T - Iden(K)|."""
    total = 0.0
    k = params.n_prototypes
    for bank in params.prototypes:
        gram = bank @ bank.T
        total += np.abs(gram - np.eye(k)).sum()
    return total


def ortho_penalty_grad(params: CfaParams) -> np.ndarray:
    """Subgradient of `ortho_penalty`; sign(0) = 0 at the kinks."""
    grads = np.empty_like(params.prototypes)
    k = params.n_prototypes
    for n, bank in enumerate(params.prototypes):
        sign = np.sign(bank @ bank.T - np.eye(k))
        grads[n] = (sign + sign.T) @ bank
    return grads


def episode_loss(bank: ClassBank, query: np.ndarray, true_class: int,
                 params: CfaParams, gamma: float, scale: float = 1.0) -> LossBreakdown:
    """Full objective for one query: cross-entropy + gamma * orthogonality."""
    probs = classify(bank, query, scale=scale)
    return LossBreakdown(
        classification=cross_entropy(probs, true_class),
        orthogonality=ortho_penalty(params),
        gamma=gamma,
    )


def classification_grads(bank_descriptors: np.ndarray, query: np.ndarray,
                         true_class: int, scale: float = 1.0,
                         ) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy value and its gradients for one query.

    Returns (loss, d_loss/d_query, d_loss/d_bank_descriptors), treating the
    descriptors as free vectors; the normalization Jacobian inside
    `cfa_backward` turns these into the true constrained gradients.
    """
    query = np.asarray(query, dtype=np.float64)
    sims = bank_descriptors @ query
    probs = _softmax(scale * sims)
    loss = cross_entropy(probs, true_class)
    if probs[true_class] <= PROB_FLOOR:
        # Clamped: the loss is locally constant.
        d_sims = np.zeros_like(probs)
    else:
        d_sims = probs.copy()
        d_sims[true_class] -= 1.0
        d_sims *= scale
    d_query = d_sims @ bank_descriptors
    d_bank = np.outer(d_sims, query)
    return loss, d_query, d_bank
