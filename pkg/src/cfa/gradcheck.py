"""Finite-difference verification of the analytic gradients.

The checker builds a small random episode, runs the full loss pipeline
(aggregation, cosine classification, optional orthogonality penalty), and
compares the hand-derived gradients against central differences entry by
entry. An entry agrees when either the absolute gap is below a floor or
the relative error against max(|analytic|, |numeric|) is under tolerance;
the floor keeps near-zero gradients from inflating the relative error
through rounding noise in the difference quotient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .aggregation import CfaParams, cfa_forward
from .classifier import ClassBank, episode_loss
from .errors import ConfigError
from .harness import episode_loss_and_grads

DEFAULT_STEP = 1e-4
DEFAULT_REL_TOL = 1e-4
DEFAULT_ABS_FLOOR = 1e-7

# Sampling grids for random instances. Every subspace count divides every
# channel count, so any combination is valid.
CHANNEL_CHOICES = (4, 8, 16)
SUBSPACE_CHOICES = (1, 2, 4)
PROTOTYPE_CHOICES = (1, 2, 3, 5)
SIDE_CHOICES = (1, 2, 3)
SHOT_CHOICES = (1, 2, 3)
ALPHA_CHOICES = (0.5, 2.0, 10.0)


def central_difference(f, x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of scalar `f` at `x`, one entry at a time.

    `x` is perturbed in place and restored bit-for-bit, so `f` may either
    use the passed array or close over the original object.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return grad


def worst_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                         abs_floor: float = DEFAULT_ABS_FLOOR) -> float:
    """Largest relative gap over entries whose absolute gap exceeds the floor.

    Returns 0.0 when every entry is within the floor. The denominator
    max(|analytic|, |numeric|) is at least half the gap, so it never
    vanishes for a counted entry.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    gap = np.abs(a - n)
    counted = gap > abs_floor
    if not counted.any():
        return 0.0
    scale = np.maximum(np.abs(a), np.abs(n))
    return float((gap[counted] / scale[counted]).max())


@dataclass(frozen=True)
class GradcheckInstance:
    channels: int
    n_subspaces: int
    n_prototypes: int
    side: int          # H = W
    shots: int
    alpha: float
    seed: int
    way: int = 2


@dataclass(frozen=True)
class InstanceResult:
    instance: GradcheckInstance
    max_rel_error: float


@dataclass(frozen=True)
class GradcheckReport:
    results: list[InstanceResult]
    elapsed_seconds: float

    @property
    def max_rel_error(self) -> float:
        return max(r.max_rel_error for r in self.results)

    def passed(self, rel_tol: float = DEFAULT_REL_TOL) -> bool:
        return self.max_rel_error < rel_tol


def random_instance(rng: np.random.Generator) -> GradcheckInstance:
    return GradcheckInstance(
        channels=int(rng.choice(CHANNEL_CHOICES)),
        n_subspaces=int(rng.choice(SUBSPACE_CHOICES)),
        n_prototypes=int(rng.choice(PROTOTYPE_CHOICES)),
        side=int(rng.choice(SIDE_CHOICES)),
        shots=int(rng.choice(SHOT_CHOICES)),
        alpha=float(rng.choice(ALPHA_CHOICES)),
        seed=int(rng.integers(2 ** 31)),
    )


def _pipeline_loss(support, query, true_class, params, gamma, scale) -> float:
    descs = np.stack([cfa_forward(shots, params)[0] for shots in support])
    q_desc, _ = cfa_forward([query], params)
    bank = ClassBank(descs, list(range(len(support))))
    return episode_loss(bank, q_desc, true_class, params, gamma, scale).total


def check_instance(inst: GradcheckInstance, step: float = DEFAULT_STEP,
                   abs_floor: float = DEFAULT_ABS_FLOOR, gamma: float = 0.0,
                   scale: float = 1.0) -> InstanceResult:
    """Compare analytic and numeric gradients on one random episode.

    Checks every entry of the prototype gradient, all support-shot
    gradients, and the query gradient. `gamma` defaults to 0 because the
    orthogonality penalty is piecewise linear and is checked separately at
    points safely away from its kinks.
    """
    rng = np.random.default_rng(inst.seed)
    params = CfaParams.random(inst.channels, inst.n_subspaces, inst.n_prototypes,
                              alpha=inst.alpha, rng=rng)
    shape = (inst.channels, inst.side, inst.side)
    support = [[rng.normal(size=shape) for _ in range(inst.shots)]
               for _ in range(inst.way)]
    query = rng.normal(size=shape)
    true_class = int(rng.integers(inst.way))

    _, proto_grad, support_grads, query_grad = episode_loss_and_grads(
        support, query, true_class, params, gamma, scale)

    def loss(_=None) -> float:
        return _pipeline_loss(support, query, true_class, params, gamma, scale)

    # The loss closure reads the live arrays, so perturbing them in place
    # inside central_difference is what drives the difference quotients.
    worst = worst_relative_error(proto_grad,
                                 central_difference(loss, params.prototypes, step),
                                 abs_floor)
    for shots, shot_grads in zip(support, support_grads):
        for shot, analytic in zip(shots, shot_grads):
            numeric = central_difference(loss, shot, step)
            worst = max(worst, worst_relative_error(analytic, numeric, abs_floor))
    numeric = central_difference(loss, query, step)
    worst = max(worst, worst_relative_error(query_grad, numeric, abs_floor))
    return InstanceResult(inst, worst)


def run_suite(seed: int = 0, instances: int = 50, step: float = DEFAULT_STEP,
              abs_floor: float = DEFAULT_ABS_FLOOR, gamma: float = 0.0,
              scale: float = 1.0) -> GradcheckReport:
    """Check `instances` random episodes drawn from the sampling grids."""
    if instances < 1:
        raise ConfigError(f"need at least one instance, got {instances}")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    results = [check_instance(random_instance(rng), step, abs_floor, gamma, scale)
               for _ in range(instances)]
    return GradcheckReport(results, time.perf_counter() - start)
