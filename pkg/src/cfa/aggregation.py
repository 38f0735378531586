"""Soft-assignment residual aggregation over learnable prototypes.

Each channel subspace n holds K learnable prototype vectors c_{k,n}. A local
feature x at some location is softly assigned to the prototypes with weights

    w_k = exp(-alpha * ||x - c_k||^2) / sum_k' exp(-alpha * ||x - c_k'||^2)

and the weighted residuals (x - c_k) are summed over all locations (and
averaged over multiple shots) into one K*(C/N) block per subspace. The N
blocks are concatenated and L2-normalized into a C*K descriptor.

Everything is differentiable; `cfa_backward` returns exact gradients with
respect to both prototypes and input features, including the dependence of
the assignment weights on both and the normalization Jacobian. Internals run
in float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decomposition import split_channels
from .errors import ConfigError, DataError, NumericError

DEFAULT_ALPHA = 100.0
DEFAULT_PROTOTYPES = 32
NORM_EPS = 1e-12


@dataclass
class CfaParams:
    """Prototype bank plus aggregation hyperparameters.

    prototypes has shape (N, K, C/N): N subspaces, K prototypes each.
    `intra_normalize` additionally L2-normalizes each subspace block before
    the final whole-descriptor normalization; it defaults off.
    """

    prototypes: np.ndarray
    alpha: float = DEFAULT_ALPHA
    intra_normalize: bool = False

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 3:
            raise ConfigError(f"prototypes must be (N, K, C/N), got {self.prototypes.shape}")
        if not np.all(np.isfinite(self.prototypes)):
            raise ConfigError("prototypes contain non-finite values")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")

    @property
    def n_subspaces(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n_prototypes(self) -> int:
        return self.prototypes.shape[1]

    @property
    def subspace_dim(self) -> int:
        return self.prototypes.shape[2]

    @property
    def channels(self) -> int:
        return self.n_subspaces * self.subspace_dim

    @property
    def descriptor_dim(self) -> int:
        return self.channels * self.n_prototypes

    @staticmethod
    def random(channels: int, n_subspaces: int, n_prototypes: int = DEFAULT_PROTOTYPES,
               alpha: float = DEFAULT_ALPHA, rng: np.random.Generator | None = None,
               intra_normalize: bool = False) -> "CfaParams":
        """Prototypes drawn from N(0, 1/sqrt(C/N)) per entry."""
        if channels % n_subspaces != 0:
            raise ConfigError(
                f"subspace count {n_subspaces} does not divide channel count {channels}"
            )
        rng = rng if rng is not None else np.random.default_rng()
        dim = channels // n_subspaces
        protos = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_subspaces, n_prototypes, dim))
        return CfaParams(protos, alpha=alpha, intra_normalize=intra_normalize)

    def copy(self) -> "CfaParams":
        return CfaParams(self.prototypes.copy(), self.alpha, self.intra_normalize)


@dataclass
class AggregationTape:
    """Forward-pass cache consumed by `cfa_backward`."""

    params: CfaParams
    shot_shape: tuple[int, ...]
    n_shots: int
    assigns: list[np.ndarray]      # per subspace (Y*L, K)
    residuals: list[np.ndarray]    # per subspace (Y*L, K, C/N)
    raw_concat: np.ndarray         # concat of raw subspace blocks, length C*K
    block_norms: np.ndarray | None  # (N,) when intra_normalize is on
    pre_norm: np.ndarray           # vector that was finally L2-normalized
    norm: float
    descriptor: np.ndarray


@dataclass
class GradBundle:
    """Gradients of a scalar loss from one `cfa_forward` call."""

    prototypes: np.ndarray          # (N, K, C/N)
    inputs: list[np.ndarray] = field(default_factory=list)  # one per shot


def soft_assign(x: np.ndarray, centers: np.ndarray, alpha: float) -> np.ndarray:
    """Assignment weights of one local feature against K centers.

    Stable for large alpha: the minimum squared distance is subtracted
    before exponentiation. Weights are nonnegative and sum to 1.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    centers = np.asarray(centers, dtype=np.float64)
    weights, _ = _assignments(x, centers, alpha)
    return weights[0]


def _assignments(points: np.ndarray, centers: np.ndarray, alpha: float):
    """Batched soft assignment: returns (weights (M, K), residuals (M, K, d))."""
    residuals = points[:, None, :] - centers[None, :, :]
    sq_dist = np.einsum("mkd,mkd->mk", residuals, residuals)
    logits = -alpha * (sq_dist - sq_dist.min(axis=1, keepdims=True))
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights, residuals


def aggregate_subspace(views: list[np.ndarray], centers: np.ndarray,
                       alpha: float) -> np.ndarray:
    """Aggregate Y shots' (C/N, L) views of one subspace into a K*(C/N) block.

    Residuals are assignment-weighted, summed over all locations of all
    shots, and divided by the shot count Y.
    """
    block, _, _ = _aggregate_block(views, np.asarray(centers, dtype=np.float64), alpha)
    return block.ravel()


def _stack_locations(views: list[np.ndarray]) -> np.ndarray:
    """(C/N, L) views for Y shots -> (Y*L, C/N) float64 points."""
    if not views:
        raise DataError("need at least one shot")
    shape = views[0].shape
    for v in views[1:]:
        if v.shape != shape:
            raise DataError(f"shot shape mismatch: {v.shape} vs {shape}")
    return np.concatenate([np.asarray(v, dtype=np.float64).T for v in views], axis=0)


def _aggregate_block(views, centers, alpha):
    points = _stack_locations(views)
    weights, residuals = _assignments(points, centers, alpha)
    block = np.einsum("mk,mkd->kd", weights, residuals) / len(views)
    return block, weights, residuals


def cfa_forward(shots: list[np.ndarray], params: CfaParams,
                ) -> tuple[np.ndarray, AggregationTape]:
    """Aggregate Y same-shape feature maps into one unit-norm descriptor.

    Returns the C*K descriptor (subspace-major, then prototype, then channel)
    and the tape needed for `cfa_backward`.
    """
    if not shots:
        raise DataError("need at least one shot")
    shot_shape = np.asarray(shots[0]).shape
    if any(np.asarray(s).shape != shot_shape for s in shots):
        raise DataError("all shots must share one shape")
    if shot_shape[0] != params.channels:
        raise ConfigError(
            f"feature map has {shot_shape[0]} channels, prototypes expect {params.channels}"
        )
    per_shot_views = [split_channels(s, params.n_subspaces) for s in shots]

    assigns, residuals, blocks = [], [], []
    for n in range(params.n_subspaces):
        views = [pv[n] for pv in per_shot_views]
        block, weights, res = _aggregate_block(views, params.prototypes[n], params.alpha)
        assigns.append(weights)
        residuals.append(res)
        blocks.append(block.ravel())

    raw = np.concatenate(blocks)
    block_norms = None
    pre = raw
    if params.intra_normalize:
        block_norms = np.array([np.linalg.norm(b) for b in blocks])
        if np.any(block_norms < NORM_EPS):
            raise NumericError("degenerate subspace block (norm below 1e-12)")
        pre = np.concatenate([b / r for b, r in zip(blocks, block_norms)])

    norm = float(np.linalg.norm(pre))
    if norm < NORM_EPS:
        raise NumericError("degenerate descriptor (norm below 1e-12)")
    descriptor = pre / norm

    tape = AggregationTape(
        params=params, shot_shape=tuple(shot_shape), n_shots=len(shots),
        assigns=assigns, residuals=residuals, raw_concat=raw,
        block_norms=block_norms, pre_norm=pre, norm=norm, descriptor=descriptor,
    )
    return descriptor, tape


def cfa_backward(tape: AggregationTape, grad_out: np.ndarray) -> GradBundle:
    """Exact gradients of a scalar loss given d(loss)/d(descriptor).

    Propagates through the L2 normalization(s), the residual sums, and the
    assignment weights' dependence on both inputs and prototypes.
    """
    params = tape.params
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != tape.descriptor.shape:
        raise DataError(
            f"grad shape {grad_out.shape} does not match descriptor {tape.descriptor.shape}"
        )

    # Through I = u / ||u||.
    g_pre = (grad_out - np.dot(grad_out, tape.descriptor) * tape.descriptor) / tape.norm

    n_sub, n_proto, dim = params.prototypes.shape
    block_len = n_proto * dim
    y = tape.n_shots
    alpha = params.alpha

    d_protos = np.empty_like(params.prototypes)
    # dX per subspace, later reassembled into per-shot channel slices.
    d_points = []
    for n in range(n_sub):
        g_block = g_pre[n * block_len:(n + 1) * block_len]
        if tape.block_norms is not None:
            # Through the per-block normalization v_n / ||v_n||.
            r_n = tape.block_norms[n]
            unit = tape.raw_concat[n * block_len:(n + 1) * block_len] / r_n
            g_block = (g_block - np.dot(g_block, unit) * unit) / r_n
        upstream = g_block.reshape(n_proto, dim)

        weights = tape.assigns[n]        # (M, K)
        residuals = tape.residuals[n]    # (M, K, d)
        proj = np.einsum("mkd,kd->mk", residuals, upstream)   # g_k . r_mk
        proj_mean = np.einsum("mk,mk->m", weights, proj)
        centered = weights * (proj - proj_mean[:, None])

        d_protos[n] = (
            -weights.sum(axis=0)[:, None] * upstream
            + 2.0 * alpha * np.einsum("mk,mkd->kd", centered, residuals)
        ) / y
        res_mean = np.einsum("mk,mkd->md", weights, residuals)
        d_points.append((
            weights @ upstream
            - 2.0 * alpha * (np.einsum("mk,mkd->md", weights * proj, residuals)
                             - proj_mean[:, None] * res_mean)
        ) / y)

    locations = int(np.prod(tape.shot_shape[1:]))
    d_inputs = []
    for t in range(y):
        d_flat = np.concatenate(
            [d_points[n][t * locations:(t + 1) * locations].T for n in range(n_sub)],
            axis=0,
        )
        d_inputs.append(d_flat.reshape(tape.shot_shape))
    return GradBundle(prototypes=d_protos, inputs=d_inputs)


def mean_pool(shots: list[np.ndarray]) -> np.ndarray:
    """First-order baseline: mean over all locations and shots, L2-normalized."""
    if not shots:
        raise DataError("need at least one shot")
    shape = np.asarray(shots[0]).shape
    channels = shape[0]
    total = np.zeros(channels)
    count = 0
    for s in shots:
        arr = np.asarray(s, dtype=np.float64)
        if arr.shape != shape:
            raise DataError(f"shot shape mismatch: {arr.shape} vs {shape}")
        flat = arr.reshape(channels, -1)
        total += flat.sum(axis=1)
        count += flat.shape[1]
    pooled = total / count
    norm = np.linalg.norm(pooled)
    if norm < NORM_EPS:
        raise NumericError("degenerate pooled vector (norm below 1e-12)")
    return pooled / norm


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           iters: int = 20) -> np.ndarray:
    """Plain Lloyd's iterations with random-point init.

    Deterministic given `rng`; empty clusters are reseeded to random points.
    Used only for prototype initialization, so a fixed small iteration count
    is plenty.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < k:
        raise ConfigError(f"k-means needs at least {k} points, got {points.shape[0]}")
    centers = points[rng.choice(points.shape[0], size=k, replace=False)].copy()
    assign = None
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                centers[j] = points[rng.integers(points.shape[0])]
    return centers


def init_prototypes(subspace_points: list[np.ndarray], n_prototypes: int,
                    alpha: float, rng: np.random.Generator,
                    intra_normalize: bool = False) -> CfaParams:
    """K-means prototype initialization from per-subspace feature samples.

    `subspace_points[n]` holds (M_n, C/N) local features of subspace n. Any
    subspace with too few points falls back to N(0, 1/sqrt(C/N)) draws.
    """
    if not subspace_points:
        raise ConfigError("need at least one subspace")
    dim = subspace_points[0].shape[1]
    banks = []
    for pts in subspace_points:
        if pts.shape[0] >= n_prototypes:
            banks.append(kmeans(pts, n_prototypes, rng))
        else:
            banks.append(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_prototypes, dim)))
    return CfaParams(np.stack(banks), alpha=alpha, intra_normalize=intra_normalize)
