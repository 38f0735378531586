"""Channel-space decomposition of feature maps into semantic subspaces.

A (C, H, W) or (C, T, H, W) feature map is split into N contiguous channel
groups of C/N channels each. Each group is returned flattened to shape
(C/N, L) with L = H*W or T*H*W, so column i holds the group's local feature
at (row-major) location i. The split is a pure relabeling: no arithmetic,
and the returned arrays are views into the input where possible.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def split_channels(feature_map: np.ndarray, n_subspaces: int) -> list[np.ndarray]:
    """Split `feature_map` into `n_subspaces` channel groups of shape (C/N, L).

    Group n covers channels [n*C/N, (n+1)*C/N); stacking the groups back
    along the channel axis reconstructs the flattened input exactly.
    """
    arr = np.asarray(feature_map)
    if arr.ndim not in (3, 4):
        raise ConfigError(f"feature map rank must be 3 or 4, got {arr.ndim}")
    if n_subspaces < 1:
        raise ConfigError(f"subspace count must be positive, got {n_subspaces}")
    channels = arr.shape[0]
    if channels % n_subspaces != 0:
        raise ConfigError(
            f"subspace count {n_subspaces} does not divide channel count {channels}"
        )
    flat = arr.reshape(channels, -1)
    width = channels // n_subspaces
    return [flat[n * width:(n + 1) * width] for n in range(n_subspaces)]
