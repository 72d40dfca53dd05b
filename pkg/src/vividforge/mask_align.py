"""Transport per-frame facial masks into the latent grid geometry.

Pixel masks (1+T, H, W) become latent masks (16, 1+T/4, H/8, W/8) in three
steps: nearest-neighbor 8x8 spatial downsampling at cell centers, temporal
aggregation (first frame passes through, every later latent frame takes the
element-wise max of its four source frames), and replication across the 16
latent channels.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .latent_codec import CHANNELS
from .media_io import MaskStack


def downsample_mask(masks: MaskStack) -> np.ndarray:
    """Sample each 8x8 cell at its center pixel (offset +4, +4)."""
    m = masks.validate().masks
    return m[:, 4::8, 4::8].copy()


def temporal_align(down: np.ndarray) -> np.ndarray:
    """Collapse 1+4k mask frames to 1+k latent frames."""
    if down.ndim != 3 or down.shape[0] < 1 or (down.shape[0] - 1) % 4 != 0:
        raise ShapeError(f"expected (1+4k, H', W') grid, got {getattr(down, 'shape', None)}")
    n = down.shape[0]
    tp = 1 + (n - 1) // 4
    out = np.empty((tp,) + down.shape[1:], dtype=down.dtype)
    out[0] = down[0]
    for i in range(1, tp):
        out[i] = down[4 * i - 3 : 4 * i + 1].max(axis=0)
    return out


def replicate_channels(aligned: np.ndarray) -> np.ndarray:
    """Copy a (T', H', W') mask across all 16 latent channels.

    A mask that already carries identical channel slices is returned as-is,
    so re-replication is a no-op.
    """
    if aligned.ndim == 4 and aligned.shape[0] == CHANNELS:
        if not (aligned == aligned[0]).all():
            raise ShapeError("4-d input must have identical channel slices")
        return aligned.copy()
    if aligned.ndim != 3:
        raise ShapeError(f"expected (T', H', W') grid, got {getattr(aligned, 'shape', None)}")
    return np.broadcast_to(aligned, (CHANNELS,) + aligned.shape).copy()


def latent_mask(masks: MaskStack) -> np.ndarray:
    """Full pipeline: pixel mask stack -> (16, T', H', W') latent mask."""
    return replicate_channels(temporal_align(downsample_mask(masks)))
