"""Fixed analytic latent codec with video-VAE compression geometry.

A clip (1+T, H, W, 3) maps to a latent grid (16, 1+T/4, H/8, W/8): the
first pixel frame is projected patch-by-patch (8x8x3 -> 16) with an
orthonormal truncated-DCT basis, and each subsequent group of four frames
is projected tube-by-tube (4x8x8x3 -> 16).  The decoder is the exact
adjoint, so encode(decode(z)) == z and gradients through decode are just
an encode of the upstream gradient.  Values are clamped to [0, 1] only at
the final decoded output.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .media_io import Video

CHANNELS = 16
SPATIAL_FACTOR = 8
TEMPORAL_FACTOR = 4

_encode_calls = 0
_decode_calls = 0


def encode_calls() -> int:
    """Monotonic count of encode() invocations (training instrumentation)."""
    return _encode_calls


def decode_calls() -> int:
    """Monotonic count of decode()/decode_unclamped() invocations."""
    return _decode_calls


@dataclass(frozen=True)
class PatchBasis:
    """Orthonormal-row projection bases.

    b1: (16, 192) over an 8x8x3 (h, w, channel) patch, first frame.
    b4: (16, 768) over a 4x8x8x3 (t, h, w, channel) tube, later frames.
    Row 0 of each is the normalized constant (DC) vector.
    """

    b1: np.ndarray
    b4: np.ndarray


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)[:, None]
    x = np.arange(n, dtype=np.float64)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * (2.0 * x + 1.0) * k / (2.0 * n))
    m[0] *= np.sqrt(0.5)
    return m


def _truncated_rows(mats: tuple[np.ndarray, ...]) -> np.ndarray:
    """First 16 separable DCT basis vectors ordered by ascending frequency
    index sum, ties broken lexicographically on the frequency tuple."""
    ranges = [range(m.shape[0]) for m in mats]
    keys = sorted(itertools.product(*ranges), key=lambda t: (sum(t), t))[:CHANNELS]
    rows = []
    for key in keys:
        vec = np.array([1.0])
        for mat, f in zip(mats, key):
            vec = np.multiply.outer(vec, mat[f])
        rows.append(vec.ravel())
    return np.stack(rows)


def make_basis() -> PatchBasis:
    c8 = _dct_matrix(8)
    c4 = _dct_matrix(4)
    c3 = _dct_matrix(3)
    b1 = _truncated_rows((c8, c8, c3))       # (h, w, c)
    b4 = _truncated_rows((c4, c8, c8, c3))   # (t, h, w, c)
    return PatchBasis(b1=b1, b4=b4)


def latent_shape(frames: int, h: int, w: int) -> tuple[int, int, int, int]:
    return (CHANNELS, 1 + (frames - 1) // TEMPORAL_FACTOR, h // SPATIAL_FACTOR, w // SPATIAL_FACTOR)


def _check_latent(z: np.ndarray) -> tuple[int, int, int]:
    if not isinstance(z, np.ndarray) or z.ndim != 4 or z.shape[0] != CHANNELS:
        raise ShapeError(f"expected latent of shape (16, T', H', W'), got {getattr(z, 'shape', None)}")
    _, tp, hp, wp = z.shape
    if tp < 1 or hp < 1 or wp < 1:
        raise ShapeError(f"latent dims must be positive, got {z.shape}")
    return tp, hp, wp


def _project(frames: np.ndarray, basis: PatchBasis) -> np.ndarray:
    """Core linear map pixels -> latent (also the adjoint of unclamped decode)."""
    n, h, w, _ = frames.shape
    hp, wp = h // 8, w // 8
    tp = 1 + (n - 1) // 4
    z = np.empty((CHANNELS, tp, hp, wp), dtype=np.float64)
    p0 = frames[0].reshape(hp, 8, wp, 8, 3).transpose(0, 2, 1, 3, 4).reshape(hp, wp, 192)
    z[:, 0] = np.einsum("kp,ijp->kij", basis.b1, p0)
    for g in range(1, tp):
        tube = frames[4 * g - 3 : 4 * g + 1]
        p = tube.reshape(4, hp, 8, wp, 8, 3).transpose(1, 3, 0, 2, 4, 5).reshape(hp, wp, 768)
        z[:, g] = np.einsum("kp,ijp->kij", basis.b4, p)
    return z


def _backproject(z: np.ndarray, basis: PatchBasis) -> np.ndarray:
    tp, hp, wp = _check_latent(z)
    h, w = hp * 8, wp * 8
    n = 1 + 4 * (tp - 1)
    frames = np.empty((n, h, w, 3), dtype=np.float64)
    p0 = np.einsum("kp,kij->ijp", basis.b1, z[:, 0])
    frames[0] = p0.reshape(hp, wp, 8, 8, 3).transpose(0, 2, 1, 3, 4).reshape(h, w, 3)
    for g in range(1, tp):
        p = np.einsum("kp,kij->ijp", basis.b4, z[:, g])
        tube = p.reshape(hp, wp, 4, 8, 8, 3).transpose(2, 0, 3, 1, 4, 5).reshape(4, h, w, 3)
        frames[4 * g - 3 : 4 * g + 1] = tube
    return frames


def encode(video: Video, basis: PatchBasis) -> np.ndarray:
    """Encode a clip into its (16, 1+T/4, H/8, W/8) latent grid."""
    global _encode_calls
    video.validate()
    _encode_calls += 1
    return _project(video.frames, basis)


def decode_unclamped(z: np.ndarray, basis: PatchBasis) -> np.ndarray:
    """Adjoint map latent -> pixel frames, without the output clamp."""
    global _decode_calls
    _decode_calls += 1
    return _backproject(z, basis)


def decode(z: np.ndarray, basis: PatchBasis) -> Video:
    """Decode a latent grid to a clip, clamping values into [0, 1]."""
    return Video(np.clip(decode_unclamped(z, basis), 0.0, 1.0))


def decode_grad(upstream: np.ndarray, pre_clamp: np.ndarray, basis: PatchBasis) -> np.ndarray:
    """Gradient of a pixel-space loss back through decode.

    ``pre_clamp`` is the unclamped decode output for the same latent; the
    clamp passes gradient through where pre_clamp lies in [0, 1] and blocks
    it where the value was clamped.
    """
    if upstream.shape != pre_clamp.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match decode output {pre_clamp.shape}")
    if upstream.ndim != 4 or upstream.shape[3] != 3 or upstream.shape[1] % 8 or upstream.shape[2] % 8:
        raise ShapeError(f"expected (1+T, H, W, 3) pixel gradient, got {upstream.shape}")
    inside = (pre_clamp >= 0.0) & (pre_clamp <= 1.0)
    return _project(upstream * inside, basis)
