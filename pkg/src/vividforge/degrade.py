"""Blind degradation synthesis: blur, rescale, noise, compression proxy.

A high-quality clip is degraded as blur -> bilinear downsample by a factor
r -> bilinear resize back to the original resolution -> per-pixel Gaussian
noise with std delta/255 -> blockwise DCT quantization standing in for
constant-rate-factor video compression -> clamp to [0, 1].  One parameter
set applies to every frame of a clip and the whole pipeline is a pure
function of (video, params).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .media_io import Video, round_half_up

SIGMA_RANGE = (0.1, 10.0)
SCALE_RANGE = (1.0, 4.0)
NOISE_RANGE = (0.0, 10.0)
CRF_RANGE = (18.0, 25.0)

_NOISE_STREAM = 1  # rng sub-stream tag, distinct from parameter sampling


@dataclass(frozen=True)
class DegradeParams:
    """Per-clip degradation parameters.

    sigma: Gaussian blur std in pixels, [0.1, 10]
    scale: downsample factor r, [1, 4]
    noise: Gaussian noise std on the 0-255 scale, [0, 10]
    crf:   compression strength, [18, 25]
    seed:  drives the noise field
    """

    sigma: float
    scale: float
    noise: float
    crf: float
    seed: int

    def validate(self) -> "DegradeParams":
        for name, value, (lo, hi) in (
            ("sigma", self.sigma, SIGMA_RANGE),
            ("scale", self.scale, SCALE_RANGE),
            ("noise", self.noise, NOISE_RANGE),
            ("crf", self.crf, CRF_RANGE),
        ):
            if not (lo <= value <= hi):
                raise ValidationError(f"{name}={value} outside [{lo}, {hi}]")
        return self


def sample_params(seed) -> DegradeParams:
    """Draw one parameter set, each field uniform over its range."""
    rng = np.random.default_rng(seed)
    return DegradeParams(
        sigma=float(rng.uniform(*SIGMA_RANGE)),
        scale=float(rng.uniform(*SCALE_RANGE)),
        noise=float(rng.uniform(*NOISE_RANGE)),
        crf=float(rng.uniform(*CRF_RANGE)),
        seed=int(seed),
    )


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian kernel, radius ceil(3*sigma), normalized to sum 1."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Correlate along one axis with edge-replicate padding."""
    radius = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img)
    n = img.shape[axis]
    index = [slice(None)] * img.ndim
    for i, w in enumerate(kernel):
        index[axis] = slice(i, i + n)
        out += w * padded[tuple(index)]
    return out


def blur_frame(frame: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable Gaussian blur of one (H, W, 3) frame."""
    return _blur_axis(_blur_axis(frame, kernel, 0), kernel, 1)


def _resize_bilinear(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with the align-corners-false convention.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped
    to the valid range; equal sizes reduce to the identity.
    """
    h, w = frame.shape[:2]
    if (out_h, out_w) == (h, w):
        return frame.copy()

    def axis_coords(n_in: int, n_out: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, wy = axis_coords(h, out_h)
    x0, x1, wx = axis_coords(w, out_w)
    rows0, rows1 = frame[y0], frame[y1]
    wxc = wx[None, :, None]
    top = rows0[:, x0] * (1.0 - wxc) + rows0[:, x1] * wxc
    bot = rows1[:, x0] * (1.0 - wxc) + rows1[:, x1] * wxc
    wyc = wy[:, None, None]
    return top * (1.0 - wyc) + bot * wyc


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)[:, None]
    x = np.arange(n, dtype=np.float64)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * (2.0 * x + 1.0) * k / (2.0 * n))
    m[0] *= np.sqrt(0.5)
    return m


_DCT8 = _dct_matrix(8)


def quant_step(crf: float) -> float:
    """Quantization step of the compression proxy: q = 0.0015 * crf."""
    return 0.0015 * crf


def compress_proxy(frame: np.ndarray, crf: float) -> np.ndarray:
    """Blockwise DCT quantization emulating crf-controlled compression.

    Each channel is padded (edge-replicate) to multiples of 8, cut into 8x8
    blocks, transformed with the orthonormal 2-D DCT-II, and every AC
    coefficient c is quantized to q * round(c / q) with q = 0.0015 * crf.
    The DC coefficient passes through unquantized so flat regions survive
    exactly; higher crf still means coarser quantization and thus stronger
    degradation.
    """
    q = quant_step(crf)
    h, w = frame.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(frame, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = padded.shape[0] // 8, padded.shape[1] // 8
    # (hb, wb, 8, 8, 3) blocks, batched over the last axis per channel
    blocks = padded.reshape(hb, 8, wb, 8, 3).transpose(0, 2, 4, 1, 3)
    coef = _DCT8 @ blocks @ _DCT8.T
    dc = coef[..., 0, 0].copy()
    coef = q * np.round(coef / q)
    coef[..., 0, 0] = dc
    rec = _DCT8.T @ coef @ _DCT8
    out = rec.transpose(0, 3, 1, 4, 2).reshape(padded.shape)
    return out[:h, :w]


def degrade_clip(video: Video, params: DegradeParams, *, compress: bool = True) -> Video:
    """Run the full degradation pipeline on a clip.

    ``compress=False`` is a test hook that skips the compression proxy so the
    remaining stages can be checked against identity/noise oracles.
    """
    video.validate()
    params.validate()
    frames = video.frames
    n, h, w, _ = frames.shape
    kernel = gaussian_kernel(params.sigma)
    dh = max(1, round_half_up(h / params.scale))
    dw = max(1, round_half_up(w / params.scale))

    out = np.empty_like(frames)
    for f in range(n):
        blurred = blur_frame(frames[f], kernel)
        small = _resize_bilinear(blurred, dh, dw)
        out[f] = _resize_bilinear(small, h, w)

    if params.noise > 0:
        rng = np.random.default_rng([params.seed, _NOISE_STREAM])
        out = out + rng.normal(0.0, params.noise / 255.0, size=out.shape)

    if compress:
        out = np.stack([compress_proxy(out[f], params.crf) for f in range(n)])

    return Video(np.clip(out, 0.0, 1.0), video.fps)
