import dataclasses
import math

import numpy as np
import pytest

from vividforge.degrade import (
    DegradeParams,
    compress_proxy,
    degrade_clip,
    gaussian_kernel,
    quant_step,
    sample_params,
)
from vividforge.errors import ValidationError
from vividforge.media_io import Video, synth_clip
from vividforge.metrics import psnr


def _identity_params(seed=0, noise=0.0):
    return DegradeParams(sigma=0.1, scale=1.0, noise=noise, crf=18.0, seed=seed)


# ---------------------------------------------------------------------------
# parameter sampling
# ---------------------------------------------------------------------------

def test_sample_params_deterministic():
    assert sample_params(123) == sample_params(123)


def test_sample_params_monte_carlo_bounds_and_mean():
    draws = [sample_params(seed) for seed in range(10_000)]
    sigmas = np.array([d.sigma for d in draws])
    scales = np.array([d.scale for d in draws])
    noises = np.array([d.noise for d in draws])
    crfs = np.array([d.crf for d in draws])
    assert sigmas.min() >= 0.1 and sigmas.max() <= 10.0
    assert scales.min() >= 1.0 and scales.max() <= 4.0
    assert noises.min() >= 0.0 and noises.max() <= 10.0
    assert crfs.min() >= 18.0 and crfs.max() <= 25.0
    assert abs(scales.mean() - 2.5) <= 0.05


def test_params_validate_ranges():
    with pytest.raises(ValidationError):
        DegradeParams(sigma=0.01, scale=1.0, noise=0.0, crf=20.0, seed=0).validate()
    with pytest.raises(ValidationError):
        DegradeParams(sigma=1.0, scale=5.0, noise=0.0, crf=20.0, seed=0).validate()


# ---------------------------------------------------------------------------
# blur kernel
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("sigma", [0.1, 0.7, 1.0, 3.3, 10.0])
def test_kernel_normalized_and_symmetric(sigma):
    k = gaussian_kernel(sigma)
    assert abs(k.sum() - 1.0) < 1e-12
    assert np.allclose(k, k[::-1])
    assert len(k) == 2 * math.ceil(3 * sigma) + 1


def test_kernel_tiny_sigma_is_near_delta():
    k = gaussian_kernel(0.1)
    assert len(k) == 3  # radius ceil(0.3) = 1
    assert k[1] > 0.99


def test_kernel_rejects_nonpositive_sigma():
    with pytest.raises(ValidationError):
        gaussian_kernel(0.0)
    with pytest.raises(ValidationError):
        gaussian_kernel(-1.0)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def test_identity_parameters_near_identity(small_clip):
    video, _ = small_clip
    out = degrade_clip(video, _identity_params(), compress=False)
    assert np.abs(out.frames - video.frames).max() < 2e-3


def test_noise_std_matches_request():
    # constant mid-gray clip isolates the noise stage
    video = Video(np.full((9, 64, 64, 3), 0.5))
    out = degrade_clip(video, _identity_params(seed=5, noise=10.0), compress=False)
    std = (out.frames - video.frames).std()
    assert abs(std - 10.0 / 255.0) / (10.0 / 255.0) < 0.05


def test_pipeline_deterministic(small_clip):
    video, _ = small_clip
    params = sample_params(99)
    a = degrade_clip(video, params)
    b = degrade_clip(video, params)
    assert np.array_equal(a.frames, b.frames)


def test_output_shape_and_range(small_clip):
    video, _ = small_clip
    for seed in (0, 1, 2):
        out = degrade_clip(video, sample_params(seed))
        assert out.frames.shape == video.frames.shape
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_psnr_non_increasing_in_noise(small_clip):
    video, _ = small_clip
    noise_levels = [0.0, 2.5, 5.0, 10.0]
    # statistically over 20 seeds: stronger noise never helps
    means = []
    for noise in noise_levels:
        vals = []
        for seed in range(20):
            params = dataclasses.replace(_identity_params(seed=seed), noise=noise)
            out = degrade_clip(video, params, compress=False)
            vals.append(psnr(video, out))
        means.append(np.mean(vals))
    assert all(means[i] >= means[i + 1] for i in range(len(means) - 1))


# ---------------------------------------------------------------------------
# compression proxy
# ---------------------------------------------------------------------------

def test_quant_step_value():
    assert quant_step(18.0) == pytest.approx(0.027)


def test_constant_frame_survives_compression():
    frame = np.full((16, 16, 3), 0.5)
    for crf in (18.0, 21.5, 25.0):
        out = compress_proxy(frame, crf)
        assert np.abs(out - frame).max() < 1e-6


def test_compression_mse_monotone_in_crf(small_clip):
    video, _ = small_clip
    frame = video.frames[0]
    mse18 = ((compress_proxy(frame, 18.0) - frame) ** 2).mean()
    mse25 = ((compress_proxy(frame, 25.0) - frame) ** 2).mean()
    assert mse25 >= mse18
    assert mse25 > 0.0


def test_compression_preserves_shape_on_odd_pad():
    frame = np.random.default_rng(0).uniform(size=(24, 40, 3))
    out = compress_proxy(frame, 20.0)
    assert out.shape == frame.shape
