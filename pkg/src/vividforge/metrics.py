"""Reference-based quality metrics: PSNR and single-scale SSIM.

PSNR uses peak 1.0 over the whole clip and is capped at 99 dB so reports
stay finite.  SSIM follows the classic formulation on the luma channel
(0.299 R + 0.587 G + 0.114 B): an 11x11 Gaussian window with sigma 1.5,
K1=0.01, K2=0.03, L=1, averaged over all fully valid window positions and
over frames.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError
from .media_io import Video, clip_ids_under, read_clip

PSNR_CAP = 99.0
_LUMA = np.array([0.299, 0.587, 0.114])
_WIN = 11
_C1 = (0.01 * 1.0) ** 2
_C2 = (0.03 * 1.0) ** 2


def _window1d() -> np.ndarray:
    xs = np.arange(_WIN, dtype=np.float64) - (_WIN - 1) / 2.0
    g = np.exp(-(xs * xs) / (2.0 * 1.5 * 1.5))
    return g / g.sum()


_W1D = _window1d()


@dataclass
class EvalReport:
    psnr_db: float
    ssim: float
    frame_psnr: list[float]
    frame_ssim: list[float]


def _check_pair(ref: Video, test: Video) -> None:
    if ref.frames.shape != test.frames.shape:
        raise ShapeError(f"clip shapes differ: {ref.frames.shape} vs {test.frames.shape}")


def _psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(1.0 / mse)))


def psnr(ref: Video, test: Video) -> float:
    """Peak signal-to-noise ratio in dB over all elements of the clip."""
    _check_pair(ref, test)
    d = ref.frames - test.frames
    return _psnr_from_mse(float((d * d).mean()))


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian correlation keeping only fully valid windows."""
    t = sliding_window_view(img, _WIN, axis=0) @ _W1D
    return sliding_window_view(t, _WIN, axis=1) @ _W1D


def _ssim_frame(x: np.ndarray, y: np.ndarray) -> float:
    mu_x = _filter_valid(x)
    mu_y = _filter_valid(y)
    sxx = _filter_valid(x * x) - mu_x * mu_x
    syy = _filter_valid(y * y) - mu_y * mu_y
    sxy = _filter_valid(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _C1) * (2.0 * sxy + _C2)
    den = (mu_x * mu_x + mu_y * mu_y + _C1) * (sxx + syy + _C2)
    return float((num / den).mean())


def ssim(ref: Video, test: Video) -> float:
    """Mean structural similarity over frames, computed on luma."""
    _check_pair(ref, test)
    _, h, w, _ = ref.frames.shape
    if h < _WIN or w < _WIN:
        raise ValidationError(f"frames {h}x{w} are smaller than the {_WIN}x{_WIN} SSIM window")
    vals = [
        _ssim_frame(ref.frames[f] @ _LUMA, test.frames[f] @ _LUMA)
        for f in range(ref.frames.shape[0])
    ]
    return float(np.mean(vals))


def eval_pair(ref_dir, test_dir) -> EvalReport:
    """Evaluate one restored clip against its reference clip."""
    ref = read_clip(ref_dir)
    test = read_clip(test_dir)
    _check_pair(ref, test)
    frame_psnr = []
    for f in range(ref.frames.shape[0]):
        d = ref.frames[f] - test.frames[f]
        frame_psnr.append(_psnr_from_mse(float((d * d).mean())))
    frame_ssim = [
        _ssim_frame(ref.frames[f] @ _LUMA, test.frames[f] @ _LUMA)
        for f in range(ref.frames.shape[0])
    ]
    return EvalReport(
        psnr_db=psnr(ref, test),
        ssim=ssim(ref, test),
        frame_psnr=frame_psnr,
        frame_ssim=frame_ssim,
    )


def eval_tree(ref_root, test_root, report_path=None) -> dict:
    """Evaluate matching clips under two roots and optionally write a JSON
    report of the form {clip_id: {psnr, ssim}, ..., "mean": {psnr, ssim}}."""
    ref_ids = clip_ids_under(ref_root)
    test_ids = set(clip_ids_under(test_root))
    missing = [c for c in ref_ids if c not in test_ids]
    if missing:
        raise ValidationError(f"clips missing under {test_root}: {missing}")
    ref_base = Path(ref_root) if len(ref_ids) > 1 or not (Path(ref_root) / "frames").is_dir() else Path(ref_root).parent
    test_base = Path(test_root) if len(ref_ids) > 1 or not (Path(test_root) / "frames").is_dir() else Path(test_root).parent
    report: dict = {}
    for clip_id in ref_ids:
        rep = eval_pair(ref_base / clip_id, test_base / clip_id)
        report[clip_id] = {"psnr": rep.psnr_db, "ssim": rep.ssim}
    report["mean"] = {
        "psnr": float(np.mean([report[c]["psnr"] for c in ref_ids])),
        "ssim": float(np.mean([report[c]["ssim"] for c in ref_ids])),
    }
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
