"""Stochastic face-focused training in latent then pixel space.

Every optimization step draws one Bernoulli bit b shared across the batch;
b=1 evaluates the mask-weighted reconstruction loss (normalized by mask
area), b=0 the global mean-squared loss.  Stage 1 fits the one-step flow
in latent space from a pre-extracted cache; stage 2 fine-tunes through the
decoder in pixel space with an added gradient-structure perceptual term.
Parameters, optimizer moments, and the step counter persist as a .vvt
archive ("net/*", "opt/*", "meta/step").

RNG streams are per purpose (parameter init, data order, b draws), each
seeded independently from the run seed, so runs are bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ShapeError, ValidationError
from .flow_net import FlowConfig, PARAM_SPECS, VelocityNet, backward, one_step_restore
from .latent_codec import PatchBasis, decode_grad, decode_unclamped, encode, make_basis
from .mask_align import latent_mask
from .media_io import MaskStack, Video, load_archive, read_clip, read_masks, save_archive

log = logging.getLogger(__name__)

_INIT_STREAM = 0
_DATA_STREAM = 1
_BERNOULLI_STREAM = 2


@dataclass
class LossConfig:
    p: float = 0.5             # Bernoulli probability of the face-focused branch
    lambda_percep: float = 0.1  # weight of the perceptual proxy in stage 2

    def validate(self) -> "LossConfig":
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"p {self.p} outside [0, 1]")
        if self.lambda_percep < 0.0:
            raise ValidationError(f"lambda {self.lambda_percep} must be >= 0")
        return self


@dataclass
class TrainConfig:
    stage: int
    steps: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 4
    seed: int = 0
    roster: list[str] = field(default_factory=list)
    data_dir: Path | None = None
    out: Path | None = None
    ckpt_every: int = 500

    def validate(self) -> "TrainConfig":
        if self.stage not in (1, 2):
            raise ValidationError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ValidationError("steps must be >= 0, batch >= 1, lr > 0")
        return self


@dataclass
class TrainResult:
    net: VelocityNet
    opt: "AdamState"
    losses: list[float]
    ckpt_path: Path | None


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def masked_loss(y: np.ndarray, y_hat: np.ndarray, m: np.ndarray, b: int):
    """Stochastic reconstruction loss and its gradient w.r.t. y_hat.

    b=0: mean over all elements of (y_hat - y)^2.
    b=1: sum((m * (y_hat - y))^2) / max(sum(m), 1), so an all-ones mask
    reproduces the global branch and an empty mask contributes zero.
    """
    if y.shape != y_hat.shape or y.shape != m.shape:
        raise ShapeError(f"shapes differ: y {y.shape}, y_hat {y_hat.shape}, m {m.shape}")
    if b not in (0, 1):
        raise ValidationError(f"b must be 0 or 1, got {b}")
    d = y_hat - y
    if b == 0:
        n = d.size
        return float((d * d).mean()), (2.0 / n) * d
    md = m * d
    denom = max(float(m.sum()), 1.0)
    return float((md * md).sum() / denom), (2.0 / denom) * m * md


def sample_b(rng: np.random.Generator, p: float) -> int:
    """One Bernoulli(p) draw; sampled once per optimization step."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p {p} outside [0, 1]")
    return int(rng.random() < p)


def _as_frames(v) -> np.ndarray:
    return v.frames if isinstance(v, Video) else v


def _diff_loss(a: np.ndarray, ref: np.ndarray):
    """Squared error of first-difference gradient maps along H and W."""
    loss = 0.0
    grad = np.zeros_like(a)
    for axis in (1, 2):
        da = np.diff(a, axis=axis)
        dr = np.diff(ref, axis=axis)
        delta = da - dr
        n = delta.size
        loss += float((delta * delta).mean())
        g = (2.0 / n) * delta
        head = [slice(None)] * a.ndim
        tail = [slice(None)] * a.ndim
        head[axis] = slice(1, None)
        tail[axis] = slice(None, -1)
        grad[tuple(head)] += g
        grad[tuple(tail)] -= g
    return loss, grad


def _pool2(v: np.ndarray) -> np.ndarray:
    n, h, w, c = v.shape
    return v.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _pool2_adjoint(g: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0


def percep_proxy(x_hat, x):
    """Gradient-structure perceptual proxy and its gradient w.r.t. x_hat.

    Compares horizontal and vertical first-difference maps at full scale and
    at a 2x average-pooled scale, averaging the two scales.  Insensitive to
    constant offsets by construction.
    """
    a = _as_frames(x_hat)
    r = _as_frames(x)
    if a.shape != r.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {r.shape}")
    if a.ndim != 4 or a.shape[1] < 2 or a.shape[2] < 2:
        raise ShapeError(f"expected (1+T, H, W, 3) clips with H, W >= 2, got {a.shape}")
    l_full, g_full = _diff_loss(a, r)
    l_half, g_half = _diff_loss(_pool2(a), _pool2(r))
    loss = 0.5 * (l_full + l_half)
    grad = 0.5 * (g_full + _pool2_adjoint(g_half))
    return float(loss), grad


def expand_pixel_mask(masks: MaskStack) -> np.ndarray:
    """Replicate a (1+T, H, W) pixel mask across the 3 color channels."""
    return np.repeat(masks.masks.astype(np.float64)[..., None], 3, axis=3)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment estimates, stored float32 like the parameters."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros(v.shape, dtype=np.float32) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape, dtype=np.float32) for k, v in params.items()}


def adam_update(net: VelocityNet, grads: dict[str, np.ndarray], opt: AdamState, cfg: TrainConfig) -> None:
    """In-place adaptive-moment update; a zero gradient changes nothing."""
    opt.step += 1
    t = opt.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name in net.params:
        g = np.asarray(grads[name], dtype=np.float64)
        m = cfg.beta1 * opt.m[name].astype(np.float64) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * opt.v[name].astype(np.float64) + (1.0 - cfg.beta2) * g * g
        update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        net.params[name] = (net.params[name].astype(np.float64) - update).astype(np.float32)
        opt.m[name] = m.astype(np.float32)
        opt.v[name] = v.astype(np.float32)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, net: VelocityNet, opt: AdamState, step: int) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    for name, _, _ in PARAM_SPECS:
        entries.append((f"net/{name}", net.params[name]))
    for name, _, _ in PARAM_SPECS:
        entries.append((f"opt/m/{name}", opt.m[name]))
    for name, _, _ in PARAM_SPECS:
        entries.append((f"opt/v/{name}", opt.v[name]))
    entries.append(("meta/step", np.array([step], dtype=np.float32)))
    save_archive(entries, path)


def load_checkpoint(path) -> tuple[VelocityNet, AdamState, int]:
    entries = load_archive(path)
    params = {}
    for name, shape, _ in PARAM_SPECS:
        key = f"net/{name}"
        if key not in entries:
            raise ValidationError(f"{path}: checkpoint is missing {key}")
        arr = entries[key]
        if arr.shape != shape:
            raise ShapeError(f"{path}: {key} has shape {arr.shape}, expected {shape}")
        params[name] = arr.copy()
    net = VelocityNet(params)
    opt = AdamState(params)
    for name, _, _ in PARAM_SPECS:
        if f"opt/m/{name}" in entries:
            opt.m[name] = entries[f"opt/m/{name}"].copy()
        if f"opt/v/{name}" in entries:
            opt.v[name] = entries[f"opt/v/{name}"].copy()
    step = int(entries["meta/step"][0]) if "meta/step" in entries else 0
    opt.step = step
    return net, opt, step


# ---------------------------------------------------------------------------
# latent cache
# ---------------------------------------------------------------------------

def cache_latents(clips, basis: PatchBasis | None = None) -> dict[str, np.ndarray]:
    """Pre-extract latents for paired clips.

    ``clips`` yields (clip_id, lq_video, hq_video, hq_masks).  The returned
    entries hold, per clip: zl/<id>, zh/<id> (16, T', H', W'), Ml/<id>
    (latent mask), and Mp/<id> (pixel mask).  Training then reads only this
    cache, never the encoder.
    """
    basis = basis or make_basis()
    entries: dict[str, np.ndarray] = {}
    seen = 0
    for clip_id, lq, hq, masks in clips:
        if lq is None or hq is None or masks is None:
            raise ValidationError(f"clip {clip_id}: missing low-quality/high-quality pair")
        if lq.frames.shape != hq.frames.shape:
            raise ValidationError(
                f"clip {clip_id}: pair shapes differ {lq.frames.shape} vs {hq.frames.shape}"
            )
        masks.matches(hq)
        entries[f"zl/{clip_id}"] = encode(lq, basis).astype(np.float32)
        entries[f"zh/{clip_id}"] = encode(hq, basis).astype(np.float32)
        entries[f"Ml/{clip_id}"] = latent_mask(masks).astype(np.float32)
        entries[f"Mp/{clip_id}"] = masks.masks.astype(np.float32)
        seen += 1
    if seen == 0:
        raise ValidationError("no clips to cache")
    return entries


def build_cache(data_dir, roster: list[str] | None = None) -> dict[str, np.ndarray]:
    """Build a latent cache from a data directory with hq/ and lq/ clip trees."""
    root = Path(data_dir)
    hq_root, lq_root = root / "hq", root / "lq"
    ids = roster or sorted(d.name for d in hq_root.iterdir() if (d / "frames").is_dir())

    def pairs():
        for clip_id in ids:
            lq_dir = lq_root / clip_id
            hq_dir = hq_root / clip_id
            if not (lq_dir / "frames").is_dir() or not (hq_dir / "frames").is_dir():
                raise ValidationError(f"clip {clip_id}: missing low-quality/high-quality pair")
            hq = read_clip(hq_dir)
            masks = read_masks(hq_dir, expected_shape=hq.frames.shape[:3])
            yield clip_id, read_clip(lq_dir), hq, masks

    return cache_latents(pairs())


def cache_roster(entries: dict[str, np.ndarray]) -> list[str]:
    return sorted(k.split("/", 1)[1] for k in entries if k.startswith("zl/"))


# ---------------------------------------------------------------------------
# per-clip loss/grad helpers (shared by the loops and the gradient audits)
# ---------------------------------------------------------------------------

def stage1_clip_grads(net: VelocityNet, z_l, z_h, m_l, b: int, fcfg: FlowConfig):
    z_hat = one_step_restore(net, z_l, fcfg)
    loss, g_y = masked_loss(z_h, z_hat, m_l, b)
    grads, _ = backward(net, z_l, fcfg.t_star_discrete, g_y)
    return loss, grads


def stage2_clip_grads(net: VelocityNet, z_l, x_h, m_p3, b: int, lam: float,
                      basis: PatchBasis, fcfg: FlowConfig):
    z_hat = one_step_restore(net, z_l, fcfg)
    pre = decode_unclamped(z_hat, basis)
    x_hat = np.clip(pre, 0.0, 1.0)
    loss, g_x = masked_loss(x_h, x_hat, m_p3, b)
    if lam > 0.0:
        l_per, g_per = percep_proxy(x_hat, x_h)
        loss += lam * l_per
        g_x = g_x + lam * g_per
    g_z = decode_grad(g_x, pre, basis)
    grads, _ = backward(net, z_l, fcfg.t_star_discrete, g_z)
    return loss, grads


def stage2_eval_loss(net: VelocityNet, clips, p: float, lam: float,
                     basis: PatchBasis, fcfg: FlowConfig) -> float:
    """Deterministic pixel-space loss over clips: the Bernoulli expectation
    p * masked + (1 - p) * global of the stochastic objective, plus the
    perceptual term."""
    total = 0.0
    count = 0
    for z_l, x_h, m_p3 in clips:
        z_hat = one_step_restore(net, z_l, fcfg)
        x_hat = np.clip(decode_unclamped(z_hat, basis), 0.0, 1.0)
        l_global, _ = masked_loss(x_h, x_hat, m_p3, 0)
        l_masked, _ = masked_loss(x_h, x_hat, m_p3, 1)
        loss = p * l_masked + (1.0 - p) * l_global
        if lam > 0.0:
            loss += lam * percep_proxy(x_hat, x_h)[0]
        total += loss
        count += 1
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _zero_grads(net: VelocityNet) -> dict[str, np.ndarray]:
    return {k: np.zeros(v.shape, dtype=np.float64) for k, v in net.params.items()}


def _run_steps(net: VelocityNet, opt: AdamState, cfg: TrainConfig, loss_cfg: LossConfig,
               roster: list[str], clip_grads_fn) -> list[float]:
    data_rng = np.random.default_rng([cfg.seed, _DATA_STREAM])
    b_rng = np.random.default_rng([cfg.seed, _BERNOULLI_STREAM])
    losses: list[float] = []
    for step in range(cfg.steps):
        idx = data_rng.integers(0, len(roster), size=cfg.batch)
        b = sample_b(b_rng, loss_cfg.p)
        grads = _zero_grads(net)
        step_loss = 0.0
        for i in idx:
            loss, g = clip_grads_fn(roster[int(i)], b)
            step_loss += loss / cfg.batch
            for name in grads:
                grads[name] += g[name] / cfg.batch
        if not np.isfinite(step_loss):
            raise DivergenceError(f"non-finite loss {step_loss} at step {step}")
        adam_update(net, grads, opt, cfg)
        losses.append(step_loss)
        if (step + 1) % 100 == 0 or step == 0:
            log.info("stage %d step %d/%d loss %.6g (b=%d)", cfg.stage, step + 1, cfg.steps, step_loss, b)
        if cfg.out is not None and cfg.ckpt_every > 0 and (step + 1) % cfg.ckpt_every == 0:
            save_checkpoint(cfg.out, net, opt, step + 1)
    return losses


def train_stage1(cfg: TrainConfig, loss_cfg: LossConfig, cache: dict[str, np.ndarray]) -> TrainResult:
    """Fit the one-step flow in latent space from a pre-extracted cache."""
    cfg.validate()
    loss_cfg.validate()
    if cfg.stage != 1:
        raise ValidationError(f"train_stage1 called with stage {cfg.stage}")
    roster = cfg.roster or cache_roster(cache)
    if not roster:
        raise ValidationError("empty clip roster")
    data = {
        cid: (
            cache[f"zl/{cid}"].astype(np.float64),
            cache[f"zh/{cid}"].astype(np.float64),
            cache[f"Ml/{cid}"].astype(np.float64),
        )
        for cid in roster
    }
    net = VelocityNet.init([cfg.seed, _INIT_STREAM])
    opt = AdamState(net.params)
    fcfg = FlowConfig()

    def clip_grads(cid: str, b: int):
        z_l, z_h, m_l = data[cid]
        return stage1_clip_grads(net, z_l, z_h, m_l, b, fcfg)

    losses = _run_steps(net, opt, cfg, loss_cfg, roster, clip_grads)
    if cfg.out is not None:
        save_checkpoint(cfg.out, net, opt, cfg.steps)
    return TrainResult(net, opt, losses, cfg.out)


def train_stage2(cfg: TrainConfig, loss_cfg: LossConfig, cache: dict[str, np.ndarray],
                 stage1_ckpt) -> TrainResult:
    """Fine-tune in pixel space through the decoder, starting from a stage-1
    checkpoint.  Ground-truth pixels are read once from data_dir/hq."""
    cfg.validate()
    loss_cfg.validate()
    if cfg.stage != 2:
        raise ValidationError(f"train_stage2 called with stage {cfg.stage}")
    if stage1_ckpt is None:
        raise ValidationError("stage 2 requires a stage-1 checkpoint")
    if cfg.data_dir is None:
        raise ValidationError("stage 2 requires data_dir for pixel ground truth")
    net, _, _ = load_checkpoint(stage1_ckpt)
    opt = AdamState(net.params)  # fresh moments for the new objective
    roster = cfg.roster or cache_roster(cache)
    if not roster:
        raise ValidationError("empty clip roster")
    basis = make_basis()
    fcfg = FlowConfig()
    data = {}
    for cid in roster:
        x_h = read_clip(Path(cfg.data_dir) / "hq" / cid).frames
        m_p = cache[f"Mp/{cid}"].astype(np.float64)
        m_p3 = np.repeat(m_p[..., None], 3, axis=3)
        data[cid] = (cache[f"zl/{cid}"].astype(np.float64), x_h, m_p3)

    def clip_grads(cid: str, b: int):
        z_l, x_h, m_p3 = data[cid]
        return stage2_clip_grads(net, z_l, x_h, m_p3, b, loss_cfg.lambda_percep, basis, fcfg)

    losses = _run_steps(net, opt, cfg, loss_cfg, roster, clip_grads)
    if cfg.out is not None:
        save_checkpoint(cfg.out, net, opt, cfg.steps)
    return TrainResult(net, opt, losses, cfg.out)
