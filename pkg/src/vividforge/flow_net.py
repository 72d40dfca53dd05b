"""One-step rectified-flow math and the tiny velocity network.

The flow runs on a straight trajectory z_t = (1-t) z_l + t z_h whose
velocity is the constant z_h - z_l.  A small depthwise-spatiotemporal
network predicts that velocity from z_l at a fixed conditioning timestep
(400 on the discrete 0-999 scale), so restoration is a single residual
step: z_l + v(z_l).  Every gradient is derived by hand; forward/backward
are pure given a parameter snapshot.

Text conditioning is fixed to the empty embedding (a zero vector) and has
no parameters, so it never appears in the computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

EMB_DIM = 16

# (name, shape, fan_in); order is the init draw order and the archive order
PARAM_SPECS: tuple[tuple[str, tuple[int, ...], int], ...] = (
    ("emb_w", (16, 16), 16),
    ("emb_b", (16,), 16),
    ("blk1_spatial_w", (16, 3, 3), 9),
    ("blk1_spatial_b", (16,), 9),
    ("blk1_temporal_w", (16, 3), 3),
    ("blk1_temporal_b", (16,), 3),
    ("blk1_pw1_w", (32, 16), 16),
    ("blk1_pw1_b", (32,), 16),
    ("blk1_pw2_w", (16, 32), 32),
    ("blk1_pw2_b", (16,), 32),
    ("blk2_spatial_w", (16, 3, 3), 9),
    ("blk2_spatial_b", (16,), 9),
    ("blk2_temporal_w", (16, 3), 3),
    ("blk2_temporal_b", (16,), 3),
    ("blk2_pw1_w", (32, 16), 16),
    ("blk2_pw1_b", (32,), 16),
    ("blk2_pw2_w", (16, 32), 32),
    ("blk2_pw2_b", (16,), 32),
    ("head_w", (16, 16), 16),
    ("head_b", (16,), 16),
)

PARAM_COUNT = sum(int(np.prod(shape)) for _, shape, _ in PARAM_SPECS)


@dataclass(frozen=True)
class FlowConfig:
    """Fixed one-step conditioning timestep on the discrete 0-999 scale."""

    t_star_discrete: int = 400
    num_discrete_steps: int = 1000

    @property
    def t_star(self) -> float:
        return self.t_star_discrete / self.num_discrete_steps

    def validate(self) -> "FlowConfig":
        if not 0.0 < self.t_star < 1.0:
            raise ValidationError(f"t_star {self.t_star} must lie in (0, 1)")
        return self


class VelocityNet:
    """Velocity predictor with a zero-initialized output head.

    Parameters are float32; compute happens at whatever precision the input
    carries (training feeds float64).  Zero head means the untrained net
    outputs zeros, making the untrained one-step restorer the identity.
    """

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.forward_calls = 0

    @classmethod
    def init(cls, seed) -> "VelocityNet":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape, fan_in in PARAM_SPECS:
            if name.startswith("head_"):
                params[name] = np.zeros(shape, dtype=np.float32)
            else:
                bound = np.sqrt(1.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        return cls(params)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "VelocityNet":
        return VelocityNet({k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "VelocityNet":
        return VelocityNet({k: v.astype(dtype) for k, v in self.params.items()})


def timestep_embedding(t_discrete: int) -> np.ndarray:
    """Sinusoidal 16-vector: e[2k] = sin(t w_k), e[2k+1] = cos(t w_k),
    w_k = 10000^(-k/8), k = 0..7."""
    if int(t_discrete) != t_discrete or not 0 <= int(t_discrete) < 1000:
        raise ValidationError(f"t_discrete {t_discrete} outside 0..999")
    k = np.arange(8, dtype=np.float64)
    omega = 10000.0 ** (-k / 8.0)
    e = np.empty(EMB_DIM, dtype=np.float64)
    e[0::2] = np.sin(float(t_discrete) * omega)
    e[1::2] = np.cos(float(t_discrete) * omega)
    return e


def trajectory_point(z_l: np.ndarray, z_h: np.ndarray, t: float) -> np.ndarray:
    if z_l.shape != z_h.shape:
        raise ShapeError(f"latent shapes differ: {z_l.shape} vs {z_h.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t {t} outside [0, 1]")
    return (1.0 - t) * z_l + t * z_h


def velocity_target(z_l: np.ndarray, z_h: np.ndarray) -> np.ndarray:
    if z_l.shape != z_h.shape:
        raise ShapeError(f"latent shapes differ: {z_l.shape} vs {z_h.shape}")
    return z_h - z_l


# ---------------------------------------------------------------------------
# depthwise convolutions (zero padding, "same" size)
# ---------------------------------------------------------------------------

def _dw_spatial(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # x: (C, T, H, W), k: (C, 3, 3)
    _, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros(x.shape, dtype=np.result_type(x, k))
    for a in range(3):
        for b in range(3):
            out += k[:, a, b][:, None, None, None] * xp[:, :, a : a + h, b : b + w]
    return out


def _dw_spatial_backward(x: np.ndarray, k: np.ndarray, g: np.ndarray):
    _, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dk = np.empty_like(k, dtype=np.result_type(x, g))
    gp = np.zeros(xp.shape, dtype=np.result_type(k, g))
    for a in range(3):
        for b in range(3):
            dk[:, a, b] = np.einsum("cthw,cthw->c", g, xp[:, :, a : a + h, b : b + w])
            gp[:, :, a : a + h, b : b + w] += k[:, a, b][:, None, None, None] * g
    return dk, gp[:, :, 1 : 1 + h, 1 : 1 + w]


def _dw_temporal(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # x: (C, T, H, W), k: (C, 3)
    t = x.shape[1]
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0), (0, 0)))
    out = np.zeros(x.shape, dtype=np.result_type(x, k))
    for a in range(3):
        out += k[:, a][:, None, None, None] * xp[:, a : a + t]
    return out


def _dw_temporal_backward(x: np.ndarray, k: np.ndarray, g: np.ndarray):
    t = x.shape[1]
    xp = np.pad(x, ((0, 0), (1, 1), (0, 0), (0, 0)))
    dk = np.empty_like(k, dtype=np.result_type(x, g))
    gp = np.zeros(xp.shape, dtype=np.result_type(k, g))
    for a in range(3):
        dk[:, a] = np.einsum("cthw,cthw->c", g, xp[:, a : a + t])
        gp[:, a : a + t] += k[:, a][:, None, None, None] * g
    return dk, gp[:, 1 : 1 + t]


def _bc(v: np.ndarray) -> np.ndarray:
    return v[:, None, None, None]


def _forward_pass(params: dict[str, np.ndarray], z: np.ndarray, t_discrete: int):
    """Forward computation returning the output and the backward cache."""
    if not isinstance(z, np.ndarray) or z.ndim != 4 or z.shape[0] != 16:
        raise ShapeError(f"expected latent of shape (16, T', H', W'), got {getattr(z, 'shape', None)}")
    e = timestep_embedding(t_discrete)
    emb = params["emb_w"] @ e + params["emb_b"]
    h = z + _bc(emb)
    cache: dict = {"e": e}
    for blk in ("blk1", "blk2"):
        s = _dw_spatial(h, params[f"{blk}_spatial_w"]) + _bc(params[f"{blk}_spatial_b"])
        u = _dw_temporal(s, params[f"{blk}_temporal_w"]) + _bc(params[f"{blk}_temporal_b"])
        a = np.einsum("oc,cthw->othw", params[f"{blk}_pw1_w"], u) + _bc(params[f"{blk}_pw1_b"])
        g = np.tanh(a)
        r = np.einsum("om,mthw->othw", params[f"{blk}_pw2_w"], g) + _bc(params[f"{blk}_pw2_b"])
        cache[blk] = (h, s, u, g)
        h = h + r
    cache["h_final"] = h
    out = np.einsum("oc,cthw->othw", params["head_w"], h) + _bc(params["head_b"])
    return out, cache


def forward(net: VelocityNet, z: np.ndarray, t_discrete: int) -> np.ndarray:
    """Predict the velocity field for latent z at the given timestep."""
    out, _ = _forward_pass(net.params, z, t_discrete)
    net.forward_calls += 1
    return out


def backward(net: VelocityNet, z: np.ndarray, t_discrete: int, upstream: np.ndarray):
    """Exact gradients of <upstream, forward(net, z, t)>.

    Returns (param_grads, input_grad); param_grads holds one array per
    parameter tensor, input_grad matches z.
    """
    out, cache = _forward_pass(net.params, z, t_discrete)
    if upstream.shape != out.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match output {out.shape}")
    params = net.params
    grads: dict[str, np.ndarray] = {}

    grads["head_w"] = np.einsum("othw,cthw->oc", upstream, cache["h_final"])
    grads["head_b"] = upstream.sum(axis=(1, 2, 3))
    dh = np.einsum("oc,othw->cthw", params["head_w"], upstream)

    for blk in ("blk2", "blk1"):
        h_in, s, u, g = cache[blk]
        dr = dh  # residual branch shares the upstream with the skip path
        grads[f"{blk}_pw2_w"] = np.einsum("othw,mthw->om", dr, g)
        grads[f"{blk}_pw2_b"] = dr.sum(axis=(1, 2, 3))
        dg = np.einsum("om,othw->mthw", params[f"{blk}_pw2_w"], dr)
        da = dg * (1.0 - g * g)
        grads[f"{blk}_pw1_w"] = np.einsum("othw,cthw->oc", da, u)
        grads[f"{blk}_pw1_b"] = da.sum(axis=(1, 2, 3))
        du = np.einsum("oc,othw->cthw", params[f"{blk}_pw1_w"], da)
        dkt, ds = _dw_temporal_backward(s, params[f"{blk}_temporal_w"], du)
        grads[f"{blk}_temporal_w"] = dkt
        grads[f"{blk}_temporal_b"] = du.sum(axis=(1, 2, 3))
        dks, dh_conv = _dw_spatial_backward(h_in, params[f"{blk}_spatial_w"], ds)
        grads[f"{blk}_spatial_w"] = dks
        grads[f"{blk}_spatial_b"] = ds.sum(axis=(1, 2, 3))
        dh = dh + dh_conv

    demb = dh.sum(axis=(1, 2, 3))
    grads["emb_w"] = np.outer(demb, cache["e"])
    grads["emb_b"] = demb
    return grads, dh


def one_step_restore(net: VelocityNet, z_l: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    """Single-step restoration: z_l plus one velocity prediction."""
    cfg.validate()
    return z_l + forward(net, z_l, cfg.t_star_discrete)
