"""Clip and mask I/O, the .vvt tensor archive, and synthetic face clips.

On disk a clip is one binary PPM (P6, maxval 255) file per frame under
``<clip>/frames/frame_%05d.ppm`` and one binary PGM (P5) mask per frame
under ``<clip>/masks/mask_%05d.pgm``.  Frame stacks are (1+T, H, W, 3)
float arrays in [0, 1] with T divisible by 4 and H, W divisible by 8.

The ``.vvt`` archive is a flat container of named float32 tensors used for
latent caches and checkpoints:

    magic "VVTF" | version u32=1 | entry count u32 |
    per entry: name_len u32 | name bytes (utf-8) | ndim u32 |
               dims u32 * ndim | payload float32 little-endian

All multi-byte integers are little-endian.  Round-trips are bit-exact.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError, ShapeError, ValidationError

ARCHIVE_MAGIC = b"VVTF"
ARCHIVE_VERSION = 1
ARCHIVE_SUFFIX = ".vvt"

FRAME_NAME = "frame_%05d.ppm"
MASK_NAME = "mask_%05d.pgm"


@dataclass
class Video:
    """A clip of 1+T RGB frames, shape (1+T, H, W, 3), values in [0, 1].

    ``fps`` is carried as metadata only; the on-disk format does not store it.
    """

    frames: np.ndarray
    fps: int = 25

    def validate(self) -> "Video":
        f = self.frames
        if not isinstance(f, np.ndarray) or f.ndim != 4 or f.shape[3] != 3:
            raise ShapeError(f"expected frames of shape (1+T, H, W, 3), got {getattr(f, 'shape', None)}")
        n, h, w, _ = f.shape
        if n < 1 or (n - 1) % 4 != 0:
            raise ShapeError(f"frame count {n} is not of the form 1+4k")
        if h == 0 or w == 0 or h % 8 != 0 or w % 8 != 0:
            raise ShapeError(f"spatial dims {h}x{w} are not positive multiples of 8")
        if not np.isfinite(f).all():
            raise ValidationError("frame values must be finite")
        if float(f.min()) < 0.0 or float(f.max()) > 1.0:
            raise ValidationError("frame values must lie in [0, 1]")
        return self


@dataclass
class MaskStack:
    """Per-frame binary facial masks, shape (1+T, H, W), values in {0, 1}."""

    masks: np.ndarray

    def validate(self) -> "MaskStack":
        m = self.masks
        if not isinstance(m, np.ndarray) or m.ndim != 3:
            raise ShapeError(f"expected masks of shape (1+T, H, W), got {getattr(m, 'shape', None)}")
        n, h, w = m.shape
        if n < 1 or (n - 1) % 4 != 0:
            raise ShapeError(f"mask count {n} is not of the form 1+4k")
        if h == 0 or w == 0 or h % 8 != 0 or w % 8 != 0:
            raise ShapeError(f"mask dims {h}x{w} are not positive multiples of 8")
        vals = np.unique(m)
        if not np.isin(vals, (0, 1)).all():
            raise ValidationError("mask values must be exactly 0 or 1")
        return self

    def matches(self, video: Video) -> "MaskStack":
        if self.masks.shape != video.frames.shape[:3]:
            raise ShapeError(
                f"mask stack {self.masks.shape} does not match clip {video.frames.shape[:3]}"
            )
        return self


# ---------------------------------------------------------------------------
# netpbm frame I/O
# ---------------------------------------------------------------------------

def _read_header_ints(raw: bytes, pos: int, count: int, path: Path) -> tuple[list[int], int]:
    """Parse `count` whitespace-separated ints, honoring '#' comment lines."""
    vals: list[int] = []
    n = len(raw)
    while len(vals) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos] == ord("#"):
            while pos < n and raw[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed netpbm header")
        vals.append(int(raw[start:pos]))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise FormatError(f"{path}: malformed netpbm header")
    return vals, pos + 1


def _read_netpbm(path: Path, magic: bytes, channels: int) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(magic):
        raise FormatError(f"{path}: expected {magic.decode()} file")
    (w, h, maxval), pos = _read_header_ints(raw, len(magic), 3, path)
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (must be 255)")
    expected = w * h * channels
    payload = raw[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, expected {expected}")
    img = np.frombuffer(payload, dtype=np.uint8)
    return img.reshape((h, w, channels)) if channels > 1 else img.reshape((h, w))


def _write_netpbm(path: Path, magic: bytes, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    header = magic + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    try:
        path.write_bytes(header + np.ascontiguousarray(img, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _resolve_dir(dir_path, subdir: str) -> Path:
    """Accept either the clip directory (with a frames/masks subdir) or the
    frame directory itself."""
    p = Path(dir_path)
    if (p / subdir).is_dir():
        return p / subdir
    return p


def _listed_files(fdir: Path, suffix: str, template: str) -> list[str]:
    if not fdir.is_dir():
        raise IoError(f"{fdir} is not a directory")
    names = sorted(x.name for x in fdir.iterdir() if x.name.endswith(suffix))
    if not names:
        raise FormatError(f"{fdir}: no {suffix} files found")
    expected = [template % i for i in range(len(names))]
    if names != expected:
        raise FormatError(f"{fdir}: frame numbering is not contiguous from 0")
    return names


def read_clip(dir_path) -> Video:
    """Read a PPM frame stack into a Video; byte values map to v = byte/255."""
    fdir = _resolve_dir(dir_path, "frames")
    names = _listed_files(fdir, ".ppm", FRAME_NAME)
    frames = []
    dims = None
    for name in names:
        img = _read_netpbm(fdir / name, b"P6", 3)
        if dims is None:
            dims = img.shape
        elif img.shape != dims:
            raise FormatError(f"{fdir}/{name}: frame size {img.shape} differs from {dims}")
        frames.append(img)
    video = Video(np.stack(frames).astype(np.float64) / 255.0)
    return video.validate()


def read_masks(dir_path, expected_shape: tuple[int, int, int] | None = None) -> MaskStack:
    """Read a PGM mask stack; pixels > 127 become 1, the rest 0.

    When ``expected_shape`` (frame count, H, W) is given, any mismatch with
    the declared clip layout raises ShapeError.
    """
    mdir = _resolve_dir(dir_path, "masks")
    names = _listed_files(mdir, ".pgm", MASK_NAME)
    planes = []
    dims = None
    for name in names:
        img = _read_netpbm(mdir / name, b"P5", 1)
        if dims is None:
            dims = img.shape
        elif img.shape != dims:
            raise FormatError(f"{mdir}/{name}: mask size {img.shape} differs from {dims}")
        planes.append((img > 127).astype(np.uint8))
    stack = MaskStack(np.stack(planes))
    if expected_shape is not None and stack.masks.shape != tuple(expected_shape):
        raise ShapeError(
            f"mask stack {stack.masks.shape} does not match declared clip {tuple(expected_shape)}"
        )
    return stack.validate()


def write_clip(video: Video, dir_path) -> None:
    """Write PPM frames with byte = floor(255 * clamp(v, 0, 1) + 0.5).

    Rounds half up, so read_clip(write_clip(v)) is within 1/510 per value.
    """
    video.validate()
    fdir = Path(dir_path) / "frames"
    try:
        fdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {fdir}: {exc}") from exc
    data = np.floor(255.0 * np.clip(video.frames, 0.0, 1.0) + 0.5).astype(np.uint8)
    for i in range(data.shape[0]):
        _write_netpbm(fdir / (FRAME_NAME % i), b"P6", data[i])


def write_masks(masks: MaskStack, dir_path) -> None:
    """Write PGM masks; 1 maps to byte 255, 0 to byte 0."""
    masks.validate()
    mdir = Path(dir_path) / "masks"
    try:
        mdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {mdir}: {exc}") from exc
    data = (masks.masks.astype(np.uint8) * 255).astype(np.uint8)
    for i in range(data.shape[0]):
        _write_netpbm(mdir / (MASK_NAME % i), b"P5", data[i])


# ---------------------------------------------------------------------------
# .vvt tensor archive
# ---------------------------------------------------------------------------

def save_archive(entries, path) -> None:
    """Serialize named float32 tensors to a .vvt file, bit-exactly.

    ``entries`` is a mapping name -> array or an iterable of (name, array)
    pairs.  Names must be unique and arrays at least 1-dimensional with
    positive dims; data is stored as little-endian float32.
    """
    if isinstance(entries, Mapping):
        items = list(entries.items())
    else:
        items = list(entries)
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise ValidationError("archive entry names must be unique")
    buf = bytearray()
    buf += ARCHIVE_MAGIC
    buf += struct.pack("<II", ARCHIVE_VERSION, len(items))
    for name, arr in items:
        if not name:
            raise ValidationError("archive entry names must be non-empty")
        a = np.ascontiguousarray(arr, dtype="<f4")
        if a.ndim < 1 or any(d <= 0 for d in a.shape):
            raise ValidationError(f"entry {name!r}: dims must be a list of positive integers")
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<I", a.ndim)
        buf += struct.pack(f"<{a.ndim}I", *a.shape)
        buf += a.tobytes()
    try:
        Path(path).write_bytes(bytes(buf))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class _Cursor:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise IoError(f"{self.path}: truncated archive")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_archive(path) -> dict[str, np.ndarray]:
    """Load a .vvt file into an ordered dict of float32 arrays."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    cur = _Cursor(raw, path)
    if cur.take(4) != ARCHIVE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a .vvt archive")
    version = cur.u32()
    if version != ARCHIVE_VERSION:
        raise FormatError(f"{path}: unsupported archive version {version}")
    count = cur.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = cur.u32()
        name = cur.take(name_len).decode("utf-8")
        ndim = cur.u32()
        dims = struct.unpack(f"<{ndim}I", cur.take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(cur.take(4 * size), dtype="<f4").reshape(dims)
        if name in out:
            raise FormatError(f"{path}: duplicate entry {name!r}")
        out[name] = data.copy()
    return out


# ---------------------------------------------------------------------------
# synthetic clips
# ---------------------------------------------------------------------------

def _ellipse(ys, xs, cy, cx, ry, rx):
    return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2


def synth_clip(seed, frames: int, size: int) -> tuple[Video, MaskStack]:
    """Generate a deterministic procedural face clip and its head mask.

    A filled head ellipse (radii 0.2-0.35 * size, total translation at most
    0.15 * size, mild per-frame sinusoidal radius deformation) with two
    darker eye ellipses and a mouth ellipse moves over a sinusoidal textured
    background.  The mask marks the head-ellipse interior.  Pure function of
    (seed, frames, size).
    """
    if frames < 1 or (frames - 1) % 4 != 0:
        raise ShapeError(f"frame count {frames} is not of the form 1+4k")
    if size <= 0 or size % 8 != 0:
        raise ShapeError(f"size {size} is not a positive multiple of 8")

    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")

    # draw order is fixed; do not reorder without breaking determinism
    bg_phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    bg_freq_a = rng.uniform(0.3, 1.0, size=2)
    bg_freq_b = rng.uniform(0.6, 1.8, size=2)
    tint = rng.uniform(-0.05, 0.05, size=3)
    ry, rx = rng.uniform(0.20, 0.35, size=2) * size
    c0 = rng.uniform(0.445, 0.555, size=2) * size  # (cy, cx)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    motion = rng.uniform(0.4, 1.0) * 0.15 * size  # total path length
    deform_freq = rng.integers(1, 3, size=2)
    deform_phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    skin = np.clip(np.array([0.78, 0.62, 0.50]) + rng.uniform(-0.06, 0.06, size=3), 0.0, 1.0)
    eye_col = np.clip(np.array([0.13, 0.11, 0.10]) + rng.uniform(-0.03, 0.03, size=3), 0.0, 1.0)
    mouth_col = np.clip(np.array([0.55, 0.22, 0.20]) + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)

    background = (
        0.5
        + 0.12 * np.sin(2.0 * np.pi * (bg_freq_a[0] * xs + bg_freq_a[1] * ys) / size + bg_phase[0])
        + 0.08 * np.cos(2.0 * np.pi * (bg_freq_b[0] * xs - bg_freq_b[1] * ys) / size + bg_phase[1])
    )

    def soft(d2: np.ndarray, radius: float) -> np.ndarray:
        # wide antialiased ellipse coverage: keeps the synthetic content
        # band-limited enough for the truncated latent codec to represent
        return np.clip((1.0 - d2) * radius / 10.0 + 0.5, 0.0, 1.0)

    out = np.empty((frames, size, size, 3), dtype=np.float64)
    mask = np.zeros((frames, size, size), dtype=np.uint8)
    direction = np.array([np.sin(theta), np.cos(theta)])

    for f in range(frames):
        u = f / (frames - 1) if frames > 1 else 0.5
        cy, cx = c0 + (u - 0.5) * motion * direction
        dy = 1.0 + 0.03 * np.sin(2.0 * np.pi * deform_freq[0] * f / frames + deform_phase[0])
        dx = 1.0 + 0.03 * np.sin(2.0 * np.pi * deform_freq[1] * f / frames + deform_phase[1])
        ryf, rxf = ry * dy, rx * dx

        frame = np.clip(background[:, :, None] + tint[None, None, :], 0.02, 0.98)

        d2 = _ellipse(ys, xs, cy, cx, ryf, rxf)
        shade = np.clip(1.0 - 0.12 * d2, 0.0, 1.0)
        alpha = soft(d2, min(ryf, rxf))[:, :, None]
        frame = (1.0 - alpha) * frame + alpha * (skin[None, None, :] * shade[:, :, None])

        for sx in (-1.0, 1.0):
            e2 = _ellipse(ys, xs, cy - 0.30 * ryf, cx + sx * 0.38 * rxf, 0.14 * ryf, 0.16 * rxf)
            ea = soft(e2, 0.14 * ryf)[:, :, None]
            frame = (1.0 - ea) * frame + ea * eye_col[None, None, :]
        m2 = _ellipse(ys, xs, cy + 0.45 * ryf, cx, 0.12 * ryf, 0.30 * rxf)
        ma = soft(m2, 0.12 * ryf)[:, :, None]
        frame = (1.0 - ma) * frame + ma * mouth_col[None, None, :]

        out[f] = np.clip(frame, 0.0, 1.0)
        mask[f] = (d2 <= 1.0).astype(np.uint8)

    video = Video(out).validate()
    return video, MaskStack(mask).validate()


def clip_ids_under(root) -> list[str]:
    """Sorted ids of clip directories (those containing a frames/ subdir)."""
    p = Path(root)
    if (p / "frames").is_dir():
        return [p.name]
    if not p.is_dir():
        raise IoError(f"{p} is not a directory")
    return sorted(d.name for d in p.iterdir() if (d / "frames").is_dir())


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
