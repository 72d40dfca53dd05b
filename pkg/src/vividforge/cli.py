"""Single pipeline entrypoint: synth, degrade, encode, maskalign, train,
restore, eval, and curate subcommands over a shared JSON/flag config.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.  Flags
override values from an optional ``--config file.json``; every run logs its
fully resolved configuration.  Log level comes from VIVIDFORGE_LOG
(error/info/debug).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import degrade as degrade_mod
from .curate import curate_clips, mock_transport
from .errors import (
    EmptyFaceError,
    FormatError,
    ParseError,
    ShapeError,
    ValidationError,
    VividForgeError,
)
from .flow_net import FlowConfig, one_step_restore
from .latent_codec import decode, encode, make_basis
from .mask_align import latent_mask
from .media_io import (
    clip_ids_under,
    load_archive,
    read_clip,
    read_masks,
    save_archive,
    synth_clip,
    write_clip,
    write_masks,
)
from .metrics import eval_tree
from .train import (
    LossConfig,
    TrainConfig,
    build_cache,
    load_checkpoint,
    train_stage1,
    train_stage2,
)

log = logging.getLogger("vividforge")

_USAGE_ERROR = 1
_RUNTIME_ERROR = 2

_VALIDATION_ERRORS = (ValidationError, ShapeError, FormatError, ParseError, EmptyFaceError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise _UsageError(message)


@dataclass
class RestoreStats:
    forward_calls: int
    frames: int


def restore_clip(ckpt_path, lq_dir, out_dir) -> RestoreStats:
    """Restore one clip: decode(one_step_restore(encode(x))), written as PPM.

    Performs exactly one network forward per clip.
    """
    net, _, _ = load_checkpoint(ckpt_path)
    video = read_clip(lq_dir)
    basis = make_basis()
    before = net.forward_calls
    z_hat = one_step_restore(net, encode(video, basis).astype(np.float64), FlowConfig())
    restored = decode(z_hat, basis)
    write_clip(restored, out_dir)
    return RestoreStats(forward_calls=net.forward_calls - before, frames=video.frames.shape[0])


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags (None) from the optional JSON config file."""
    path = getattr(args, "config", None)
    if not path:
        return args
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    alias = {"lambda": "lambda_percep", "in": "in_path"}
    for key, value in doc.items():
        dest = alias.get(key, key)
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)
    return args


def _log_config(args: argparse.Namespace) -> None:
    resolved = {k: str(v) for k, v in sorted(vars(args).items()) if not k.startswith("_") and v is not None}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValidationError(f"missing required option(s): {', '.join('--' + n for n in missing)}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    _require(args, "out", "clips", "frames", "size", "seed")
    out = Path(args.out)
    for i in range(int(args.clips)):
        video, masks = synth_clip(int(args.seed) + i, int(args.frames), int(args.size))
        clip_dir = out / f"clip_{i:04d}"
        write_clip(video, clip_dir)
        write_masks(masks, clip_dir)
        log.info("wrote %s (%d frames)", clip_dir, video.frames.shape[0])
    return 0


def _cmd_degrade(args) -> int:
    _require(args, "in_path", "out", "seed")
    video = read_clip(args.in_path)
    params = degrade_mod.sample_params(int(args.seed))
    overrides = {
        k: float(getattr(args, k))
        for k in ("sigma", "scale", "noise", "crf")
        if getattr(args, k) is not None
    }
    if overrides:
        params = dataclasses.replace(params, **overrides)
    log.info("degrading with %s", params)
    degraded = degrade_mod.degrade_clip(video, params)
    write_clip(degraded, args.out)
    return 0


def _cmd_encode(args) -> int:
    _require(args, "in_path", "out")
    clip_dir = Path(args.in_path)
    clip_id = clip_dir.parent.name if clip_dir.name == "frames" else clip_dir.name
    video = read_clip(clip_dir)
    z = encode(video, make_basis())
    save_archive({f"z/{clip_id}": z}, args.out)
    log.info("encoded %s -> %s (%s)", clip_id, args.out, z.shape)
    return 0


def _cmd_maskalign(args) -> int:
    _require(args, "masks", "out")
    mask_dir = Path(args.masks)
    clip_id = mask_dir.parent.name if mask_dir.name == "masks" else mask_dir.name
    masks = read_masks(mask_dir)
    save_archive(
        {
            f"Mp/{clip_id}": masks.masks.astype("float32"),
            f"Ml/{clip_id}": latent_mask(masks).astype("float32"),
        },
        args.out,
    )
    return 0


def _cmd_train(args) -> int:
    _require(args, "stage", "steps", "data_dir", "cache", "out")
    cache_path = Path(args.cache)
    if cache_path.exists():
        cache = load_archive(cache_path)
    else:
        cache = build_cache(args.data_dir, roster=args.roster)
        save_archive(cache, cache_path)
        log.info("built latent cache %s (%d entries)", cache_path, len(cache))

    cfg = TrainConfig(
        stage=int(args.stage),
        steps=int(args.steps),
        lr=float(args.lr) if args.lr is not None else 1e-4,
        batch=int(args.batch) if args.batch is not None else 4,
        seed=int(args.seed) if args.seed is not None else 0,
        roster=args.roster or [],
        data_dir=Path(args.data_dir),
        out=Path(args.out),
        ckpt_every=int(args.ckpt_every) if args.ckpt_every is not None else 500,
    )
    loss_cfg = LossConfig(
        p=float(args.p) if args.p is not None else 0.5,
        lambda_percep=float(args.lambda_percep) if args.lambda_percep is not None else 0.1,
    )
    if cfg.stage == 1:
        result = train_stage1(cfg, loss_cfg, cache)
    else:
        if args.init is None:
            raise ValidationError("stage 2 requires --init with a stage-1 checkpoint")
        result = train_stage2(cfg, loss_cfg, cache, args.init)
    log.info("trained stage %d for %d steps; final loss %.6g -> %s",
             cfg.stage, cfg.steps, result.losses[-1] if result.losses else float("nan"), cfg.out)
    return 0


def _cmd_restore(args) -> int:
    _require(args, "ckpt", "in_path", "out")
    stats = restore_clip(args.ckpt, args.in_path, args.out)
    log.info("restored %d frames with %d network forward(s)", stats.frames, stats.forward_calls)
    return 0


def _cmd_eval(args) -> int:
    _require(args, "ref", "test", "report")
    report = eval_tree(args.ref, args.test, args.report)
    log.info("eval mean psnr %.3f dB ssim %.4f -> %s",
             report["mean"]["psnr"], report["mean"]["ssim"], args.report)
    return 0


def _cmd_curate(args) -> int:
    _require(args, "clips", "out")
    if args.mock is None and args.endpoint is None:
        raise ValidationError("curate needs --endpoint or --mock")
    transport = mock_transport(args.mock) if args.mock is not None else None
    manifest = curate_clips(
        args.clips,
        endpoint=args.endpoint,
        transport=transport,
        threshold=int(args.threshold) if args.threshold is not None else 90,
        parallelism=int(args.parallelism) if args.parallelism is not None else 4,
    )
    Path(args.out).write_text(manifest.to_json())
    log.info("curated %d clips, retained %d, %d failures -> %s",
             len(manifest.entries), len(manifest.retained_ids()), len(manifest.failures), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="vividforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(_fn=fn)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int)
        return p

    p = add("synth", _cmd_synth, "generate synthetic face clips")
    p.add_argument("--out")
    p.add_argument("--clips", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int)

    p = add("degrade", _cmd_degrade, "synthesize a low-quality clip")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--sigma", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--crf", type=float)

    p = add("encode", _cmd_encode, "encode a clip into a latent archive")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")

    p = add("maskalign", _cmd_maskalign, "build latent-aligned masks")
    p.add_argument("--masks")
    p.add_argument("--out")

    p = add("train", _cmd_train, "run stage-1 or stage-2 training")
    p.add_argument("--stage", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--lambda", dest="lambda_percep", type=float)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--cache")
    p.add_argument("--out")
    p.add_argument("--init", help="stage-1 checkpoint (required for stage 2)")
    p.add_argument("--roster", nargs="*")
    p.add_argument("--ckpt-every", dest="ckpt_every", type=int)

    p = add("restore", _cmd_restore, "one-step restore a clip")
    p.add_argument("--ckpt")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")

    p = add("eval", _cmd_eval, "PSNR/SSIM report for matched clips")
    p.add_argument("--ref")
    p.add_argument("--test")
    p.add_argument("--report")

    p = add("curate", _cmd_curate, "MLLM-driven quality filtering")
    p.add_argument("--clips")
    p.add_argument("--endpoint")
    p.add_argument("--mock", help="directory of fixture completions (offline mode)")
    p.add_argument("--threshold", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out")

    return parser


def _configure_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("VIVIDFORGE_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "_fn", None) is None:
        parser.print_usage(sys.stderr)
        return _USAGE_ERROR
    try:
        args = _merge_config(args)
        _log_config(args)
        return args._fn(args)
    except _VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        return _USAGE_ERROR
    except VividForgeError as exc:
        log.error("%s", exc)
        return _RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
