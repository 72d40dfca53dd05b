import json
from pathlib import Path

import numpy as np
import pytest

from vividforge.cli import main, restore_clip
from vividforge.flow_net import VelocityNet
from vividforge.latent_codec import decode, encode, make_basis
from vividforge.media_io import load_archive, read_clip, synth_clip, write_clip, write_masks
from vividforge.train import AdamState, save_checkpoint

FIXTURES = Path(__file__).parent / "fixtures" / "mllm"


def _zero_ckpt(path):
    net = VelocityNet.init(0)
    save_checkpoint(path, net, AdamState(net.params), 0)
    return path


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_exits_1(capsys):
    assert main(["synth", "--wat", "1"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_no_subcommand_exits_1(capsys):
    assert main([]) == 1


def test_help_exits_0():
    assert main(["--help"]) == 0


def test_missing_required_flag_exits_1(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d")]) == 1


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def test_synth_writes_clip_dirs(tmp_path):
    out = tmp_path / "clips"
    rc = main(["synth", "--out", str(out), "--clips", "2", "--frames", "9",
               "--size", "64", "--seed", "7"])
    assert rc == 0
    for cid in ("clip_0000", "clip_0001"):
        frames = sorted((out / cid / "frames").glob("*.ppm"))
        masks = sorted((out / cid / "masks").glob("*.pgm"))
        assert len(frames) == 9 and len(masks) == 9
    # clip 0 uses the base seed directly
    video, _ = synth_clip(7, 9, 64)
    again = read_clip(out / "clip_0000")
    assert np.abs(again.frames - video.frames).max() <= 1.0 / 510.0 + 1e-12


def test_synth_writes_only_under_out(tmp_path):
    out = tmp_path / "only_here"
    before = set(tmp_path.iterdir())
    main(["synth", "--out", str(out), "--clips", "1", "--frames", "5", "--size", "32", "--seed", "1"])
    after = set(tmp_path.iterdir())
    assert after - before == {out}


# ---------------------------------------------------------------------------
# degrade / encode / maskalign
# ---------------------------------------------------------------------------

def test_degrade_cli_deterministic(tmp_path):
    video, masks = synth_clip(11, 9, 64)
    src = tmp_path / "src"
    write_clip(video, src)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["degrade", "--in", str(src), "--out", str(a), "--seed", "5"]) == 0
    assert main(["degrade", "--in", str(src), "--out", str(b), "--seed", "5"]) == 0
    fa = sorted((a / "frames").glob("*.ppm"))
    fb = sorted((b / "frames").glob("*.ppm"))
    assert [p.read_bytes() for p in fa] == [p.read_bytes() for p in fb]


def test_degrade_flag_overrides_rejected_out_of_range(tmp_path):
    video, _ = synth_clip(11, 9, 64)
    src = tmp_path / "src"
    write_clip(video, src)
    rc = main(["degrade", "--in", str(src), "--out", str(tmp_path / "o"),
               "--seed", "5", "--sigma", "50"])
    assert rc == 1


def test_encode_cli_writes_latent_archive(tmp_path, basis):
    video, _ = synth_clip(11, 9, 64)
    src = tmp_path / "clip_a"
    write_clip(video, src)
    out = tmp_path / "z.vvt"
    assert main(["encode", "--in", str(src), "--out", str(out)]) == 0
    entries = load_archive(out)
    assert list(entries) == ["z/clip_a"]
    reread = read_clip(src)
    assert np.allclose(entries["z/clip_a"], encode(reread, basis), atol=1e-6)


def test_maskalign_cli(tmp_path):
    from vividforge.mask_align import latent_mask
    from vividforge.media_io import read_masks

    _, masks = synth_clip(11, 9, 64)
    src = tmp_path / "clip_m"
    write_masks(masks, src)
    out = tmp_path / "m.vvt"
    assert main(["maskalign", "--masks", str(src), "--out", str(out)]) == 0
    entries = load_archive(out)
    assert set(entries) == {"Mp/clip_m", "Ml/clip_m"}
    stack = read_masks(src)
    assert np.array_equal(entries["Mp/clip_m"], stack.masks.astype(np.float32))
    assert np.array_equal(entries["Ml/clip_m"], latent_mask(stack).astype(np.float32))


# ---------------------------------------------------------------------------
# restore
# ---------------------------------------------------------------------------

def test_restore_zero_net_is_codec_round_trip(tmp_path, basis):
    video, _ = synth_clip(23, 9, 64)
    src = tmp_path / "lq"
    write_clip(video, src)
    ckpt = _zero_ckpt(tmp_path / "ck.vvt")
    out = tmp_path / "restored"
    assert main(["restore", "--ckpt", str(ckpt), "--in", str(src), "--out", str(out)]) == 0
    restored = read_clip(out)
    reread = read_clip(src)
    expected = decode(encode(reread, basis), basis)
    # outputs pass through PPM quantization once
    assert np.abs(restored.frames - expected.frames).max() <= 1.0 / 510.0 + 1e-12


def test_restore_performs_exactly_one_forward(tmp_path):
    video, _ = synth_clip(23, 9, 64)
    src = tmp_path / "lq"
    write_clip(video, src)
    ckpt = _zero_ckpt(tmp_path / "ck.vvt")
    stats = restore_clip(ckpt, src, tmp_path / "restored")
    assert stats.forward_calls == 1
    assert stats.frames == 9


def test_restore_deterministic(tmp_path):
    video, _ = synth_clip(23, 9, 64)
    src = tmp_path / "lq"
    write_clip(video, src)
    ckpt = _zero_ckpt(tmp_path / "ck.vvt")
    a, b = tmp_path / "ra", tmp_path / "rb"
    restore_clip(ckpt, src, a)
    restore_clip(ckpt, src, b)
    fa = sorted((a / "frames").glob("*.ppm"))
    fb = sorted((b / "frames").glob("*.ppm"))
    assert [p.read_bytes() for p in fa] == [p.read_bytes() for p in fb]


# ---------------------------------------------------------------------------
# train / eval / curate
# ---------------------------------------------------------------------------

def test_train_cli_with_config_file(tmp_path):
    main(["synth", "--out", str(tmp_path / "data" / "hq"), "--clips", "2",
          "--frames", "9", "--size", "16", "--seed", "3"])
    for cid in ("clip_0000", "clip_0001"):
        main(["degrade", "--in", str(tmp_path / "data" / "hq" / cid),
              "--out", str(tmp_path / "data" / "lq" / cid), "--seed", "4"])
    cfg = {
        "stage": 1,
        "steps": 30,  # flag below overrides this
        "lr": 1e-3,
        "batch": 2,
        "seed": 1,
        "p": 0.5,
        "lambda": 0.1,
        "data_dir": str(tmp_path / "data"),
        "cache": str(tmp_path / "cache.vvt"),
        "out": str(tmp_path / "ck1.vvt"),
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(cfg_path), "--steps", "5"]) == 0
    assert (tmp_path / "cache.vvt").exists()
    ck = load_archive(tmp_path / "ck1.vvt")
    assert float(ck["meta/step"][0]) == 5.0  # flag won over the file value

    # stage 2 requires --init
    cfg["stage"] = 2
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(cfg_path), "--steps", "3"]) == 1
    rc = main(["train", "--config", str(cfg_path), "--steps", "3",
               "--init", str(tmp_path / "ck1.vvt"), "--out", str(tmp_path / "ck2.vvt")])
    assert rc == 0
    assert (tmp_path / "ck2.vvt").exists()


def test_eval_cli_report(tmp_path):
    main(["synth", "--out", str(tmp_path / "ref"), "--clips", "2",
          "--frames", "9", "--size", "64", "--seed", "9"])
    for cid in ("clip_0000", "clip_0001"):
        main(["degrade", "--in", str(tmp_path / "ref" / cid),
              "--out", str(tmp_path / "test" / cid), "--seed", "2"])
    report = tmp_path / "report.json"
    assert main(["eval", "--ref", str(tmp_path / "ref"), "--test", str(tmp_path / "test"),
                 "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert set(doc) == {"clip_0000", "clip_0001", "mean"}
    assert 0.0 < doc["mean"]["psnr"] < 99.0


def test_curate_cli_with_mock(tmp_path):
    ids = ["clip_premium_95", "clip_boundary_90", "clip_undersold_89"]
    for i, cid in enumerate(ids):
        video, masks = synth_clip(40 + i, 5, 32)
        write_clip(video, tmp_path / "clips" / cid)
        write_masks(masks, tmp_path / "clips" / cid)
    out = tmp_path / "manifest.json"
    rc = main(["curate", "--clips", str(tmp_path / "clips"), "--mock", str(FIXTURES),
               "--threshold", "90", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    retained = {c["clip_id"] for c in doc["clips"] if c["retained"]}
    assert retained == {"clip_premium_95", "clip_undersold_89"}
    assert doc["threshold"] == 90


def test_curate_requires_endpoint_or_mock(tmp_path):
    (tmp_path / "clips").mkdir()
    assert main(["curate", "--clips", str(tmp_path / "clips"),
                 "--out", str(tmp_path / "m.json")]) == 1
