"""MLLM-driven clip curation: face crops, rubric prompt, report parsing.

Candidate clips are cropped to their face region, sent to a multimodal
chat-completion endpoint together with a fixed quality rubric, and the
returned structured report is parsed and arithmetically verified.  Clips
whose recomputed final score exceeds the retention threshold (strictly)
enter the manifest.  A mock transport serving fixture files makes the
whole pipeline testable offline.
"""

from __future__ import annotations

import json
import logging
import math
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .errors import (
    EmptyFaceError,
    EmptyResponseError,
    EndpointError,
    ParseError,
    VividForgeError,
)
from .media_io import MaskStack, Video, clip_ids_under, read_clip, read_masks

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 90
DEFAULT_PARALLELISM = 4
DEFAULT_MODEL = "qwen2.5-vl"

SCORE_MAXIMA = {
    "clarity": 35,
    "stability": 20,
    "lighting": 20,
    "artifacts": 15,
    "occlusion": 10,
}

TIER_PREMIUM = "Premium"
TIER_HIGH = "High"
TIER_STANDARD = "Standard"
TIER_BELOW = "BelowStandard"

ASSESSMENT_PROMPT = """You are an expert face video quality inspector specializing in premium face restoration training data. Evaluate this video with STRICT criteria to identify only the highest quality samples suitable for premium model training.

**Evaluation Criteria (Total: 100 points) - STRICT GRADING:**

1. **Facial Detail Clarity (35 points)**
   - 0-12: Severely degraded, facial features barely distinguishable
   - 13-21: Moderate quality, basic features visible but lacking fine details
   - 22-28: Good quality with visible skin texture and facial features, BUT penalize if key regions (eyes, mouth, teeth) show motion blur
   - 29-32: Excellent clarity with clear pores, fine lines, and detailed texture across ALL facial regions
   - 33-35: Perfect clarity with crisp micro-details (individual eyelashes, teeth edges, lip texture clearly visible)

2. **Video Stability & Regional Motion Blur (20 points)**
   - 0-6: Severe motion blur or instability affecting entire face
   - 7-11: Noticeable camera shake OR significant motion blur in key facial regions (eyes, mouth, teeth)
   - 12-15: Minor overall stability issues, but critical facial features remain sharp
   - 16-18: Very stable with minimal motion blur, all key facial regions clear
   - 19-20: Perfect stability across all frames, no motion blur in any facial region

3. **Lighting Quality (20 points)**
   - 0-6: Extreme lighting conditions that obscure facial features
   - 7-11: Acceptable lighting with noticeable issues (uneven shadows, slight over/under exposure)
   - 12-15: Good lighting with minor imperfections
   - 16-18: Excellent natural lighting with proper facial modeling
   - 19-20: Perfect studio-quality lighting with optimal facial structure revelation

4. **Artifact & Noise Level (15 points)**
   - 0-4: Heavy compression artifacts, noise, or digital distortions
   - 5-7: Noticeable artifacts that affect facial details
   - 8-10: Minor artifacts present but don't significantly impact quality
   - 11-13: Minimal artifacts, high video quality
   - 14-15: No visible artifacts, pristine video quality

5. **Facial Occlusion (10 points)**
   - 0-2: Significant occlusion (>25
   - 3-4: Moderate occlusion (10-25
   - 5-6: Minor occlusion (5-10
   - 7-8: Minimal occlusion (<5
   - 9-10: No occlusion, complete facial visibility

**Critical Facial Regions Check:**
- Eyes: Must be sharp with visible iris details, eyelashes clearly defined
- Mouth/Lips: Lip texture and edges must be crisp, no blur during speech
- Teeth: Individual teeth edges must be clearly visible when shown
- Nose: Nostril details and nose bridge must be sharp

**STRICT QUALITY THRESHOLDS:**
- Premium Training Data: Score >= 85 (Top 10-15
- High-Quality Training Data: Score >= 80 (Top 20-25
- Standard Training Data: Score >= 75 (Top 40
- Below Standard: Score < 75 (Consider discarding for premium training)

**Additional Quality Factors (Bonus/Penalty):**
- **Bonus (+2 points)**: Exceptional skin texture detail visible throughout video
- **Bonus (+1 point)**: Perfect color reproduction and white balance
- **Penalty (-3 points)**: Motion blur detected in ANY key facial region (eyes, mouth, teeth) even if brief
- **Penalty (-2 points)**: Any visible digital noise or grain
- **Penalty (-3 points)**: Unnatural skin smoothing or beauty filter effects
- **Penalty (-2 points)**: Inconsistent sharpness between frames (some frames sharp, others blurry)

**EVALUATION PROCESS - FOLLOW THESE STEPS:**

1. First, evaluate each criteria and assign a specific score:
   - Clarity: ___/35
   - Stability: ___/20
   - Lighting: ___/20
   - Artifacts: ___/15
   - Occlusion: ___/10

2. Calculate the base score by adding the five scores above:
   Base Score = Clarity + Stability + Lighting + Artifacts + Occlusion = ___

3. Apply bonus/penalty adjustments:
   - List each bonus/penalty with the reason
   - Calculate adjustment total: ___
   - Final Score = Base Score + Adjustment = ___

4. Determine quality tier based on final score

**MANDATORY OUTPUT FORMAT:**
```
STEP 1 - Individual Scores:
Clarity: X/35 (reason for score)
Stability: X/20 (reason for score)
Lighting: X/20 (reason for score)
Artifacts: X/15 (reason for score)
Occlusion: X/10 (reason for score)

STEP 2 - Base Score Calculation:
Base Score = X + X + X + X + X = X/100

STEP 3 - Bonus/Penalty Adjustments:
[List each bonus/penalty with reason and points]
Total Adjustment: +/-X points

STEP 4 - Final Results:
Final Score = X (Base) + X (Adjustment) = X/100
Quality Tier: [Premium/High/Standard/Below Standard]
Critical Issues: [List any issues that prevent premium quality classification]
Motion Blur Check: [Specifically note if eyes/mouth/teeth show any motion blur]
```

**IMPORTANT GRADING NOTES:**
- Be exceptionally strict with scoring - err on the side of lower scores
- Only award top scores (90+) for truly exceptional, near-perfect quality
- Consider that this is for premium training data - standards are higher than typical use
- Focus on details that would be critical for face restoration model performance
- Penalize any imperfections that could negatively impact training effectiveness
- DOUBLE-CHECK your arithmetic at each step to ensure accuracy

Please provide a complete evaluation following the exact format above, including all calculation steps."""


def build_prompt() -> str:
    """The quality-assessment prompt, identical on every call."""
    return ASSESSMENT_PROMPT


def tier_for(score: int) -> str:
    if score >= 85:
        return TIER_PREMIUM
    if score >= 80:
        return TIER_HIGH
    if score >= 75:
        return TIER_STANDARD
    return TIER_BELOW


@dataclass
class Adjustment:
    points: int
    reason: str


@dataclass
class QualityReport:
    """Scores as stated by the assessor; verification recomputes them."""

    clarity: int
    stability: int
    lighting: int
    artifacts: int
    occlusion: int
    adjustments: list[Adjustment]
    base: int
    final: int
    tier: str
    motion_blur_note: str = ""


@dataclass
class ArithmeticCheck:
    ok: bool
    expected_base: int
    stated_base: int
    expected_final: int
    stated_final: int
    tier: str  # recomputed from expected_final


@dataclass
class ManifestEntry:
    clip_id: str
    final: int
    tier: str
    retained: bool


@dataclass
class CurationManifest:
    threshold: int
    entries: list[ManifestEntry]
    failures: list[tuple[str, str]] = field(default_factory=list)

    def retained_ids(self) -> list[str]:
        return [e.clip_id for e in self.entries if e.retained]

    def to_json(self) -> str:
        doc = {
            "threshold": self.threshold,
            "clips": [
                {"clip_id": e.clip_id, "final": e.final, "tier": e.tier, "retained": e.retained}
                for e in self.entries
            ],
            "failures": [{"clip_id": cid, "error": msg} for cid, msg in self.failures],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# face crops
# ---------------------------------------------------------------------------

def face_crop(video: Video, masks: MaskStack) -> Video:
    """Crop all frames to the union bounding box of the mask, padded 10% per
    side, clamped to the frame, and snapped outward to even dimensions."""
    masks.matches(video)
    any_face = masks.masks.any(axis=0)
    if not any_face.any():
        raise EmptyFaceError("masks contain no face pixels in any frame")
    rows = np.flatnonzero(any_face.any(axis=1))
    cols = np.flatnonzero(any_face.any(axis=0))
    n, h, w, _ = video.frames.shape

    def expand(lo: int, hi: int, limit: int) -> tuple[int, int]:
        extent = hi - lo + 1
        lo = max(0, int(math.floor(lo - 0.1 * extent)))
        hi = min(limit - 1, int(math.ceil(hi + 0.1 * extent)))
        if (hi - lo + 1) % 2 == 1:  # snap outward to even dims
            if hi < limit - 1:
                hi += 1
            else:
                lo -= 1
        return lo, hi

    r0, r1 = expand(int(rows[0]), int(rows[-1]), h)
    c0, c1 = expand(int(cols[0]), int(cols[-1]), w)
    return Video(video.frames[:, r0 : r1 + 1, c0 : c1 + 1, :].copy(), video.fps)


# ---------------------------------------------------------------------------
# endpoint client
# ---------------------------------------------------------------------------

def http_transport(endpoint: str, timeout: float = 30.0):
    """POST the request body as JSON; the reply is either a JSON document
    with a "text" field or the raw completion body."""

    def send(body: dict) -> str:
        resp = requests.post(endpoint, json=body, timeout=timeout)
        resp.raise_for_status()
        try:
            doc = resp.json()
        except ValueError:
            return resp.text
        return doc.get("text", "") if isinstance(doc, dict) else resp.text

    return send


def mock_transport(fixtures_dir):
    """Serve completions from <fixtures_dir>/<clip_id>.txt files."""
    root = Path(fixtures_dir)

    def send(body: dict) -> str:
        path = root / f"{body['clip_id']}.txt"
        if not path.exists():
            raise ConnectionError(f"no fixture for clip {body['clip_id']}")
        return path.read_text()

    return send


def request_assessment(endpoint, prompt: str, clip_ref: str, *, frame_refs=(),
                       model: str = DEFAULT_MODEL, retries: int = 3,
                       backoff: float = 0.5, timeout: float = 30.0,
                       transport=None) -> str:
    """Request one assessment; retries transport failures up to ``retries``
    times with exponential backoff, then raises EndpointError.  An empty
    completion raises EmptyResponseError."""
    body = {
        "model": model,
        "prompt": prompt,
        "clip_id": clip_ref,
        "frame_refs": list(frame_refs),
    }
    send = transport or http_transport(endpoint, timeout)
    attempts = 1 + max(0, retries)
    for attempt in range(attempts):
        try:
            text = send(body)
        except (OSError, requests.RequestException) as exc:
            if attempt == attempts - 1:
                raise EndpointError(f"clip {clip_ref}: endpoint failed after {retries} retries: {exc}") from exc
            delay = backoff * (2.0 ** attempt)
            log.debug("clip %s attempt %d failed (%s); retrying in %.2fs", clip_ref, attempt + 1, exc, delay)
            time.sleep(delay)
            continue
        if not text or not text.strip():
            raise EmptyResponseError(f"clip {clip_ref}: empty completion")
        return text
    raise AssertionError("unreachable")


def assess_clips(clip_refs, prompt: str, *, endpoint=None, transport=None,
                 parallelism: int = DEFAULT_PARALLELISM, retries: int = 3,
                 backoff: float = 0.5, timeout: float = 30.0):
    """Assess clips with bounded parallelism.

    ``clip_refs`` yields (clip_id, frame_refs).  Returns (texts, failures):
    texts maps clip_id -> raw completion, failures maps clip_id -> error
    message for clips whose request failed.
    """
    refs = list(clip_refs)
    texts: dict[str, str] = {}
    failures: dict[str, str] = {}
    lock = threading.Lock()

    def work(item):
        clip_id, frame_refs = item
        try:
            text = request_assessment(
                endpoint, prompt, clip_id, frame_refs=frame_refs,
                retries=retries, backoff=backoff, timeout=timeout, transport=transport,
            )
        except VividForgeError as exc:
            with lock:
                failures[clip_id] = str(exc)
            return
        with lock:
            texts[clip_id] = text

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        list(pool.map(work, refs))
    return texts, failures


# ---------------------------------------------------------------------------
# report parsing and verification
# ---------------------------------------------------------------------------

_SCORE_RES = {
    name: re.compile(rf"{name}\s*:\s*(-?\d+)\s*/\s*{maximum}", re.IGNORECASE)
    for name, maximum in SCORE_MAXIMA.items()
}
_BASE_RE = re.compile(r"Base Score\s*=(?:[^=\n]*=)?\s*(-?\d+)\s*/\s*100")
_FINAL_RE = re.compile(r"Final Score\s*=(?:[^=\n]*=)?\s*(-?\d+)\s*/\s*100")
_TIER_RE = re.compile(r"Quality Tier\s*:\s*\[?\s*(Premium|High|Standard|Below\s*Standard)", re.IGNORECASE)
_ADJUST_RE = re.compile(r"\(\s*([+-]\d+)\s*points?\s*\)\s*:?\s*(.*)")
_MOTION_RE = re.compile(r"Motion Blur Check\s*:\s*(.*)")

_TIER_CANON = {
    "premium": TIER_PREMIUM,
    "high": TIER_HIGH,
    "standard": TIER_STANDARD,
    "below standard": TIER_BELOW,
    "belowstandard": TIER_BELOW,
}


def _step_span(text: str, step: int) -> tuple[int, int]:
    start = re.search(rf"STEP\s*{step}\b", text)
    if start is None:
        raise ParseError(f"missing STEP {step} section")
    end = re.search(rf"STEP\s*{step + 1}\b", text)
    return start.start(), end.start() if end else len(text)


def parse_report(text: str) -> QualityReport:
    """Parse an assessment into a QualityReport, tolerating surrounding prose.

    All four STEP sections, the five sub-scores, the stated base score, the
    stated final score, and the quality tier are required; anything missing
    or unparseable raises ParseError so the clip is marked unusable rather
    than silently dropped.
    """
    spans = {step: _step_span(text, step) for step in (1, 2, 3, 4)}

    scores: dict[str, int] = {}
    for name, maximum in SCORE_MAXIMA.items():
        match = _SCORE_RES[name].search(text)
        if match is None:
            raise ParseError(f"missing or unparseable {name} score")
        value = int(match.group(1))
        if not 0 <= value <= maximum:
            raise ParseError(f"{name} score {value} outside 0..{maximum}")
        scores[name] = value

    base_match = _BASE_RE.search(text)
    if base_match is None:
        raise ParseError("missing base score line")
    final_match = _FINAL_RE.search(text)
    if final_match is None:
        raise ParseError("missing final score line")

    adjustments: list[Adjustment] = []
    step3 = text[spans[3][0] : spans[3][1]]
    for line in step3.splitlines():
        if line.strip().lower().startswith("total adjustment"):
            continue
        match = _ADJUST_RE.search(line)
        if match:
            adjustments.append(Adjustment(points=int(match.group(1)), reason=match.group(2).strip()))

    tier_match = _TIER_RE.search(text)
    if tier_match is None:
        raise ParseError("missing quality tier line")
    tier = _TIER_CANON[re.sub(r"\s+", " ", tier_match.group(1).strip().lower())]

    motion = _MOTION_RE.search(text)
    return QualityReport(
        clarity=scores["clarity"],
        stability=scores["stability"],
        lighting=scores["lighting"],
        artifacts=scores["artifacts"],
        occlusion=scores["occlusion"],
        adjustments=adjustments,
        base=int(base_match.group(1)),
        final=int(final_match.group(1)),
        tier=tier,
        motion_blur_note=motion.group(1).strip() if motion else "",
    )


def verify_arithmetic(report: QualityReport) -> ArithmeticCheck:
    """Recompute base and final scores; the recomputed values win on any
    mismatch, and the tier is re-derived from the recomputed final."""
    expected_base = (
        report.clarity + report.stability + report.lighting + report.artifacts + report.occlusion
    )
    expected_final = expected_base + sum(adj.points for adj in report.adjustments)
    tier = tier_for(expected_final)
    ok = (
        expected_base == report.base
        and expected_final == report.final
        and tier == report.tier
    )
    return ArithmeticCheck(
        ok=ok,
        expected_base=expected_base,
        stated_base=report.base,
        expected_final=expected_final,
        stated_final=report.final,
        tier=tier,
    )


def filter_manifest(reports, threshold: int = DEFAULT_THRESHOLD) -> CurationManifest:
    """Build the retention manifest: a clip is retained iff its recomputed
    final score strictly exceeds the threshold."""
    entries = []
    for clip_id, report in reports:
        check = verify_arithmetic(report)
        if not check.ok:
            log.info(
                "clip %s: arithmetic mismatch (stated %d, recomputed %d)",
                clip_id, check.stated_final, check.expected_final,
            )
        entries.append(
            ManifestEntry(
                clip_id=clip_id,
                final=check.expected_final,
                tier=check.tier,
                retained=check.expected_final > threshold,
            )
        )
    return CurationManifest(threshold=threshold, entries=entries)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _frame_refs(clip_dir: Path, limit: int = 4) -> list[str]:
    frames = sorted(p.name for p in (clip_dir / "frames").iterdir() if p.name.endswith(".ppm"))
    if len(frames) <= limit:
        return frames
    idx = np.linspace(0, len(frames) - 1, limit).round().astype(int)
    return [frames[i] for i in idx]


def curate_clips(clips_root, *, endpoint=None, transport=None,
                 threshold: int = DEFAULT_THRESHOLD,
                 parallelism: int = DEFAULT_PARALLELISM,
                 retries: int = 3, backoff: float = 0.5) -> CurationManifest:
    """Run the full curation pipeline over a tree of clips with masks."""
    root = Path(clips_root)
    prompt = build_prompt()
    usable: list[tuple[str, list[str]]] = []
    failures: list[tuple[str, str]] = []
    for clip_id in clip_ids_under(root):
        clip_dir = root / clip_id
        try:
            video = read_clip(clip_dir)
            masks = read_masks(clip_dir, expected_shape=video.frames.shape[:3])
            face_crop(video, masks)  # validates a usable face region exists
        except VividForgeError as exc:
            failures.append((clip_id, str(exc)))
            continue
        usable.append((clip_id, _frame_refs(clip_dir)))

    texts, request_failures = assess_clips(
        usable, prompt, endpoint=endpoint, transport=transport,
        parallelism=parallelism, retries=retries, backoff=backoff,
    )
    failures.extend(sorted(request_failures.items()))

    reports = []
    for clip_id, _ in usable:
        if clip_id not in texts:
            continue
        try:
            reports.append((clip_id, parse_report(texts[clip_id])))
        except ParseError as exc:
            failures.append((clip_id, f"unusable report: {exc}"))

    manifest = filter_manifest(reports, threshold)
    manifest.failures = failures
    return manifest
