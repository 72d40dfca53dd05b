"""Regenerate the canned MLLM assessment fixtures under mllm/.

Each fixture mimics one chat completion following the mandated report
format.  Valid fixtures carry consistent arithmetic; mismatch fixtures
state a wrong base/final/tier on purpose; malformed fixtures break the
format.  tests/test_curate.py and the acceptance suite freeze the expected
values, so rerun those after touching anything here.
"""

from pathlib import Path

OUT = Path(__file__).parent / "mllm"

REASONS = {
    "clarity": "fine texture visible across facial regions",
    "stability": "stable footage, key regions stay sharp",
    "lighting": "even illumination with mild shadows",
    "artifacts": "only faint compression traces",
    "occlusion": "face fully visible in all frames",
}


def render(scores, stated_base, adjustments, stated_final, tier,
           preamble="Here is my assessment of the provided clip.",
           motion="No motion blur detected in eyes, mouth, or teeth."):
    c, s, l, a, o = scores
    lines = [preamble, ""]
    lines += [
        "STEP 1 - Individual Scores:",
        f"Clarity: {c}/35 ({REASONS['clarity']})",
        f"Stability: {s}/20 ({REASONS['stability']})",
        f"Lighting: {l}/20 ({REASONS['lighting']})",
        f"Artifacts: {a}/15 ({REASONS['artifacts']})",
        f"Occlusion: {o}/10 ({REASONS['occlusion']})",
        "",
        "STEP 2 - Base Score Calculation:",
        f"Base Score = {c} + {s} + {l} + {a} + {o} = {stated_base}/100",
        "",
        "STEP 3 - Bonus/Penalty Adjustments:",
    ]
    if adjustments:
        total = 0
        for pts, reason in adjustments:
            kind = "Bonus" if pts > 0 else "Penalty"
            lines.append(f"- {kind} ({pts:+d} points): {reason}")
            total += pts
        lines.append(f"Total Adjustment: {total:+d} points")
    else:
        lines.append("No adjustments apply.")
        lines.append("Total Adjustment: 0 points")
    adj_total = sum(p for p, _ in adjustments)
    lines += [
        "",
        "STEP 4 - Final Results:",
        f"Final Score = {stated_base} (Base) + {stated_final - stated_base} (Adjustment) = {stated_final}/100",
        f"Quality Tier: {tier}",
        "Critical Issues: None noted beyond the adjustments above.",
        f"Motion Blur Check: {motion}",
        "",
    ]
    del adj_total
    return "\n".join(lines)


FIXTURES = {
    # --- valid: arithmetic and tier consistent -------------------------------
    "clip_premium_95": render((33, 19, 18, 14, 9), 93,
                              [(+2, "exceptional skin texture detail throughout")], 95, "Premium"),
    "clip_sharp_92": render((33, 18, 19, 14, 10), 94,
                            [(-2, "visible digital noise in the background")], 92, "Premium",
                            preamble="Evaluation complete. Detailed findings follow."),
    "clip_studio_91": render((32, 19, 18, 13, 9), 91, [], 91, "Premium"),
    "clip_boundary_90": render((31, 18, 18, 14, 9), 90, [], 90, "Premium"),
    "clip_crisp_88": render((30, 17, 17, 14, 10), 88, [], 88, "Premium",
                            preamble="I examined every frame at full resolution before scoring."),
    "clip_adjusted_86": render((31, 18, 17, 13, 10), 89,
                               [(-3, "motion blur detected in the eye region during the pan")], 86,
                               "Premium", motion="Brief blur on the eyes in frames 3-4."),
    "clip_edge_85": render((30, 17, 17, 12, 9), 85, [], 85, "Premium"),
    "clip_filtered_84": render((31, 18, 17, 12, 9), 87,
                               [(-3, "unnatural skin smoothing from a beauty filter")], 84, "High"),
    "clip_decent_80": render((28, 16, 16, 11, 9), 80, [], 80, "High"),
    "clip_soft_78": render((27, 15, 16, 11, 9), 78, [], 78, "Standard"),
    "clip_basic_75": render((26, 15, 15, 10, 9), 75, [], 75, "Standard"),
    "clip_grainy_68": render((22, 13, 14, 10, 7), 66,
                             [(+2, "surprisingly rich skin texture despite the grain")], 68,
                             "Below Standard"),
    # --- arithmetic mismatches ------------------------------------------------
    # components sum to 86 but the final is stated as 90
    "clip_inflated_90": render((30, 17, 17, 13, 9), 86, [], 90, "Premium"),
    # stated base 85 does not match the components (82); tier overstated
    "clip_waved_85": render((29, 17, 16, 11, 9), 85, [], 85, "Premium"),
    # correct base 93, -2 adjustment, but final understated as 89
    "clip_undersold_89": render((32, 19, 18, 14, 10), 93,
                                [(-2, "any visible digital noise or grain")], 89, "High"),
    # stated base 84 vs computed 82, and the +1 bonus lands on the wrong base
    "clip_sloppy_85": render((28, 16, 17, 12, 9), 84,
                             [(+1, "perfect color reproduction and white balance")], 85, "Premium"),
}

MALFORMED = {
    "clip_missing_step3": "\n".join([
        "STEP 1 - Individual Scores:",
        "Clarity: 30/35 (good)",
        "Stability: 17/20 (fine)",
        "Lighting: 17/20 (fine)",
        "Artifacts: 13/15 (fine)",
        "Occlusion: 9/10 (fine)",
        "",
        "STEP 2 - Base Score Calculation:",
        "Base Score = 30 + 17 + 17 + 13 + 9 = 86/100",
        "",
        "STEP 4 - Final Results:",
        "Final Score = 86 (Base) + 0 (Adjustment) = 86/100",
        "Quality Tier: Premium",
        "Motion Blur Check: none",
        "",
    ]),
    "clip_missing_lighting": "\n".join([
        "STEP 1 - Individual Scores:",
        "Clarity: 30/35 (good)",
        "Stability: 17/20 (fine)",
        "Artifacts: 13/15 (fine)",
        "Occlusion: 9/10 (fine)",
        "",
        "STEP 2 - Base Score Calculation:",
        "Base Score = 30 + 17 + 17 + 13 + 9 = 86/100",
        "",
        "STEP 3 - Bonus/Penalty Adjustments:",
        "No adjustments apply.",
        "Total Adjustment: 0 points",
        "",
        "STEP 4 - Final Results:",
        "Final Score = 86 (Base) + 0 (Adjustment) = 86/100",
        "Quality Tier: Premium",
        "Motion Blur Check: none",
        "",
    ]),
    "clip_nonnumeric": "\n".join([
        "STEP 1 - Individual Scores:",
        "Clarity: excellent/35 (very sharp)",
        "Stability: 17/20 (fine)",
        "Lighting: 17/20 (fine)",
        "Artifacts: 13/15 (fine)",
        "Occlusion: 9/10 (fine)",
        "",
        "STEP 2 - Base Score Calculation:",
        "Base Score = ? = 86/100",
        "",
        "STEP 3 - Bonus/Penalty Adjustments:",
        "No adjustments apply.",
        "",
        "STEP 4 - Final Results:",
        "Final Score = 86 (Base) + 0 (Adjustment) = 86/100",
        "Quality Tier: Premium",
        "Motion Blur Check: none",
        "",
    ]),
    "clip_freeform": (
        "This clip looks quite nice overall. The face is sharp, the lighting\n"
        "is flattering, and I would rate it somewhere around 90 out of 100.\n"
        "I did not follow the requested format.\n"
    ),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, text in {**FIXTURES, **MALFORMED}.items():
        (OUT / f"{name}.txt").write_text(text)
    print(f"wrote {len(FIXTURES) + len(MALFORMED)} fixtures to {OUT}")


if __name__ == "__main__":
    main()
