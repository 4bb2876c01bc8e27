"""Ablation presets: named variants expressed as flat config overrides."""
from __future__ import annotations

PARADIGMS = [
    ("ht-grpo", {"paradigm": "ht-grpo"}),
    ("random-remask", {"paradigm": "random-remask"}),
    ("trajectory", {"paradigm": "trajectory"}),
]

PRESETS: dict[str, list[tuple[str, dict]]] = {
    # stage organisation at K = 8
    "a1": [
        ("single-stage 8:0:0", {"budget_global": 8, "budget_structure": 0, "budget_refinement": 0}),
        ("two-stage 4:4:0", {"budget_global": 4, "budget_structure": 4, "budget_refinement": 0}),
        ("two-stage 0:4:4", {"budget_global": 0, "budget_structure": 4, "budget_refinement": 4}),
        ("three-stage 2:4:2", {"budget_global": 2, "budget_structure": 4, "budget_refinement": 2}),
    ],
    # budget allocation across the three stages
    "a2": [
        ("2:4:2", {"budget_global": 2, "budget_structure": 4, "budget_refinement": 2}),
        ("2:2:4", {"budget_global": 2, "budget_structure": 2, "budget_refinement": 4}),
        ("4:2:2", {"budget_global": 4, "budget_structure": 2, "budget_refinement": 2}),
    ],
    # random-subset annealing
    "a3": [
        ("full coverage", {"gamma_max": 1.0, "gamma_min": 1.0, "anneal_mode": "constant"}),
        ("fixed sparse", {"gamma_max": 0.2, "gamma_min": 0.2, "anneal_mode": "constant"}),
        ("ascending", {"gamma_max": 1.0, "gamma_min": 0.5, "anneal_mode": "up"}),
        ("linear decay", {"gamma_max": 1.0, "gamma_min": 0.5, "anneal_mode": "down"}),
    ],
    # structure ratio
    "a4": [
        ("alpha=0.1", {"alpha": 0.1}),
        ("alpha=0.3", {"alpha": 0.3}),
        ("alpha=0.5", {"alpha": 0.5}),
    ],
    # credit weighting and ratio conditioning
    "a5": [
        ("full", {}),
        ("uniform credit", {"lambda_s": 1.0, "lambda_r": 1.0}),
        ("revealed structure", {"paradigm": "revealed-structure"}),
    ],
}


def variants(preset: str | None) -> list[tuple[str, dict]]:
    if preset is None:
        return PARADIGMS
    key = preset.lower()
    if key not in PRESETS:
        raise KeyError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key]
