POINTWISE_FIELDS = [
    "prompt_id",
    "candidate_id",
    "judge_score",
    "oracle_label",
    "labeled",
    "query_prob",
    "features",
    "resample_scores",
    "ci_low",
    "ci_high",
]

POINTWISE_REQUIRED = ["prompt_id", "candidate_id", "judge_score"]

PAIRWISE_FIELDS = [
    "prompt_id",
    "candidate_a",
    "candidate_b",
    "judge_choice",
    "oracle_choice",
    "confidence",
    "stated_prob_a",
]

PAIRWISE_REQUIRED = [
    "prompt_id",
    "candidate_a",
    "candidate_b",
    "judge_choice",
    "oracle_choice",
]

CHOICE_A = "A"
CHOICE_B = "B"
CHOICE_TIE = "TIE"
CHOICES = {CHOICE_A, CHOICE_B, CHOICE_TIE}

PERCENT_SCALE = 100.0

ROUTING_CSV_HEADERS = [
    "policy",
    "budget",
    "value",
    "lift",
    "pct_of_optimal",
]

DEFAULT_CALIBRATION_BINS = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]

DEFAULTS = {
    "bootstrap": {
        "resamples": 1000,
        "seed": 20240601,
        "interval": [2.5, 97.5],
        "max_skip_fraction": 0.2,
    },
    "audit": {"format": None, "unbounded": False},
    "pairwise": {"bins": DEFAULT_CALIBRATION_BINS},
    "estimate": {"budget_mode": "observed", "budget": 0.25, "outcome_model": "constant"},
    "simulate": {
        "gaussian": {"rho": 0.5, "n_candidates": 4, "n_prompts": 5000, "quantize_bins": None},
        "discretize": {
            "rho": 0.6,
            "n_candidates": 4,
            "n_prompts": 200000,
            "bins": [None, 100, 20, 10, 5],
        },
        "requirements": {
            "targets": [0.25, 0.5, 0.75, 0.9],
            "n_candidates": 4,
            "n_prompts": 100000,
            "quantize_bins": 20,
            "tol": 0.005,
        },
        "nonident": {
            "target_r": 0.47,
            "rho_within_1": 0.0,
            "rho_within_2": 0.6,
            "n_candidates": 4,
            "n_prompts": 100000,
        },
    },
    "route": {
        "policies": ["random", "margin", "ci_width", "resample_std", "level_2d", "oracle_optimal"],
        "budgets": [0.0, 0.1, 0.25, 0.5, 1.0],
        "gain_bins": 5,
        "adaptive": {"margin_threshold": 0.10, "k_max": 3},
    },
    "calibrate": {"split_seed": 7, "fit_fraction": 0.5},
}

THREADS_ENV_VAR = "JUDGE_AUDIT_THREADS"
