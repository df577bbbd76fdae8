"""Python access to the riskprobe C++ core."""

from ._core import (
    BehaviorParams,
    DomainError,
    InfeasibleError,
    RankDeficientError,
    SwitchProfile,
    estimate,
    foundational_dummy_names,
    lambda_interval,
    play_profile,
    regress,
    series_json,
    series_prompt,
    series_table,
    synthetic_cohort,
    utility,
    value,
    weight,
)

__all__ = [
    "BehaviorParams",
    "DomainError",
    "InfeasibleError",
    "RankDeficientError",
    "SwitchProfile",
    "estimate",
    "foundational_dummy_names",
    "lambda_interval",
    "play_profile",
    "regress",
    "series_json",
    "series_prompt",
    "series_table",
    "synthetic_cohort",
    "utility",
    "value",
    "weight",
]
