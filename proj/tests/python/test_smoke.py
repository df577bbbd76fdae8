import math

import pytest

import riskprobe as rp


def test_weight_is_identity_at_alpha_one():
    p = rp.BehaviorParams(sigma=0.3, alpha=1.0, lam=2.0)
    for x in (0.1, 0.3, 0.5, 0.7, 0.9):
        assert abs(rp.weight(x, p) - x) < 1e-12


def test_value_function_by_hand():
    p = rp.BehaviorParams(sigma=0.5, alpha=0.7, lam=2.0)
    assert rp.value(16.0, p) == pytest.approx(4.0)
    assert rp.value(-9.0, p) == pytest.approx(-6.0)
    w = math.exp(-((-math.log(0.3)) ** 0.7))
    assert rp.utility([40.0, 10.0], [0.3, 0.7], p) == pytest.approx(
        math.sqrt(10) + w * (math.sqrt(40) - math.sqrt(10))
    )


def test_domain_errors():
    with pytest.raises(ValueError):
        rp.BehaviorParams(sigma=1.2)
    with pytest.raises(ValueError):
        rp.SwitchProfile(14, 1, 1)
    with pytest.raises(ValueError):
        rp.series_table(4)


def test_risk_neutral_round_trip():
    profile = rp.play_profile(rp.BehaviorParams())
    assert profile.as_tuple() == (7, 1, 1)
    assert profile.clamped == "000"
    lo, hi = rp.lambda_interval(1, 0.0)
    assert lo == pytest.approx(0.375)
    assert hi == pytest.approx(1.625)


def test_estimate_contains_truth():
    truth = rp.BehaviorParams(sigma=0.48, alpha=0.69, lam=3.47)
    profile = rp.play_profile(truth)
    assert profile.as_tuple() == (8, 9, 4)
    for mode in ("midpoint", "corners"):
        e = rp.estimate(profile, lambda_propagation=mode)
        assert e["sigma_interval"]["lo"] <= 0.48 <= e["sigma_interval"]["hi"]
        assert e["alpha_interval"]["lo"] <= 0.69 <= e["alpha_interval"]["hi"]
        assert e["lambda_interval"]["lo"] <= 3.47 <= e["lambda_interval"]["hi"]
    with pytest.raises(ValueError):
        rp.estimate(profile, lambda_propagation="median")


def test_series_and_prompts():
    s3 = rp.series_json(3)
    assert len(s3["rows"]) == 7
    assert "Table 10: Multiple Choice List: Series 3" in rp.series_table(3)
    assert "Answer me with the value of <x1> only" in rp.series_prompt(1)


def test_synthetic_cohort_is_seeded():
    params = rp.BehaviorParams(sigma=0.2, alpha=0.8, lam=2.0)
    a = rp.synthetic_cohort(params, 20, seed=4, epsilon=0.3, regime="random")
    b = rp.synthetic_cohort(params, 20, seed=4, epsilon=0.3, regime="random")
    assert [r["trial_id"] for r in a] == [f"trial-{i:04d}" for i in range(1, 21)]
    assert [r["profile"].as_tuple() for r in a] == [r["profile"].as_tuple() for r in b]
    assert a[0]["persona"] == b[0]["persona"]
    assert len(a[0]["persona_dummies"]) == len(rp.foundational_dummy_names())


def test_regress_recovers_exact_line():
    x = [[float(i % 2), float(i % 3 == 0)] for i in range(30)]
    y = [0.5 - 0.2 * a + 0.1 * b for a, b in x]
    r = rp.regress(y, x, ["Female", "Rural"])
    assert r["terms"] == ["Constant", "Female", "Rural"]
    assert r["coefficients"] == pytest.approx([0.5, -0.2, 0.1], abs=1e-12)
    assert r["n_obs"] == 30
    with pytest.raises(rp.RankDeficientError):
        rp.regress(y, [[a, a] for a, _ in x], ["Male", "Also male"])
