import numpy as np
import pytest

from app.core.errors import ConfigError
from app.schemas.report import CheckResult
from app.services import theory_verify
from app.services.theory_verify import (
    CHECKS,
    corollary_bounds,
    mixer_invariance_error,
    run_all,
    sandwich_bound,
)
from app.schemas.mixer import Variant
from app.services.linalg import random_orthogonal

EXPECTED_CHECKS = {
    "rank_bound",
    "sandwich",
    "theorem_snr",
    "corollary_expected",
    "kappa_bounds",
    "er_properties",
    "stability",
    "invariance_and_conv",
    "srrqr_contract",
    "query_conditioning",
    "conv_adaptation",
}


def test_registry_lists_every_check():
    assert set(CHECKS) == EXPECTED_CHECKS


@pytest.mark.parametrize("name", sorted(EXPECTED_CHECKS - {"corollary_expected", "conv_adaptation"}))
def test_check_passes_with_small_budget(name):
    result = CHECKS[name](trials=8, seed=1)
    assert result.name == name
    assert result.trials == 8
    assert result.passed, result


def test_corollary_check_small_budget():
    result = theory_verify.verify_corollary_expected(trials=3, draws=2000, seed=2)
    assert result.passed


def test_conv_adaptation_small_budget():
    result = theory_verify.verify_conv_adaptation(trials=2, grid_step=0.05)
    assert result.passed


def test_sandwich_bound_on_orthonormal_keys(rng):
    k = random_orthogonal(6, rng)[:, :3]
    v = rng.standard_normal((6, 2))
    lower, er_s = sandwich_bound(k, v)
    assert lower <= er_s + 1e-12


def test_corollary_bounds_are_ordered(rng):
    s = random_orthogonal(4, rng) @ np.diag([2.0, 1.5, 1.0, 0.5])
    q_star = np.ones(4) / 2.0
    lower, upper = corollary_bounds(s, q_star, 0.1)
    assert 0.0 < lower < upper


@pytest.mark.parametrize("variant", list(Variant))
def test_mixer_is_invariant_to_rotations(rng, variant):
    transform = random_orthogonal(4, rng)
    assert mixer_invariance_error(rng, variant, transform) < 1e-10


def test_run_all_subset_and_report():
    report = run_all(seed=0, names=["stability", "query_conditioning"], trials=5)
    assert [check.name for check in report.checks] == ["stability", "query_conditioning"]
    assert report.passed
    assert "stability" in report.summary()


def test_run_all_rejects_unknown_check():
    with pytest.raises(ConfigError):
        run_all(names=["no_such_check"])


def test_forced_failure_is_reported(monkeypatch):
    def corrupted(trials=1, seed=0):
        return CheckResult(name="stability", trials=trials, violations=1, worst_slack=-1.0, passed=False)

    monkeypatch.setitem(CHECKS, "stability", corrupted)
    report = run_all(names=["stability"], trials=3)
    assert not report.passed
    assert report.checks[0].violations == 1


def test_check_result_cannot_pass_with_violations():
    with pytest.raises(ValueError):
        CheckResult(name="x", violations=2, passed=True)


def test_seeded_runs_are_deterministic():
    first = run_all(seed=3, names=["rank_bound", "sandwich"], trials=4)
    second = run_all(seed=3, names=["rank_bound", "sandwich"], trials=4)
    assert first.model_dump() == second.model_dump()


@pytest.mark.slow
def test_default_budget_passes_every_check():
    report = run_all(seed=0)
    assert report.passed, report.summary()
