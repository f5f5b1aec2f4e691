import json

import numpy as np
import pytest

from piengine.config import RunConfig
from piengine.errors import ConfigError
from piengine.suites import ALL_SUITES, SUITES, Case, SuiteRunner, _so3_defect, build_cases, run_suite


def _boom():
    raise RuntimeError("kaboom")


@pytest.fixture
def cases():
    return [
        Case("ok", 1, 1e-3, lambda: 1e-4),
        Case("too-big", 1, 1e-3, lambda: 0.5),
        Case("raises", 1, 1e-3, _boom),
        Case("nan", 1, 1e-3, lambda: float("nan")),
        Case("control", 1, 1e-3, lambda: 0.2, expect="above"),
        Case("weak-control", 1, 1e-3, lambda: 1e-6, expect="above"),
    ]


@pytest.mark.parametrize("jobs", [1, 3])
def test_runner_records_failures_in_case_order(cases, jobs):
    report = SuiteRunner(jobs=jobs, show_progress=False).run("fake", cases)
    assert [c.name for c in report.cases] == [c.name for c in cases]
    assert [c.passed for c in report.cases] == [True, False, False, False, True, False]
    assert report.total == 6
    assert report.failed == 4
    assert not report.passed
    by_name = {c.name: c for c in report.cases}
    assert by_name["raises"].error == "RuntimeError: kaboom"
    assert by_name["raises"].max_abs_err is None
    assert by_name["nan"].max_abs_err is None
    assert "non-finite" in by_name["nan"].error
    assert "too-big" in report.summary()


def test_report_dict_is_json(cases):
    report = SuiteRunner(show_progress=False).run("fake", cases[:2])
    data = json.loads(json.dumps(report.to_dict()))
    assert data["schema_version"] == "1.0"
    assert data["suite"] == "fake"
    assert data["summary"] == {"total": 2, "passed": 1, "failed": 1}
    assert set(data["cases"][0]) == {"name", "seed", "max_abs_err", "tol", "pass", "wall_ms"}
    assert data["cases"][0]["pass"] is True


def test_empty_suite_does_not_pass():
    assert not SuiteRunner(show_progress=False).run("empty", []).passed


def test_runner_rejects_zero_jobs():
    with pytest.raises(ConfigError):
        SuiteRunner(jobs=0)


def test_registry(run_config):
    assert "equivariance" in SUITES
    assert "equivariance" not in ALL_SUITES
    with pytest.raises(ConfigError) as info:
        build_cases("nope", run_config)
    assert info.value.key == "suite"
    everything = build_cases("all", run_config)
    assert not any(case.name.startswith("equivariance/") for case in everything)
    assert len({case.name for case in everything}) == len(everything)


@pytest.mark.parametrize("suite", ["order", "oracles-self", "algebra"])
def test_small_suites_pass(run_config, suite):
    report = run_suite(suite, run_config)
    assert report.passed, report.summary()


def test_seed_makes_suites_repeatable(run_config):
    first = run_suite("gating", run_config).to_dict()
    second = run_suite("gating", run_config).to_dict()
    assert [c["max_abs_err"] for c in first["cases"]] == [c["max_abs_err"] for c in second["cases"]]


def test_case_count_follows_configuration():
    small = RunConfig(values={"run": {"seed": 3, "cases": 2, "show_progress": False}})
    large = RunConfig(values={"run": {"seed": 3, "cases": 4, "show_progress": False}})
    assert len(build_cases("gating", small)) < len(build_cases("gating", large))
    assert np.all([case.seed >= 3 for case in build_cases("gating", small)])


def test_anisotropic_se3_attention_is_a_negative_control(run_config):
    case = {c.name: c for c in build_cases("equivariance", run_config)}["equivariance/control-se3-attention-anisotropic"]
    assert case.expect == "above"
    control = run_config.tolerance("negative_control")
    assert _so3_defect(run_config, 3, 2, control, "se3", anisotropy=(0.3, -0.2, 0.1)) > control
    so3 = run_config.tolerance("so3")
    assert _so3_defect(run_config, 3, 2, so3, "se3") <= so3
