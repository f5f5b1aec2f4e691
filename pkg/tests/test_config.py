import pytest

from piengine.config import EngineConfig, RunConfig, load_run_config, parse_run_config
from piengine.errors import ConfigError


def test_defaults_fill_every_section():
    cfg = RunConfig()
    assert cfg.get("conv", "height") == 8
    assert cfg.get("attention", "heads") == (1, 2)
    assert cfg.get("run", "suite") == "all"


def test_parse_sections_and_types():
    cfg = parse_run_config(
        "[run]\nseed = 3\nshow_progress = no\n\n[attention]\nheads = 1, 4  # cycled\n"
    )
    assert cfg.seed == 3
    assert cfg.show_progress is False
    assert cfg.get("attention", "heads") == (1, 4)


def test_tolerance_is_scaled():
    cfg = parse_run_config("[run]\ntol_scale = 10\n[tolerances]\nconv = 1e-12\n")
    assert cfg.tolerance("conv") == pytest.approx(1e-11)
    assert cfg.scaled(2.0) == pytest.approx(20.0)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_run_config("[run]\nseed = 1\n\n[conv]\nheigth = 4\n")
    assert info.value.key == "heigth"
    assert info.value.line == 5


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_run_config("[run]\nseed = 1\n[convolution]\nheight = 4\n")
    assert info.value.line == 3


def test_unparseable_value():
    with pytest.raises(ConfigError) as info:
        parse_run_config("[ssm]\ndt = fast\n")
    assert info.value.key == "dt"
    assert info.value.line == 2


def test_entry_before_section():
    with pytest.raises(ConfigError) as info:
        parse_run_config("seed = 1\n")
    assert info.value.line == 1


def test_non_positive_tolerance_rejected():
    with pytest.raises(ConfigError) as info:
        parse_run_config("[tolerances]\nssm = 0\n")
    assert info.value.key == "ssm"
    assert info.value.line == 2


def test_set_ignores_none_and_validates():
    cfg = RunConfig()
    cfg.set("run", "jobs", None)
    assert cfg.get("run", "jobs") is None
    cfg.set("run", "jobs", 3)
    assert cfg.jobs == 3
    with pytest.raises(ConfigError):
        cfg.set("run", "jobs", 0)
    with pytest.raises(ConfigError):
        cfg.set("run", "workers", 2)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.ini")


def test_load_from_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[conv]\nheight = 5\nwidth = 6\n", encoding="utf-8")
    cfg = load_run_config(path)
    assert (cfg.get("conv", "height"), cfg.get("conv", "width")) == (5, 6)
    assert cfg.source == str(path)


def test_to_dict_is_json_friendly():
    data = RunConfig().to_dict()
    assert data["attention"]["heads"] == [1, 2]


def test_engine_config_validation():
    with pytest.raises(ConfigError):
        EngineConfig(budget=0)
    with pytest.raises(ConfigError):
        EngineConfig(so3_policy="clip")
    assert EngineConfig(tol_scale=2.0).tol_scale == 2.0
