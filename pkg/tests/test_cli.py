import json

from piengine.cli import EXIT_OK, EXIT_USAGE, main


def test_order_prints_manifest(capsys):
    assert main(["order", "attention", "--no-progress", "--seed", "3"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["builder"] == "attention"
    assert data["order"] == 3
    assert data["manifest"]["orders"]["X"] == 3


def test_order_of_mamba(capsys):
    assert main(["order", "mamba", "--no-progress"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["order"] == 3
    assert "gate" in data["manifest"]["occurrence_roles"]


def test_verify_writes_report(tmp_path):
    out = tmp_path / "reports" / "order.json"
    assert main(["verify", "--suite", "order", "--no-progress", "--seed", "5", "--out", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    assert data["suite"] == "order"
    assert data["summary"]["failed"] == 0


def test_config_file_is_read(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[run]\nseed = 4\n\n[attention]\nn = 3\nd = 2\nheads = 1\n")
    assert main(["order", "attention", "--config", str(config), "--no-progress"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["manifest"]["shape"][0] == 4


def test_bad_config_is_a_usage_error(tmp_path, capsys):
    config = tmp_path / "bad.ini"
    config.write_text("[run]\nsede = 4\n")
    assert main(["order", "conv", "--config", str(config)]) == EXIT_USAGE
    assert "Configuration error" in capsys.readouterr().err


def test_missing_config_and_unknown_suite(tmp_path):
    assert main(["order", "conv", "--config", str(tmp_path / "absent.ini")]) == EXIT_USAGE
    assert main(["verify", "--suite", "nope", "--no-progress"]) == EXIT_USAGE
