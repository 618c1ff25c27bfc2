"""Configuration parsing, exit codes and artifacts of the command-line driver."""

import pytest

from helmbound import cli
from helmbound.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, ConfigError


def test_minimal_config_fills_defaults():
    cfg = cli.parse_config("schema = 1\ncommand = constants\nk = 1\n")
    assert cfg.command == "constants"
    assert cfg["k"] == (1.0,)
    assert cfg["mesh.h0"] == 0.25 and cfg["sweep.safety_factor"] == 0.1 and cfg["seed"] == 0


def test_negative_k_names_key_and_rule():
    with pytest.raises(ConfigError) as exc:
        cli.parse_config("schema = 1\nk = -1\n")
    msg = str(exc.value)
    assert "line 2" in msg and "k" in msg and "positive" in msg


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"line 4: unknown key 'mesh.hmax'"):
        cli.parse_config("schema = 1\n\n[mesh]\nhmax = 0.1\n")


def test_unknown_section_and_malformed_lines():
    with pytest.raises(ConfigError, match="unknown section"):
        cli.parse_config("schema = 1\n[solver]\n")
    with pytest.raises(ConfigError, match="line 2"):
        cli.parse_config("schema = 1\njust words\n")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate key 'k'"):
        cli.parse_config("schema = 1\nk = 1\nk = 2\n")


def test_schema_required_and_versioned():
    with pytest.raises(ConfigError, match="schema"):
        cli.parse_config("command = constants\n")
    with pytest.raises(ConfigError, match="unsupported schema"):
        cli.parse_config("schema = 2\n")


def test_comments_and_bad_choice():
    cfg = cli.parse_config("# header\nschema = 1  # trailing\n[family]\nkind = transmission\n")
    assert cfg["family.kind"] == "transmission"
    with pytest.raises(ConfigError, match="family.kind"):
        cli.parse_config("schema = 1\n[family]\nkind = fractal\n")


def test_all_shipped_configs_parse(configs_dir):
    paths = sorted(configs_dir.glob("*.cfg"))
    assert len(paths) >= 8
    for p in paths:
        cli.load_config(p)


def test_constants_prints_twenty(configs_dir, tmp_path, capsys):
    code = cli.main(["--config", str(configs_dir / "constants_C1.cfg"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "20" in capsys.readouterr().out


def test_rays_homogeneous_exits_zero(configs_dir, tmp_path, capsys):
    code = cli.main(["--config", str(configs_dir / "rays_homogeneous.cfg"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "NONTRAPPING_EVIDENCE" in capsys.readouterr().out
    assert (tmp_path / "trajectories.csv").exists()


def test_trapping_sweep_refused(configs_dir, tmp_path, capsys):
    code = cli.main(["--config", str(configs_dir / "trapping_sweep.cfg"), "--out", str(tmp_path), "--quiet"])
    assert code == EXIT_CONFIG
    assert "refused" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("schema = 1\nk = -1\n")
    assert cli.main(["--config", str(bad)]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_expectation_mismatch_exits_one(tmp_path):
    cfg = cli.parse_config("schema = 1\ncommand = rays\n[rays]\nR = 1\nn_rays = 5\nexpect = trapping\n")
    assert cli.run(cfg, tmp_path, quiet=True) == EXIT_FAIL


def test_command_override_and_seed(tmp_path, configs_dir):
    code = cli.main(["constants", "--config", str(configs_dir / "constants_C1.cfg"), "--out", str(tmp_path),
                     "--seed", "3", "--quiet"])
    assert code == EXIT_OK
    assert cli.main(["--config", str(configs_dir / "constants_C1.cfg"), "--seed", "-1"]) == EXIT_CONFIG


def test_mollify_and_check_coeffs_commands(configs_dir, tmp_path):
    assert cli.run(cli.load_config(configs_dir / "mollify.cfg"), tmp_path, quiet=True) == EXIT_OK
    assert (tmp_path / "mollify.csv").read_text().startswith("delta,l2_distance")
    cfg = cli.parse_config("schema = 1\ncommand = check-coeffs\n[family]\nkind = transmission\n"
                           "a_value = 2\nn_value = 0.5\n")
    assert cli.run(cfg, tmp_path, quiet=True) == EXIT_OK


def test_solve_command_writes_solution(tmp_path):
    cfg = cli.parse_config("schema = 1\ncommand = solve\nk = 2\n[domain]\nouter_size = 1\n[mesh]\nh0 = 0.3\n")
    assert cli.run(cfg, tmp_path, quiet=True) == EXIT_OK
    assert any(p.suffix == ".csv" for p in tmp_path.iterdir())
