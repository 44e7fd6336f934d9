"""
Tests for the robust-polyopt command line.
"""
import pytest

from src.cli import create_parser, main


def test_parser_run_overrides():
    args = create_parser().parse_args(["--backend", "bundled", "run", "--config", "x.toml",
                                       "--w", "0.1", "0.2", "--format", "csv"])
    assert args.command == "run"
    assert args.backend == "bundled"
    assert args.w == [0.1, 0.2]
    assert args.format == "csv"


def test_parser_check_needs_w():
    with pytest.raises(SystemExit):
        create_parser().parse_args(["feas-check", "--case", "case9"])


def test_no_command_prints_help(capsys):
    main([])
    assert "robust-polyopt" in capsys.readouterr().out


def test_unknown_case_exits(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nominal-bound", "--case", "nosuchcase"])
    assert exc.value.code == 1
    assert "Error: Unknown case 'nosuchcase'" in capsys.readouterr().out


def test_wrong_control_size_exits(capsys):
    with pytest.raises(SystemExit):
        main(["feas-check", "--case", "case9", "--w", "0.1", "--control", "1.0", "2.0"])
    assert "Expected 6 control values (t, Pg2, Pg3, Vg1, Vg2, Vg3)" in capsys.readouterr().out


def test_export_case(tmp_path, capsys):
    main(["export-case", "case9", "--out", str(tmp_path)])
    assert (tmp_path / "case9.m").is_file()
    assert "Case written to" in capsys.readouterr().out


def test_power_flow(capsys):
    main(["power-flow", "--case", "case9"])
    out = capsys.readouterr().out
    assert "|V|, p.u." in out
    assert "1.0400" in out


def test_run_without_levels(tmp_path, capsys):
    config = tmp_path / "exp.toml"
    config.write_text('case = "case9"\nw = [0.1]\n')
    main(["run", "--config", str(config), "--w", "--format", "csv"])
    out = capsys.readouterr().out
    assert "for w = none" in out
    assert "Nom. lower bound" in out
