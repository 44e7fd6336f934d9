"""
Tests for experiment configs, result rows and table output.
"""
import math
from pathlib import Path

import numpy as np
import pytest

from src.acopf import (
    OperatingPoint,
    build_aro,
    build_injection_matrices,
    newton_power_flow,
    nominal_sdp_bound,
    squeeze_warm_start,
)
from src.experiment import (
    COLUMNS,
    ExperimentConfig,
    ResultRow,
    certificate_degree,
    format_results,
    load_config,
    results_frame,
    run_experiment,
    run_row,
    write_results,
)
from src.aro import RankDeficientError
from src.matpower import load_case
from src.uncertainty import build_load_ellipsoid, sample

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# Published upper bounds (objective / 100) after one outer iteration
CASE9_UPPER = {0.01: 53.13, 0.05: 53.16, 0.1: 53.18, 0.2: 53.24, 0.3: 53.31, 0.4: 53.39, 0.5: 53.47}
CASE9_CORRELATED_UPPER = {0.01: 53.14, 0.05: 53.17, 0.1: 53.20, 0.2: 53.27, 0.3: 53.34, 0.4: 53.43,
                          0.5: 53.51}


def sample_rows():
    return [
        ResultRow(0.01, 52.97, 53.13, iterations=4, avg_time=1.25, total_time=5.0,
                  feas_verdict="F", feas_time=12.3),
        ResultRow(0.5, 52.97, flag="LNF", iterations=None, total_time=2.0,
                  infeas_verdict="NF", infeas_time=3.4),
    ]


class TestConfig:

    def test_defaults(self):
        cfg = ExperimentConfig(case="case9", w=[0.1])
        assert cfg.ap.tol == 1e-5
        assert cfg.ap.f0 == 1e5
        assert cfg.ap.max_iterations == 100
        assert cfg.outer_iterations == 1
        assert cfg.squeeze == 0.005
        assert cfg.chaining == "chained"

    def test_from_dict(self):
        cfg = ExperimentConfig.from_dict({
            "case": "case14",
            "w": [0.01, 0.1],
            "algorithm": {"tol": 1e-4, "max_iterations": 50, "coupling": "convex"},
            "outer": {"norm": "inf", "max_iterations": 3},
            "checks": {"infeasibility": False, "degree": 2},
            "output": {"csv": "out.csv", "timings": True},
        })
        assert cfg.w == [0.01, 0.1]
        assert cfg.ap.tol == 1e-4
        assert cfg.ap.max_iterations == 50
        assert cfg.coupling == "convex"
        assert cfg.outer_norm == "inf"
        assert cfg.outer_iterations == 3
        assert cfg.infeasibility is False
        assert cfg.feasibility_degree == 2
        assert cfg.csv == "out.csv"
        assert cfg.timings is True

    def test_unknown_keys(self):
        with pytest.raises(ValueError, match="outer.radius"):
            ExperimentConfig.from_dict({"case": "case9", "outer": {"radius": 1.0}})

    def test_missing_case(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"w": [0.1]})

    @pytest.mark.parametrize("kwargs", [
        {"w": [0.0]},
        {"w": [-0.1]},
        {"w": [1.5]},
        {"backend": "mosek"},
        {"coupling": "loose"},
        {"outer_norm": "1"},
        {"chaining": "sometimes"},
        {"outer_iterations": 0},
        {"squeeze": 1.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(case="case9", **kwargs)

    def test_case_file_relative_to_config(self, tmp_path):
        (tmp_path / "exp.toml").write_text('case = "grids/mine.m"\nw = [0.05]\n')
        cfg = load_config(tmp_path / "exp.toml")
        assert cfg.case == str(tmp_path / "grids" / "mine.m")
        assert cfg.w == [0.05]

    def test_bundled_configs(self):
        for name in ("case9", "case14", "case9_correlated"):
            cfg = load_config(CONFIGS / f"{name}.toml")
            assert cfg.w == [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
            assert cfg.coupling == "literal"
        assert load_config(CONFIGS / "case9_correlated.toml").correlated


class TestResults:

    def test_flagged_row_has_no_bound(self):
        with pytest.raises(ValueError):
            ResultRow(0.1, 52.97, 53.0, flag="NC")

    def test_upper_cell(self):
        rows = sample_rows()
        assert rows[0].upper_cell == "53.13"
        assert rows[1].upper_cell == "LNF"
        assert math.isnan(rows[1].upper_bound)

    def test_frame_columns(self):
        frame = results_frame(sample_rows())
        assert list(frame.columns) == COLUMNS
        assert frame.loc[0, "w, %"] == "1"
        assert frame.loc[1, "w, %"] == "50"
        assert frame.loc[1, "Num iter"] == "--"
        assert frame.loc[0, "Feas time, s"] == "12.3"
        assert frame.loc[1, "Feas check"] == "-"

    def test_timings_dropped(self):
        frame = results_frame(sample_rows(), timings=False)
        assert list(frame.columns) == ["w, %", "Nom. lower bound", "Upper bound", "Num iter",
                                       "Feas check", "Infeas check"]

    def test_csv(self):
        text = format_results(sample_rows(), "csv", timings=False)
        lines = text.strip().split("\n")
        assert lines[0] == "\"w, %\",Nom. lower bound,Upper bound,Num iter,Feas check,Infeas check"
        assert lines[1] == "1,52.97,53.13,4,F,-"
        assert lines[2] == "50,52.97,LNF,--,-,NF"

    def test_markdown(self):
        text = format_results(sample_rows(), "md")
        lines = text.split("\n")
        assert len(lines) == 4
        assert "Nom. lower bound" in lines[0]
        assert set(lines[1]) <= set("|-: ")
        assert "LNF" in lines[3]

    def test_bad_format(self):
        with pytest.raises(ValueError):
            format_results(sample_rows(), "xlsx")

    def test_empty_table(self):
        assert format_results([], "csv", timings=False).strip() == \
            "\"w, %\",Nom. lower bound,Upper bound,Num iter,Feas check,Infeas check"

    def test_write_results(self, tmp_path):
        cfg = ExperimentConfig(case="case9", csv=str(tmp_path / "out" / "r.csv"),
                               markdown=str(tmp_path / "out" / "r.md"))
        paths = write_results(sample_rows(), cfg)
        assert [p.name for p in paths] == ["r.csv", "r.md"]
        assert "Time, s" not in paths[0].read_text()
        assert "Time, s" in paths[1].read_text()


def test_certificate_degree():
    assert certificate_degree(6) == 4
    assert certificate_degree(9) == 4
    assert certificate_degree(14) == 2


def test_empty_w_list():
    assert run_experiment(ExperimentConfig(case="case9", w=[])) == []


def test_rank_deficiency_is_flagged_np(case9, monkeypatch, caplog):
    def singular(*args, **kwargs):
        raise RankDeficientError("Equality Jacobian at the anchor has condition number inf")

    monkeypatch.setattr("src.experiment.dynamic_outer", singular)
    warm = OperatingPoint(np.zeros(case9.n_buses), np.zeros(2 * case9.n_buses))
    cfg = ExperimentConfig(case="case9", w=[0.1])
    with caplog.at_level("WARNING", logger="src.experiment"):
        row = run_row(case9, 0.1, cfg, warm, 52.97)
    assert row.flag == "NP"
    assert math.isnan(row.upper_bound)
    assert row.feas_verdict == "-"
    assert "rank-deficient" in caplog.text


@pytest.fixture(scope="module")
def prepared():
    """Network, injection matrices, nominal bound and warm start per case, built once."""
    cache = {}

    def get(case):
        if case not in cache:
            net = load_case(case)
            cache[case] = (net, build_injection_matrices(net), nominal_sdp_bound(net), squeeze_warm_start(net))
        return cache[case]
    return get


def published_row(prepared, case, w, **options):
    net, mats, nominal, warm = prepared(case)
    options.setdefault("feasibility", False)
    options.setdefault("infeasibility", False)
    cfg = ExperimentConfig(case=case, w=[w], **options)
    return run_row(net, w, cfg, warm, nominal, mats)


@pytest.fixture(scope="module")
def case9_certified(prepared):
    return published_row(prepared, "case9", 0.01, feasibility=True)


@pytest.mark.slow
class TestPublishedRows:

    def test_case9_small_uncertainty(self, case9_certified):
        assert case9_certified.flag == ""
        assert case9_certified.upper_bound == pytest.approx(53.13, rel=0.01)
        assert 1 <= case9_certified.iterations <= 3
        assert case9_certified.feas_verdict == "F"

    def test_case9_certified_dispatch_survives_sampling(self, prepared, case9_certified):
        net, mats, _, warm = prepared("case9")
        omega = build_load_ellipsoid(net.pd * net.base_mva, 0.01, False, net.n_buses)
        prob = build_aro(net, omega, mats)
        rng = np.random.default_rng(0)
        worst = math.inf
        for zeta in sample(omega, 10000, rng, boundary_fraction=0.5):
            x = newton_power_flow(net, case9_certified.y, zeta, warm_start=warm.x, prob=prob)
            point = prob.point(y=case9_certified.y, z=zeta, x=x)
            worst = min(worst, min(p.evaluate(point) for _, p in prob.robust_constraints()))
        assert worst >= -1e-6

    @pytest.mark.parametrize("w, upper", sorted(CASE9_UPPER.items()))
    def test_case9_upper_bounds(self, prepared, w, upper):
        row = published_row(prepared, "case9", w)
        assert row.flag == ""
        assert row.upper_bound == pytest.approx(upper, rel=0.01)

    @pytest.mark.parametrize("w, upper", sorted(CASE9_CORRELATED_UPPER.items()))
    def test_case9_correlated_upper_bounds(self, prepared, w, upper):
        row = published_row(prepared, "case9", w, correlated=True)
        assert row.flag == ""
        assert row.upper_bound == pytest.approx(upper, rel=0.01)

    def test_case14_small_uncertainty(self, prepared):
        row = published_row(prepared, "case14", 0.01)
        assert row.upper_bound == pytest.approx(81.20, rel=0.01)
        assert row.iterations <= 20

    @pytest.mark.parametrize("case, w", [
        ("case6ww", 0.1), ("case6ww", 0.2), ("case6ww", 0.5),
        ("case14", 0.5),
        ("case30", 0.05), ("case30", 0.1), ("case30", 0.5),
    ])
    def test_lower_bound_infeasible(self, prepared, case, w):
        row = published_row(prepared, case, w)
        assert row.flag == "LNF"
        assert math.isnan(row.upper_bound)

    @pytest.mark.parametrize("w, verdict", [(0.05, "NF"), (0.1, "IC")])
    def test_case14_infeasibility_verdicts(self, prepared, w, verdict):
        row = published_row(prepared, "case14", w, infeasibility=True)
        assert row.flag == ""
        assert row.infeas_verdict == verdict
