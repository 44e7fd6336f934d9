"""
Tests for MATPOWER case parsing, serialization and case lookup.
"""
import numpy as np
import pytest

from src.matpower import (
    MatpowerParseError,
    bundled_cases,
    export_case,
    load_case,
    parse_matpower,
    read_matrices,
    serialize_matpower,
)

TWO_BUS = """function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	10	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.1	0	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.11	5	150;
];
"""


def test_case9_shape(case9):
    assert case9.n_buses == 9
    assert case9.n_generators == 3
    assert case9.n_branches == 9
    assert case9.base_mva == 100
    assert case9.reference == 0
    assert case9.pv_buses == [1, 2]
    np.testing.assert_allclose(case9.pd[[4, 6, 8]] * 100, [90, 100, 125])
    np.testing.assert_allclose(case9.cost[0], [0.11, 5, 150])


def test_case14_load_buses(case14):
    assert case14.n_buses == 14
    assert case14.n_generators == 5
    assert int(np.count_nonzero(case14.pd > 0)) == 11


def test_two_bus_text():
    net = parse_matpower(TWO_BUS, "twobus")
    assert net.n_buses == 2
    assert net.pd[1] == pytest.approx(0.5)
    assert net.qd[1] == pytest.approx(0.1)
    assert net.tap[0] == 1.0
    assert net.rate_a[0] == 0.0
    assert net.generator_of_bus == {0: 0}


def test_linear_cost_is_padded():
    text = TWO_BUS.replace("2	0	0	3	0.11	5	150;", "2	0	0	2	7	3;")
    net = parse_matpower(text)
    np.testing.assert_allclose(net.cost[0], [0.0, 7.0, 3.0])


class TestParseErrors:

    def test_missing_section(self):
        text = TWO_BUS.split("mpc.gencost")[0]
        with pytest.raises(MatpowerParseError, match="gencost"):
            parse_matpower(text)

    def test_missing_base(self):
        with pytest.raises(MatpowerParseError, match="baseMVA"):
            read_matrices(TWO_BUS.replace("mpc.baseMVA = 100;", ""))

    def test_old_version(self):
        with pytest.raises(MatpowerParseError, match="version"):
            read_matrices(TWO_BUS.replace("'2'", "'1'"))

    def test_piecewise_cost(self):
        text = TWO_BUS.replace("2	0	0	3	0.11	5	150;", "1	0	0	2	0	0	100	2000;")
        with pytest.raises(MatpowerParseError, match="polynomial"):
            parse_matpower(text)

    def test_malformed_number(self):
        with pytest.raises(MatpowerParseError):
            parse_matpower(TWO_BUS.replace("0.01", "0.0x1"))

    def test_two_generators_on_a_bus(self):
        text = TWO_BUS.replace("	1	0	0	100	-100	1	100	1	200	0;",
                               "	1	0	0	100	-100	1	100	1	200	0;\n"
                               "	1	0	0	100	-100	1	100	1	200	0;")
        text = text.replace("2	0	0	3	0.11	5	150;", "2	0	0	3	0.11	5	150;\n	2	0	0	3	0.11	5	150;")
        with pytest.raises(MatpowerParseError, match="More than one generator"):
            parse_matpower(text)

    def test_no_reference_bus(self):
        text = TWO_BUS.replace("	1	3	0	0", "	1	2	0	0")
        with pytest.raises(MatpowerParseError, match="reference"):
            parse_matpower(text)


def test_out_of_service_branch_is_dropped():
    text = TWO_BUS.replace("];\nmpc.gencost",
                           "	1	2	0.02	0.2	0	0	0	0	0	0	0	-360	360;\n];\nmpc.gencost")
    net = parse_matpower(text)
    assert net.n_branches == 1


def test_round_trip(case9):
    again = parse_matpower(serialize_matpower(case9), "case9")
    for field in ("bus_ids", "bus_types", "pd", "qd", "vmin", "vmax", "gen_bus", "pmin", "pmax",
                  "qmin", "qmax", "cost", "branch_from", "branch_to", "r", "x", "b", "rate_a", "tap"):
        np.testing.assert_allclose(getattr(again, field), getattr(case9, field), err_msg=field)


def test_bundled_cases():
    assert {"case9", "case14"} <= set(bundled_cases())


def test_unknown_case():
    with pytest.raises(MatpowerParseError):
        load_case("case_that_does_not_exist")
    with pytest.raises(MatpowerParseError):
        load_case("missing/file.m")


def test_pypower_fallback():
    net = load_case("case30")
    assert net.n_buses == 30
    assert net.n_generators == 6


def test_export_case(tmp_path):
    path = export_case("case9", tmp_path)
    assert path == tmp_path / "case9.m"
    assert load_case(path).n_buses == 9
