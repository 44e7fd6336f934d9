"""
Shared fixtures for the robust polynomial optimization tests.
"""
import os
import sys

# Make `src` and the root config importable without installing the package
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import pytest

from src.poly import VariableBlock, VariableSpace


@pytest.fixture
def yzx_space():
    """One control, one uncertainty and one state variable."""
    return VariableSpace([VariableBlock("y", 1, "control"),
                          VariableBlock("z", 1, "uncertainty"),
                          VariableBlock("x", 1, "state")])


@pytest.fixture(scope="session")
def case9():
    from src.matpower import load_case
    return load_case("case9")


@pytest.fixture(scope="session")
def case14():
    from src.matpower import load_case
    return load_case("case14")
