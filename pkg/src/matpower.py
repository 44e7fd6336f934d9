"""
MATPOWER Case Module

Reads and writes MATPOWER version 2 case files and turns them into a
PowerNetwork in per-unit. Loads, generation limits, shunts and branch
ratings are divided by baseMVA; generator cost coefficients keep their
original currency-per-MW units.

Cases resolve in this order: an explicit file path, the fixtures bundled
under src/data, then the published case functions shipped with pypower.
"""

import importlib
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pypower.idx_brch import BR_B, BR_R, BR_STATUS, BR_X, F_BUS, RATE_A, SHIFT, T_BUS, TAP
from pypower.idx_bus import BASE_KV, BS, BUS_I, BUS_TYPE, GS, NONE, PD, PQ, PV, QD, REF, VA, VM, VMAX, VMIN
from pypower.idx_cost import COST, MODEL, NCOST, POLYNOMIAL
from pypower.idx_gen import GEN_BUS, GEN_STATUS, PG, PMAX, PMIN, QG, QMAX, QMIN, VG

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"

SECTIONS = ("bus", "gen", "branch", "gencost")

BUS_TYPE_NAMES = {PQ: "PQ", PV: "PV", REF: "ref"}


class MatpowerParseError(ValueError):
    """Case text is missing a section or carries unsupported data."""


@dataclass(eq=False)
class PowerNetwork:
    """
    Per-unit network data with buses in file order (internal index k).

    Bus arrays have length n, generator arrays one entry per in-service
    generator, branch arrays one entry per in-service branch. cost rows are
    (c2, c1, c0) for the generation in MW.
    """
    name: str
    base_mva: float
    bus_ids: np.ndarray
    bus_types: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    vm: np.ndarray
    va: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    base_kv: np.ndarray
    gen_bus: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    vg: np.ndarray
    cost: np.ndarray
    branch_from: np.ndarray
    branch_to: np.ndarray
    r: np.ndarray
    x: np.ndarray
    b: np.ndarray
    rate_a: np.ndarray
    tap: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        validate_network(self)

    @property
    def n_buses(self) -> int:
        return int(self.bus_ids.size)

    @property
    def n_generators(self) -> int:
        return int(self.gen_bus.size)

    @property
    def n_branches(self) -> int:
        return int(self.branch_from.size)

    @property
    def reference(self) -> int:
        return int(np.flatnonzero(self.bus_types == REF)[0])

    @property
    def generator_of_bus(self) -> Dict[int, int]:
        return {int(k): g for g, k in enumerate(self.gen_bus)}

    @property
    def generator_buses(self) -> List[int]:
        """Buses carrying a generator, in bus order."""
        return sorted(int(k) for k in self.gen_bus)

    @property
    def pv_buses(self) -> List[int]:
        return [int(k) for k in np.flatnonzero(self.bus_types == PV)]

    @property
    def pq_buses(self) -> List[int]:
        return [int(k) for k in np.flatnonzero(self.bus_types == PQ)]

    def summary(self) -> str:
        return (f"{self.name}: {self.n_buses} buses, {self.n_generators} generators, "
                f"{self.n_branches} branches, baseMVA {self.base_mva:g}")


def validate_network(net: PowerNetwork) -> None:
    """
    Check the structural assumptions of the robust model.

    Raises:
    - MatpowerParseError when there is not exactly one reference bus, a
      generator sits on a PQ bus, a bus carries two generators or a branch
      has zero series impedance
    """
    n = net.bus_ids.size
    refs = np.flatnonzero(net.bus_types == REF)
    if refs.size != 1:
        raise MatpowerParseError(f"Expected exactly one reference bus, found {refs.size}")
    if np.any((net.gen_bus < 0) | (net.gen_bus >= n)):
        raise MatpowerParseError("Generator attached to an unknown bus")
    if np.unique(net.gen_bus).size != net.gen_bus.size:
        raise MatpowerParseError("More than one generator on a bus is not supported; combine them first")
    for k in net.gen_bus:
        if net.bus_types[k] == PQ:
            raise MatpowerParseError(f"Generator on PQ bus {net.bus_ids[k]}")
    if refs[0] not in set(net.gen_bus.tolist()):
        raise MatpowerParseError(f"Reference bus {net.bus_ids[refs[0]]} has no generator")
    if np.any(np.hypot(net.r, net.x) == 0):
        raise MatpowerParseError("Branch with zero series impedance")


# -- text format -------------------------------------------------------------------

def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%")[0] for line in text.splitlines())


def _str_to_array(block: str) -> np.ndarray:
    rows = []
    for row in re.split(r"[;\n]", block):
        tokens = row.replace(",", " ").split()
        if tokens:
            rows.append([float(tok) for tok in tokens])
    if not rows:
        return np.zeros((0, 0))
    width = max(len(r) for r in rows)
    return np.array([r + [0.0] * (width - len(r)) for r in rows])


def read_matrices(text: str) -> Dict[str, object]:
    """
    Raw MATPOWER matrices of a case file as a pypower-style dict.

    Raises:
    - MatpowerParseError on a missing or malformed section
    """
    body = _strip_comments(text)
    version = re.search(r"mpc\.version\s*=\s*'(\d+)'", body)
    if version and version.group(1) != "2":
        raise MatpowerParseError(f"Case format version {version.group(1)} is not supported")
    base = re.search(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)", body)
    if base is None:
        raise MatpowerParseError("Case text has no baseMVA")
    ppc: Dict[str, object] = {"version": "2", "baseMVA": float(base.group(1))}
    for section in SECTIONS:
        match = re.search(rf"mpc\.{section}\s*=\s*\[(.*?)\]", body, re.DOTALL)
        if match is None:
            raise MatpowerParseError(f"Case text has no '{section}' section")
        try:
            ppc[section] = _str_to_array(match.group(1))
        except ValueError as exc:
            raise MatpowerParseError(f"Malformed '{section}' section: {exc}") from exc
        if ppc[section].size == 0:
            raise MatpowerParseError(f"Section '{section}' is empty")
    if re.search(r"mpc\.(bus|gen|branch)\(", body):
        raise MatpowerParseError("Case files that modify matrices in place are not supported")
    return ppc


def _polynomial_costs(gencost: np.ndarray, n_gen: int) -> np.ndarray:
    if gencost.shape[0] < n_gen:
        raise MatpowerParseError(f"gencost has {gencost.shape[0]} rows for {n_gen} generators")
    cost = np.zeros((n_gen, 3))
    for g in range(n_gen):
        row = gencost[g]
        if int(row[MODEL]) != POLYNOMIAL:
            raise MatpowerParseError(f"Generator {g + 1}: only polynomial cost models are supported")
        ncost = int(row[NCOST])
        if not 1 <= ncost <= 3:
            raise MatpowerParseError(f"Generator {g + 1}: cost polynomial of degree {ncost - 1} is not supported")
        coeffs = row[COST:COST + ncost]
        cost[g, 3 - ncost:] = coeffs
    return cost


def network_from_ppc(ppc: Dict[str, object], name: str = "case") -> PowerNetwork:
    """
    Build a PowerNetwork from a pypower case dict (external MW units).

    Out-of-service generators and branches and isolated buses are dropped;
    a PV bus left without a generator is treated as PQ.
    """
    base = float(ppc["baseMVA"])
    bus = np.atleast_2d(np.asarray(ppc["bus"], dtype=float))
    gen = np.atleast_2d(np.asarray(ppc["gen"], dtype=float))
    branch = np.atleast_2d(np.asarray(ppc["branch"], dtype=float))
    gencost = np.atleast_2d(np.asarray(ppc["gencost"], dtype=float))

    cost = _polynomial_costs(gencost, gen.shape[0])
    gen_on = gen[:, GEN_STATUS] > 0
    gen, cost = gen[gen_on], cost[gen_on]
    if (~gen_on).any():
        logger.info("%s: dropped %d out-of-service generators", name, int((~gen_on).sum()))

    bus = bus[bus[:, BUS_TYPE] != NONE]
    position = {int(b): k for k, b in enumerate(bus[:, BUS_I])}
    br_on = (branch[:, BR_STATUS] > 0) & np.array(
        [int(f) in position and int(t) in position for f, t in branch[:, [F_BUS, T_BUS]]], dtype=bool)
    if (~br_on).any():
        logger.info("%s: dropped %d out-of-service branches", name, int((~br_on).sum()))
    branch = branch[br_on]

    try:
        gen_bus = np.array([position[int(b)] for b in gen[:, GEN_BUS]], dtype=int)
    except KeyError as exc:
        raise MatpowerParseError(f"Generator on unknown or isolated bus {exc.args[0]}") from exc
    types = bus[:, BUS_TYPE].astype(int)
    with_gen = set(gen_bus.tolist())
    for k in np.flatnonzero(types == PV):
        if k not in with_gen:
            logger.warning("%s: PV bus %d has no generator in service, treated as PQ", name, int(bus[k, BUS_I]))
            types[k] = PQ

    taps = branch[:, TAP].copy()
    taps[taps == 0] = 1.0
    return PowerNetwork(
        name=name,
        base_mva=base,
        bus_ids=bus[:, BUS_I].astype(int),
        bus_types=types,
        pd=bus[:, PD] / base,
        qd=bus[:, QD] / base,
        gs=bus[:, GS] / base,
        bs=bus[:, BS] / base,
        vm=bus[:, VM].copy(),
        va=bus[:, VA].copy(),
        vmin=bus[:, VMIN].copy(),
        vmax=bus[:, VMAX].copy(),
        base_kv=bus[:, BASE_KV].copy(),
        gen_bus=gen_bus,
        pg=gen[:, PG] / base,
        qg=gen[:, QG] / base,
        qmin=gen[:, QMIN] / base,
        qmax=gen[:, QMAX] / base,
        pmin=gen[:, PMIN] / base,
        pmax=gen[:, PMAX] / base,
        vg=gen[:, VG].copy(),
        cost=cost,
        branch_from=np.array([position[int(f)] for f in branch[:, F_BUS]], dtype=int),
        branch_to=np.array([position[int(t)] for t in branch[:, T_BUS]], dtype=int),
        r=branch[:, BR_R].copy(),
        x=branch[:, BR_X].copy(),
        b=branch[:, BR_B].copy(),
        rate_a=branch[:, RATE_A] / base,
        tap=taps,
        shift=branch[:, SHIFT].copy(),
    )


def parse_matpower(text: str, name: str = "case") -> PowerNetwork:
    """
    Parse MATPOWER case text into a per-unit PowerNetwork.

    Parameters:
    - text: content of a MATPOWER version 2 case file
    - name: case name used in messages

    Returns:
    - PowerNetwork

    Raises:
    - MatpowerParseError on missing sections or unsupported cost models
    """
    return network_from_ppc(read_matrices(text), name)


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _rows(matrix: List[List[float]]) -> str:
    return "\n".join("\t" + "\t".join(_fmt(v) for v in row) + ";" for row in matrix)


def serialize_matpower(net: PowerNetwork) -> str:
    """MATPOWER text of a network; parse_matpower reads it back unchanged."""
    base = net.base_mva
    bus_rows = [[net.bus_ids[k], net.bus_types[k], net.pd[k] * base, net.qd[k] * base,
                 net.gs[k] * base, net.bs[k] * base, 1, net.vm[k], net.va[k], net.base_kv[k], 1,
                 net.vmax[k], net.vmin[k]] for k in range(net.n_buses)]
    gen_rows = [[net.bus_ids[net.gen_bus[g]], net.pg[g] * base, net.qg[g] * base, net.qmax[g] * base,
                 net.qmin[g] * base, net.vg[g], base, 1, net.pmax[g] * base, net.pmin[g] * base]
                for g in range(net.n_generators)]
    branch_rows = [[net.bus_ids[net.branch_from[l]], net.bus_ids[net.branch_to[l]], net.r[l], net.x[l],
                    net.b[l], net.rate_a[l] * base, net.rate_a[l] * base, net.rate_a[l] * base,
                    0.0 if net.tap[l] == 1.0 else net.tap[l], net.shift[l], 1, -360, 360]
                   for l in range(net.n_branches)]
    cost_rows = [[POLYNOMIAL, 0, 0, 3, *net.cost[g]] for g in range(net.n_generators)]
    return "\n".join([
        f"function mpc = {net.name}",
        f"%{net.name.upper()}  Power flow data, written by robust-polyopt.",
        "",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(base)};",
        "",
        "%% bus data",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [", _rows(bus_rows), "];",
        "",
        "%% generator data",
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin",
        "mpc.gen = [", _rows(gen_rows), "];",
        "",
        "%% branch data",
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        "mpc.branch = [", _rows(branch_rows), "];",
        "",
        "%% generator cost data",
        "%\t2\tstartup\tshutdown\tn\tc(n-1)\t...\tc0",
        "mpc.gencost = [", _rows(cost_rows), "];",
        "",
    ])


# -- case lookup ------------------------------------------------------------------

def bundled_cases() -> List[str]:
    return sorted(p.stem for p in DATA_DIR.glob("*.m"))


def load_case(name_or_path: Union[str, Path]) -> PowerNetwork:
    """
    Load a case by file path, bundled fixture name or pypower case name.

    Parameters:
    - name_or_path: e.g. "case9", "data/mycase.m" or "case118"

    Returns:
    - PowerNetwork

    Raises:
    - MatpowerParseError when the case cannot be found or parsed
    """
    path = Path(name_or_path)
    if path.suffix == ".m" or path.is_file():
        if not path.is_file():
            raise MatpowerParseError(f"Case file not found: {path}")
        logger.info("Reading case file %s", path)
        return parse_matpower(path.read_text(), path.stem)

    name = str(name_or_path)
    bundled = DATA_DIR / f"{name}.m"
    if bundled.is_file():
        logger.debug("Using bundled case %s", bundled)
        return parse_matpower(bundled.read_text(), name)

    if not re.fullmatch(r"case\w+", name):
        raise MatpowerParseError(f"Unknown case '{name}'")
    try:
        module = importlib.import_module(f"pypower.{name}")
    except ImportError as exc:
        raise MatpowerParseError(f"Unknown case '{name}' (not bundled and not shipped with pypower)") from exc
    logger.debug("Using pypower case %s", name)
    return network_from_ppc(getattr(module, name)(), name)


def export_case(name: str, path: Optional[Union[str, Path]] = None) -> Path:
    """Write any loadable case as a MATPOWER fixture file and return its path."""
    net = load_case(name)
    target = Path(path) if path is not None else Path(f"{net.name}.m")
    if target.is_dir():
        target = target / f"{net.name}.m"
    target.write_text(serialize_matpower(net))
    logger.info("Wrote %s to %s", net.summary(), target)
    return target
