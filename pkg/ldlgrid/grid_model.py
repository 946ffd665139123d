"""
Static network description and the algebraic network layer.

Per-unit throughout on a 100 MVA base. Node numbering: the first n entries of any
voltage/injection vector are the buses in model order, followed by one transient node
per active mid-line fault (in the order the faults were applied).
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu, spsolve

from ldlgrid import formats
from ldlgrid.constants import (
    BASE_MVA,
    DEFAULT_FAULT_ADMITTANCE,
    BranchStatus,
)
from ldlgrid.errors import (
    ConfigurationError,
    InitializationError,
    NetworkSolveError,
    ScenarioError,
)
from ldlgrid.nputil import index_of


@dataclass
class Bus:
    id: int
    area: int = 1
    base_voltage: float = 230.0
    voltage: complex = 1.0 + 0.0j
    attached_device_ids: Tuple[str, ...] = ()
    shunt: complex = 0.0j

    def __post_init__(self):
        self.id = int(self.id)
        self.area = int(self.area)
        self.voltage = complex(self.voltage)
        self.shunt = complex(self.shunt)
        self.attached_device_ids = tuple(self.attached_device_ids)
        if self.area < 1:
            raise ConfigurationError(f"bus {self.id}: area must be >= 1, got {self.area}")


@dataclass
class Branch:
    id: int
    from_bus: int
    to_bus: int
    series_impedance: complex
    shunt_susceptance: float = 0.0
    status: BranchStatus = BranchStatus.in_service
    tap: float = 1.0

    def __post_init__(self):
        self.id = int(self.id)
        self.from_bus = int(self.from_bus)
        self.to_bus = int(self.to_bus)
        self.series_impedance = complex(self.series_impedance)
        self.shunt_susceptance = float(self.shunt_susceptance)
        self.tap = float(self.tap)
        if not isinstance(self.status, BranchStatus):
            self.status = BranchStatus.from_value(self.status)
        if self.from_bus == self.to_bus:
            raise ConfigurationError(f"branch {self.id} connects bus {self.from_bus} to itself")
        if self.status == BranchStatus.in_service and self.series_impedance == 0:
            raise ConfigurationError(f"branch {self.id} is in service with zero impedance")
        if self.tap <= 0:
            raise ConfigurationError(f"branch {self.id}: tap ratio must be positive")

    @property
    def in_service(self):
        return self.status == BranchStatus.in_service


@dataclass(frozen=True)
class FaultSpec:
    branch_id: int
    location_fraction: float = 0.5
    fault_admittance: complex = DEFAULT_FAULT_ADMITTANCE

    def __post_init__(self):
        if not 0.0 <= self.location_fraction <= 1.0:
            raise ScenarioError(
                f"fault location_fraction must be in [0, 1], got {self.location_fraction}"
            )
        if abs(self.fault_admittance) <= 0:
            raise ScenarioError("fault_admittance must be non-zero")

    @property
    def is_mid_line(self):
        return 0.0 < self.location_fraction < 1.0


@dataclass(frozen=True)
class GeneratorSpec:
    """Static machine data. h, xdp on the system base; damping and droop on the machine rating"""

    id: str
    bus: int
    p_mw: float
    v_set: float = 1.0
    h: float = 5.0
    xdp: float = 0.03
    rating_mw: float = 0.0
    damping: Optional[float] = None
    droop: Optional[float] = None
    governor_lag: Optional[float] = None

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigurationError(f"generator {self.id}: inertia must be positive")
        if self.xdp <= 0:
            raise ConfigurationError(f"generator {self.id}: transient reactance must be positive")


@dataclass(frozen=True)
class LoadSpec:
    id: str
    bus: int
    p_mw: float
    q_mvar: float = 0.0


@dataclass(frozen=True)
class NetworkModel:
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[GeneratorSpec, ...] = ()
    loads: Tuple[LoadSpec, ...] = ()
    faults: Tuple[FaultSpec, ...] = ()
    base_mva: float = BASE_MVA
    name: str = ""
    slack_bus: Optional[int] = None
    _bus_lookup: Dict[int, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        object.__setattr__(self, "faults", tuple(self.faults))
        lookup = {}
        for i, bus in enumerate(self.buses):
            if bus.id in lookup:
                raise ConfigurationError(f"duplicate bus id {bus.id}")
            lookup[bus.id] = i
        object.__setattr__(self, "_bus_lookup", lookup)

        errors = []
        branch_ids = set()
        for branch in self.branches:
            if branch.id in branch_ids:
                errors.append(f"duplicate branch id {branch.id}")
            branch_ids.add(branch.id)
            for end in (branch.from_bus, branch.to_bus):
                if end not in lookup:
                    errors.append(f"branch {branch.id} references missing bus {end}")
        for device in self.generators + self.loads:
            if device.bus not in lookup:
                errors.append(f"{device.id} references missing bus {device.bus}")
        if self.slack_bus is not None and self.slack_bus not in lookup:
            errors.append(f"slack bus {self.slack_bus} does not exist")
        if errors:
            raise ConfigurationError("; ".join(errors))

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def bus_ids(self):
        return np.array([bus.id for bus in self.buses], dtype=int)

    @property
    def areas(self):
        return np.array([bus.area for bus in self.buses], dtype=int)

    @property
    def n_nodes(self):
        return self.n_bus + sum(1 for f in self.faults if f.is_mid_line)

    def bus_index(self, bus_id):
        try:
            return self._bus_lookup[int(bus_id)]
        except KeyError:
            raise ConfigurationError(f"unknown bus id {bus_id}") from None

    def bus_indices(self, bus_ids):
        try:
            return index_of(np.asarray(bus_ids, dtype=int), self.bus_ids, what="bus id")
        except KeyError as e:
            raise ConfigurationError(str(e)) from None

    def branch(self, branch_id) -> Branch:
        for branch in self.branches:
            if branch.id == branch_id:
                return branch
        raise ScenarioError(f"unknown branch id {branch_id}")

    def fault_on(self, branch_id) -> Optional[FaultSpec]:
        for fault in self.faults:
            if fault.branch_id == branch_id:
                return fault
        return None

    def load_buses(self):
        """Sorted ids of buses carrying conventional load"""
        return sorted({load.bus for load in self.loads if load.p_mw > 0})


def _stamp(rows, cols, vals, i, j, ys, half_b, tap):
    rows += [i, j, i, j]
    cols += [i, j, j, i]
    vals += [(ys + half_b) / tap ** 2, ys + half_b, -ys / tap, -ys / tap]


def build_ybus(
    buses: Sequence[Bus],
    branches: Sequence[Branch],
    faults: Sequence[FaultSpec] = (),
) -> sp.csc_matrix:
    """
    Nodal admittance matrix.

    :param buses: ordered buses, defining rows 0..n-1
    :param branches: branches, open ones contribute nothing
    :param faults: active faults; a mid-line fault adds a transient node
    :return: sparse complex matrix of size n (+1 per mid-line fault)
    """
    lookup = {bus.id: i for i, bus in enumerate(buses)}
    n = len(buses)
    fault_by_branch = {}
    for fault in faults:
        if fault.branch_id in fault_by_branch:
            raise ScenarioError(f"branch {fault.branch_id} already has an active fault")
        fault_by_branch[fault.branch_id] = fault
    n_nodes = n + sum(1 for f in faults if f.is_mid_line)
    fault_node = {}
    next_node = n
    for fault in faults:
        if fault.is_mid_line:
            fault_node[fault.branch_id] = next_node
            next_node += 1

    rows, cols, vals = [], [], []
    for branch in branches:
        if branch.from_bus not in lookup or branch.to_bus not in lookup:
            raise ConfigurationError(
                f"branch {branch.id} has a dangling endpoint ({branch.from_bus}, {branch.to_bus})"
            )
        if not branch.in_service:
            continue
        i, j = lookup[branch.from_bus], lookup[branch.to_bus]
        z, b, tap = branch.series_impedance, branch.shunt_susceptance, branch.tap
        fault = fault_by_branch.get(branch.id)
        if fault is None or not fault.is_mid_line:
            _stamp(rows, cols, vals, i, j, 1.0 / z, 0.5j * b, tap)
            if fault is not None:
                k = i if fault.location_fraction == 0.0 else j
                rows.append(k)
                cols.append(k)
                vals.append(complex(fault.fault_admittance))
            continue
        f = fault.location_fraction
        k = fault_node[branch.id]
        _stamp(rows, cols, vals, i, k, 1.0 / (z * f), 0.5j * b * f, tap)
        _stamp(rows, cols, vals, k, j, 1.0 / (z * (1.0 - f)), 0.5j * b * (1.0 - f), 1.0)
        rows.append(k)
        cols.append(k)
        vals.append(complex(fault.fault_admittance))

    for i, bus in enumerate(buses):
        if bus.shunt != 0:
            rows.append(i)
            cols.append(i)
            vals.append(bus.shunt)

    for fault in faults:
        if fault.branch_id not in {b.id for b in branches}:
            raise ScenarioError(f"fault on unknown branch {fault.branch_id}")

    return sp.coo_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)), shape=(n_nodes, n_nodes)
    ).tocsc()


def model_ybus(model: NetworkModel) -> sp.csc_matrix:
    return build_ybus(model.buses, model.branches, model.faults)


def find_branch(model: NetworkModel, from_bus: int, to_bus: int) -> Branch:
    """First branch joining the two buses, in either direction"""
    pair = {int(from_bus), int(to_bus)}
    for branch in model.branches:
        if {branch.from_bus, branch.to_bus} == pair:
            return branch
    raise ScenarioError(f"no branch between buses {from_bus} and {to_bus}")


def apply_fault(model: NetworkModel, fault_spec: FaultSpec) -> NetworkModel:
    branch = model.branch(fault_spec.branch_id)
    if not branch.in_service:
        raise ScenarioError(f"cannot fault open branch {branch.id}")
    if model.fault_on(branch.id) is not None:
        raise ScenarioError(f"branch {branch.id} already has an active fault")
    return replace(model, faults=model.faults + (fault_spec,))


def clear_fault(model: NetworkModel, branch_id: int) -> NetworkModel:
    """Removes the fault on branch_id; returns the same object if there was none"""
    if model.fault_on(branch_id) is None:
        return model
    return replace(
        model, faults=tuple(f for f in model.faults if f.branch_id != branch_id)
    )


def switch_branch(
    model: NetworkModel, branch_id: int, new_status: BranchStatus
) -> NetworkModel:
    """
    Changes a branch status. Opening a branch drops any fault on it.
    Returns the same object when the branch already has new_status so callers can flag the no-op
    """
    new_status = BranchStatus.from_value(getattr(new_status, "value", new_status))
    branch = model.branch(branch_id)
    if branch.status == new_status:
        return model
    branches = tuple(
        replace(b, status=new_status) if b.id == branch_id else b for b in model.branches
    )
    faults = model.faults
    if new_status == BranchStatus.open:
        faults = tuple(f for f in faults if f.branch_id != branch_id)
    return replace(model, branches=branches, faults=faults)


def node_graph(model: NetworkModel) -> sp.csr_matrix:
    """Connectivity of in-service branches over all nodes (fault nodes included)"""
    y = model_ybus(model).tocoo()
    mask = (y.row != y.col) & (y.data != 0)
    return sp.csr_matrix(
        (np.ones(mask.sum()), (y.row[mask], y.col[mask])),
        shape=(model.n_nodes, model.n_nodes),
    )


def find_islands(model: NetworkModel, source_mask: np.ndarray) -> List[List[int]]:
    """
    Bus groups without any source.
    :param source_mask: bool per bus (length n_bus), True where a source or grounding shunt is attached
    :return: list of bus-id lists, one per source-less island
    """
    n_components, labels = connected_components(node_graph(model), directed=False)
    has_source = np.zeros(n_components, dtype=bool)
    source_mask = np.asarray(source_mask, dtype=bool)
    has_source[labels[: model.n_bus][source_mask]] = True
    # fault nodes ground their island
    has_source[labels[model.n_bus :]] = True
    islands = []
    bus_ids = model.bus_ids
    for c in np.flatnonzero(~has_source):
        islands.append(sorted(bus_ids[labels[: model.n_bus] == c].tolist()))
    return islands


def _pad(values, n_nodes):
    out = np.zeros(n_nodes, dtype=complex)
    values = np.asarray(values, dtype=complex)
    out[: values.size] = values
    return out


def _factorize(ybus, model, source_mask):
    try:
        lu = splu(ybus.tocsc())
    except RuntimeError:
        islands = find_islands(model, source_mask)
        message = "singular admittance matrix"
        if islands:
            message += "; source-less island(s): " + ", ".join(str(i) for i in islands)
        raise NetworkSolveError(message, islands=islands) from None
    return lu


def solve_network(
    model: NetworkModel,
    device_injections,
    device_admittance=None,
    tolerance: float = 1e-10,
) -> np.ndarray:
    """
    Linear network solve Y V = I.

    :param model: network including any active faults
    :param device_injections: Norton current injections per bus (or per node)
    :param device_admittance: internal-source/load admittances folded onto the diagonal, per bus
    :param tolerance: residual bound, infinity norm in pu
    :return: complex node voltages
    """
    n_nodes = model.n_nodes
    shunt = _pad(np.zeros(0) if device_admittance is None else device_admittance, n_nodes)
    ybus = model_ybus(model) + sp.diags(shunt, format="csc")
    source_mask = np.abs(shunt[: model.n_bus]) > 0
    lu = _factorize(ybus, model, source_mask)
    injections = _pad(device_injections, n_nodes)
    voltages = lu.solve(injections)
    residual = np.max(np.abs(ybus @ voltages - injections), initial=0.0)
    if not np.all(np.isfinite(voltages)) or residual >= tolerance:
        raise NetworkSolveError(
            f"network solve residual {residual:.3e} exceeds {tolerance:.1e}",
            islands=find_islands(model, source_mask),
        )
    return voltages


class NetworkSolver:
    """
    Factorized Y with device admittances folded in, reused until the next refactorization.

    The nonlinear part of device behavior (ZIP loads, current-limited inverters) is passed in
    as a callable I(V) and resolved by fixed-point iteration against the factorization.
    ybus includes the folded shunts, network_ybus is the passive network alone.
    last_injection holds I(V) at the voltages of the last converged solve.
    """

    def __init__(self, tolerance=1e-10, max_iterations=100):
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.model = None
        self.ybus = None
        self.network_ybus = None
        self.shunt = None
        self.last_injection = None
        self._lu = None
        self.n_factorizations = 0

    def factorize(self, model: NetworkModel, shunt_admittance, source_mask=None):
        n_nodes = model.n_nodes
        shunt = _pad(shunt_admittance, n_nodes)
        network = model_ybus(model)
        ybus = network + sp.diags(shunt, format="csc")
        if source_mask is None:
            source_mask = np.abs(shunt[: model.n_bus]) > 0
        self._lu = _factorize(ybus, model, source_mask)
        self.ybus = ybus.tocsr()
        self.network_ybus = network.tocsr()
        self.shunt = shunt
        self.model = model
        self.n_factorizations += 1

    @property
    def n_nodes(self):
        return self.model.n_nodes

    def solve(self, injection_fn, v_guess) -> Tuple[np.ndarray, float, int]:
        """
        :param injection_fn: maps node voltages to node current injections
        :param v_guess: starting node voltages
        :return: voltages, final residual, iterations used
        """
        v = _pad(v_guess, self.n_nodes)
        residual = np.inf
        # each iterate's injection is the right-hand side of the next solve
        injection = injection_fn(v)
        for iteration in range(1, self.max_iterations + 1):
            v = self._lu.solve(injection)
            if not np.all(np.isfinite(v)):
                break
            injection = injection_fn(v)
            residual = np.max(np.abs(self.ybus @ v - injection))
            if residual < self.tolerance:
                self.last_injection = injection
                return v, residual, iteration
        raise NetworkSolveError(
            f"network iteration did not converge (residual {residual:.3e} after {self.max_iterations} iterations)"
        )


@dataclass
class Dispatch:
    """
    Bus-level power flow specification, all in pu.

    load_z, load_i, load_p are the complex constant-impedance/current/power parts of bus
    load (S_load(V) = load_z |V|^2 + load_i |V| + load_p). fixed_injection holds sources with
    fixed P and Q (e.g. storage dispatched at a PQ bus).
    """

    slack_bus: int
    gen_p: Dict[int, float]
    v_set: Dict[int, float]
    load_z: np.ndarray
    load_i: np.ndarray
    load_p: np.ndarray
    fixed_injection: Optional[np.ndarray] = None


@dataclass
class PowerFlowSolution:
    voltages: np.ndarray
    source_injection: np.ndarray
    iterations: int
    mismatch: float


def dsbus_dv(ybus, v):
    """Partial derivatives of bus injections with respect to voltage magnitude and angle"""
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_ibus = sp.diags(ibus)
    diag_vnorm = sp.diags(v / np.abs(v))
    ds_dvm = diag_v @ (ybus @ diag_vnorm).conjugate() + diag_ibus.conjugate() @ diag_vnorm
    ds_dva = 1j * (diag_v @ (diag_ibus - ybus @ diag_v).conjugate())
    return ds_dvm, ds_dva


def _dc_angles(ybus, p_spec, slack, order):
    """Lossless estimate of bus angles used as the Newton starting point"""
    b = -ybus.imag.tocsr()
    keep = order[order != slack]
    theta = np.zeros(ybus.shape[0])
    if keep.size:
        theta[keep] = spsolve(b[keep][:, keep].tocsc(), p_spec[keep])
    return theta


def init_power_flow(
    model: NetworkModel,
    dispatch: Dispatch,
    tolerance: float = 1e-10,
    max_iterations: int = 30,
    logger=None,
) -> PowerFlowSolution:
    """
    Newton-Raphson power flow with voltage dependent (ZIP) loads.

    :return: converged bus voltages and the complex power supplied by the voltage-controlled
        sources at each bus (slack and PV buses; zero elsewhere)
    :raises InitializationError: when the mismatch is not below tolerance after max_iterations
    """
    if model.faults:
        raise InitializationError("power flow requires a network without active faults")
    n = model.n_bus
    ybus = model_ybus(model).tocsr()
    slack = model.bus_index(dispatch.slack_bus)
    pv = np.array(
        sorted(model.bus_index(b) for b in dispatch.v_set if model.bus_index(b) != slack),
        dtype=int,
    )
    pq = np.setdiff1d(np.arange(n), np.r_[pv, slack])
    pvpq = np.r_[pv, pq]

    s_gen = np.zeros(n, dtype=complex)
    for bus_id, p in dispatch.gen_p.items():
        s_gen[model.bus_index(bus_id)] += p
    fixed = np.zeros(n, dtype=complex) if dispatch.fixed_injection is None else dispatch.fixed_injection
    load_z, load_i, load_p = (np.asarray(x, dtype=complex) for x in (dispatch.load_z, dispatch.load_i, dispatch.load_p))

    vm = np.ones(n)
    for bus_id, v in dispatch.v_set.items():
        vm[model.bus_index(bus_id)] = v
    p_spec = (s_gen + fixed - load_z - load_i - load_p).real
    va = _dc_angles(ybus, p_spec, slack, np.arange(n))
    v = vm * np.exp(1j * va)

    def mismatch(v):
        vabs = np.abs(v)
        s_load = load_z * vabs ** 2 + load_i * vabs + load_p
        return v * np.conj(ybus @ v) - (s_gen + fixed - s_load), s_load

    mis, _ = mismatch(v)
    f = np.r_[mis[pvpq].real, mis[pq].imag]
    iteration = 0
    while np.max(np.abs(f), initial=0.0) >= tolerance and iteration < max_iterations:
        iteration += 1
        ds_dvm, ds_dva = dsbus_dv(ybus, v)
        ds_dvm = ds_dvm + sp.diags(2.0 * load_z * np.abs(v) + load_i)
        ds_dva = ds_dva.tocsr()
        ds_dvm = ds_dvm.tocsr()
        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        jac = sp.vstack([sp.hstack([j11, j12]), sp.hstack([j21, j22])], format="csc")
        dx = -spsolve(jac, f)
        va = np.angle(v)
        vm = np.abs(v)
        va[pvpq] += dx[: pvpq.size]
        vm[pq] += dx[pvpq.size :]
        v = vm * np.exp(1j * va)
        mis, _ = mismatch(v)
        f = np.r_[mis[pvpq].real, mis[pq].imag]
        if logger is not None:
            logger.debug(f"power flow iteration {iteration}: max mismatch {np.max(np.abs(f)):.3e}")

    worst = float(np.max(np.abs(f), initial=0.0))
    if worst >= tolerance or not np.all(np.isfinite(v)):
        raise InitializationError(
            f"power flow did not converge: mismatch {worst:.3e} after {iteration} iterations"
        )
    _, s_load = mismatch(v)
    source = v * np.conj(ybus @ v) + s_load - fixed
    source[pq] = 0.0
    return PowerFlowSolution(voltages=v, source_injection=source, iterations=iteration, mismatch=worst)


def _optional(value):
    return None if value is None or pd.isna(value) else float(value)


def load_network(network_path) -> NetworkModel:
    """Builds a NetworkModel from a network yaml file (see docs/network_schema.md)"""
    tables = formats.load_network_tables(network_path)
    base_mva = tables["base_mva"]
    buses = [
        Bus(
            id=row.id,
            area=row.area,
            base_voltage=row.base_kv,
            shunt=complex(row.g_shunt, row.b_shunt),
        )
        for row in tables["buses"].itertuples()
    ]
    branches = [
        Branch(
            id=row.id,
            from_bus=row.from_bus,
            to_bus=row.to_bus,
            series_impedance=complex(row.r, row.x),
            shunt_susceptance=row.b,
            tap=row.tap,
            status=row.status,
        )
        for row in tables["branches"].itertuples()
    ]
    generators = [
        GeneratorSpec(
            id=str(row.id),
            bus=int(row.bus),
            p_mw=float(row.p_mw),
            v_set=float(row.v_set),
            h=float(row.h),
            xdp=float(row.xdp),
            rating_mw=_optional(row.rating_mw) or 0.0,
            damping=_optional(row.damping),
            droop=_optional(row.droop),
            governor_lag=_optional(row.governor_lag),
        )
        for row in tables["generators"].itertuples()
    ]
    loads = [
        LoadSpec(id=str(row.id), bus=int(row.bus), p_mw=float(row.p_mw), q_mvar=float(row.q_mvar))
        for row in tables["loads"].itertuples()
    ]
    attached: Dict[int, List[str]] = {}
    for device in generators + loads:
        attached.setdefault(device.bus, []).append(device.id)
    buses = [replace(b, attached_device_ids=tuple(attached.get(b.id, ()))) for b in buses]
    return NetworkModel(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        loads=tuple(loads),
        base_mva=base_mva,
        name=tables["name"],
        slack_bus=tables["slack_bus"],
    )
