"""
The simulation loop.

Each step k -> k+1:
  1. integrate every device against the network voltages frozen at t_k (RK4 or trapezoidal)
  2. solve the network at t_{k+1}
  3. update measurements, evaluate relays, UFLS and (at its period) the consensus layer
  4. apply scheduled and relay events due at step k+1 in (time, kind priority, device id)
     order, refactorizing and re-solving the network when topology or device status changed
  5. record the step when it falls on the output interval
"""
import copy
import logging
import time as wall_clock
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from ldlgrid import metrics, simlogging
from ldlgrid.constants import (
    F_NOM,
    BranchStatus,
    DeviceClass,
    EventKind,
    Integrator,
    RunStatus,
    TripCause,
)
from ldlgrid.coordination import (
    ConsensusGains,
    ConsensusMeasurements,
    ConsensusState,
    SafetyLimits,
    SupportSettings,
    SupportState,
    build_comm_graph,
    consensus_enabled,
    consensus_update,
    coordination_mode,
    local_support,
    safety_enabled,
    safety_filter,
)
from ldlgrid.devices import (
    GeneratorState,
    GfmInverterState,
    ZipLoad,
    build_generator_state,
    build_gfm_state,
    electrical_power,
    generator_derivatives,
    generator_emf,
    gfm_derivatives,
    gfm_speed,
    gfm_terminal_current,
    sample_profile,
    zip_injection,
)
from ldlgrid.errors import (
    ConfigurationError,
    InitializationError,
    NetworkSolveError,
    ScenarioError,
    SimulationAbort,
)
from ldlgrid.events import Event, EventQueue
from ldlgrid.grid_model import (
    Dispatch,
    NetworkSolver,
    apply_fault,
    clear_fault,
    init_power_flow,
    switch_branch,
)
from ldlgrid.nputil import scatter_add
from ldlgrid.progress_tracker import SimulationProgress
from ldlgrid.protection import (
    BusFrequencyEstimator,
    MovingAverage,
    RelayBank,
    UflsScheme,
    apply_shed,
    trip_device,
    ufls_step,
)
from ldlgrid.results import SimulationResult
from ldlgrid.scenario_io import (
    ScenarioConfig,
    SweepCell,
    build_events,
    build_profile,
    fault_from_event,
    protection_curves,
    resolve_deployment,
    serialize_scenario,
)
from ldlgrid.utils import stable_hash

NETWORK_EVENTS = (EventKind.apply_fault, EventKind.clear_fault, EventKind.switch_branch)


@dataclass(frozen=True)
class SolverSettings:
    step: float = 1e-3
    horizon: float = 40.0
    integrator: Integrator = Integrator.rk4
    event_tolerance: float = 1e-3
    output_interval: float = 0.01
    network_tolerance: float = 1e-10
    max_network_iterations: int = 100
    power_flow_tolerance: float = 1e-10
    max_power_flow_iterations: int = 30
    frequency_filter_tau: float = 0.05
    divergence_limit: float = 1e6
    trapezoidal_tolerance: float = 1e-12
    trapezoidal_max_iterations: int = 20
    stage_network_solve: bool = False

    def __post_init__(self):
        if not isinstance(self.integrator, Integrator):
            object.__setattr__(self, "integrator", Integrator.from_value(self.integrator))
        if self.step <= 0:
            raise ConfigurationError("solver step must be positive")
        if self.step > self.event_tolerance + 1e-15:
            raise ConfigurationError(
                f"solver step {self.step} exceeds event_tolerance {self.event_tolerance}"
            )
        if self.horizon <= 0:
            raise ConfigurationError("solver horizon must be positive")

    @classmethod
    def from_config(cls, solver: Dict):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in solver.items() if k in known})

    @property
    def n_steps(self):
        return int(round(self.horizon / self.step))

    @property
    def output_every(self):
        return max(1, int(round(self.output_interval / self.step)))


def _with(state, **arrays):
    """Shallow copy of a device bank with some fields replaced, skipping validation"""
    new = copy.copy(state)
    new.__dict__.update(arrays)
    return new


class DeviceSet:
    """The three device banks plus an id index used by trips"""

    def __init__(self, generators: GeneratorState, inverters: GfmInverterState, loads: ZipLoad):
        self.generators = generators
        self.inverters = inverters
        self.loads = loads
        self._index = {}
        for i, device_id in enumerate(generators.ids):
            self._index[device_id] = (DeviceClass.generator, generators, i)
        for i, device_id in enumerate(inverters.ids):
            self._index[device_id] = (DeviceClass.gfm, inverters, i)
        for i, device_id in enumerate(loads.ids):
            kind = DeviceClass.ldl if loads.is_ldl[i] else DeviceClass.load
            self._index[device_id] = (kind, loads, i)

    def locate(self, device_id):
        try:
            return self._index[device_id]
        except KeyError:
            raise ScenarioError(f"unknown device {device_id}") from None

    def __contains__(self, device_id):
        return device_id in self._index

    def device_class(self, device_id) -> DeviceClass:
        return self.locate(device_id)[0]

    def is_tripped(self, device_id):
        _, bank, i = self.locate(device_id)
        return bool(bank.tripped[i])

    def set_tripped(self, device_id):
        _, bank, i = self.locate(device_id)
        bank.tripped[i] = True


class Simulation:
    """One scenario run. Construction initializes the operating point; run() steps it."""

    def __init__(self, config: ScenarioConfig, logger: logging.Logger = None):
        self.config = config
        self.logger = logger if logger is not None else simlogging.get_logger()
        self.settings = SolverSettings.from_config(config.solver)
        self.model = config.load_model()
        self.base = self.model.base_mva
        self.mode = coordination_mode(config.coordination)
        self.plan = resolve_deployment(config, self.model)
        self.t = 0.0
        self.events: List[Event] = []
        self.max_power_mismatch = 0.0
        self.max_network_residual = 0.0
        self.solver = NetworkSolver(
            self.settings.network_tolerance, self.settings.max_network_iterations
        )
        self._build_loads()
        self._initialize()
        self._build_protection()
        self._build_coordination()
        self.queue = EventQueue(build_events(config, self.model), self.settings.step)

    # ---- construction ----

    def _build_loads(self):
        dev = self.config.devices
        horizon = self.settings.horizon
        conventional = [l for l in self.model.loads if l.p_mw != 0 or l.q_mvar != 0]
        ids = [l.id for l in conventional]
        buses = [l.bus for l in conventional]
        p0 = [l.p_mw / self.base for l in conventional]
        q0 = [l.q_mvar / self.base for l in conventional]
        zip_p = [dev["load_zip"]["p"]] * len(conventional)
        zip_q = [dev["load_zip"]["q"]] * len(conventional)
        profiles = [None] * len(conventional)
        q_profiles = [None] * len(conventional)
        for i, ldl in enumerate(self.config.ldl):
            p_profile, q_profile = build_profile(ldl, horizon, self.config.seed, i)
            ids.append(ldl.device_id)
            buses.append(ldl.bus)
            p0.append(sample_profile(p_profile, 0.0))
            q0.append(0.0 if q_profile is None else sample_profile(q_profile, 0.0))
            coeffs = ldl.zip or {}
            zip_p.append(coeffs.get("p", dev["ldl_zip"]["p"]))
            zip_q.append(coeffs.get("q", dev["ldl_zip"]["q"]))
            profiles.append(p_profile)
            q_profiles.append(q_profile)
        n_conventional = len(conventional)
        self.loads = ZipLoad(
            ids=ids,
            bus_index=self.model.bus_indices(buses) if buses else [],
            p0=p0,
            q0=q0,
            zip_p=np.asarray(zip_p, dtype=float).reshape(len(ids), 3),
            zip_q=np.asarray(zip_q, dtype=float).reshape(len(ids), 3),
            profiles=profiles,
            q_profiles=q_profiles,
            is_ldl=[i >= n_conventional for i in range(len(ids))],
            v_floor=float(dev["zip_floor"]),
        )
        self.load_buses = np.asarray(buses, dtype=int)

    def _dispatch(self, nominal):
        """Power flow specification with LDL start-up demand covered pro rata by the generators"""
        n = self.model.n_bus
        load_z = np.zeros(n, dtype=complex)
        load_i = np.zeros(n, dtype=complex)
        load_p = np.zeros(n, dtype=complex)
        zp, zq = self.loads.zip_p, self.loads.zip_q
        idx = self.loads.bus_index
        for k, target in enumerate((load_z, load_i, load_p)):
            np.add.at(target, idx, nominal.real * zp[:, k] + 1j * nominal.imag * zq[:, k])

        gens = self.model.generators
        gen_p = np.array([g.p_mw for g in gens], dtype=float) / self.base
        ratings = self.generator_ratings
        ldl_demand = float(nominal.real[self.loads.is_ldl].sum())
        if ldl_demand > 0 and gen_p.sum() > 0:
            gen_p = np.minimum(gen_p * (1.0 + ldl_demand / gen_p.sum()), ratings)
        self.gen_p0 = gen_p

        slack = self.model.slack_bus
        if slack is None:
            if gens:
                slack = gens[0].bus
            elif len(self.plan):
                slack = self.plan.buses[0]
            else:
                raise InitializationError("the network has no generator and no storage to act as slack")
        p_by_bus, v_set = {}, {}
        for g, p in zip(gens, gen_p):
            p_by_bus[g.bus] = p_by_bus.get(g.bus, 0.0) + p
            v_set[g.bus] = g.v_set
        v_set.setdefault(slack, 1.0)
        return Dispatch(
            slack_bus=slack,
            gen_p=p_by_bus,
            v_set=v_set,
            load_z=load_z,
            load_i=load_i,
            load_p=load_p,
        )

    @property
    def generator_ratings(self):
        return np.array(
            [(g.rating_mw if g.rating_mw and g.rating_mw > 0 else 1.3 * g.p_mw) for g in self.model.generators],
            dtype=float,
        ) / self.base

    def _initialize(self):
        s = self.settings
        nominal = self.loads.nominal_power(0.0)
        dispatch = self._dispatch(nominal)
        pf = init_power_flow(
            self.model, dispatch, s.power_flow_tolerance, s.max_power_flow_iterations, self.logger
        )
        self.logger.info(
            f"Initial power flow converged in {pf.iterations} iterations (mismatch {pf.mismatch:.2e} pu)"
        )
        self.power_flow = pf
        v = pf.voltages
        dev = self.config.devices

        gens = self.model.generators
        gen_bus = np.array([g.bus for g in gens], dtype=int)
        gen_idx = self.model.bus_indices(gen_bus) if gens else np.zeros(0, dtype=int)
        gen_s = np.zeros(len(gens), dtype=complex)
        for bus in set(gen_bus.tolist()):
            members = np.flatnonzero(gen_bus == bus)
            weights = self.gen_p0[members]
            weights = weights / weights.sum() if weights.sum() > 0 else np.full(members.size, 1.0 / members.size)
            gen_s[members] = pf.source_injection[self.model.bus_index(bus)] * weights
        ratings = self.generator_ratings
        defaults = dev["generator"]

        def param(name):
            return np.array(
                [getattr(g, name) if getattr(g, name) is not None else defaults[name] for g in gens],
                dtype=float,
            )

        self.generators = build_generator_state(
            ids=[g.id for g in gens],
            bus_index=gen_idx,
            terminal_voltage=v[gen_idx],
            power=gen_s,
            inertia=[g.h for g in gens],
            damping=param("damping") * ratings,
            transient_reactance=[g.xdp for g in gens],
            droop=param("droop") / np.maximum(ratings, 1e-12),
            governor_lag=param("governor_lag"),
            p_max=ratings,
        )

        gfm = dev["gfm"]
        storage_buses = self.plan.buses
        storage_idx = self.model.bus_indices(storage_buses) if storage_buses else np.zeros(0, dtype=int)
        storage_s = np.zeros(len(storage_buses), dtype=complex)
        gen_buses = set(gen_bus.tolist())
        for i, bus in enumerate(storage_buses):
            if bus == dispatch.slack_bus and bus not in gen_buses:
                storage_s[i] = pf.source_injection[self.model.bus_index(bus)]
        self.inverters = build_gfm_state(
            ids=[f"GFM{b}" for b in storage_buses],
            bus_index=storage_idx,
            terminal_voltage=v[storage_idx],
            power=storage_s,
            rating=self.plan.ratings if len(self.plan) else np.zeros(0),
            m_p=gfm["m_p"],
            m_q=gfm["m_q"],
            coupling_reactance=gfm["x_c"],
            tau_f=gfm["tau_f"],
            overload_cap=gfm["overload_cap"],
            capacity=gfm["capacity_pu_h"],
            initial_soc=gfm["initial_soc"],
        )
        self.devices = DeviceSet(self.generators, self.inverters, self.loads)
        self.voltage_ref = np.abs(v[storage_idx])
        self._p_cmd = self.inverters.p_set.copy()
        self._q_cmd = self.inverters.q_set.copy()
        self._depleted = np.zeros(self.inverters.size, dtype=bool)

        self.v = v.astype(complex)
        self._nominal = nominal
        self._refactor()
        self._solve()
        drift = float(np.max(np.abs(self.v[: self.model.n_bus] - v), initial=0.0))
        self.logger.debug(f"Network solve reproduces the power flow within {drift:.2e} pu")
        self.equilibrium_residual = float(np.max(np.abs(self._derivative(self._pack())), initial=0.0))
        if self.equilibrium_residual > 1e-6:
            self.logger.warning(
                f"Initial state is not an equilibrium: max derivative {self.equilibrium_residual:.2e}"
            )

    def _build_protection(self):
        prot = self.config.protection
        self.protection_enabled = bool(prot.get("enabled", True))
        curves = protection_curves(prot)
        loads = self.loads
        self.ldl_rows = np.flatnonzero(loads.is_ldl)
        self.relays = {
            "ldl_voltage": RelayBank(curves["ldl_voltage"], loads.ids[self.ldl_rows]),
            "gfm_voltage": RelayBank(curves["gfm_voltage"], self.inverters.ids),
            "gfm_frequency": RelayBank(curves["gfm_frequency"], self.inverters.ids),
            "generator_voltage": RelayBank(curves["generator_voltage"], self.generators.ids),
            "generator_frequency": RelayBank(curves["generator_frequency"], self.generators.ids),
        }
        ufls = prot["ufls"]
        include_ldl = bool(ufls.get("include_ldl", False))
        shed_rows = np.flatnonzero(~loads.is_ldl | include_ldl)
        ufls_buses = sorted({int(b) for b in self.load_buses[shed_rows]}) if shed_rows.size else []
        self.ufls_rows = shed_rows
        self.ufls = UflsScheme(
            stages=tuple(tuple(s) for s in ufls["stages"]), bus_ids=ufls_buses, include_ldl=include_ldl
        )
        self.ufls_bus_index = self.model.bus_indices(ufls_buses) if ufls_buses else np.zeros(0, dtype=int)

        n_bus = self.model.n_bus
        vb = self.v[:n_bus]
        window = float(prot["measurement_window"])
        self.v_meter = MovingAverage(np.abs(vb), window, self.settings.step)
        self.freq_estimator = BusFrequencyEstimator(vb, self.settings.step, self.settings.frequency_filter_tau)
        self.f_meter = MovingAverage(np.full(n_bus, F_NOM), window, self.settings.step)

    def _build_coordination(self):
        coord = self.config.coordination
        self.safety_limits = SafetyLimits.from_config(coord["safety"])
        self.update_period = float(coord["update_period"])
        self.consensus = ConsensusState.zeros(
            self.inverters.size, ConsensusGains.from_config(coord["gains"]), float(coord["saturation"])
        )
        graph = coord["graph"]
        self.graph = build_comm_graph(
            graph.get("topology", "electrical"),
            self.inverters.ids,
            self.plan.buses,
            model=self.model,
            edges=graph.get("edges") or [],
            update_period=self.update_period,
            latency=float(coord["latency"]),
        )
        self.use_safety = safety_enabled(self.mode) and self.inverters.size > 0
        self.support = SupportState.zeros(self.inverters.size, SupportSettings.from_config(coord.get("support")))
        self.use_support = self.use_safety and self.support.settings.enabled
        ldl_bus = self.loads.bus_index[self.ldl_rows]
        self._support_map = (self.inverters.bus_index[:, None] == ldl_bus[None, :]).astype(float)
        self.use_consensus = consensus_enabled(self.mode, self.update_period) and self.inverters.size > 0
        self.consensus_every = (
            max(1, int(round(self.update_period / self.settings.step))) if self.use_consensus else 0
        )
        self._graph_components = self.graph.n_components()
        if self.use_consensus and self._graph_components > 1:
            self.logger.warning(
                f"Storage communication graph has {self._graph_components} disconnected parts"
            )

    # ---- network ----

    def _shunt_admittance(self):
        n_bus = self.model.n_bus
        g, c, loads = self.generators, self.inverters, self.loads
        on = ~g.tripped
        y = scatter_add(g.bus_index[on], 1.0 / (1j * g.transient_reactance[on]), n_bus)
        on = ~c.tripped
        y = y + scatter_add(c.bus_index[on], 1.0 / (1j * c.coupling_reactance[on]), n_bus)
        vb = self.v[:n_bus][loads.bus_index]
        current = zip_injection(loads, vb, self.t, nominal=self._nominal)
        y_load = np.divide(current, vb, out=np.zeros(loads.size, dtype=complex), where=np.abs(vb) > 1e-9)
        y_load = np.where(loads.tripped, 0.0, y_load)
        self._load_y = y_load
        return y + scatter_add(loads.bus_index, y_load, n_bus)

    def _refactor(self):
        shunt = self._shunt_admittance()
        source = np.zeros(self.model.n_bus, dtype=bool)
        source[self.generators.bus_index[~self.generators.tripped]] = True
        source[self.inverters.bus_index[~self.inverters.tripped]] = True
        self.solver.factorize(self.model, shunt, source_mask=source)
        self._shunt = self.solver.shunt

    def _injection(self, v, generators=None, inverters=None):
        n_bus = self.model.n_bus
        vb = v[:n_bus]
        g = self.generators if generators is None else generators
        c = self.inverters if inverters is None else inverters
        loads = self.loads
        on = ~g.tripped
        current = scatter_add(
            g.bus_index[on], generator_emf(g)[on] / (1j * g.transient_reactance[on]), v.size
        )
        if c.size:
            vc = vb[c.bus_index]
            i_out = gfm_terminal_current(c, vc, q_set=self._q_cmd)
            norton = np.where(c.tripped, 0.0, i_out + vc / (1j * c.coupling_reactance))
            current = current + scatter_add(c.bus_index, norton, v.size)
        vl = vb[loads.bus_index]
        drawn = zip_injection(loads, vl, self.t, nominal=self._nominal)
        load_current = np.where(loads.tripped, 0.0, self._load_y * vl - drawn)
        return current + scatter_add(loads.bus_index, load_current, v.size)

    def _solve(self):
        guess = self.v[: self.model.n_bus]
        v, residual, _ = self.solver.solve(self._injection, guess)
        self.v = v
        self.max_network_residual = max(self.max_network_residual, float(residual))
        injection = self.solver.last_injection
        device_power = np.sum(v * np.conj(injection - self._shunt * v))
        network_power = np.sum(v * np.conj(self.solver.network_ybus @ v))
        self.max_power_mismatch = max(self.max_power_mismatch, float(abs(device_power - network_power)))

    # ---- dynamics ----

    def _pack(self):
        g, c = self.generators, self.inverters
        return np.concatenate(
            [g.delta, g.omega, g.governor_output, c.theta, c.filtered_p, c.filtered_q, c.energy]
        )

    def _split(self, x):
        ng, nc = self.generators.size, self.inverters.size
        cuts = np.cumsum([ng, ng, ng, nc, nc, nc])
        return np.split(x, cuts)

    def _banks(self, x):
        delta, omega, gov, theta, pf, qf, energy = self._split(x)
        g = _with(self.generators, delta=delta, omega=omega, governor_output=gov)
        c = _with(self.inverters, theta=theta, filtered_p=pf, filtered_q=qf, energy=energy)
        return g, c

    def _stage_voltage(self, x):
        """Network voltages for an intermediate state, against the factorization of this step"""
        if not self.settings.stage_network_solve:
            return self.v
        g, c = self._banks(x)
        v, _, _ = self.solver.solve(lambda u: self._injection(u, g, c), self.v)
        return v

    def _derivative(self, x, v=None):
        v = self.v if v is None else v
        g, c = self._banks(x)
        d_delta, d_omega, d_gov = generator_derivatives(g, v[g.bus_index])
        vc = v[c.bus_index]
        s = vc * np.conj(gfm_terminal_current(c, vc, q_set=self._q_cmd))
        d_inverter = gfm_derivatives(c, vc, s.real, s.imag, p_set=self._p_cmd)
        return np.concatenate([d_delta, d_omega, d_gov, *d_inverter])

    def _integrate(self, x):
        dt = self.settings.step
        v = self.v
        if self.settings.integrator == Integrator.rk4:
            k1 = self._derivative(x, v)
            x2 = x + 0.5 * dt * k1
            k2 = self._derivative(x2, self._stage_voltage(x2))
            x3 = x + 0.5 * dt * k2
            k3 = self._derivative(x3, self._stage_voltage(x3))
            x4 = x + dt * k3
            k4 = self._derivative(x4, self._stage_voltage(x4))
            return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        f0 = self._derivative(x, v)
        y = x + dt * f0
        for _ in range(self.settings.trapezoidal_max_iterations):
            y_new = x + 0.5 * dt * (f0 + self._derivative(y, self._stage_voltage(y)))
            converged = np.max(np.abs(y_new - y), initial=0.0) < self.settings.trapezoidal_tolerance
            y = y_new
            if converged:
                break
        return y

    def _commit(self, x):
        delta, omega, gov, theta, pf, qf, energy = self._split(x)
        g, c = self.generators, self.inverters
        g.delta, g.omega, g.governor_output = delta.copy(), omega.copy(), gov.copy()
        c.theta, c.filtered_p, c.filtered_q = theta.copy(), pf.copy(), qf.copy()
        c.energy = np.clip(energy, 0.0, c.capacity)

    def _update_commands(self, v_meas, f_meas):
        c = self.inverters
        p_cmd, q_cmd = c.p_set, c.q_set
        if self.use_safety:
            p_cmd, q_cmd = safety_filter(
                v_meas, f_meas, self.safety_limits, (c.p_set, c.q_set), c.rating
            )
        if self.use_support:
            demand = self._support_map @ self._nominal.real[self.ldl_rows]
            p_cmd = local_support(self.support, p_cmd, f_meas, demand, self.settings.step, c.rating)
        depleted = (c.energy <= 0.0) & ~c.tripped
        for i in np.flatnonzero(depleted & ~self._depleted):
            self.logger.warning(f"{c.ids[i]} has depleted its stored energy at t = {self.t:.3f} s")
        self._depleted |= depleted
        self._p_cmd = np.where(self._depleted, np.minimum(p_cmd, 0.0), p_cmd)
        self._q_cmd = np.asarray(q_cmd, dtype=float)

    # ---- protection, coordination, events ----

    def _relay_requests(self, v_avg, f_avg):
        if not self.protection_enabled:
            return []
        t, dt = self.t, self.settings.step
        g, c, loads = self.generators, self.inverters, self.loads
        requests = []
        rows = self.ldl_rows
        checks = (
            ("ldl_voltage", v_avg[loads.bus_index[rows]], ~loads.tripped[rows]),
            ("gfm_voltage", v_avg[c.bus_index], ~c.tripped),
            ("gfm_frequency", f_avg[c.bus_index], ~c.tripped),
            ("generator_voltage", v_avg[g.bus_index], ~g.tripped),
            ("generator_frequency", g.omega * F_NOM, ~g.tripped),
        )
        for name, measurement, active in checks:
            for device_id, cause in self.relays[name].step(measurement, dt, t, active):
                requests.append(
                    Event(t, EventKind.relay_trip, device_id, {"cause": cause.value, "relay": name})
                )
        return requests

    def _ufls_requests(self, f_avg):
        if not self.protection_enabled or self.ufls.bus_ids.size == 0:
            return []
        commands = ufls_step(self.ufls, f_avg[self.ufls_bus_index], self.settings.step)
        return [
            Event(
                self.t,
                EventKind.ufls_shed,
                str(cmd.bus),
                {"bus": cmd.bus, "stage": cmd.stage, "amount": cmd.amount,
                 "threshold_hz": self.ufls.stages[cmd.stage].threshold_hz},
            )
            for cmd in commands
        ]

    def _consensus_round(self, v_avg):
        c = self.inverters
        active = ~c.tripped
        components = self.graph.n_components(active)
        if components > 1 and components != self._graph_components:
            self.logger.warning(
                f"Storage communication graph partitioned into {components} parts at t = {self.t:.3f} s"
            )
        self._graph_components = components
        measurements = ConsensusMeasurements(
            p_norm=c.filtered_p / c.rating,
            speed=gfm_speed(c, self._p_cmd),
            q_norm=c.filtered_q / c.rating,
            voltage=v_avg[c.bus_index],
            voltage_ref=self.voltage_ref,
        )
        self.consensus = consensus_update(self.graph, self.consensus, measurements, active=active)
        c.freq_correction = self.consensus.freq_correction.copy()
        c.volt_correction = self.consensus.volt_correction.copy()

    def _device_power_mw(self, device_id):
        kind, bank, i = self.devices.locate(device_id)
        vb = self.v[: self.model.n_bus]
        if kind == DeviceClass.generator:
            return float(electrical_power(bank, vb[bank.bus_index])[i] * self.base)
        if kind == DeviceClass.gfm:
            vc = vb[bank.bus_index]
            return float((vc * np.conj(gfm_terminal_current(bank, vc, self._q_cmd))).real[i] * self.base)
        vl = vb[bank.bus_index]
        return float((vl * np.conj(zip_injection(bank, vl, self.t, self._nominal))).real[i] * self.base)

    def _apply(self, event: Event):
        """
        Applies one event at the current step time.
        :return: (event to log or None, whether the network needs refactorizing)
        """
        t = self.t
        payload = dict(event.payload)
        if event.kind in NETWORK_EVENTS:
            payload["scheduled_time"] = event.time
            branch_id = int(event.device)
            if event.kind == EventKind.apply_fault:
                model = apply_fault(self.model, fault_from_event(event))
            elif event.kind == EventKind.clear_fault:
                model = clear_fault(self.model, branch_id)
            else:
                model = switch_branch(self.model, branch_id, BranchStatus.from_value(payload["status"]))
            changed = model is not self.model
            if not changed:
                payload["no_op"] = True
                self.logger.warning(f"{event.kind.str_value} on branch {branch_id} at t = {t:.3f} s changes nothing")
            self.model = model
            return Event(t, event.kind, event.device, payload), changed
        if event.kind == EventKind.relay_trip:
            device_id = event.device
            if device_id not in self.devices:
                raise ScenarioError(f"relay_trip names unknown device {device_id}")
            if event.payload.get("cause") == TripCause.scripted.value:
                payload["scheduled_time"] = event.time
            kind = self.devices.device_class(device_id)
            key = "pre_trip_mw" if kind == DeviceClass.generator else "p_mw"
            payload[key] = self._device_power_mw(device_id)
            cause = payload.pop("cause")
            logged = trip_device(self.devices, device_id, t, cause, **payload)
            if logged is not None:
                for bank in self.relays.values():
                    bank.mark_tripped(device_id, t)
            return logged, logged is not None
        if event.kind == EventKind.ufls_shed:
            rows = self.ufls_rows[
                (self.load_buses[self.ufls_rows] == int(event.device)) & ~self.loads.tripped[self.ufls_rows]
            ]
            remaining = float(self._nominal.real[rows].sum())
            payload["shed_mw"] = remaining * payload["amount"] * self.base
            self.loads.shed_fraction[rows] = apply_shed(self.loads.shed_fraction[rows], payload["amount"])
            return Event(t, event.kind, event.device, payload), False
        payload["scheduled_time"] = event.time
        return Event(t, event.kind, event.device, payload), False

    def _process_events(self, due: List[Event]):
        refactor = False
        for event in sorted(due, key=lambda e: e.sort_key):
            logged, changed = self._apply(event)
            refactor |= changed
            if logged is not None:
                self.events.append(logged)
                self.logger.info(f"t = {self.t:.3f} s: {logged.kind.str_value} {logged.device} {logged.payload}")
        if refactor:
            self._refactor()
            self._solve()
            self.freq_estimator.rebase(self.v[: self.model.n_bus])

    # ---- recording ----

    def _allocate(self, n_rows):
        n_bus, ng, nc, nl = self.model.n_bus, self.generators.size, self.inverters.size, self.ldl_rows.size
        self._rec = {
            "time": np.zeros(n_rows),
            "voltage_magnitude": np.zeros((n_rows, n_bus)),
            "voltage_angle": np.zeros((n_rows, n_bus)),
            "bus_frequency": np.zeros((n_rows, n_bus)),
            "rotor_angle": np.zeros((n_rows, ng)),
            "speed": np.zeros((n_rows, ng)),
            "generator_pe": np.zeros((n_rows, ng)),
            "generator_online": np.zeros((n_rows, ng), dtype=bool),
            "gfm_p": np.zeros((n_rows, nc)),
            "gfm_q": np.zeros((n_rows, nc)),
            "gfm_speed": np.zeros((n_rows, nc)),
            "gfm_energy": np.zeros((n_rows, nc)),
            "freq_correction": np.zeros((n_rows, nc)),
            "volt_correction": np.zeros((n_rows, nc)),
            "ldl_p": np.zeros((n_rows, nl)),
        }
        self._rows = 0

    def _record(self):
        r = self._rows
        rec = self._rec
        vb = self.v[: self.model.n_bus]
        g, c, loads = self.generators, self.inverters, self.loads
        rec["time"][r] = self.t
        rec["voltage_magnitude"][r] = np.abs(vb)
        rec["voltage_angle"][r] = np.angle(vb)
        rec["bus_frequency"][r] = self.freq_estimator.frequency
        rec["rotor_angle"][r] = g.delta
        rec["speed"][r] = g.omega
        rec["generator_pe"][r] = electrical_power(g, vb[g.bus_index])
        rec["generator_online"][r] = ~g.tripped
        rec["gfm_p"][r] = np.where(c.tripped, 0.0, c.filtered_p)
        rec["gfm_q"][r] = np.where(c.tripped, 0.0, c.filtered_q)
        rec["gfm_speed"][r] = gfm_speed(c, self._p_cmd)
        rec["gfm_energy"][r] = c.energy
        rec["freq_correction"][r] = c.freq_correction
        rec["volt_correction"][r] = c.volt_correction
        rows = self.ldl_rows
        vl = vb[loads.bus_index[rows]]
        drawn = zip_injection(loads, vb[loads.bus_index], self.t, self._nominal)[rows]
        rec["ldl_p"][r] = (vl * np.conj(drawn)).real
        self._rows += 1

    def _result(self, status: RunStatus, reason: Optional[str], wall_time: float) -> SimulationResult:
        n = self._rows
        rec = {k: v[:n] for k, v in self._rec.items()}
        metadata = {
            "status": status.value,
            "abort_reason": reason,
            "config_hash": config_hash(self.config),
            "seed": self.config.seed,
            "coordination_mode": self.mode.value,
            "deployment": [[b, r] for b, r in self.plan.entries],
            "step": self.settings.step,
            "horizon": self.settings.horizon,
            "integrator": self.settings.integrator.value,
            "base_mva": self.base,
            "max_power_mismatch": self.max_power_mismatch,
            "max_network_residual": self.max_network_residual,
            "equilibrium_residual": self.equilibrium_residual,
            "power_flow_iterations": self.power_flow.iterations,
            "n_factorizations": self.solver.n_factorizations,
            "initial_load_mw": float(self.loads.nominal_power(0.0).real.sum() * self.base),
            "wall_time_s": wall_time,
        }
        return SimulationResult(
            name=self.config.name,
            time=rec.pop("time"),
            bus_ids=self.model.bus_ids,
            bus_areas=self.model.areas,
            generator_ids=self.generators.ids,
            generator_buses=self.model.bus_ids[self.generators.bus_index],
            generator_inertia=self.generators.inertia,
            gfm_ids=self.inverters.ids,
            gfm_buses=self.model.bus_ids[self.inverters.bus_index],
            gfm_rating=self.inverters.rating,
            ldl_ids=self.loads.ids[self.ldl_rows],
            ldl_buses=self.load_buses[self.ldl_rows],
            events=list(self.events),
            metadata=metadata,
            **rec,
        )

    # ---- main loop ----

    def run(self, raise_on_abort=False) -> SimulationResult:
        s = self.settings
        n_steps = s.n_steps
        every = s.output_every
        self._allocate(n_steps // every + 1)
        started = wall_clock.time()
        progress = SimulationProgress(n_steps, s.step, self.logger.info)
        self.logger.info(
            f"Running {self.config.name}: {n_steps} steps of {s.step} s, "
            f"{self.generators.size} generators, {self.inverters.size} storage units, "
            f"{self.ldl_rows.size} LDLs, coordination {self.mode.value}"
        )
        status, reason = RunStatus.completed, None
        try:
            self._process_events(self.queue.pop_due(0))
            self._record()
            x = self._pack()
            for k in range(n_steps):
                v_avg = self.v_meter.value
                f_avg = self.f_meter.value
                self._update_commands(
                    v_avg[self.inverters.bus_index], f_avg[self.inverters.bus_index]
                )
                x = self._integrate(x)
                if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > s.divergence_limit:
                    raise FloatingPointError(f"state diverged at t = {(k + 1) * s.step:.3f} s")
                if np.any(x[self.generators.size : 2 * self.generators.size] <= 0):
                    raise FloatingPointError(f"a generator speed reached zero at t = {(k + 1) * s.step:.3f} s")
                self._commit(x)
                self.t = (k + 1) * s.step
                self._nominal = self.loads.nominal_power(self.t)
                self._solve()

                vb = self.v[: self.model.n_bus]
                v_avg = self.v_meter.push(np.abs(vb))
                f_avg = self.f_meter.push(self.freq_estimator.update(vb))
                due = self.queue.pop_due(k + 1)
                due += self._relay_requests(v_avg, f_avg)
                due += self._ufls_requests(f_avg)
                if self.use_consensus and (k + 1) % self.consensus_every == 0:
                    self._consensus_round(v_avg)
                if due:
                    self._process_events(due)
                    x = self._pack()
                if (k + 1) % every == 0:
                    self._record()
                progress(k + 1)
        except (NetworkSolveError, ScenarioError, FloatingPointError) as e:
            status, reason = RunStatus.aborted, str(e)
            self.logger.log(
                simlogging.NOPRINTERROR if raise_on_abort else logging.ERROR,
                f"{self.config.name} aborted at t = {self.t:.3f} s: {e}",
            )
        result = self._result(status, reason, wall_clock.time() - started)
        if status == RunStatus.aborted and raise_on_abort:
            raise SimulationAbort(reason, result=result)
        return result


def config_hash(config: ScenarioConfig) -> str:
    try:
        return stable_hash(serialize_scenario(config))
    except ConfigurationError:
        # in-memory networks
        return stable_hash(
            {
                "name": config.name,
                "seed": config.seed,
                "network": repr(config.network),
                "devices": config.devices,
                "ldl": [l.to_dict() for l in config.ldl],
                "storage": config.storage.to_dict(),
                "coordination": config.coordination,
                "protection": config.protection,
                "events": config.events,
                "solver": config.solver,
            }
        )


def run_scenario(config: ScenarioConfig, logger: logging.Logger = None, raise_on_abort=False) -> SimulationResult:
    """
    Initializes and runs one scenario.
    :raises InitializationError: when the initial power flow fails
    :raises SimulationAbort: on divergence or network failure, only with raise_on_abort
    """
    return Simulation(config, logger).run(raise_on_abort=raise_on_abort)


def event_log_digest(result: SimulationResult) -> str:
    """sha256 of the canonical event log, equal for identical runs"""
    return stable_hash([e.to_dict() for e in result.events])


@dataclass
class BatchCell:
    row: str
    column: str
    result: Optional[SimulationResult] = None
    error: Optional[str] = None
    skipped: bool = False

    @property
    def name(self):
        return self.result.name if self.result is not None else f"{self.row}/{self.column}"


@dataclass
class BatchResult:
    cells: List[BatchCell] = field(default_factory=list)
    table: str = ""

    @property
    def results(self):
        return [cell.result for cell in self.cells]


def _run_cell(config: ScenarioConfig):
    """Worker entry point; failures come back as text so the batch carries on"""
    logger = simlogging.get_scenario_logger(simlogging.get_logger(), config.name, stdout_printer=False)
    try:
        return Simulation(config, logger).run(), None
    except (ConfigurationError, InitializationError, NetworkSolveError, ScenarioError) as e:
        logger.error(f"{config.name} failed: {e}")
        return None, f"{type(e).__name__}: {e}"


def run_batch(cells: Sequence, max_workers: int = 1, logger: logging.Logger = None) -> BatchResult:
    """
    Runs a list of scenarios (ScenarioConfig or SweepCell) and tabulates their reports.

    Cells run in separate processes when max_workers > 1. Each cell's outcome is independent of
    the others; a failing cell is recorded and the batch continues.
    """
    logger = logger if logger is not None else simlogging.get_logger()
    cells = [c if isinstance(c, SweepCell) else SweepCell(c.name, "", c) for c in cells]
    runnable = [c for c in cells if c.config is not None]
    logger.info(f"Running batch of {len(runnable)} scenario(s) with {max_workers} worker(s)")
    if max_workers > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            outcomes = list(executor.map(_run_cell, [c.config for c in runnable]))
    else:
        outcomes = []
        for cell in runnable:
            scenario_logger = simlogging.get_scenario_logger(logger, cell.config.name)
            try:
                outcomes.append((Simulation(cell.config, scenario_logger).run(), None))
            except (ConfigurationError, InitializationError, NetworkSolveError, ScenarioError) as e:
                logger.error(f"{cell.config.name} failed: {e}")
                outcomes.append((None, f"{type(e).__name__}: {e}"))
    by_cell = dict(zip([id(c) for c in runnable], outcomes))
    batch = BatchResult()
    for cell in cells:
        if cell.config is None:
            batch.cells.append(BatchCell(cell.row, cell.column, skipped=True))
            continue
        result, error = by_cell[id(cell)]
        batch.cells.append(BatchCell(cell.row, cell.column, result=result, error=error))
    batch.table = metrics.format_table(batch.cells)
    return batch
