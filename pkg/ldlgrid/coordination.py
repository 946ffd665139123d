"""
Two-layer coordination of the grid-forming storage fleet.

The fast layer (safety_filter) runs every integration step on each inverter's own
measurements. The slow layer (consensus_update) runs once per update period over the
communication graph and writes the secondary corrections Omega (frequency) and e (voltage)
that the inverter droop laws consume.
"""
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.csgraph import breadth_first_order, connected_components

from ldlgrid.constants import F_NOM, CoordinationMode, GraphTopology
from ldlgrid.errors import ConfigurationError


@dataclass
class CommGraph:
    nodes: Tuple[str, ...]
    adjacency: np.ndarray
    update_period: float = 0.1
    latency: float = 0.0

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        self.adjacency = np.asarray(self.adjacency, dtype=float).reshape(len(self.nodes), len(self.nodes))
        if np.any(self.adjacency < 0):
            raise ConfigurationError("communication graph weights must be non-negative")
        if not np.allclose(self.adjacency, self.adjacency.T):
            raise ConfigurationError("communication graph must be undirected")
        np.fill_diagonal(self.adjacency, 0.0)
        if not self.update_period > 0:
            raise ConfigurationError("consensus update_period must be positive")
        if self.latency < 0:
            raise ConfigurationError("consensus latency must be >= 0")

    @property
    def size(self):
        return len(self.nodes)

    @property
    def delay_rounds(self):
        """Neighbor information age in whole update rounds"""
        if self.latency <= 0 or math.isinf(self.update_period):
            return 0
        return int(math.ceil(self.latency / self.update_period - 1e-12))

    def active_adjacency(self, active=None):
        if active is None:
            return self.adjacency
        active = np.asarray(active, dtype=bool)
        return self.adjacency * np.outer(active, active)

    def laplacian(self, active=None):
        a = self.active_adjacency(active)
        return np.diag(a.sum(axis=1)) - a

    def n_components(self, active=None):
        """Connected components among the active nodes"""
        active = np.ones(self.size, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        if not active.any():
            return 0
        sub = self.adjacency[np.ix_(active, active)]
        n, _ = connected_components(sp.csr_matrix(sub > 0), directed=False)
        return n

    def is_connected(self, active=None):
        return self.n_components(active) <= 1


def _adjacency_from_pairs(n, pairs):
    a = np.zeros((n, n))
    for i, j in pairs:
        if i != j:
            a[i, j] = a[j, i] = 1.0
    return a


def ring_adjacency(n):
    if n < 2:
        return np.zeros((n, n))
    return _adjacency_from_pairs(n, [(i, (i + 1) % n) for i in range(n)])


def complete_adjacency(n):
    return np.ones((n, n)) - np.eye(n)


def electrical_adjacency(model, node_buses):
    """
    Storage units are neighbors when a path of in-service branches joins their buses
    without passing through another storage bus.
    """
    node_buses = [int(b) for b in node_buses]
    n = len(node_buses)
    idx = model.bus_indices(node_buses) if n else np.zeros(0, dtype=int)
    rows, cols = [], []
    for branch in model.branches:
        if branch.in_service:
            i, j = model.bus_index(branch.from_bus), model.bus_index(branch.to_bus)
            rows += [i, j]
            cols += [j, i]
    graph = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(model.n_bus, model.n_bus))
    storage_position = {int(k): p for p, k in enumerate(idx)}
    a = np.zeros((n, n))
    for p, start in enumerate(idx):
        # other storage buses can be reached but not passed through
        blocked = sp.diags(
            [0.0 if (k in storage_position and k != start) else 1.0 for k in range(model.n_bus)]
        )
        reachable = breadth_first_order(blocked @ graph, int(start), directed=True, return_predecessors=False)
        for k in reachable:
            q = storage_position.get(int(k))
            if q is not None and q != p:
                a[p, q] = a[q, p] = 1.0
    return a


def build_comm_graph(
    topology,
    node_ids: Sequence[str],
    node_buses: Sequence[int],
    model=None,
    edges=(),
    update_period=0.1,
    latency=0.0,
) -> CommGraph:
    """
    :param topology: GraphTopology or its value
    :param edges: bus pairs, used by the explicit topology
    """
    topology = GraphTopology.from_value(getattr(topology, "value", topology))
    n = len(node_ids)
    if topology == GraphTopology.ring:
        a = ring_adjacency(n)
    elif topology == GraphTopology.complete:
        a = complete_adjacency(n)
    elif topology == GraphTopology.explicit:
        position = {int(b): i for i, b in enumerate(node_buses)}
        pairs = []
        for a_bus, b_bus in edges:
            if int(a_bus) not in position or int(b_bus) not in position:
                raise ConfigurationError(f"graph edge ({a_bus}, {b_bus}) joins a bus without storage")
            pairs.append((position[int(a_bus)], position[int(b_bus)]))
        a = _adjacency_from_pairs(n, pairs)
    else:
        if model is None:
            raise ConfigurationError("the electrical topology needs the network model")
        a = electrical_adjacency(model, node_buses)
    return CommGraph(nodes=tuple(node_ids), adjacency=a, update_period=update_period, latency=latency)


@dataclass(frozen=True)
class SafetyLimits:
    """voltage_band in pu, frequency_band in Hz. Gains are per unit of device rating"""

    voltage_band: Tuple[float, float] = (0.88, 1.10)
    frequency_band: Tuple[float, float] = (59.0, 61.0)
    p_gain: float = 2.0
    v_gain: float = 5.0

    def __post_init__(self):
        v_lo, v_hi = self.voltage_band
        f_lo, f_hi = self.frequency_band
        if not v_lo < 1.0 < v_hi:
            raise ConfigurationError(f"voltage band {self.voltage_band} must bracket 1.0 pu")
        if not f_lo < F_NOM < f_hi:
            raise ConfigurationError(f"frequency band {self.frequency_band} must bracket {F_NOM} Hz")
        if self.p_gain < 0 or self.v_gain < 0:
            raise ConfigurationError("safety gains must be >= 0")

    @classmethod
    def from_config(cls, safety: Dict):
        return cls(
            voltage_band=tuple(safety.get("voltage_band", (0.88, 1.10))),
            frequency_band=tuple(safety.get("frequency_band", (59.0, 61.0))),
            p_gain=float(safety.get("p_gain", 2.0)),
            v_gain=float(safety.get("v_gain", 5.0)),
        )


def safety_filter(local_v, local_f, limits: SafetyLimits, raw_setpoints, rating=1.0):
    """
    Band projection of the droop references.

    Outside a band the reference moves proportionally to the distance from the nearest band
    edge: low frequency raises P*, high frequency lowers it; low voltage raises Q*, high
    voltage lowers it. Results are saturated at +-rating. Inside both bands the references
    pass through unchanged.

    :param local_v: terminal voltage magnitude(s), pu
    :param local_f: local frequency, Hz
    :param raw_setpoints: (P*, Q*) arrays
    :return: filtered (P*, Q*)
    """
    p_set, q_set = (np.asarray(x, dtype=float) for x in raw_setpoints)
    v = np.asarray(local_v, dtype=float)
    f = np.asarray(local_f, dtype=float)
    rating = np.asarray(rating, dtype=float)
    f_lo, f_hi = limits.frequency_band
    v_lo, v_hi = limits.voltage_band
    f_push = np.maximum(f_lo - f, 0.0) - np.maximum(f - f_hi, 0.0)
    v_push = np.maximum(v_lo - v, 0.0) - np.maximum(v - v_hi, 0.0)
    if not np.any(f_push) and not np.any(v_push):
        return p_set, q_set
    p_out = np.where(f_push != 0, np.clip(p_set + limits.p_gain * rating * f_push, -rating, rating), p_set)
    q_out = np.where(v_push != 0, np.clip(q_set + limits.v_gain * rating * v_push, -rating, rating), q_set)
    return p_out, q_out


@dataclass(frozen=True)
class SupportSettings:
    """
    Local active-power support stacked on the band projection.

    damping_gain scales the washed-out local frequency deviation (pu of nominal) into P* in
    units of device rating. buffer_gain feeds the washed-out LDL demand at the inverter's own
    bus into P*. Time constants are in seconds; a zero gain disables its term.
    """

    damping_gain: float = 0.0
    damping_filter: float = 0.15
    damping_washout: float = 2.0
    buffer_gain: float = 0.0
    buffer_washout: float = 5.0

    def __post_init__(self):
        if self.damping_gain < 0 or self.buffer_gain < 0:
            raise ConfigurationError("support gains must be >= 0")
        if self.damping_filter < 0:
            raise ConfigurationError("support damping_filter must be >= 0")
        if self.damping_washout <= 0 or self.buffer_washout <= 0:
            raise ConfigurationError("support washout times must be positive")

    @property
    def enabled(self):
        return self.damping_gain > 0 or self.buffer_gain > 0

    @classmethod
    def from_config(cls, support: Optional[Dict]):
        support = support or {}
        unknown = set(support) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown support settings {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in support.items()})


@dataclass
class SupportState:
    settings: SupportSettings
    filtered_f: np.ndarray
    freq_washout: np.ndarray
    demand_washout: np.ndarray = None

    @classmethod
    def zeros(cls, n, settings: SupportSettings):
        return cls(settings, np.full(n, F_NOM), np.zeros(n))


def _lag(dt, tau):
    return 1.0 if tau <= 0 else 1.0 - math.exp(-dt / tau)


def local_support(state: SupportState, p_cmd, local_f, local_demand, dt, rating=1.0) -> np.ndarray:
    """
    Add frequency damping and LDL buffering to P* and advance the filter states by dt.

    Both terms pass through washouts, so a steady offset in frequency or demand leaves P*
    where the band projection put it. Each term is saturated at +-rating.

    :param local_f: local frequency, Hz
    :param local_demand: nominal LDL active power at each inverter bus, pu
    """
    cfg = state.settings
    rating = np.asarray(rating, dtype=float)
    p = np.asarray(p_cmd, dtype=float)
    if cfg.damping_gain > 0:
        state.filtered_f = state.filtered_f + _lag(dt, cfg.damping_filter) * (local_f - state.filtered_f)
        deviation = state.filtered_f / F_NOM - 1.0
        state.freq_washout = state.freq_washout + _lag(dt, cfg.damping_washout) * (deviation - state.freq_washout)
        p = np.clip(p - cfg.damping_gain * rating * (deviation - state.freq_washout), -rating, rating)
    if cfg.buffer_gain > 0:
        demand = np.asarray(local_demand, dtype=float)
        if state.demand_washout is None:
            state.demand_washout = demand.copy()
        state.demand_washout = state.demand_washout + _lag(dt, cfg.buffer_washout) * (demand - state.demand_washout)
        p = np.clip(p + cfg.buffer_gain * (demand - state.demand_washout), -rating, rating)
    return p


@dataclass(frozen=True)
class ConsensusGains:
    k_omega: float = 1.0
    k_share: float = 0.02
    k_track: float = 2.0
    k_v: float = 1.0
    k_qshare: float = 0.0
    k_vtrack: float = 0.5

    @classmethod
    def from_config(cls, gains: Dict):
        known = {k: float(v) for k, v in gains.items() if k in cls.__dataclass_fields__}
        unknown = set(gains) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown consensus gains {sorted(unknown)}")
        return cls(**known)


@dataclass
class ConsensusMeasurements:
    """Per-node inputs to one round; normalized powers are P_f/S and Q_f/S"""

    p_norm: np.ndarray
    speed: np.ndarray
    q_norm: np.ndarray
    voltage: np.ndarray
    voltage_ref: np.ndarray


@dataclass
class ConsensusState:
    freq_correction: np.ndarray
    volt_correction: np.ndarray
    gains: ConsensusGains = field(default_factory=ConsensusGains)
    saturation: float = 0.05
    history: deque = None

    def __post_init__(self):
        self.freq_correction = np.asarray(self.freq_correction, dtype=float).copy()
        self.volt_correction = np.asarray(self.volt_correction, dtype=float).copy()
        if self.saturation <= 0:
            raise ConfigurationError("consensus saturation must be positive")
        if self.history is None:
            self.history = deque()

    @classmethod
    def zeros(cls, n, gains=None, saturation=0.05):
        return cls(np.zeros(n), np.zeros(n), gains or ConsensusGains(), saturation)


def _zoh_round(a_matrix, forcing, x0, period):
    """Exact solution of dx/dt = A x + u over one period with u held constant"""
    n = x0.size
    if n == 0:
        return x0
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = a_matrix
    aug[:n, n] = forcing
    phi = expm(aug * period)
    return phi[:n, :n] @ x0 + phi[:n, n]


def _channel(adjacency, own, neighbor_own, share, neighbor_share, track, k_agree, k_share, period, delayed):
    """
    One round of agreement + sharing + tracking for one correction channel.
    Without delay the agreement acts through the Laplacian; with delay neighbor values are
    the delayed ones and only the node's own value evolves within the round.
    """
    degree = adjacency.sum(axis=1)
    share_term = k_share * (adjacency @ neighbor_share - degree * share)
    if delayed:
        a_matrix = -k_agree * np.diag(degree)
        forcing = k_agree * (adjacency @ neighbor_own) + share_term + track
    else:
        a_matrix = -k_agree * (np.diag(degree) - adjacency)
        forcing = share_term + track
    return _zoh_round(a_matrix, forcing, own, period)


def consensus_update(
    graph: CommGraph,
    state: ConsensusState,
    measurements: ConsensusMeasurements,
    dt: Optional[float] = None,
    active=None,
) -> ConsensusState:
    """
    One synchronous round of the slow layer.

    Every node integrates, over one round of length dt (default graph.update_period),
        dOmega_i = k_omega sum_j a_ij (Omega_j - Omega_i) + k_share sum_j a_ij (p_j - p_i) + k_track (1 - w_i)
        de_i     = k_v     sum_j a_ij (e_j - e_i)         + k_qshare sum_j a_ij (q_j - q_i) + k_vtrack (Vref_i - V_i)
    with measurements held over the round. Neighbor values come from the previous rounds
    when the graph has latency. Tripped (inactive) nodes are removed, keeping the other edges.
    Corrections saturate at +-state.saturation.
    """
    period = graph.update_period if dt is None else dt
    n = graph.size
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    g = state.gains
    adjacency = graph.active_adjacency(active)
    snapshot = (
        state.freq_correction.copy(),
        np.asarray(measurements.p_norm, dtype=float).copy(),
        state.volt_correction.copy(),
        np.asarray(measurements.q_norm, dtype=float).copy(),
    )
    history = deque(state.history, maxlen=graph.delay_rounds + 1)
    history.append(snapshot)
    delayed = graph.delay_rounds > 0
    old_omega, old_p, old_e, old_q = history[0]

    track_f = g.k_track * (1.0 - np.asarray(measurements.speed, dtype=float))
    track_v = g.k_vtrack * (
        np.asarray(measurements.voltage_ref, dtype=float) - np.asarray(measurements.voltage, dtype=float)
    )
    p_now = snapshot[1]
    q_now = snapshot[3]
    # sharing compares the node's own current value with the (possibly delayed) neighbor value
    omega = _channel(
        adjacency, state.freq_correction, old_omega, p_now, old_p if delayed else p_now,
        track_f, g.k_omega, g.k_share, period, delayed,
    )
    e = _channel(
        adjacency, state.volt_correction, old_e, q_now, old_q if delayed else q_now,
        track_v, g.k_v, g.k_qshare, period, delayed,
    )
    omega = np.where(active, np.clip(omega, -state.saturation, state.saturation), state.freq_correction)
    e = np.where(active, np.clip(e, -state.saturation, state.saturation), state.volt_correction)
    return ConsensusState(
        freq_correction=omega,
        volt_correction=e,
        gains=state.gains,
        saturation=state.saturation,
        history=history,
    )


def coordination_mode(config) -> CoordinationMode:
    """
    :param config: the coordination section (dict with 'mode'), a mode string or a CoordinationMode
    :raises ConfigurationError: for an unknown mode
    """
    if isinstance(config, CoordinationMode):
        return config
    mode = config.get("mode", CoordinationMode.none.value) if isinstance(config, dict) else config
    if mode is None:
        mode = CoordinationMode.none.value
    try:
        return CoordinationMode.from_value(str(mode))
    except ValueError as e:
        raise ConfigurationError(str(e)) from None


def safety_enabled(mode: CoordinationMode):
    return mode in (CoordinationMode.local_only, CoordinationMode.layered)


def consensus_enabled(mode: CoordinationMode, update_period=0.1):
    return mode == CoordinationMode.layered and math.isfinite(update_period)
