"""
Dynamic device models that inject current into the network.

Each state class is a bank: every field is an array with one entry per device, so the
derivative functions evaluate a whole device class at once. Single devices are banks of one.
All quantities are per-unit on the system base unless stated otherwise.
"""
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from ldlgrid.constants import (
    DEFAULT_OVERLOAD_CAP,
    DEFAULT_ZIP_FLOOR,
    OMEGA_S,
    Interpolation,
    ProfileKind,
)
from ldlgrid.errors import ConfigurationError

SECONDS_PER_HOUR = 3600.0


def _arr(value, dtype=float):
    return np.atleast_1d(np.asarray(value, dtype=dtype)).copy()


@dataclass
class GeneratorState:
    """Classical machines with a first-order governor; governor_droop R is on the system base"""

    ids: np.ndarray
    bus_index: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    inertia: np.ndarray
    damping: np.ndarray
    transient_reactance: np.ndarray
    internal_emf: np.ndarray
    mech_power: np.ndarray
    governor_droop: np.ndarray
    governor_lag: np.ndarray
    governor_output: np.ndarray = None
    p_max: np.ndarray = None
    tripped: np.ndarray = None

    def __post_init__(self):
        self.ids = np.atleast_1d(np.asarray(self.ids, dtype=object))
        self.bus_index = _arr(self.bus_index, int)
        for name in (
            "delta",
            "omega",
            "inertia",
            "damping",
            "transient_reactance",
            "internal_emf",
            "mech_power",
            "governor_droop",
            "governor_lag",
        ):
            setattr(self, name, _arr(getattr(self, name)))
        n = self.ids.size
        self.governor_output = (
            np.zeros(n) if self.governor_output is None else _arr(self.governor_output)
        )
        self.p_max = np.full(n, np.inf) if self.p_max is None else _arr(self.p_max)
        self.tripped = np.zeros(n, dtype=bool) if self.tripped is None else _arr(self.tripped, bool)
        if np.any(self.inertia <= 0):
            raise ConfigurationError("generator inertia must be positive")

    @property
    def size(self):
        return self.ids.size


def generator_emf(state: GeneratorState) -> np.ndarray:
    return state.internal_emf * np.exp(1j * state.delta)


def generator_current(state: GeneratorState, terminal_voltage) -> np.ndarray:
    """Stator current out of each machine, zero when tripped"""
    current = (generator_emf(state) - terminal_voltage) / (1j * state.transient_reactance)
    return np.where(state.tripped, 0.0, current)


def electrical_power(state: GeneratorState, terminal_voltage) -> np.ndarray:
    return (generator_emf(state) * np.conj(generator_current(state, terminal_voltage))).real


def mechanical_power(state: GeneratorState) -> np.ndarray:
    return np.clip(state.mech_power + state.governor_output, 0.0, state.p_max)


def generator_derivatives(state: GeneratorState, terminal_voltage):
    """
    Swing equation with governor.

    :param state: machine bank
    :param terminal_voltage: complex terminal voltage per machine
    :return: (d delta/dt, d omega/dt, d governor_output/dt), zero for tripped machines
    """
    speed_error = state.omega - 1.0
    pe = electrical_power(state, terminal_voltage)
    d_delta = OMEGA_S * speed_error
    d_omega = (mechanical_power(state) - pe - state.damping * speed_error) / (
        2.0 * state.inertia
    )
    target = -speed_error / state.governor_droop
    d_gov = (target - state.governor_output) / state.governor_lag
    # anti-windup at the mechanical power limits
    pm = state.mech_power + state.governor_output
    d_gov = np.where((pm >= state.p_max) & (d_gov > 0), 0.0, d_gov)
    d_gov = np.where((pm <= 0.0) & (d_gov < 0), 0.0, d_gov)
    off = state.tripped
    return (
        np.where(off, 0.0, d_delta),
        np.where(off, 0.0, d_omega),
        np.where(off, 0.0, d_gov),
    )


def build_generator_state(
    ids, bus_index, terminal_voltage, power, inertia, damping, transient_reactance, droop, governor_lag, p_max
) -> GeneratorState:
    """
    Back-solves machine internal states from a power flow solution so all derivatives are zero.

    :param terminal_voltage: complex terminal voltage per machine
    :param power: complex power delivered by each machine
    :param droop: governor droop R on the system base
    """
    terminal_voltage = _arr(terminal_voltage, complex)
    power = _arr(power, complex)
    current = np.conj(power / terminal_voltage)
    emf = terminal_voltage + 1j * _arr(transient_reactance) * current
    return GeneratorState(
        ids=ids,
        bus_index=bus_index,
        delta=np.angle(emf),
        omega=np.ones(emf.size),
        inertia=inertia,
        damping=damping,
        transient_reactance=transient_reactance,
        internal_emf=np.abs(emf),
        mech_power=power.real,
        governor_droop=droop,
        governor_lag=governor_lag,
        p_max=np.maximum(_arr(p_max), power.real),
    )


@dataclass
class GfmInverterState:
    """
    Droop-controlled grid-forming storage inverters behind a coupling reactance.

    m_p and m_q are on the system base (device droop divided by rating).
    p_set/q_set are the raw droop references P*, Q*; freq_correction/volt_correction are the
    secondary corrections written by the coordination layer.
    """

    ids: np.ndarray
    bus_index: np.ndarray
    theta: np.ndarray
    rating: np.ndarray
    m_p: np.ndarray
    m_q: np.ndarray
    coupling_reactance: np.ndarray
    freq_setpoint: np.ndarray = None
    voltage_setpoint: np.ndarray = None
    p_set: np.ndarray = None
    q_set: np.ndarray = None
    filtered_p: np.ndarray = None
    filtered_q: np.ndarray = None
    tau_f: np.ndarray = None
    freq_correction: np.ndarray = None
    volt_correction: np.ndarray = None
    energy: np.ndarray = None
    capacity: np.ndarray = None
    overload_cap: np.ndarray = None
    tripped: np.ndarray = None

    def __post_init__(self):
        self.ids = np.atleast_1d(np.asarray(self.ids, dtype=object))
        self.bus_index = _arr(self.bus_index, int)
        n = self.ids.size
        defaults = {
            "freq_setpoint": 1.0,
            "voltage_setpoint": 1.0,
            "p_set": 0.0,
            "q_set": 0.0,
            "filtered_p": 0.0,
            "filtered_q": 0.0,
            "tau_f": 0.02,
            "freq_correction": 0.0,
            "volt_correction": 0.0,
            "energy": np.inf,
            "capacity": np.inf,
            "overload_cap": DEFAULT_OVERLOAD_CAP,
        }
        for name in ("theta", "rating", "m_p", "m_q", "coupling_reactance"):
            setattr(self, name, _arr(getattr(self, name)) * np.ones(n))
        for name, default in defaults.items():
            value = getattr(self, name)
            setattr(self, name, np.full(n, default) if value is None else _arr(value) * np.ones(n))
        self.tripped = np.zeros(n, dtype=bool) if self.tripped is None else _arr(self.tripped, bool)
        if np.any(self.m_p <= 0) or np.any(self.m_q <= 0):
            raise ConfigurationError("inverter droop gains must be positive")
        if np.any(self.rating <= 0):
            raise ConfigurationError("inverter ratings must be positive")

    @property
    def size(self):
        return self.ids.size


def gfm_speed(state: GfmInverterState, p_set=None) -> np.ndarray:
    """Internal frequency in pu of nominal"""
    p_set = state.p_set if p_set is None else p_set
    return state.freq_setpoint + state.freq_correction - state.m_p * (state.filtered_p - p_set)


def gfm_voltage_magnitude(state: GfmInverterState, q_set=None) -> np.ndarray:
    q_set = state.q_set if q_set is None else q_set
    return state.voltage_setpoint + state.volt_correction - state.m_q * (state.filtered_q - q_set)


def gfm_emf(state: GfmInverterState, q_set=None) -> np.ndarray:
    return gfm_voltage_magnitude(state, q_set) * np.exp(1j * state.theta)


def current_limit(state: GfmInverterState) -> np.ndarray:
    return state.overload_cap * state.rating


def clamp_current(current, limit):
    """Scales currents above limit back onto it, keeping their direction"""
    magnitude = np.abs(current)
    scale = np.where(magnitude > limit, limit / np.maximum(magnitude, 1e-300), 1.0)
    return current * scale


def gfm_terminal_current(state: GfmInverterState, terminal_voltage, q_set=None) -> np.ndarray:
    """Current out of each inverter with the overload clamp applied; zero when tripped"""
    raw = (gfm_emf(state, q_set) - terminal_voltage) / (1j * state.coupling_reactance)
    current = clamp_current(raw, current_limit(state))
    return np.where(state.tripped, 0.0, current)


def gfm_derivatives(state: GfmInverterState, terminal_voltage, measured_p, measured_q, p_set=None):
    """
    Droop inverter dynamics.

    :param terminal_voltage: complex terminal voltage (unused by the droop laws themselves,
        kept so every device derivative has the same calling shape)
    :param measured_p: terminal active power per inverter
    :param measured_q: terminal reactive power per inverter
    :param p_set: active power references after the safety filter, defaults to state.p_set
    :return: (d theta, d filtered_p, d filtered_q, d energy) with energy in pu-hours
    """
    d_theta = OMEGA_S * (gfm_speed(state, p_set) - 1.0)
    d_p = (measured_p - state.filtered_p) / state.tau_f
    d_q = (measured_q - state.filtered_q) / state.tau_f
    d_energy = -state.filtered_p / SECONDS_PER_HOUR
    # stored energy cannot leave [0, capacity]
    d_energy = np.where((state.energy <= 0.0) & (d_energy < 0), 0.0, d_energy)
    d_energy = np.where((state.energy >= state.capacity) & (d_energy > 0), 0.0, d_energy)
    off = state.tripped
    return (
        np.where(off, 0.0, d_theta),
        np.where(off, 0.0, d_p),
        np.where(off, 0.0, d_q),
        np.where(off, 0.0, d_energy),
    )


def build_gfm_state(
    ids,
    bus_index,
    terminal_voltage,
    power,
    rating,
    m_p,
    m_q,
    coupling_reactance,
    tau_f,
    overload_cap=DEFAULT_OVERLOAD_CAP,
    capacity=np.inf,
    initial_soc=0.5,
) -> GfmInverterState:
    """
    Back-solves inverter setpoints from the initial operating point.

    m_p, m_q and coupling_reactance are on the device rating and converted to the system base here.
    :param power: complex power each inverter delivers at t=0
    """
    terminal_voltage = _arr(terminal_voltage, complex)
    power = _arr(power, complex)
    rating = _arr(rating)
    x_c = _arr(coupling_reactance) / rating
    current = np.conj(power / terminal_voltage)
    emf = terminal_voltage + 1j * x_c * current
    capacity = _arr(capacity) * np.ones(rating.size)
    return GfmInverterState(
        ids=ids,
        bus_index=bus_index,
        theta=np.angle(emf),
        rating=rating,
        m_p=_arr(m_p) / rating,
        m_q=_arr(m_q) / rating,
        coupling_reactance=x_c,
        voltage_setpoint=np.abs(emf),
        p_set=power.real,
        q_set=power.imag,
        filtered_p=power.real,
        filtered_q=power.imag,
        tau_f=tau_f,
        energy=capacity * initial_soc,
        capacity=capacity,
        overload_cap=overload_cap,
    )


@dataclass
class LoadProfile:
    times: np.ndarray
    values: np.ndarray
    interpolation: Interpolation = Interpolation.linear
    name: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if not isinstance(self.interpolation, Interpolation):
            self.interpolation = Interpolation.from_value(self.interpolation)
        if self.times.shape != self.values.shape:
            raise ConfigurationError(f"profile {self.name}: times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError(f"profile {self.name}: times must be strictly increasing")
        if np.any(self.values < 0):
            raise ConfigurationError(f"profile {self.name}: power must be non-negative")

    def scaled(self, factor):
        return replace(self, values=self.values * factor)


def sample_profile(profile: LoadProfile, t) -> float:
    """
    Profile value at time t; held at the first/last sample outside the profile span
    :raises ConfigurationError: for a profile with no samples
    """
    if profile.times.size == 0:
        raise ConfigurationError(f"profile {profile.name} has no samples")
    if profile.interpolation == Interpolation.linear:
        return float(np.interp(t, profile.times, profile.values))
    i = np.searchsorted(profile.times, t, side="right") - 1
    return float(profile.values[min(max(i, 0), profile.times.size - 1)])


def synthesize_profile(
    kind,
    horizon,
    peak,
    base=None,
    sample_interval=0.05,
    seed=0,
    period=8.0,
    duty=0.6,
    ramp=0.5,
    frequency=0.5,
    step_time=1.0,
    jitter=0.02,
    name="",
) -> LoadProfile:
    """
    Deterministic synthetic large-digital-load profiles.

    training: compute bursts at peak alternating with lower communication phases, linear ramps
    oscillatory: periodic swing between base and peak at the given frequency (Hz)
    step: base until step_time, then peak
    A seeded multiplicative jitter is applied to training profiles only.
    """
    kind = ProfileKind.from_value(getattr(kind, "value", kind))
    base = 0.6 * peak if base is None else base
    t = np.arange(0.0, horizon + sample_interval / 2, sample_interval)
    if kind == ProfileKind.training:
        phase = np.mod(t, period)
        high = duty * period
        up = np.clip(phase / ramp, 0.0, 1.0)
        down = np.clip((phase - high) / ramp, 0.0, 1.0)
        shape = np.where(phase < high, up, 1.0 - down)
        values = base + (peak - base) * shape
        rng = np.random.default_rng(seed)
        values = values * (1.0 + jitter * rng.standard_normal(t.size))
        values = np.minimum(values, peak)
    elif kind == ProfileKind.oscillatory:
        values = base + (peak - base) * 0.5 * (1.0 - np.cos(2.0 * np.pi * frequency * t))
    else:
        values = np.where(t < step_time, base, peak)
    return LoadProfile(
        times=t,
        values=np.maximum(values, 0.0),
        interpolation=Interpolation.linear,
        name=name or kind.value,
    )


@dataclass
class ZipLoad:
    """
    Bank of ZIP loads. zip_p/zip_q rows are (a_Z, a_I, a_P). profiles[i] replaces p0[i] over time
    when set, q_profiles[i] likewise for q0.
    """

    ids: np.ndarray
    bus_index: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    zip_p: np.ndarray
    zip_q: np.ndarray
    profiles: List[Optional[LoadProfile]] = None
    q_profiles: List[Optional[LoadProfile]] = None
    shed_fraction: np.ndarray = None
    tripped: np.ndarray = None
    is_ldl: np.ndarray = None
    v_floor: float = DEFAULT_ZIP_FLOOR

    def __post_init__(self):
        self.ids = np.atleast_1d(np.asarray(self.ids, dtype=object))
        n = self.ids.size
        self.bus_index = _arr(self.bus_index, int)
        self.p0 = _arr(self.p0)
        self.q0 = _arr(self.q0)
        self.zip_p = np.asarray(self.zip_p, dtype=float).reshape(n, 3)
        self.zip_q = np.asarray(self.zip_q, dtype=float).reshape(n, 3)
        for name, coeffs in (("P", self.zip_p), ("Q", self.zip_q)):
            if np.any(np.abs(coeffs.sum(axis=1) - 1.0) > 1e-9):
                raise ConfigurationError(f"ZIP {name} coefficients must sum to 1")
        self.profiles = [None] * n if self.profiles is None else list(self.profiles)
        self.q_profiles = [None] * n if self.q_profiles is None else list(self.q_profiles)
        self.shed_fraction = np.zeros(n) if self.shed_fraction is None else _arr(self.shed_fraction)
        self.tripped = np.zeros(n, dtype=bool) if self.tripped is None else _arr(self.tripped, bool)
        self.is_ldl = np.zeros(n, dtype=bool) if self.is_ldl is None else _arr(self.is_ldl, bool)
        if self.v_floor <= 0:
            raise ConfigurationError("ZIP voltage floor must be positive")

    @property
    def size(self):
        return self.ids.size

    def nominal_power(self, t) -> np.ndarray:
        """P0(t) + jQ0(t) at |V| = 1 after shedding, zero for tripped loads"""
        p = self.p0.copy()
        q = self.q0.copy()
        for i, profile in enumerate(self.profiles):
            if profile is not None:
                p[i] = sample_profile(profile, t)
        for i, profile in enumerate(self.q_profiles):
            if profile is not None:
                q[i] = sample_profile(profile, t)
        s = (p + 1j * q) * (1.0 - self.shed_fraction)
        return np.where(self.tripped, 0.0, s)


def zip_power(load: ZipLoad, voltage_magnitude, t, nominal=None) -> np.ndarray:
    """Complex power drawn at the given voltage magnitudes, with the floor conversion applied"""
    s0 = load.nominal_power(t) if nominal is None else nominal
    v = np.asarray(voltage_magnitude, dtype=float)
    vf = load.v_floor
    above = v >= vf
    # below the floor the I and P parts become constant impedance: S = |V|^2 * c
    vz = np.where(above, v, vf)
    kp = load.zip_p[:, 0] * vz ** 2 + load.zip_p[:, 1] * vz + load.zip_p[:, 2]
    kq = load.zip_q[:, 0] * vz ** 2 + load.zip_q[:, 1] * vz + load.zip_q[:, 2]
    scale = np.where(above, 1.0, (v / vf) ** 2)
    return (s0.real * kp + 1j * s0.imag * kq) * scale


def zip_injection(load: ZipLoad, terminal_voltage, t, nominal=None) -> np.ndarray:
    """
    Current drawn by each load, conj(S(V)/V). Never divides by zero: below the floor the load
    is a constant admittance, so the current is conj(S/|V|^2) * V.
    """
    v = np.asarray(terminal_voltage, dtype=complex)
    s0 = load.nominal_power(t) if nominal is None else nominal
    vabs = np.abs(v)
    vf = load.v_floor
    above = vabs >= vf
    s = zip_power(load, vabs, t, nominal=s0)
    safe_v = np.where(above, v, 1.0)
    current_above = np.conj(s / safe_v)
    # constant admittance equivalent at the floor
    kp = load.zip_p[:, 0] + load.zip_p[:, 1] / vf + load.zip_p[:, 2] / vf ** 2
    kq = load.zip_q[:, 0] + load.zip_q[:, 1] / vf + load.zip_q[:, 2] / vf ** 2
    y_floor = np.conj(s0.real * kp + 1j * s0.imag * kq)
    return np.where(above, current_above, y_floor * v)
