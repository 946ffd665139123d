"""
Ride-through relays, under-frequency load shedding and the measurement filters feeding them.

Relay timers accumulate violation time per curve segment. A segment trips once its timer
exceeds the segment's max_duration. A timer resets only after the measurement recovers past
the threshold by the hysteresis band; between the threshold and the reset level it holds.
Trips latch for the rest of the run.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ldlgrid.constants import (
    DEFAULT_HYSTERESIS,
    F_NOM,
    DeviceClass,
    EventKind,
    Side,
    TripCause,
)
from ldlgrid.errors import ConfigurationError
from ldlgrid.events import Event

# tolerance absorbing floating point drift of timers built from repeated dt additions
TIMER_EPS = 1e-9


@dataclass(frozen=True)
class CurveSegment:
    threshold: float
    max_duration: float
    side: Side

    def __post_init__(self):
        if not isinstance(self.side, Side):
            object.__setattr__(self, "side", Side.from_value(self.side))
        if self.max_duration < 0:
            raise ConfigurationError(f"segment {self}: max_duration must be >= 0")


@dataclass(frozen=True)
class RideThroughCurve:
    """
    Segments of one measured quantity (per-unit voltage or Hz).
    Stored deepest violation first within each side.
    """

    segments: Tuple[CurveSegment, ...]
    applies_to: DeviceClass
    quantity: str = "voltage"
    hysteresis: float = DEFAULT_HYSTERESIS
    name: str = ""

    def __post_init__(self):
        segments = [
            s if isinstance(s, CurveSegment) else CurveSegment(*s) for s in self.segments
        ]
        under = sorted((s for s in segments if s.side == Side.under), key=lambda s: s.threshold)
        over = sorted(
            (s for s in segments if s.side == Side.over), key=lambda s: -s.threshold
        )
        for side in (under, over):
            durations = [s.max_duration for s in side]
            if any(b < a for a, b in zip(durations, durations[1:])):
                raise ConfigurationError(
                    f"curve {self.name}: a deeper violation allows a longer duration than a shallower one"
                )
        if not isinstance(self.applies_to, DeviceClass):
            object.__setattr__(self, "applies_to", DeviceClass.from_value(self.applies_to))
        if not 0 <= self.hysteresis < 1:
            raise ConfigurationError(f"curve {self.name}: hysteresis must be in [0, 1)")
        object.__setattr__(self, "segments", tuple(under + over))

    @classmethod
    def from_config(cls, name, raw_segments, applies_to, quantity="voltage", hysteresis=DEFAULT_HYSTERESIS):
        """raw_segments: [[threshold, max_duration, side], ...] as found in the protection config"""
        return cls(
            segments=tuple(CurveSegment(float(t), float(d), Side.from_value(s)) for t, d, s in raw_segments),
            applies_to=applies_to,
            quantity=quantity,
            hysteresis=hysteresis,
            name=name,
        )

    @property
    def thresholds(self):
        return np.array([s.threshold for s in self.segments])

    @property
    def durations(self):
        return np.array([s.max_duration for s in self.segments])

    @property
    def is_under(self):
        return np.array([s.side == Side.under for s in self.segments])

    def trip_cause(self, segment_index) -> TripCause:
        under = self.segments[segment_index].side == Side.under
        if self.quantity == "frequency":
            return TripCause.under_frequency if under else TripCause.over_frequency
        return TripCause.lvrt if under else TripCause.hvrt


def _advance_timers(curve: RideThroughCurve, elapsed, measurement, dt):
    """
    One timer update for a block of relays.
    :param elapsed: (n_relays, n_segments) timers
    :param measurement: (n_relays,) filtered measurement
    :return: new timers and the per-row index of the first segment over its limit (-1 if none)
    """
    m = np.asarray(measurement, dtype=float)[:, None]
    thr = curve.thresholds[None, :]
    under = curve.is_under[None, :]
    h = curve.hysteresis
    violated = np.where(under, m < thr, m > thr)
    recovered = np.where(under, m > thr * (1.0 + h), m < thr * (1.0 - h))
    elapsed = np.where(violated, elapsed + dt, np.where(recovered, 0.0, elapsed))
    over_limit = violated & (elapsed > curve.durations[None, :] - TIMER_EPS)
    first = np.where(over_limit.any(axis=1), over_limit.argmax(axis=1), -1)
    return elapsed, first


@dataclass
class RelayTimerState:
    elapsed: np.ndarray
    armed: bool = True
    tripped: bool = False
    trip_time: Optional[float] = None
    trip_segment: int = -1

    @classmethod
    def for_curve(cls, curve: RideThroughCurve):
        return cls(elapsed=np.zeros(len(curve.segments)))


def relay_step(
    curve: RideThroughCurve, timer_state: RelayTimerState, measurement: float, dt: float, t: float = 0.0
) -> Tuple[RelayTimerState, Optional[TripCause]]:
    """
    Advances a single relay by one step.

    :param t: time of the measurement, recorded as trip_time if the relay trips
    :return: the new timer state, and the trip cause when this step tripped the relay
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if timer_state.tripped or not timer_state.armed:
        return timer_state, None
    elapsed, first = _advance_timers(curve, timer_state.elapsed[None, :], [measurement], dt)
    new_state = replace(timer_state, elapsed=elapsed[0])
    if first[0] < 0:
        return new_state, None
    new_state.tripped = True
    new_state.trip_time = t
    new_state.trip_segment = int(first[0])
    return new_state, curve.trip_cause(int(first[0]))


class RelayBank:
    """relay_step semantics applied to one row per device, all sharing a curve"""

    def __init__(self, curve: RideThroughCurve, device_ids: Sequence[str]):
        self.curve = curve
        self.device_ids = np.asarray(list(device_ids), dtype=object)
        n = self.device_ids.size
        self.elapsed = np.zeros((n, len(curve.segments)))
        self.tripped = np.zeros(n, dtype=bool)
        self.trip_time = np.full(n, np.nan)
        self.trip_segment = np.full(n, -1, dtype=int)

    def __len__(self):
        return self.device_ids.size

    def step(self, measurement, dt, t, active=None) -> List[Tuple[str, TripCause]]:
        """
        :param measurement: filtered measurement per device
        :param active: devices whose relay is evaluated (in-service devices); others hold
        :return: (device id, cause) for each relay tripping this step, in device order
        """
        if len(self) == 0:
            return []
        live = ~self.tripped if active is None else (~self.tripped & np.asarray(active, dtype=bool))
        elapsed, first = _advance_timers(self.curve, self.elapsed, measurement, dt)
        self.elapsed = np.where(live[:, None], elapsed, self.elapsed)
        fired = live & (first >= 0)
        trips = []
        for i in np.flatnonzero(fired):
            self.tripped[i] = True
            self.trip_time[i] = t
            self.trip_segment[i] = first[i]
            trips.append((self.device_ids[i], self.curve.trip_cause(int(first[i]))))
        return trips

    def mark_tripped(self, device_id, t):
        """Latches a relay whose device was removed by something else"""
        idx = np.flatnonzero(self.device_ids == device_id)
        for i in idx:
            if not self.tripped[i]:
                self.tripped[i] = True
                self.trip_time[i] = t


@dataclass(frozen=True)
class UflsStage:
    threshold_hz: float
    pickup_delay: float
    amount: float


@dataclass
class UflsScheme:
    """Stages shared by every load bus; timers and fired flags kept per bus"""

    stages: Tuple[UflsStage, ...]
    bus_ids: np.ndarray
    include_ldl: bool = False
    timers: np.ndarray = None
    fired: np.ndarray = None

    def __post_init__(self):
        self.stages = tuple(s if isinstance(s, UflsStage) else UflsStage(*s) for s in self.stages)
        self.bus_ids = np.atleast_1d(np.asarray(self.bus_ids, dtype=int))
        thresholds = [s.threshold_hz for s in self.stages]
        if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigurationError("UFLS stage thresholds must be strictly decreasing")
        for stage in self.stages:
            if not 0.0 < stage.amount <= 1.0:
                raise ConfigurationError(f"UFLS stage amount must be in (0, 1], got {stage.amount}")
            if stage.pickup_delay < 0:
                raise ConfigurationError("UFLS pickup delay must be >= 0")
        shape = (self.bus_ids.size, len(self.stages))
        if self.timers is None:
            self.timers = np.zeros(shape)
        if self.fired is None:
            self.fired = np.zeros(shape, dtype=bool)


@dataclass(frozen=True)
class ShedCommand:
    bus: int
    stage: int
    amount: float


def ufls_step(scheme: UflsScheme, bus_frequency, dt) -> List[ShedCommand]:
    """
    Advances the stage timers with the per-bus frequency (Hz, ordered as scheme.bus_ids).
    Fired stages latch; a stage fires at most once per bus.
    """
    if not scheme.stages or scheme.bus_ids.size == 0:
        return []
    f = np.asarray(bus_frequency, dtype=float)[:, None]
    thr = np.array([s.threshold_hz for s in scheme.stages])[None, :]
    delay = np.array([s.pickup_delay for s in scheme.stages])[None, :]
    below = f < thr
    scheme.timers = np.where(below & ~scheme.fired, scheme.timers + dt, 0.0)
    firing = below & ~scheme.fired & (scheme.timers > delay - TIMER_EPS)
    scheme.fired |= firing
    commands = []
    for b, s in zip(*np.nonzero(firing)):
        commands.append(ShedCommand(int(scheme.bus_ids[b]), int(s), scheme.stages[s].amount))
    return commands


def apply_shed(shed_fraction, amount):
    """Shed applied to the remaining load: 1 - (1 - shed)(1 - amount)"""
    return 1.0 - (1.0 - shed_fraction) * (1.0 - amount)


def trip_device(devices, device_id, t, cause: TripCause, **payload) -> Optional[Event]:
    """
    Takes a device out of service from the next step.

    :param devices: the engine's DeviceSet
    :return: the relay_trip event, or None when the device was already tripped
    """
    if devices.is_tripped(device_id):
        return None
    devices.set_tripped(device_id)
    cause = TripCause.from_value(getattr(cause, "value", cause))
    return Event(
        time=t,
        kind=EventKind.relay_trip,
        device=device_id,
        payload={"cause": cause.value, "device_class": devices.device_class(device_id).value, **payload},
    )


class MovingAverage:
    """Ring-buffer mean over a fixed number of samples, one column per signal"""

    def __init__(self, initial, window, dt):
        initial = np.atleast_1d(np.asarray(initial, dtype=float))
        self.size = max(1, int(round(window / dt)))
        self._buffer = np.tile(initial, (self.size, 1))
        self._sum = self._buffer.sum(axis=0)
        self._pos = 0

    def push(self, values):
        values = np.asarray(values, dtype=float)
        self._sum += values - self._buffer[self._pos]
        self._buffer[self._pos] = values
        self._pos = (self._pos + 1) % self.size
        return self.value

    @property
    def value(self):
        return self._sum / self.size


class BusFrequencyEstimator:
    """
    Bus frequency in Hz from the rate of change of the voltage angle,
    passed through a first-order low-pass with time constant tau.
    """

    def __init__(self, initial_voltage, dt, tau=0.05, f_nom=F_NOM):
        self.dt = dt
        self.f_nom = f_nom
        self.alpha = 1.0 - np.exp(-dt / tau) if tau > 0 else 1.0
        self._last = np.asarray(initial_voltage, dtype=complex).copy()
        self.frequency = np.full(self._last.shape, f_nom)

    def update(self, voltage):
        voltage = np.asarray(voltage, dtype=complex)
        live = (np.abs(voltage) > 1e-6) & (np.abs(self._last) > 1e-6)
        d_angle = np.angle(voltage * np.conj(np.where(live, self._last, 1.0)))
        raw = np.where(live, self.f_nom + d_angle / (2.0 * np.pi * self.dt), self.frequency)
        self.frequency = self.frequency + self.alpha * (raw - self.frequency)
        self._last = voltage.copy()
        return self.frequency

    def rebase(self, voltage):
        """Accepts an instantaneous angle jump (topology change) without reading it as frequency"""
        self._last = np.asarray(voltage, dtype=complex).copy()
