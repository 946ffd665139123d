"""
Post-processing of simulation results: centre-of-inertia signals, the transient stability
index, losses from the event log, oscillation envelopes and the batch comparison table.

Every function here is pure and works on a SimulationResult, fresh or loaded from disk.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ldlgrid.constants import F_NOM, DeviceClass, EventKind, ExcursionMode, TripCause
from ldlgrid.results import SimulationResult
from ldlgrid.timeseries import bwfilter, uniform_step, window_peak_to_peak

MW_PER_GW = 1000.0
TABLE_METRICS = ("TSI", "Gen Loss", "UFLS", "LDLs Tripped")
MISSING = "--"


@dataclass
class AreaAggregate:
    """COI angle (deg) and frequency (Hz) of one area; NaN where the area has no machine online"""

    area: Optional[int]
    time: np.ndarray
    angle: np.ndarray
    frequency: np.ndarray


def compute_coi(result: SimulationResult, area: Optional[int] = None) -> AreaAggregate:
    """
    Inertia weighted mean of rotor angle and speed over the in-service generators of an area
    (all generators when area is None). Weights renormalise at every sample.
    """
    mask = np.ones(result.generator_ids.size, dtype=bool)
    if area is not None:
        mask = result.generator_areas == int(area)
    weights = result.generator_online[:, mask] * result.generator_inertia[mask][None, :]
    total = weights.sum(axis=1)
    defined = total > 0
    angle = np.full(total.shape, np.nan)
    frequency = np.full(total.shape, np.nan)
    angle[defined] = (
        np.degrees((weights * result.rotor_angle[:, mask]).sum(axis=1))[defined] / total[defined]
    )
    frequency[defined] = (
        F_NOM * (weights * result.speed[:, mask]).sum(axis=1)[defined] / total[defined]
    )
    return AreaAggregate(area, np.asarray(result.time), angle, frequency)


def area_report(result: SimulationResult) -> Dict[int, AreaAggregate]:
    return {int(a): compute_coi(result, int(a)) for a in np.unique(result.bus_areas)}


def transient_stability_index(delta_max):
    """(360 - delta_max) / (360 + delta_max), delta_max in degrees"""
    delta_max = np.asarray(delta_max, dtype=float)
    if np.any(delta_max < 0):
        raise ValueError("maximum angle excursion must be non-negative")
    tsi = (360.0 - delta_max) / (360.0 + delta_max)
    return float(tsi) if tsi.ndim == 0 else tsi


def max_angle_excursion(result: SimulationResult, mode=ExcursionMode.pairwise) -> float:
    """
    Largest rotor angle excursion in degrees, measured on the displacement of each in-service
    machine from its initial angle (angles unwrapped).

    pairwise: largest separation between two machines
    coi: largest distance of a machine from the system centre of inertia
    absolute: largest displacement of a single machine
    """
    mode = ExcursionMode.from_value(getattr(mode, "value", mode))
    if result.time.size == 0 or result.generator_ids.size == 0:
        return 0.0
    angles = np.degrees(np.unwrap(result.rotor_angle, axis=0))
    moved = angles - angles[0]
    online = result.generator_online
    if not np.any(online):
        return 0.0
    live = np.where(online, moved, np.nan)
    rows = np.any(online, axis=1)
    if mode == ExcursionMode.pairwise:
        spread = np.nanmax(live[rows], axis=1) - np.nanmin(live[rows], axis=1)
    elif mode == ExcursionMode.coi:
        weights = online * result.generator_inertia[None, :]
        centre = (weights * np.nan_to_num(live)).sum(axis=1)[rows] / weights.sum(axis=1)[rows]
        spread = np.nanmax(np.abs(live[rows] - centre[:, None]), axis=1)
    else:
        spread = np.nanmax(np.abs(live[rows]), axis=1)
    return float(np.max(spread))


def compute_tsi(result: SimulationResult, mode=ExcursionMode.pairwise) -> float:
    return transient_stability_index(max_angle_excursion(result, mode))


def _ldl_bus(result: SimulationResult, device_id):
    lookup = dict(zip(result.ldl_ids.tolist(), result.ldl_buses.tolist()))
    if device_id in lookup:
        return int(lookup[device_id])
    return int(str(device_id)[len("LDL"):])


def aggregate_losses(result: SimulationResult) -> Tuple[float, float, List[int]]:
    """
    :return: generation lost to trips (GW, pre-trip output), load shed by UFLS (GW),
        sorted LDL buses disconnected by low-voltage ride-through
    """
    gen_loss = 0.0
    ldl_buses = set()
    for event in result.events_of(EventKind.relay_trip):
        device_class = event.payload.get("device_class")
        if device_class == DeviceClass.generator.value:
            gen_loss += max(float(event.payload.get("pre_trip_mw", 0.0)), 0.0)
        elif device_class == DeviceClass.ldl.value and event.payload.get("cause") == TripCause.lvrt.value:
            ldl_buses.add(_ldl_bus(result, event.device))
    ufls_loss = sum(
        max(float(e.payload.get("shed_mw", 0.0)), 0.0) for e in result.events_of(EventKind.ufls_shed)
    )
    return gen_loss / MW_PER_GW, ufls_loss / MW_PER_GW, sorted(ldl_buses)


@dataclass
class StabilityReport:
    name: str
    tsi: float
    delta_max: float
    gen_loss: float
    ufls_loss: float
    ldl_tripped: List[int] = field(default_factory=list)
    stable: bool = False
    status: str = "completed"
    excursion_mode: str = ExcursionMode.pairwise.value
    abort_reason: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def build_report(result: SimulationResult, mode=ExcursionMode.pairwise) -> StabilityReport:
    mode = ExcursionMode.from_value(getattr(mode, "value", mode))
    delta_max = max_angle_excursion(result, mode)
    tsi = transient_stability_index(delta_max)
    gen_loss, ufls_loss, ldl_tripped = aggregate_losses(result)
    return StabilityReport(
        name=result.name,
        tsi=tsi,
        delta_max=delta_max,
        gen_loss=gen_loss,
        ufls_loss=ufls_loss,
        ldl_tripped=ldl_tripped,
        stable=bool(result.completed and tsi > 0),
        status=result.status.value,
        excursion_mode=mode.value,
        abort_reason=result.metadata.get("abort_reason"),
    )


def oscillation_envelope(time, signal, window=2.0, cutoff=0.05):
    """
    Peak-to-peak amplitude per window after a high-pass removes the slow trend.
    :param cutoff: high-pass corner in Hz
    :return: window start times, peak-to-peak per window
    """
    time = np.asarray(time, dtype=float)
    signal = np.asarray(signal, dtype=float)
    finite = np.isfinite(signal)
    if not np.all(finite):
        # truncate at the first undefined sample
        stop = int(np.argmin(finite))
        time, signal = time[:stop], signal[:stop]
    dt = uniform_step(time)
    detrended = bwfilter(signal, dt, cutoff, "highpass", order=2)
    return window_peak_to_peak(time, detrended, window)


def terminal_envelope(time, signal, window=2.0, tail=10.0, cutoff=0.05) -> float:
    """Mean peak-to-peak amplitude over the windows starting in the last `tail` seconds"""
    starts, spans = oscillation_envelope(time, signal, window, cutoff)
    if spans.size == 0:
        return 0.0
    # the last window may be short; only full windows count
    full = starts + window <= time[-1] + 1e-9
    keep = full & (starts >= time[-1] - tail)
    if not np.any(keep):
        keep = full if np.any(full) else np.ones(spans.size, dtype=bool)
    return float(np.mean(spans[keep]))


def envelope_ratio(
    candidate: SimulationResult, reference: SimulationResult, area=None, window=2.0, tail=10.0
) -> float:
    """Terminal COI frequency envelope of candidate relative to reference (1 = no improvement)"""
    envelopes = []
    for result in (candidate, reference):
        coi = compute_coi(result, area)
        envelopes.append(terminal_envelope(coi.time, coi.frequency, window, tail))
    if envelopes[1] == 0.0:
        return np.inf if envelopes[0] > 0 else 1.0
    return envelopes[0] / envelopes[1]


def _cell_values(cell) -> List[str]:
    if getattr(cell, "skipped", False) or (cell.result is None and cell.error is None):
        return [MISSING] * len(TABLE_METRICS)
    if cell.result is None:
        return ["failed"] + [MISSING] * (len(TABLE_METRICS) - 1)
    report = build_report(cell.result)
    tsi = f"{report.tsi:.2f}" if report.status == "completed" else f"{report.tsi:.2f}*"
    ldls = ", ".join(str(b) for b in report.ldl_tripped) or "None"
    return [tsi, f"{report.gen_loss:.2f} GW", f"{report.ufls_loss:.2f} GW", ldls]


def table_frame(cells: Sequence) -> pd.DataFrame:
    """Rows in first-seen order, one (column, metric) pair per table column"""
    rows, columns = [], []
    for cell in cells:
        if cell.row not in rows:
            rows.append(cell.row)
        if cell.column not in columns:
            columns.append(cell.column)
    index = pd.MultiIndex.from_product([columns, TABLE_METRICS])
    frame = pd.DataFrame(MISSING, index=rows, columns=index)
    for cell in cells:
        for metric, value in zip(TABLE_METRICS, _cell_values(cell)):
            frame.loc[cell.row, (cell.column, metric)] = value
    return frame


def format_table(cells: Sequence) -> str:
    """
    Text table of batch cells: one line per row label, the four metrics for every column label.
    Skipped cells show "--", aborted runs mark their TSI with "*".
    """
    if not cells:
        return ""
    return table_frame(cells).to_string()


def table_records(cells: Sequence) -> List[Dict]:
    records = []
    for cell in cells:
        record = {"row": cell.row, "column": cell.column, "error": cell.error}
        if cell.result is not None:
            record["report"] = build_report(cell.result).to_dict()
        records.append(record)
    return records
