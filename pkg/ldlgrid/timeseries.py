"""
Shared functions to work on uniformly sampled time-series (COI frequency, bus voltages).
"""
import numpy as np
from scipy.signal import butter, sosfiltfilt


def bwfilter(data, dt, freq, band, order=4):
    """
    Zero-phase Butterworth filter.

    data: np.array to filter (filtered along the last axis)
    dt: timestep of data
    freq: cutoff frequency in Hz, a pair for bandpass/bandstop
    band: One of {'highpass', 'lowpass', 'bandpass', 'bandstop'}
    """
    nyq = 1.0 / (2.0 * dt)
    return sosfiltfilt(
        butter(order, np.asarray(freq) / nyq, btype=band, output="sos"), data, padtype=None
    )


def uniform_step(time):
    """Sample spacing of a uniform time grid"""
    time = np.asarray(time, dtype=float)
    if time.size < 2:
        raise ValueError("at least two samples are needed")
    steps = np.diff(time)
    if np.max(steps) - np.min(steps) > 1e-6 * np.mean(steps):
        raise ValueError("time grid is not uniform")
    return float(np.mean(steps))


def window_peak_to_peak(time, signal, window):
    """
    Peak-to-peak amplitude of signal over consecutive windows of the given length.
    :return: window start times, peak-to-peak per window
    """
    time = np.asarray(time, dtype=float)
    signal = np.asarray(signal, dtype=float)
    edges = np.arange(time[0], time[-1] + 1e-12, window)
    starts, spans = [], []
    for start in edges:
        mask = (time >= start) & (time < start + window)
        if mask.sum() < 2:
            continue
        starts.append(start)
        spans.append(np.ptp(signal[mask]))
    return np.asarray(starts), np.asarray(spans)
