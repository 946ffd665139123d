# -*- coding: utf-8 -*-
"""
Figures of a simulation result: COI angle, COI frequency and bus voltages per area.
"""

import os
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ldlgrid.metrics import area_report


def save_figure(fig, out_dir, basename, png=True, pdf=False, close=False):
    """
    Shortcut to run fig.savefig
    :param fig: matplotlib figure object
    :param out_dir: directory for image output, created when missing
    :param basename: basename for images
    :param png: save a png
    :param pdf: save a pdf
    :param close: close fig when done
    :return: list of written paths
    """
    path = os.path.join(out_dir, basename)
    os.makedirs(out_dir, exist_ok=True)

    written = []
    if png:
        fig.savefig("%s.png" % path)
        written.append("%s.png" % path)
    if pdf:
        fig.savefig("%s.pdf" % path)
        written.append("%s.pdf" % path)

    if close:
        plt.close(fig)
    return written


def show_legend(ax, extra_labels={}):
    """Collapses the legend of ax so repeated labels appear once"""
    handles, labels = ax.get_legend_handles_labels()
    by_label = OrderedDict(zip(labels, handles))
    by_label.update(extra_labels)
    ax.legend(by_label.values(), by_label.keys(), loc="best", fontsize=8)


def _event_lines(ax, result):
    for event in result.events:
        ax.axvline(event.time, color="0.7", linewidth=0.6, linestyle=":")


def plot_coi(result, out_dir, close=True):
    """COI angle and COI frequency of every area, one figure each"""
    areas = area_report(result)
    written = []
    for attribute, ylabel, basename in (
        ("angle", "COI angle (deg)", "coi_angle"),
        ("frequency", "COI frequency (Hz)", "coi_frequency"),
    ):
        fig, ax = plt.subplots(figsize=(8, 4))
        for area, aggregate in areas.items():
            ax.plot(aggregate.time, getattr(aggregate, attribute), label=f"Area {area}")
        _event_lines(ax, result)
        ax.set_xlabel("Time (s)")
        ax.set_ylabel(ylabel)
        ax.set_title(result.name)
        show_legend(ax)
        fig.tight_layout()
        written += save_figure(fig, out_dir, basename, close=close)
    return written


def plot_bus_voltages(result, out_dir, close=True):
    """Bus voltage magnitudes in one panel per area, LDL buses highlighted"""
    areas = np.unique(result.bus_areas)
    fig, axes = plt.subplots(len(areas), 1, figsize=(8, 2.2 * len(areas)), sharex=True, squeeze=False)
    ldl_buses = set(result.ldl_buses.tolist())
    for ax, area in zip(axes[:, 0], areas):
        for i in np.flatnonzero(result.bus_areas == area):
            bus = int(result.bus_ids[i])
            if bus in ldl_buses:
                ax.plot(result.time, result.voltage_magnitude[:, i], linewidth=1.2, label=f"LDL {bus}")
            else:
                ax.plot(result.time, result.voltage_magnitude[:, i], color="0.6", linewidth=0.5)
        ax.set_ylabel(f"Area {area}\n|V| (pu)")
        if any(b in ldl_buses for b in result.bus_ids[result.bus_areas == area].tolist()):
            show_legend(ax)
    axes[-1, 0].set_xlabel("Time (s)")
    fig.tight_layout()
    return save_figure(fig, out_dir, "bus_voltages", close=close)


def plot_result(result, out_dir):
    """Writes every overview figure of a result into out_dir"""
    return plot_coi(result, out_dir) + plot_bus_voltages(result, out_dir)
