"""Plot-data export: deterministic CSV tables from a run's records."""

from __future__ import annotations

import io
from typing import Optional, Sequence

from .records import SimulationRecord, TARGET_NAMES

KINDS = (
    "targets_vs_iterations",
    "ei_sum_vs_iterations",
    "inputs_vs_target",
    "energy_vs_iterations",
)


def export_plot_data(
    kind: str,
    records: Sequence[SimulationRecord],
    ei_sum_history: Optional[Sequence[float]] = None,
) -> str:
    """CSV text for one plot kind; header row first, stable column order."""
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")
    buf = io.StringIO()
    if kind == "targets_vs_iterations":
        buf.write("iteration," + ",".join(TARGET_NAMES) + "\n")
        for r in records:
            buf.write(
                f"{r.meta.iteration},"
                + ",".join(repr(r.targets[t]) for t in TARGET_NAMES)
                + "\n"
            )
    elif kind == "ei_sum_vs_iterations":
        buf.write("cycle,ei_sum\n")
        for cycle, value in enumerate(ei_sum_history or []):
            buf.write(f"{cycle},{value!r}\n")
    elif kind == "inputs_vs_target":
        names = list(records[0].inputs) if records else []
        buf.write("iteration," + ",".join(names + list(TARGET_NAMES)) + "\n")
        for r in records:
            cells = [repr(r.inputs[n]) for n in names]
            cells += [repr(r.targets[t]) for t in TARGET_NAMES]
            buf.write(f"{r.meta.iteration}," + ",".join(cells) + "\n")
    else:  # energy_vs_iterations: cumulative energy per cycle
        buf.write("cycle,cumulative_energy_j\n")
        per_cycle: dict[int, float] = {}
        for r in records:
            per_cycle[r.meta.cycle] = per_cycle.get(r.meta.cycle, 0.0) + r.meta.energy_j
        total = 0.0
        for cycle in sorted(per_cycle):
            total += per_cycle[cycle]
            buf.write(f"{cycle},{total!r}\n")
    return buf.getvalue()
