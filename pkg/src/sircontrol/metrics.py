"""Figure-level quantities of a run: infected peak, infection period, terminal values.

Everything here is a pure function of a :class:`~sircontrol.integrate.Trajectory`;
serialization lives in the cli module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .integrate import Trajectory

__all__ = [
    "RunSummary",
    "ComparisonTable",
    "peak_infected",
    "infection_period",
    "terminal_values",
    "summarize_run",
    "compare_strategies",
    "DEFAULT_PERIOD_THRESHOLD",
    "DEFAULT_PERIOD_WINDOW",
]

# infected fraction below which an epidemic is considered over (0.5% of the
# population); calibrated so the default uncontrolled run spans the full
# horizon -- see README
DEFAULT_PERIOD_THRESHOLD = 0.005

# a dip below the threshold only ends the epidemic if sustained this many
# days before the horizon closes: one mean infectious period (1/mu) at the
# default parameters, in the spirit of outbreak-over declarations that
# require a case-free window
DEFAULT_PERIOD_WINDOW = 10.0


@dataclass(frozen=True)
class RunSummary:
    """Headline numbers of one run; ``objective`` is None for uncontrolled runs."""

    peak_infected: float
    t_peak: float
    infection_period: float
    s_end: float
    i_end: float
    r_end: float
    objective: float | None = None

    def __post_init__(self):
        for name in ("peak_infected", "t_peak", "infection_period", "s_end", "i_end", "r_end"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"summary field {name} must be finite, got {v}")
        if self.peak_infected < 0 or self.infection_period < 0:
            raise ValueError("peak_infected and infection_period must be non-negative")
        if self.objective is not None and not math.isfinite(self.objective):
            raise ValueError(f"objective must be finite or None, got {self.objective}")


def peak_infected(traj: Trajectory) -> tuple[float, float]:
    """Time and height of the infected curve's maximum (grid-node argmax).

    Ties break toward the earliest time.  Returns ``(t_peak, i_peak)``.
    """
    i = traj.i
    if i.size == 0:
        raise ValueError("empty trajectory")
    k = int(np.argmax(i))  # argmax returns the first maximizer
    return float(traj.grid.times()[k]), float(i[k])


def infection_period(
    traj: Trajectory,
    threshold: float = DEFAULT_PERIOD_THRESHOLD,
    window: float = DEFAULT_PERIOD_WINDOW,
) -> float:
    """Days until the infected fraction permanently falls below ``threshold``.

    The candidate end is the earliest grid time t* with I < threshold at
    every node >= t*.  A dip counts as permanent only when it is sustained:
    at least ``window`` days of the horizon must remain below the threshold,
    otherwise the epidemic is treated as ongoing and t_end is returned.
    Returns the start time (0 on default grids) when the curve never reaches
    the threshold at all.
    """
    if not (math.isfinite(threshold) and threshold > 0):
        raise ValueError(f"threshold must be positive, got {threshold}")
    if not (math.isfinite(window) and window >= 0):
        raise ValueError(f"window must be non-negative, got {window}")
    i = traj.i
    if i.size == 0:
        raise ValueError("empty trajectory")
    above = np.flatnonzero(i >= threshold)
    times = traj.grid.times()
    if above.size == 0:
        return float(times[0])
    last = int(above[-1])
    if last == i.size - 1:
        return float(traj.grid.t_end)
    t_star = float(times[last + 1])
    if traj.grid.t_end - t_star < window:
        return float(traj.grid.t_end)
    return t_star


def terminal_values(traj: Trajectory) -> tuple[float, float, float]:
    """Compartment values at the final grid node."""
    if traj.values.shape[0] == 0:
        raise ValueError("empty trajectory")
    s, i, r = traj.values[-1]
    return float(s), float(i), float(r)


def summarize_run(
    traj: Trajectory,
    threshold: float = DEFAULT_PERIOD_THRESHOLD,
    objective: float | None = None,
    window: float = DEFAULT_PERIOD_WINDOW,
) -> RunSummary:
    """Bundle the headline metrics of one trajectory."""
    t_peak, i_peak = peak_infected(traj)
    s_end, i_end, r_end = terminal_values(traj)
    return RunSummary(
        peak_infected=i_peak,
        t_peak=t_peak,
        infection_period=infection_period(traj, threshold, window),
        s_end=s_end,
        i_end=i_end,
        r_end=r_end,
        objective=objective,
    )


@dataclass(frozen=True)
class ComparisonTable:
    """Rows of labeled run summaries, in input order.

    A pure formatting step: ``summaries()`` recovers the inputs exactly.
    """

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def summaries(self) -> list[tuple[str, RunSummary]]:
        return [(row[0], RunSummary(*row[1:])) for row in self.rows]

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [row[j] for row in self.rows]


def compare_strategies(summaries: list[RunSummary], labels: list[str]) -> ComparisonTable:
    """One table row per run, columns for every summary field."""
    if len(summaries) != len(labels):
        raise ValueError(f"{len(summaries)} summaries but {len(labels)} labels")
    if not summaries:
        raise ValueError("nothing to compare")
    field_names = tuple(f.name for f in fields(RunSummary))
    rows = tuple(
        (label,) + tuple(getattr(s, name) for name in field_names)
        for label, s in zip(labels, summaries)
    )
    return ComparisonTable(columns=("label",) + field_names, rows=rows)
