"""Grids of (parameter point x seed) runs, phase statistics and transition search.

Each (point, seed) cell is an independent simulation; cells can run in any
order on any number of worker processes and the merged result is the same.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mark0.core import run
from mark0.measure import (
    Dashboard,
    PhaseLabel,
    PhaseThresholds,
    classify_phase,
    dashboard,
    deannualize,
)
from mark0.params import ConfigError, ModelParams

log = logging.getLogger(__name__)

SWEEPABLE = ("ratio_R", "rho_star", "tau_R", "tau_T", "phi_pi", "pi_star", "g_index")

# reduced scale for quick qualitative phase diagrams
CI_SCALE = {"n_firms": 1000, "T": 3000, "T_eq": 1500}

_LABEL_ORDER = list(PhaseLabel)


@dataclass(frozen=True)
class SweepSpec:
    """A grid of up to two swept parameters times a list of seeds.

    Axis values are in the internal units of :class:`ModelParams`.
    """

    base: ModelParams
    axes: tuple[tuple[str, tuple[float, ...]], ...] = ()
    seeds: tuple[int, ...] = tuple(range(8))
    thresholds: PhaseThresholds = field(default_factory=PhaseThresholds)

    def __post_init__(self):
        object.__setattr__(self, "axes",
                           tuple((name, tuple(float(v) for v in values))
                                 for name, values in self.axes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.axes) > 2:
            raise ConfigError("axes", "at most two swept parameters")
        names = [name for name, _ in self.axes]
        if len(set(names)) != len(names):
            raise ConfigError("axes", "duplicate axis")
        for name, values in self.axes:
            if name not in SWEEPABLE:
                raise ConfigError(name, f"not a sweepable parameter; choose from {SWEEPABLE}")
            if not values:
                raise ConfigError(name, "axis has no values")
        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")

    @property
    def axis_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    def points(self) -> list[tuple[float, ...]]:
        return list(itertools.product(*(values for _, values in self.axes)))

    def params_at(self, coords: Sequence[float], seed: int) -> ModelParams:
        changes = dict(zip(self.axis_names, coords))
        changes["seed"] = seed
        return self.base.replace(**changes)


@dataclass(frozen=True)
class CellResult:
    seed: int
    label: PhaseLabel
    dashboard: Dashboard


@dataclass(frozen=True)
class SweepPointResult:
    coords: tuple[float, ...]
    cells: tuple[CellResult, ...]

    @property
    def labels(self) -> list[PhaseLabel]:
        return [c.label for c in self.cells]

    @property
    def frequencies(self) -> dict[PhaseLabel, float]:
        counts = Counter(self.labels)
        n = len(self.cells)
        return {label: counts[label] / n for label in _LABEL_ORDER if counts[label]}

    @property
    def label(self) -> PhaseLabel:
        return majority_label(self.labels)


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    points: tuple[SweepPointResult, ...]

    def __getitem__(self, coords) -> SweepPointResult:
        coords = tuple(float(c) for c in coords)
        for p in self.points:
            if p.coords == coords:
                return p
        raise KeyError(coords)


def majority_label(labels: Sequence[PhaseLabel]) -> PhaseLabel:
    """Most frequent label; a tie for first place is Indeterminate."""
    if not labels:
        return PhaseLabel.INDETERMINATE
    ranked = Counter(labels).most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return PhaseLabel.INDETERMINATE
    return ranked[0][0]


def run_cell(params: ModelParams, thresholds: PhaseThresholds | None = None) -> CellResult:
    ts = run(params)
    return CellResult(params.seed, classify_phase(ts, thresholds), dashboard(ts))


def _run_cell_task(task):
    params, thresholds = task
    return run_cell(params, thresholds)


def run_cells(tasks: Sequence[ModelParams], thresholds: PhaseThresholds | None = None,
              workers: int = 1) -> list[CellResult]:
    """Run independent cells; the result order matches ``tasks``."""
    jobs = [(p, thresholds) for p in tasks]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_cell_task(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_task, jobs, chunksize=1))


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    points = spec.points()
    keys = [(coords, seed) for coords in points for seed in spec.seeds]
    log.info("sweep: %d points x %d seeds on %d worker(s)", len(points), len(spec.seeds),
             workers)
    cells = run_cells([spec.params_at(c, s) for c, s in keys], spec.thresholds, workers)
    by_key = dict(zip(keys, cells))
    return SweepResult(spec, tuple(
        SweepPointResult(coords, tuple(by_key[(coords, s)] for s in spec.seeds))
        for coords in points
    ))


@dataclass(frozen=True)
class CoexistenceReport:
    coexists: bool
    labels: tuple[PhaseLabel, ...]
    n_seeds: int
    low_confidence: bool


def detect_coexistence(point: SweepPointResult, min_freq: float = 0.1) -> CoexistenceReport:
    """Two or more distinct determinate labels, each at frequency >= ``min_freq``.

    Fewer than four seeds still gives an answer but flags low confidence.
    """
    freq = point.frequencies
    common = tuple(label for label, f in freq.items()
                   if label is not PhaseLabel.INDETERMINATE and f >= min_freq)
    n = len(point.cells)
    return CoexistenceReport(len(common) >= 2, common, n, n < 4)


@dataclass(frozen=True)
class TransitionResult:
    found: bool
    rho_dagger: float
    bracket: tuple[float, float]
    labels_low: tuple[PhaseLabel, ...]
    labels_high: tuple[PhaseLabel, ...]
    reason: str = ""

    @property
    def width(self) -> float:
        return self.bracket[1] - self.bracket[0]


Labeler = Callable[[float], Sequence[PhaseLabel]]


def transition_locator(R_value: float, rho_range: tuple[float, float], spec: SweepSpec, *,
                       tol: float | None = None, workers: int = 1,
                       labeler: Labeler | None = None) -> TransitionResult:
    """Bisect on ``rho_star`` for the HIHO -> LILO crossing at ``ratio_R = R_value``.

    ``rho_range`` and ``tol`` are per-step rates; the default ``tol`` is
    0.1 %/year.  Each probe runs every seed of ``spec`` and uses the majority
    label; anything other than a HIHO majority counts as the high side.
    ``labeler`` replaces the simulation, mapping ``rho_star`` to per-seed labels.
    """
    if tol is None:
        tol = deannualize(0.1, spec.base.steps_per_year)
    if labeler is None:
        base = spec.base.replace(ratio_R=R_value)

        def labeler(rho):
            tasks = [base.replace(rho_star=rho, seed=s) for s in spec.seeds]
            return [c.label for c in run_cells(tasks, spec.thresholds, workers)]

    lo, hi = rho_range
    labels_lo = tuple(labeler(lo))
    labels_hi = tuple(labeler(hi))
    maj_lo = majority_label(labels_lo)
    maj_hi = majority_label(labels_hi)
    if maj_lo is not PhaseLabel.HIHO or maj_hi is not PhaseLabel.LILO:
        return TransitionResult(False, math.nan, (lo, hi), labels_lo, labels_hi,
                                f"NoTransition: {maj_lo} at low end, {maj_hi} at high end")
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        labels = tuple(labeler(mid))
        if majority_label(labels) is PhaseLabel.HIHO:
            lo, labels_lo = mid, labels
        else:
            hi, labels_hi = mid, labels
    return TransitionResult(True, 0.5 * (lo + hi), (lo, hi), labels_lo, labels_hi)


def linspace(lo: float, hi: float, n: int) -> tuple[float, ...]:
    return tuple(float(x) for x in np.linspace(lo, hi, n))
