"""Frequency-continuation driver and PDE-solve accounting.

Each batch runs a fixed number of outer iterations.  One frequency of the
batch is processed per iteration, cycling through the batch, so a batch of
``iters`` iterations costs ``iters * (Nr' + Ns')`` solves whatever its size.
Multipliers are reset at the start of every batch; the model carries over.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .cbs import HelmholtzOperator
from .grid import AcquisitionGeometry, DataMatrix, SquaredSlownessModel
from .sketching import SketchConfig
from .wri import IterationLog, SolveTally, WriConfig, WriProblem, init_state, wri_iterate

log = logging.getLogger(__name__)

FREQ_DECIMALS = 9


@dataclass(frozen=True)
class FrequencySchedule:
    paths: tuple[tuple[float, float], ...]
    df: float
    batch_size: int = 2
    overlap: int = 1
    iters_per_batch: int = 10

    def __post_init__(self):
        paths = tuple((float(a), float(b)) for a, b in self.paths)
        if not paths:
            raise ValueError("schedule has no paths")
        for a, b in paths:
            if not 0 < a <= b:
                raise ValueError(f"invalid path ({a}, {b})")
        if self.df <= 0:
            raise ValueError("df must be positive")
        if self.batch_size < 1 or not 0 <= self.overlap < self.batch_size:
            raise ValueError("need batch_size >= 1 and 0 <= overlap < batch_size")
        if self.iters_per_batch < 0:
            raise ValueError("iters_per_batch must be non-negative")
        object.__setattr__(self, "paths", paths)


@dataclass(frozen=True)
class SolveBudget:
    predicted_forward: int
    predicted_backward: int

    @property
    def predicted_total(self) -> int:
        return self.predicted_forward + self.predicted_backward


def path_frequencies(f_start: float, f_end: float, df: float) -> list[float]:
    n = int(np.floor((f_end - f_start) / df + 1e-9)) + 1
    return [round(f_start + k * df, FREQ_DECIMALS) for k in range(n)]


def expand_schedule(schedule: FrequencySchedule) -> list[list[float]]:
    """Sliding frequency windows, path after path."""
    batches = []
    step = schedule.batch_size - schedule.overlap
    for f_start, f_end in schedule.paths:
        freqs = path_frequencies(f_start, f_end, schedule.df)
        if not freqs:
            raise ValueError(f"path ({f_start}, {f_end}) holds no frequency")
        if len(freqs) <= schedule.batch_size:
            batches.append(freqs)
            continue
        starts = list(range(0, len(freqs) - schedule.batch_size + 1, step))
        if starts[-1] + schedule.batch_size < len(freqs):
            starts.append(len(freqs) - schedule.batch_size)
        batches.extend(freqs[s:s + schedule.batch_size] for s in starts)
    return batches


def iteration_frequencies(schedule: FrequencySchedule):
    """Yield ``(batch_index, iteration_in_batch, frequency)`` in run order."""
    for ib, batch in enumerate(expand_schedule(schedule)):
        for it in range(schedule.iters_per_batch):
            yield ib, it, batch[it % len(batch)]


def predict_budget(schedule: FrequencySchedule, ns: int, nr: int,
                   sketch: SketchConfig | None = None) -> SolveBudget:
    forward = backward = 0
    for _, _, f in iteration_frequencies(schedule):
        if sketch is None:
            backward += nr
            forward += ns
        else:
            backward += sketch.receiver_count(f, nr)
            forward += sketch.source_count(ns)
    return SolveBudget(forward, backward)


@dataclass
class InversionResult:
    model: SquaredSlownessModel
    logs: list[IterationLog]
    tally: SolveTally
    snapshots: list[SquaredSlownessModel] = field(default_factory=list)
    batches: list[list[float]] = field(default_factory=list)


def _lookup(data: Mapping[float, DataMatrix], f: float) -> DataMatrix:
    for key, value in data.items():
        if abs(float(key) - f) <= 1e-6 * max(1.0, f):
            return value
    raise KeyError(f)


def run_inversion(model0: SquaredSlownessModel, data: Mapping[float, DataMatrix], geometry: AcquisitionGeometry,
                  schedule: FrequencySchedule, cfg: WriConfig, sketch: SketchConfig | None = None,
                  sources: Optional[np.ndarray] = None, make_operator: Callable = HelmholtzOperator,
                  truth: SquaredSlownessModel | None = None,
                  on_batch: Callable[[int, SquaredSlownessModel], None] | None = None) -> InversionResult:
    """Run the whole schedule from ``model0``.

    ``sources`` defaults to unit point impulses at the geometry's source
    nodes.  Missing data for any scheduled frequency is reported before a
    single solve is made.
    """
    grid = model0.grid
    batches = expand_schedule(schedule)
    needed = sorted({f for batch in batches for f in batch})
    missing = []
    for f in needed:
        try:
            _lookup(data, f)
        except KeyError:
            missing.append(f)
    if missing:
        raise KeyError(f"no observed data for frequencies {missing} Hz")

    P = geometry.observation(grid)
    b = geometry.source_fields(grid) if sources is None else np.asarray(sources, complex)
    problems = {f: WriProblem(f, P, b, np.asarray(_lookup(data, f).values)) for f in needed}

    model = model0
    tally = SolveTally()
    logs: list[IterationLog] = []
    snapshots = []
    counter = 0
    for ib, batch in enumerate(batches):
        states = {}
        for it in range(schedule.iters_per_batch):
            f = batch[it % len(batch)]
            problem = problems[f]
            state = states.get(f)
            if state is None:
                state = init_state(model, problem)
            state = type(state)(model, state.lambda_b, state.lambda_d, state.iteration, tally, state.lam_ratio)
            state, entry = wri_iterate(state, problem, cfg, sketch, make_operator, truth, sketch_iteration=counter)
            counter += 1
            tally = state.tally
            model = state.model
            states[f] = state
            logs.append(entry)
        snapshots.append(model)
        if on_batch is not None:
            on_batch(ib, model)
        log.info("batch %d %s Hz done; solves forward=%d backward=%d", ib, batch, tally.forward, tally.backward)
    return InversionResult(model, logs, tally, snapshots, batches)
