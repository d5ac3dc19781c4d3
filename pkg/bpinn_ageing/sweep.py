"""
Sensitivity sweep over the initial, residual and boundary sample counts.

Each cell of the grid is trained and scored ``repetitions`` times with seeds
derived from the base seed, the cell indices and the repetition number.
"""

import dataclasses
import itertools
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import errors, generic, metrics, physics, refsolver, train, uq, utils


@dataclasses.dataclass(frozen=True)
class SweepCell:
    """One grid cell: its indices and the scaled sample counts."""

    index: Tuple[int, int, int]
    n0: int
    nr: int
    nb: int

    @property
    def counts(self) -> Tuple[int, int, int]:
        """``(n0, nb, nr)`` in the order of
        :py:func:`bpinn_ageing.physics.sample_training_sets`."""
        return self.n0, self.nb, self.nr

    @property
    def name(self) -> str:
        return "cell_{}_{}_{}".format(*self.index)

    def seed(self, base: int, repetition: int) -> int:
        return utils.derive_seed(base, *self.index, repetition)


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    """Grids of sample counts and the repetition count.

    :param scale: every count is divided by ``scale`` (at least 1 remains)
    """

    n0: Tuple[int, ...] = (5, 100, 200)
    nr: Tuple[int, ...] = (5000, 10000, 20000)
    nb: Tuple[int, ...] = (2880, 5760, 8640, 11520)
    repetitions: int = 5
    scale: int = 1

    def __post_init__(self):
        for name in ("n0", "nr", "nb"):
            values = tuple(int(v) for v in getattr(self, name))
            if not values or min(values) < 1:
                raise errors.ValidationError(f"sweep grid {name} must hold positive counts")
            object.__setattr__(self, name, values)
        if self.repetitions < 1 or self.scale < 1:
            raise errors.ValidationError("repetitions and scale must be at least 1")

    @classmethod
    def from_config(cls, config) -> "SweepSpec":
        section = config.section("sweep")
        return cls(
            tuple(section["n0"]),
            tuple(section["nr"]),
            tuple(section["nb"]),
            section["repetitions"],
            section["scale"],
        )

    def cells(self) -> List[SweepCell]:
        """The Cartesian product in ``(n0, nr, nb)`` order."""
        return [
            SweepCell(
                (i0, ir, ib),
                max(1, n0 // self.scale),
                max(1, nr // self.scale),
                max(1, nb // self.scale),
            )
            for (i0, n0), (ir, nr), (ib, nb) in itertools.product(
                enumerate(self.n0), enumerate(self.nr), enumerate(self.nb)
            )
        ]


@dataclasses.dataclass(frozen=True)
class CellTask:
    """Everything one worker process needs to run a cell repetition."""

    cell: SweepCell
    repetition: int
    seed: int
    plan: train.TrainPlan
    spec: physics.ThermalPdeSpec
    truth: refsolver.FieldGrid
    samples: Optional[int]
    chunk_size: int
    directory: Optional[str] = None


@dataclasses.dataclass(frozen=True)
class CellResult:
    cell: SweepCell
    repetition: int
    seed: int
    crps: Optional[float] = None
    rmse: Optional[float] = None
    nll: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_cell(task: CellTask) -> CellResult:
    """Trains and scores one repetition of a cell; errors are recorded, not
    raised."""
    try:
        result = train.fit(task.plan, task.spec, task.cell.counts, task.seed)
        if result.diverged:
            utils.logger.warning(
                "%s repetition %d diverged; scoring its best checkpoint",
                task.cell.name,
                task.repetition,
            )
        pred = uq.predict_grid(
            result.checkpoint, task.truth, task.samples, task.seed, task.chunk_size
        ).flat()
        truth = task.truth.values.ravel()
        stochastic = utils.get_variant(result.checkpoint.variant).stochastic
        if task.directory is not None:
            directory = Path(task.directory)
            directory.mkdir(parents=True, exist_ok=True)
            result.checkpoint.save(directory / "checkpoint.json")
            log = generic.Outputs("train_log")
            log.rows = result.log.rows
            log.save(directory / "train_log.csv")
        return CellResult(
            task.cell,
            task.repetition,
            task.seed,
            crps=metrics.crps_avg(pred, truth) if stochastic else None,
            rmse=metrics.rmse(pred.mean, truth),
            nll=metrics.nll_metric(pred, truth) if stochastic else None,
        )
    except Exception as e:  # pylint: disable=broad-except
        message = str(e) if isinstance(e, errors.BPinnError) else f"{type(e).__name__}: {e}"
        utils.logger.warning(
            "%s repetition %d failed: %s", task.cell.name, task.repetition, message
        )
        return CellResult(task.cell, task.repetition, task.seed, error=message)


def run(tasks: Sequence[CellTask], jobs: int = 1) -> List[CellResult]:
    """Runs every task; results come back in task order."""
    if jobs <= 1:
        return [run_cell(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=int(jobs)) as executor:
        return list(executor.map(run_cell, tasks))


def _moments(values: List[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    array = np.array(values, dtype=float)
    return float(array.mean()), float(array.std())


def aggregate(spec: SweepSpec, results: Sequence[CellResult]) -> generic.Outputs:
    """One ``sweep`` row per cell with the mean and population standard
    deviation of every score over the successful repetitions."""
    outputs = generic.Outputs("sweep")
    for cell in spec.cells():
        runs = [r for r in results if r.cell == cell]
        done = [r for r in runs if not r.failed]
        row = [cell.n0, cell.nr, cell.nb, len(done), len(runs) - len(done)]
        for name in ("crps", "rmse", "nll"):
            scores = [getattr(r, name) for r in done if getattr(r, name) is not None]
            row.extend(_moments(scores))
        outputs.rows.append(tuple(row))
    return outputs


def describe(spec: SweepSpec) -> str:
    return (
        f"{len(spec.n0)}x{len(spec.nr)}x{len(spec.nb)} cells, "
        f"{spec.repetitions} repetitions, scale 1/{spec.scale}"
    )
