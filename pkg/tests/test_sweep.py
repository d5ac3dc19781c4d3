from unittest import mock

import numpy as np
import pytest

from bpinn_ageing import config, errors, refsolver, sweep, train, utils
from .utils import series, small_plan, spec  # noqa: F401

# pylint: disable=redefined-outer-name


@pytest.fixture(scope="module")
def truth(spec):  # noqa: F811
    return refsolver.solve(spec, refsolver.GridSpec(nx=5, dt=3600.0))


def _task(spec, truth, cell, repetition=0, **kwargs):  # noqa: F811
    plan = small_plan("bpinn_homo")
    return sweep.CellTask(
        cell, repetition, cell.seed(0, repetition), plan, spec, truth, 3, 64, **kwargs
    )


def test_default_grid():
    cells = sweep.SweepSpec().cells()
    assert len(cells) == 36
    assert cells[0] == sweep.SweepCell((0, 0, 0), 5, 5000, 2880)
    assert cells[1].index == (0, 0, 1)
    assert cells[4].index == (0, 1, 0)
    assert cells[-1] == sweep.SweepCell((2, 2, 3), 200, 20000, 11520)
    assert cells[-1].counts == (200, 11520, 20000)
    assert cells[5].name == "cell_0_1_1"


def test_scaled_grid():
    cells = sweep.SweepSpec(scale=10).cells()
    assert cells[0].n0 == 1
    assert cells[0].nr == 500
    assert cells[-1].nb == 1152


@pytest.mark.parametrize(
    "kwargs", [{"n0": ()}, {"nr": (0, 10)}, {"repetitions": 0}, {"scale": 0}]
)
def test_invalid_spec(kwargs):
    with pytest.raises(errors.ValidationError):
        sweep.SweepSpec(**kwargs)


def test_seeds():
    first, second = sweep.SweepSpec().cells()[:2]
    assert first.seed(0, 0) == first.seed(0, 0)
    seeds = {first.seed(0, 0), first.seed(0, 1), second.seed(0, 0), first.seed(1, 0)}
    assert len(seeds) == 4
    assert first.seed(0, 2) == utils.derive_seed(0, 0, 0, 0, 2)


def test_from_config():
    cfg = config.RunConfig({"sweep": {"n0": [5], "nr": [10, 20], "repetitions": 2}})
    grid = sweep.SweepSpec.from_config(cfg)
    assert grid.n0 == (5,)
    assert len(grid.cells()) == 8
    assert sweep.describe(grid) == "1x2x4 cells, 2 repetitions, scale 1/1"


def test_aggregate():
    grid = sweep.SweepSpec(n0=(5,), nr=(10,), nb=(20, 40), repetitions=3)
    first, second = grid.cells()
    results = [
        sweep.CellResult(first, 0, 1, crps=1.0, rmse=2.0, nll=None),
        sweep.CellResult(first, 1, 2, crps=3.0, rmse=4.0, nll=None),
        sweep.CellResult(first, 2, 3, error="capacity"),
        sweep.CellResult(second, 0, 4, error="capacity"),
    ]
    rows = sweep.aggregate(grid, results).rows
    assert rows[0] == (5, 10, 20, 2, 1, 2.0, 1.0, 3.0, 1.0, None, None)
    assert rows[1] == (5, 10, 40, 0, 1, None, None, None, None, None, None)


def test_run_cell(spec, truth, tmp_path):  # noqa: F811
    cell = sweep.SweepCell((0, 0, 0), 5, 20, 10)
    result = sweep.run_cell(_task(spec, truth, cell, directory=str(tmp_path / "rep_0")))
    assert not result.failed
    assert result.crps > 0 and result.rmse > 0
    assert np.isfinite(result.nll)
    assert (tmp_path / "rep_0" / "checkpoint.json").exists()
    assert (tmp_path / "rep_0" / "train_log.csv").exists()


def test_run_cell_records_failure(spec, truth):  # noqa: F811
    cell = sweep.SweepCell((0, 0, 0), 5, 20, 10**6)
    result = sweep.run_cell(_task(spec, truth, cell))
    assert result.failed
    assert result.crps is None
    assert "boundary" in result.error


def test_run_keeps_order(spec, truth):  # noqa: F811
    cells = [sweep.SweepCell((0, 0, 0), 5, 20, 10**6), sweep.SweepCell((0, 0, 1), 5, 20, 10)]
    results = sweep.run([_task(spec, truth, cell) for cell in cells])
    assert [r.cell for r in results] == cells
    assert results[0].failed and not results[1].failed


def test_run_survives_unexpected_errors(spec, truth):  # noqa: F811
    cell = sweep.SweepCell((0, 0, 0), 5, 20, 10)
    tasks = [_task(spec, truth, cell, repetition) for repetition in range(2)]
    failure = np.linalg.LinAlgError("singular matrix")
    with mock.patch.object(train, "fit", side_effect=failure):
        results = sweep.run(tasks)
    assert [r.repetition for r in results] == [0, 1]
    assert all(r.failed for r in results)
    assert results[0].error == "LinAlgError: singular matrix"
    grid = sweep.SweepSpec(n0=(5,), nr=(20,), nb=(10,))
    assert sweep.aggregate(grid, results).rows[0][:5] == (5, 20, 10, 0, 2)
