"""Tests for sweep-cell execution."""

import torch

from src.experiments.runner import apply_runtime, run_cells, run_cells_async
from src.utils.config import RuntimeConfig


def test_sequential_keeps_order():
    assert run_cells(abs, [-1, 2, -3]) == [1, 2, 3]


def test_single_cell_runs_in_process():
    # Lambdas cannot be pickled, so this only works without a pool.
    assert run_cells(lambda x: x * 2, [4], workers=4) == [8]


def test_empty_cells():
    assert run_cells(abs, [], workers=4) == []


async def test_pool_keeps_submission_order():
    assert await run_cells_async(abs, [-3, 1, -2, 5], workers=2) == [3, 1, 2, 5]


def test_parallel_run_cells():
    assert run_cells(abs, [-5, -6, 7], workers=2) == [5, 6, 7]


def test_apply_runtime():
    threads = torch.get_num_threads()
    try:
        apply_runtime(RuntimeConfig(torch_threads=1, deterministic=True))
        assert torch.get_num_threads() == 1
        assert torch.are_deterministic_algorithms_enabled()
    finally:
        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(False)
