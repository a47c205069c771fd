"""Process-pool execution of independent sweep cells."""

import asyncio
import logging
import multiprocessing
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

import torch

from src.utils.config import RuntimeConfig

logger = logging.getLogger(__name__)

CellT = TypeVar("CellT")
ResultT = TypeVar("ResultT")


def apply_runtime(runtime: RuntimeConfig) -> None:
    """Apply thread count and determinism settings to the current process."""
    if runtime.torch_threads is not None:
        torch.set_num_threads(runtime.torch_threads)
    torch.use_deterministic_algorithms(runtime.deterministic, warn_only=True)


async def run_cells_async(
    fn: Callable[[CellT], ResultT],
    cells: Iterable[CellT],
    workers: int,
) -> list[ResultT]:
    """
    Run ``fn`` on every cell in a pool of worker processes.

    Args:
        fn: Picklable top-level function
        cells: Picklable cell descriptions
        workers: Maximum number of worker processes

    Returns:
        Results in the order of ``cells``
    """
    cells = list(cells)
    if not cells:
        return []
    loop = asyncio.get_running_loop()
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(workers, len(cells)), mp_context=context) as pool:
        futures = [loop.run_in_executor(pool, fn, cell) for cell in cells]
        return list(await asyncio.gather(*futures))


def run_cells(
    fn: Callable[[CellT], ResultT],
    cells: Iterable[CellT],
    workers: int = 1,
) -> list[ResultT]:
    """Run sweep cells sequentially, or in parallel processes when ``workers > 1``."""
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    logger.info(f"Running {len(cells)} cells on {min(workers, len(cells))} worker processes")
    return asyncio.run(run_cells_async(fn, cells, workers))
