"""Concurrent evaluation of independent grid cells with index-placed results."""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

from tqdm import tqdm

from src.config import default_threads

T = TypeVar("T")


def map_cells(
    cell: Callable[[int], T],
    n_cells: int,
    threads: Optional[int] = None,
    desc: str = "Evaluating cells",
    show_progress: bool = True,
) -> List[T]:
    """
    Evaluate ``cell(index)`` for every index and return results in index order.

    Completion order does not affect the output, so reductions over the result
    are identical for any thread count.

    Args:
        cell: Pure function of the flat cell index
        n_cells: Number of cells
        threads: Worker count; CFC_THREADS or the CPU count when omitted
        desc: Progress-bar label
        show_progress: Whether to draw a tqdm progress bar

    Returns:
        List of cell results ordered by index
    """
    threads = threads or default_threads()
    results: List[Optional[T]] = [None] * n_cells
    with tqdm(total=n_cells, desc=desc, disable=not show_progress) as progress:
        if threads == 1:
            for index in range(n_cells):
                results[index] = cell(index)
                progress.update(1)
        else:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                futures = {executor.submit(cell, index): index for index in range(n_cells)}
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    progress.update(1)
    return results


def unravel(index: int, shape: Sequence[int]) -> tuple:
    """Row-major (i, j) of a flat index."""
    return divmod(index, shape[1])
