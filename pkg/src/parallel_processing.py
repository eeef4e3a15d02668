#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import logging
import multiprocessing
from concurrent.futures import ThreadPoolExecutor, ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence

import psutil

from utils import format_size


class ParallelProcessor:
    """
    Runs independent Monte Carlo replicas on a worker pool.
    Supports both multi-threading and multi-processing.

    Results always come back in submission order, so a replica batch does not
    depend on how the work was scheduled.
    """

    def __init__(self, max_workers: Optional[int] = None, use_processes: bool = False):
        """
        Initialize the parallel processor.

        Args:
            max_workers: Maximum number of worker threads/processes (None = auto)
            use_processes: If True, use processes instead of threads
        """
        self.logger = logging.getLogger(__name__)

        # Determine number of workers if not specified
        if max_workers is None:
            max_workers = max(1, multiprocessing.cpu_count() - 1)
        if max_workers < 1:
            raise ValueError(f"max_workers must be at least 1, got {max_workers}")

        self.max_workers = max_workers
        self.use_processes = use_processes
        self.logger.debug(f"Initialized parallel processor with {max_workers} workers "
                          f"using {'processes' if use_processes else 'threads'}")

    @classmethod
    def from_config(cls, config: Dict) -> 'ParallelProcessor':
        """Build a processor from the `performance` section of a configuration."""
        settings = config.get("performance", {}).get("parallel_processing", {})
        return cls(max_workers=settings.get("max_workers"),
                   use_processes=settings.get("use_processes", False))

    def map(self, func: Callable, items: Sequence[Any]) -> List[Any]:
        """
        Apply a function to each item in parallel.

        Args:
            func: Function to apply (picklable when processes are used)
            items: Items to process

        Returns:
            List of results, in the order of items
        """
        if not items:
            return []

        if self.max_workers == 1:
            return [func(item) for item in items]

        executor_class = ProcessPoolExecutor if self.use_processes else ThreadPoolExecutor
        chunksize = max(1, len(items) // (4 * self.max_workers)) if self.use_processes else 1

        with executor_class(max_workers=self.max_workers) as executor:
            return list(executor.map(func, items, chunksize=chunksize))

    def check_memory(self, nbytes: int) -> None:
        """
        Refuse a batch whose results cannot fit in available memory.

        Raises:
            MemoryError: if nbytes exceeds the available memory
        """
        available = psutil.virtual_memory().available
        if nbytes > available:
            raise MemoryError(f"Replica batch needs {format_size(nbytes)}, "
                              f"only {format_size(available)} available")
        self.logger.debug(f"Replica batch needs {format_size(nbytes)} "
                          f"of {format_size(available)} available")
