"""Runs independent experiment cells in parallel and returns their results in
submission order."""

import logging
import multiprocessing
import time
import traceback

logger = logging.getLogger(__name__)

_DONE = -1


class CellError(RuntimeError):
    """A cell raised inside a worker process; carries the worker's
    traceback text."""

    def __init__(self, index, details):
        super().__init__('cell %d failed in a worker:\n%s' % (index, details))
        self.index = index
        self.details = details


class MultiprocessTrials:
    """Applies work_func to every cell using a reader, worker processes and a
    collecting writer.

    Results are keyed by the cell's position, so scheduling never changes the
    order (or the content) of what run() returns.

    Attributes:
        num_procs: int
            number of worker processes; 1 runs everything in-process
        queue_size: int
            size of the work queue
        workq: multiprocessing queue
            (index, cell) pairs waiting for a worker
        writeq: multiprocessing queue
            (index, ok, result or traceback) waiting for the writer
        cells: list
            inputs, one per trial
        work_func: function
            picklable function applied to each cell
    """

    def __init__(self, cells, work_func, num_procs=0, queue_size=64,
                 report_every=10):
        if num_procs == 0:
            self.num_procs = multiprocessing.cpu_count()
        else:
            self.num_procs = num_procs
        self.cells = list(cells)
        self.num_procs = max(1, min(self.num_procs, len(self.cells)))
        logger.debug('using %d procs for %d cells', self.num_procs,
                     len(self.cells))
        self.queue_size = self.num_procs * queue_size
        self.work_func = work_func
        self.report_every = report_every
        self.workq = None
        self.writeq = None

    def reader(self):
        """Feeds every cell to the work queue followed by one stop marker
        per worker."""
        for index, cell in enumerate(self.cells):
            self.workq.put((index, cell))
        for _ in range(self.num_procs):
            self.workq.put(_DONE)

    def worker(self):
        """Takes cells from workq and puts (index, ok, payload) on writeq.

        A failing cell is reported as (index, False, traceback text) and the
        worker moves on; the stop marker is always posted.
        """
        try:
            while True:
                entry = self.workq.get(block=True)
                if entry == _DONE:
                    break
                index, cell = entry
                try:
                    result = self.work_func(cell)
                except Exception:
                    self.writeq.put((index, False, traceback.format_exc()))
                    continue
                self.writeq.put((index, True, result))
        finally:
            self.writeq.put(_DONE)

    def writer(self):
        """Collects results until every worker has signed off.

        Returns:
            (results by index, failures by index)
        """
        start_time = time.time()
        results = {}
        failures = {}
        remaining = self.num_procs
        while remaining:
            entry = self.writeq.get(block=True)
            if entry == _DONE:
                remaining -= 1
                continue
            index, ok, payload = entry
            if not ok:
                logger.error('cell %d failed', index)
                failures[index] = payload
                continue
            results[index] = payload
            if len(results) % self.report_every == 0:
                elapsed = time.time() - start_time
                logger.info('finished %d/%d cells (%.2f cells/s)',
                            len(results), len(self.cells),
                            len(results) / max(elapsed, 1e-9))
        return results, failures

    def run(self):
        """Runs the reader, num_procs workers and the writer.

        Returns:
            list of results in the order of cells

        Raises:
            CellError for the first failing cell, after every worker is done
        """
        if not self.cells:
            return []
        if self.num_procs == 1:
            return [self.work_func(cell) for cell in self.cells]

        self.workq = multiprocessing.Queue(self.queue_size)
        self.writeq = multiprocessing.Queue()
        procs = [multiprocessing.Process(target=self.reader)]
        for _ in range(self.num_procs):
            procs.append(multiprocessing.Process(target=self.worker))
        for proc in procs:
            proc.start()
        # drain before joining so workers never block on a full pipe
        results, failures = self.writer()
        for proc in procs:
            proc.join()
        if failures:
            first = min(failures)
            raise CellError(first, failures[first])
        return [results[i] for i in range(len(self.cells))]
