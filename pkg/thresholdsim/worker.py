import logging
import threading

logger = logging.getLogger(__name__)

JOIN_TIMEOUT = 3600.0


class SimulationWorker:
    """
    Runs a list of batches in its own thread. A batch is anything with an
    `index` and a `run()` returning its result.
    """
    def __init__(self, batches=None):
        self.batches = list(batches) if batches else []
        self.results = []
        self.errors = []
        self.thread = None

    def add_batch(self, batch):
        """Appends batch to the work list"""
        self.batches.append(batch)

    def run(self):
        """Runs all batches in a thread"""
        self.thread = threading.Thread(target=self.__run, name=f"sim-worker-{id(self):x}")
        self.thread.daemon = False
        self.thread.start()

    def join(self, timeout=JOIN_TIMEOUT):
        """Waits for the worker to finish"""
        if self.thread is not None:
            self.thread.join(timeout=timeout)
            if self.thread.is_alive():
                logger.warning("worker %s did not finish within %.0f s", self.thread.name, timeout)
                self.errors.append(TimeoutError(f"{self.thread.name} still running"))

    def __run(self):
        for batch in self.batches:
            try:
                self.results.append(batch.run())
            except Exception as e:
                logger.debug("batch %d failed: %s", batch.index, e)
                self.errors.append(e)
                return


def run_batches(batches, threads=1):
    """
    Distributes batches round-robin over `threads` workers and returns the
    results ordered by batch index, so the outcome does not depend on the
    number of threads. The first error of any worker is re-raised.
    """
    batches = list(batches)
    threads = max(1, min(int(threads), len(batches) or 1))
    if threads == 1:
        return [batch.run() for batch in batches]

    workers = [SimulationWorker() for _ in range(threads)]
    for i, batch in enumerate(batches):
        workers[i % threads].add_batch(batch)
    for worker in workers:
        worker.run()
    for worker in workers:
        worker.join()

    errors = [e for worker in workers for e in worker.errors]
    if errors:
        raise errors[0]
    results = [r for worker in workers for r in worker.results]
    return sorted(results, key=lambda r: r.index)
