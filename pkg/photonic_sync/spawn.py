import logging
import multiprocessing
import os
import queue
import threading
from collections import deque

logger = logging.getLogger(__name__)

JOBS_ENV = 'PHOTONIC_SYNC_JOBS'


def default_jobs():
    try:
        return max(1, int(os.environ.get(JOBS_ENV, '1')))
    except ValueError:
        logger.warning('ignoring non-integer %s=%r', JOBS_ENV, os.environ.get(JOBS_ENV))
        return 1


def _execute(f, key, args, kwargs):
    try:
        return key, f(*args, **kwargs), None
    except Exception as e:
        logger.exception('sweep job %s failed', key)
        return key, None, e


class SyncThread(threading.Thread):
    """Threaded worker, reads (key, f, args, kwargs) jobs from its own queue"""

    def __init__(self, in_queue, out_queue, name=None, watching: deque = None):
        threading.Thread.__init__(self, name=name)
        self.in_queue = in_queue
        self.out_queue = out_queue
        self.watching = watching

    def run(self):
        while True:
            job = self.in_queue.get()
            if job is None:
                self.in_queue.task_done()
                break
            key, f, args, kwargs = job
            self.out_queue.put(_execute(f, key, args, kwargs))
            if self.watching:
                self.watching.popleft()
            self.in_queue.task_done()


class SyncProcess(multiprocessing.Process):

    def __init__(self, in_queue, out_queue, name=None, watching=None):
        multiprocessing.Process.__init__(self, name=name)
        self.in_queue = in_queue
        self.out_queue = out_queue

    def run(self):
        while True:
            job = self.in_queue.get()
            if job is None:
                self.in_queue.task_done()
                break
            key, f, args, kwargs = job
            self.out_queue.put(_execute(f, key, args, kwargs))
            self.in_queue.task_done()


class SweepPool(object):
    """Runs independent jobs on a fixed set of workers.

    Each worker owns a queue; jobs go to the least loaded one.  Results
    come back tagged with the key they were submitted under, so
    collect() can return them in submission order whatever order the
    workers finish in.
    """

    def __init__(self, max_workers=None, maxsize=0):
        self.max_workers = max_workers or default_jobs()
        self.max_qsize = maxsize
        self.current_id = 0
        self.closed = False
        self.init_worker()

    def make_queue(self):
        return queue.Queue(maxsize=self.max_qsize)

    def init_worker(self, worker=SyncThread):
        self.out_queue = self.make_queue()
        self.queue_list = [self.make_queue() for i in range(self.max_workers)]
        self.watching_list = [deque() for i in range(self.max_workers)]
        self.worker_list = []
        for i in range(self.max_workers):
            one_worker = worker(self.queue_list[i], self.out_queue, name='sweep-%d' % i,
                                watching=self.watching_list[i])
            one_worker.daemon = True
            self.worker_list.append(one_worker)
            one_worker.start()

    def choose_worker(self):
        sizes = [len(w) for w in self.watching_list]
        return sizes.index(min(sizes))

    def submit_id(self, key, f, *args, **kwargs):
        worker_id = self.choose_worker()
        self.current_id = worker_id
        self.watching_list[worker_id].append(key)
        self.queue_list[worker_id].put((key, f, args, kwargs))

    def collect(self, count):
        """Waits for count results and returns them ordered by key."""
        results = {}
        for _ in range(count):
            key, value, error = self.out_queue.get()
            if error is not None:
                self.shutdown()
                raise error
            results[key] = value
            logger.debug('sweep job %s done (%d/%d)', key, len(results), count)
        self.shutdown()
        return [results[key] for key in sorted(results)]

    def shutdown(self):
        """Stops every worker; one None per queue ends its loop."""
        if self.closed:
            return
        self.closed = True
        for q in self.queue_list:
            q.put(None)
        for q in self.queue_list:
            q.join()
        for worker in self.worker_list:
            worker.join()


class ProcessSweepPool(SweepPool):

    def make_queue(self):
        return multiprocessing.JoinableQueue()

    def init_worker(self, worker=SyncProcess):
        super().init_worker(worker=worker)

    def choose_worker(self):
        return (self.current_id + 1) % self.max_workers

    def shutdown(self):
        if self.closed:
            return
        self.closed = True
        for q in self.queue_list:
            q.put(None)
        for q in self.queue_list:
            q.join()
        # out_queue may still hold unread results after a failed job
        for process in self.worker_list:
            logger.debug('sweep process %s is stopping', process.pid)
            process.terminate()
