"""Master-worker evaluation of batched meso increments.

Within one macro Newton iteration every integration point needs an
independent transient cell increment, so the point set is partitioned
over a pool of workers once per run. Each worker owns its registry
slice (cell problem and committed meso state per point) for the whole
run; a round sends only the per-point loadings down and returns the
averaged responses, and a commit promotes the states of the most
recently evaluated round to the resident committed set. Merging sorts
by point id, so the merged result is independent of worker count and
completion order.

The pool is in-process (fork), but the protocol is pure message
passing: loadings down, homogenized data up, no shared mutable state.
"""

from __future__ import annotations

import logging
import time
import traceback
import warnings
from dataclasses import dataclass

import numpy as np

from .homogenization import solve_rve_increment
from .solver import SolverError

log = logging.getLogger(__name__)

POLICIES = ("contiguous", "region-aware")


class SchedulerError(RuntimeError):
    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures) if failures is not None else []


@dataclass(frozen=True)
class WorkBatch:
    """One worker's share of a round: (point id, loading) pairs."""

    batch_id: int
    worker_id: int
    items: tuple

    def __post_init__(self):
        pids = [pid for pid, _ in self.items]
        if len(set(pids)) != len(pids):
            raise ValueError("duplicate point ids within a batch")

    def point_ids(self):
        return tuple(sorted(pid for pid, _ in self.items))


@dataclass(frozen=True)
class Partition:
    """Assignment of macro point ids to workers (exact cover)."""

    assignments: tuple

    @property
    def n_workers(self):
        return len(self.assignments)

    @property
    def loads(self):
        return tuple(len(a) for a in self.assignments)

    def point_ids(self):
        out = []
        for a in self.assignments:
            out.extend(a)
        return tuple(sorted(out))

    def balance(self):
        """Max over mean worker load; 1.0 is perfectly even."""
        total = sum(self.loads)
        if total == 0:
            return 1.0
        return max(self.loads) * self.n_workers / total


def partition_points(point_ids, regions=None, n_workers=1,
                     policy="contiguous"):
    """Split macro point ids over n_workers.

    "contiguous" splits the sorted id list into nearly equal runs.
    "region-aware" first groups points by their region label so that
    points sharing a cell mesh land on the same worker, then fills
    workers greedily to the ceiling of the mean load; groups larger
    than that are split into the minimal number of pieces. Both
    policies produce an exact cover with near-perfect balance.
    """
    pids = [int(p) for p in point_ids]
    if len(set(pids)) != len(pids):
        raise SchedulerError("point ids must be unique")
    if not isinstance(n_workers, (int, np.integer)) or n_workers < 1:
        raise SchedulerError("n_workers must be a positive integer")
    if policy not in POLICIES:
        raise SchedulerError(f"unknown partition policy '{policy}'")
    if regions is not None and len(regions) != len(pids):
        raise SchedulerError("regions must label every point id")

    if n_workers > len(pids):
        warnings.warn(
            f"{n_workers - len(pids)} of {n_workers} workers receive "
            "no points", RuntimeWarning, stacklevel=2)

    if policy == "contiguous" or regions is None:
        chunks = np.array_split(np.sort(np.asarray(pids, dtype=int)),
                                n_workers)
        return Partition(tuple(tuple(int(p) for p in c) for c in chunks))

    # region-aware: group, largest group first, fill the emptiest worker
    # up to the target load before moving on
    groups = {}
    for pid, reg in sorted(zip(pids, regions)):
        groups.setdefault(reg, []).append(pid)
    order = sorted(groups, key=lambda r: (-len(groups[r]), str(r)))
    target = -(-len(pids) // n_workers)  # ceil
    loads = [[] for _ in range(n_workers)]
    for reg in order:
        queue = groups[reg]
        while queue:
            w = min(range(n_workers), key=lambda k: (len(loads[k]), k))
            room = target - len(loads[w])
            loads[w].extend(queue[:room])
            queue = queue[room:]
    return Partition(tuple(tuple(a) for a in loads))


def slice_registry(partition: Partition, registry):
    """Per-worker dicts point id -> (cell problem, meso state)."""
    slices = []
    for assignment in partition.assignments:
        missing = [pid for pid in assignment if pid not in registry]
        if missing:
            raise SchedulerError(f"registry lacks points {missing}")
        slices.append({pid: registry[pid] for pid in assignment})
    return slices


def evaluate_batch(batch, registry_slice, want_tangents=True):
    """Run one meso increment per (point id, loading) pair.

    Accepts a WorkBatch or a plain iterable of pairs. Returns
    (results, failures): results are (pid, response, new state)
    triples sorted by point id; failures are (pid, message) pairs for
    increments the meso solver refused. Input states are not modified,
    so re-running a batch reproduces it bitwise.
    """
    items = batch.items if isinstance(batch, WorkBatch) else list(batch)
    results, failures = [], []
    for pid, loading in sorted(items, key=lambda it: it[0]):
        if pid not in registry_slice:
            raise SchedulerError(f"registry slice lacks point {pid}")
        cell, state = registry_slice[pid]
        try:
            new_state, response = solve_rve_increment(
                cell, state, loading, want_tangents=want_tangents)
        except SolverError as exc:
            failures.append((pid, str(exc)))
            continue
        results.append((pid, response, new_state))
    return results, failures


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    worker: int
    points: int
    seconds: float


class _PoolBase:
    """Shared round bookkeeping and merge logic for both pools."""

    def __init__(self):
        self._round = 0
        self.timings = []

    def _record(self, worker, points, seconds):
        rec = RoundRecord(self._round, worker, points, seconds)
        self.timings.append(rec)
        log.info("round=%d worker=%d points=%d seconds=%.4f",
                 rec.round_index, rec.worker, rec.points, rec.seconds)

    @staticmethod
    def _merge(pairs, failures):
        if failures:
            pids = sorted(pid for pid, _ in failures)
            detail = "; ".join(f"{pid}: {msg}" for pid, msg in
                               sorted(failures))
            raise SchedulerError(
                f"meso increments failed at points {pids} ({detail})",
                failures)
        return {pid: resp for pid, resp in sorted(pairs)}

    def _batches(self, assignments, loadings):
        batches = []
        for w, assignment in enumerate(assignments):
            missing = [pid for pid in assignment if pid not in loadings]
            if missing:
                raise SchedulerError(
                    f"round loadings lack points {missing}")
            batches.append(WorkBatch(self._round, w, tuple(
                (pid, loadings[pid]) for pid in sorted(assignment))))
        extra = set(loadings) - {p for a in assignments for p in a}
        if extra:
            raise SchedulerError(
                f"round loadings name unknown points {sorted(extra)}")
        return batches

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
        return False


class SerialPool(_PoolBase):
    """Single-process pool with the exact round/commit contract of
    WorkerPool; the reference for determinism comparisons."""

    def __init__(self, slices):
        super().__init__()
        self._resident = [dict(s) for s in slices]
        self._cache = [{} for _ in slices]

    def run_round(self, loadings, want_tangents=True):
        self._round += 1
        assignments = [tuple(s) for s in self._resident]
        pairs, failures = [], []
        for w, batch in enumerate(self._batches(assignments, loadings)):
            t0 = time.perf_counter()
            results, failed = evaluate_batch(
                batch, self._resident[w], want_tangents)
            self._cache[w] = {pid: st for pid, _, st in results}
            pairs.extend((pid, resp) for pid, resp, _ in results)
            failures.extend(failed)
            self._record(w, len(batch.items), time.perf_counter() - t0)
        return self._merge(pairs, failures)

    def commit(self):
        for resident, cache in zip(self._resident, self._cache):
            for pid, st in cache.items():
                cell, _ = resident[pid]
                resident[pid] = (cell, st)

    def stop(self):
        pass


def _worker_main(conn, registry_slice):
    resident = dict(registry_slice)
    cache = {}
    while True:
        msg = conn.recv()
        kind = msg[0]
        if kind == "round":
            _, batch, want_tangents = msg
            t0 = time.perf_counter()
            try:
                results, failures = evaluate_batch(
                    batch, resident, want_tangents)
            except Exception:
                conn.send(("error", traceback.format_exc()))
                continue
            cache = {pid: st for pid, _, st in results}
            conn.send(("done", [(pid, resp) for pid, resp, _ in results],
                       failures, time.perf_counter() - t0))
        elif kind == "commit":
            for pid, st in cache.items():
                cell, _ = resident[pid]
                resident[pid] = (cell, st)
            conn.send(("ok",))
        elif kind == "stop":
            conn.send(("ok",))
            conn.close()
            return


class WorkerPool(_PoolBase):
    """Fork-based pool; one resident process per registry slice.

    The slices are inherited at fork time, so cell meshes and cached
    factorizations are never serialized; rounds only move loadings and
    responses over the pipes.
    """

    def __init__(self, slices):
        super().__init__()
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        self._assignments = [tuple(s) for s in slices]
        self._conns, self._procs = [], []
        for s in slices:
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_worker_main, args=(child, s),
                               daemon=True)
            proc.start()
            child.close()
            self._conns.append(parent)
            self._procs.append(proc)

    @property
    def n_workers(self):
        return len(self._procs)

    def run_round(self, loadings, want_tangents=True):
        self._round += 1
        batches = self._batches(self._assignments, loadings)
        for conn, batch in zip(self._conns, batches):
            conn.send(("round", batch, want_tangents))
        pairs, failures = [], []
        for w, (conn, batch) in enumerate(zip(self._conns, batches)):
            reply = self._receive(conn, w)
            if reply[0] == "error":
                raise SchedulerError(f"worker {w} crashed:\n{reply[1]}")
            _, results, failed, seconds = reply
            pairs.extend(results)
            failures.extend(failed)
            self._record(w, len(batch.items), seconds)
        return self._merge(pairs, failures)

    def commit(self):
        for conn in self._conns:
            conn.send(("commit",))
        for w, conn in enumerate(self._conns):
            self._receive(conn, w)

    def stop(self):
        for conn, proc in zip(self._conns, self._procs):
            if proc.is_alive():
                try:
                    conn.send(("stop",))
                    conn.recv()
                except (BrokenPipeError, EOFError):
                    pass
            conn.close()
        for proc in self._procs:
            proc.join(timeout=10.0)
        self._conns, self._procs = [], []

    def _receive(self, conn, worker):
        try:
            return conn.recv()
        except EOFError as exc:
            raise SchedulerError(f"worker {worker} died mid-round") from exc


def make_pool(slices):
    """SerialPool for a single slice, forked WorkerPool otherwise."""
    if len(slices) <= 1:
        return SerialPool(slices)
    return WorkerPool(slices)
