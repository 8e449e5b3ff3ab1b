"""Worker execution, barriers and clocks.

``ThreadRuntime`` runs workers as OS threads against the wall clock.
``VirtualRuntime`` runs them as greenlets under a discrete-event scheduler:
exactly one worker executes at a time, the one with the smallest virtual
time (ties broken by rank), so runs are deterministic. Data transfers are
fluid flows sharing server targets and interfaces with max-min fairness.
"""

from __future__ import annotations

import heapq
import math
import threading
import time
from typing import Callable, NamedTuple, Sequence

import greenlet

from .errors import WorkloadError


class WorkerContext(NamedTuple):
    rank: int
    node: int
    process: int


Worker = tuple[WorkerContext, Callable[[], None]]


class Runtime:
    virtual = False

    def now_ns(self) -> int:
        raise NotImplementedError

    def current(self) -> WorkerContext | None:
        raise NotImplementedError

    def barrier(self):
        raise NotImplementedError

    def sleep(self, seconds: float):
        """Charge ``seconds`` of modelled service time (no-op on real clocks)."""

    def transfer(self, size: int, weights: dict):
        """Move ``size`` bytes through resources with the given usage weights."""

    def run(self, workers: Sequence[Worker]):
        raise NotImplementedError


def _fail(failures: list[tuple[WorkerContext, BaseException]]):
    ctx, exc = failures[0]
    if isinstance(exc, WorkloadError) and exc.identity is not None:
        raise exc
    raise WorkloadError(f"worker node={ctx.node} process={ctx.process} (rank {ctx.rank}) failed: {exc!r}",
                        identity=ctx) from exc


class ThreadRuntime(Runtime):
    """One OS thread per worker; timestamps from the monotonic clock."""

    def __init__(self):
        self._local = threading.local()
        self._barrier: threading.Barrier | None = None

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def current(self) -> WorkerContext | None:
        return getattr(self._local, "ctx", None)

    def barrier(self):
        if self._barrier is not None and self.current() is not None:
            self._barrier.wait()

    def run(self, workers: Sequence[Worker]):
        self._barrier = threading.Barrier(len(workers))
        failures: list[tuple[WorkerContext, BaseException]] = []

        def body(ctx, fn):
            self._local.ctx = ctx
            try:
                fn()
            except threading.BrokenBarrierError:
                pass
            except BaseException as exc:
                failures.append((ctx, exc))
                self._barrier.abort()

        threads = [threading.Thread(target=body, args=w, name=f"worker-{w[0].rank}") for w in workers]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self._barrier = None
        if failures:
            _fail(failures)


def max_min_rates(flows: dict) -> dict:
    """Max-min fair rates by progressive filling.

    ``flows`` maps a flow key to ``{resource: weight}``; a flow at rate ``r``
    consumes ``r * weight`` of a resource whose capacity is 1. Flows with no
    weighted resource get an infinite rate.
    """
    rates = {f: 0.0 for f in flows}
    residual: dict = {}
    active = [f for f in flows if any(w > 0 for w in flows[f].values())]
    for f in flows:
        if f not in active:
            rates[f] = math.inf
    while active:
        slope: dict = {}
        for f in active:
            for r, w in flows[f].items():
                if w > 0:
                    slope[r] = slope.get(r, 0.0) + w
        step = math.inf
        for r, s in slope.items():
            step = min(step, residual.get(r, 1.0) / s)
        saturated = {}
        for r, s in slope.items():
            left = residual.get(r, 1.0) - step * s
            residual[r] = left
            if left <= 1e-12:
                saturated[r] = True
        for f in active:
            rates[f] += step
        active = [f for f in active if not any(r in saturated for r, w in flows[f].items() if w > 0)]
    return rates


class _Flow:
    __slots__ = ("remaining", "weights", "rate")

    def __init__(self, size: float, weights: dict):
        self.remaining = float(size)
        self.weights = weights
        self.rate = 0.0


class FlowModel:
    """Active transfers progressing at max-min fair rates."""

    def __init__(self):
        self.flows: dict[int, _Flow] = {}

    def add(self, key: int, size: float, weights: dict):
        self.flows[key] = _Flow(size, weights)
        self._reshare()

    def _reshare(self):
        rates = max_min_rates({k: f.weights for k, f in self.flows.items()})
        for k, f in self.flows.items():
            f.rate = rates[k]

    def next_completion(self) -> float:
        """Seconds until the earliest active flow finishes."""
        best = math.inf
        for f in self.flows.values():
            best = min(best, f.remaining / f.rate if f.rate > 0 else math.inf)
        return best

    def advance(self, dt: float) -> list[int]:
        """Progress all flows by ``dt`` seconds; return keys that finished."""
        done = []
        for k, f in self.flows.items():
            if f.rate == math.inf:
                f.remaining = 0.0
            else:
                f.remaining -= f.rate * dt
            if f.remaining <= 1e-6:
                done.append(k)
        if done:
            for k in done:
                del self.flows[k]
            self._reshare()
        return done


class VirtualRuntime(Runtime):
    """Deterministic discrete-event execution on a virtual clock.

    Outside ``run`` the runtime keeps a standalone clock so backend calls made
    from the main program still advance time sensibly.
    """

    virtual = True

    def __init__(self, start: float = 0.0):
        self.now = start
        self._main: greenlet.greenlet | None = None
        self._current: WorkerContext | None = None

    def now_ns(self) -> int:
        return round(self.now * 1e9)

    def current(self) -> WorkerContext | None:
        return self._current

    def _request(self, *req):
        if self._main is None or greenlet.getcurrent() is self._main:
            return False
        self._main.switch(req)
        return True

    def sleep(self, seconds: float):
        if seconds < 0:
            raise ValueError("negative sleep")
        if not self._request("sleep", seconds):
            self.now += seconds

    def transfer(self, size: int, weights: dict):
        if size <= 0:
            return
        if not self._request("transfer", size, weights):
            rate = max_min_rates({0: weights})[0]
            self.now += size / rate if rate != math.inf else 0.0

    def barrier(self):
        self._request("barrier")

    def run(self, workers: Sequence[Worker]):
        if self._main is not None:
            raise RuntimeError("VirtualRuntime.run is not re-entrant")
        self._main = greenlet.getcurrent()
        try:
            self._loop(workers)
        finally:
            self._main = None
            self._current = None

    def _loop(self, workers: Sequence[Worker]):
        ctxs = {ctx.rank: ctx for ctx, _ in workers}
        lets = {ctx.rank: greenlet.greenlet(fn) for ctx, fn in workers}
        ready = [(self.now, rank) for rank in sorted(lets)]
        heapq.heapify(ready)
        flows = FlowModel()
        at_barrier: list[int] = []
        live = len(lets)

        while live:
            t_flow = self.now + flows.next_completion()
            t_ready = ready[0][0] if ready else math.inf
            if t_flow == math.inf and t_ready == math.inf:
                raise WorkloadError(f"deadlock: {len(at_barrier)} of {live} workers at barrier")
            if t_flow <= t_ready:
                dt = t_flow - self.now
                self.now = t_flow
                for rank in flows.advance(dt):
                    heapq.heappush(ready, (self.now, rank))
                continue

            t, rank = heapq.heappop(ready)
            if flows.flows:
                for done in flows.advance(t - self.now):
                    heapq.heappush(ready, (t, done))
            self.now = max(self.now, t)
            self._current = ctxs[rank]
            try:
                req = lets[rank].switch()
            except BaseException as exc:
                for other in lets.values():
                    if not other.dead:
                        other.throw(greenlet.GreenletExit)
                self._current = None
                _fail([(ctxs[rank], exc)])
            self._current = None

            if lets[rank].dead:
                live -= 1
            elif req[0] == "sleep":
                heapq.heappush(ready, (self.now + req[1], rank))
            elif req[0] == "transfer":
                flows.add(rank, req[1], req[2])
            elif req[0] == "barrier":
                at_barrier.append(rank)
            if at_barrier and len(at_barrier) == live:
                for r in sorted(at_barrier):
                    heapq.heappush(ready, (self.now, r))
                at_barrier.clear()
