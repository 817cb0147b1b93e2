"""Deterministic discrete-event core on an integer-millisecond virtual clock.

All simulation state is mutated by exactly one thread. In threaded mode a
dedicated engine thread drains an inbox of jobs submitted by request
handlers and fires timer events; without a thread the submitting caller
pumps events inline (used by tests and the sequential harness). Either way
the observable order is the same: events fire in (deadline, rank, key,
insertion) order, and virtual time only moves when

  * a submitted job is still waiting on an in-simulation reply, or
  * someone explicitly advances the clock.

Jobs may return a generator; the engine drives it as a coroutine, resuming
each time a yielded :class:`Waiter` resolves. Code running on the engine
thread must never block on wall-clock primitives.
"""

from __future__ import annotations

import heapq
import inspect
import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Generator

log = logging.getLogger(__name__)

# Tie-break ranks: node-originated events first, then scheduler entries,
# then everything else. Within a rank, the key tuple orders events
# ((node_id, slot) for node events, (entry_id,) for scheduler entries).
RANK_NODE = 0
RANK_SCHEDULER = 1
RANK_MISC = 2


class SimDeadlock(RuntimeError):
    """An operation is waiting on a reply no pending event can produce."""


class Waiter:
    """One-shot completion resolved from inside event processing."""

    __slots__ = ("_done", "_value", "_exc", "_callbacks")

    def __init__(self):
        self._done = False
        self._value: Any = None
        self._exc: BaseException | None = None
        self._callbacks: list[Callable[[Any, BaseException | None], None]] = []

    @property
    def done(self) -> bool:
        return self._done

    def resolve(self, value: Any = None) -> None:
        self._finish(value, None)

    def reject(self, exc: BaseException) -> None:
        self._finish(None, exc)

    def _finish(self, value: Any, exc: BaseException | None) -> None:
        if self._done:
            raise RuntimeError("waiter already resolved")
        self._done = True
        self._value = value
        self._exc = exc
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            cb(value, exc)

    def subscribe(self, cb: Callable[[Any, BaseException | None], None]) -> None:
        if self._done:
            cb(self._value, self._exc)
        else:
            self._callbacks.append(cb)

    @classmethod
    def failed(cls, exc: BaseException) -> "Waiter":
        w = cls()
        w.reject(exc)
        return w

    @classmethod
    def ready(cls, value: Any = None) -> "Waiter":
        w = cls()
        w.resolve(value)
        return w


@dataclass(frozen=True)
class FiredEvent:
    at_ms: int
    rank: int
    key: tuple
    label: str


class _Event:
    __slots__ = ("at", "rank", "key", "seq", "fn", "label", "cancelled")

    def __init__(self, at: int, rank: int, key: tuple, seq: int, fn: Callable[[], None], label: str):
        self.at = at
        self.rank = rank
        self.key = key
        self.seq = seq
        self.fn = fn
        self.label = label
        self.cancelled = False

    def sort_key(self):
        return (self.at, self.rank, self.key, self.seq)


class _Job:
    __slots__ = ("fn", "future")

    def __init__(self, fn, future):
        self.fn = fn
        self.future = future


class _Future:
    """Cross-thread completion for external callers."""

    __slots__ = ("event", "value", "exc")

    def __init__(self):
        self.event = threading.Event()
        self.value = None
        self.exc = None

    def set(self, value, exc):
        self.value = value
        self.exc = exc
        self.event.set()

    def wait(self, timeout=None):
        if not self.event.wait(timeout):
            raise TimeoutError("engine did not complete the operation in time")
        if self.exc is not None:
            raise self.exc
        return self.value


class _Advance:
    __slots__ = ("target", "future", "fired")

    def __init__(self, target, future):
        self.target = target
        self.future = future
        self.fired: list[FiredEvent] = []


class Engine:
    """Event queue plus the single thread allowed to mutate simulation state."""

    def __init__(self, start_ms: int = 0, realtime: bool = False):
        self._lock = threading.RLock()
        self._cv = threading.Condition(self._lock)
        self._now = int(start_ms)
        self._heap: list[tuple[tuple, _Event]] = []
        self._seq = itertools.count()
        self._jobs: deque[_Job] = deque()
        self._advances: list[_Advance] = []
        self._pending_ops = 0
        self._thread: threading.Thread | None = None
        self._stopped = False
        self._realtime = realtime
        self.trace: list[FiredEvent] = []

    # -- clock ---------------------------------------------------------------

    def now(self) -> int:
        with self._lock:
            return self._now

    # -- engine-side API (call only from event/job context) -------------------

    def schedule(self, delay_ms: int, fn: Callable[[], None], *,
                 rank: int = RANK_MISC, key: tuple = (), label: str = "") -> _Event:
        return self.schedule_at(self._now + int(delay_ms), fn, rank=rank, key=key, label=label)

    def schedule_at(self, at_ms: int, fn: Callable[[], None], *,
                    rank: int = RANK_MISC, key: tuple = (), label: str = "") -> _Event:
        if at_ms < self._now:
            raise ValueError(f"cannot schedule in the past ({at_ms} < {self._now})")
        ev = _Event(int(at_ms), rank, key, next(self._seq), fn, label)
        heapq.heappush(self._heap, (ev.sort_key(), ev))
        self._cv.notify_all()
        return ev

    def cancel(self, ev: _Event) -> None:
        ev.cancelled = True

    def sleep(self, delay_ms: int) -> Waiter:
        w = Waiter()
        self.schedule(delay_ms, w.resolve, label="sleep")
        return w

    def spawn(self, gen: Generator, on_error: Callable[[BaseException], None] | None = None) -> None:
        """Run a coroutine detached from any caller (fire-and-forget)."""

        def done(value, exc):
            if exc is not None:
                if on_error is not None:
                    on_error(exc)
                else:
                    log.warning("detached task failed: %s", exc)

        self._drive(gen, done)

    def _drive(self, gen: Generator, done_cb: Callable[[Any, BaseException | None], None]) -> None:
        def step(value, exc):
            try:
                if exc is not None:
                    yielded = gen.throw(exc)
                else:
                    yielded = gen.send(value)
            except StopIteration as stop:
                done_cb(stop.value, None)
            except BaseException as e:  # noqa: BLE001 - surfaced to the caller
                done_cb(None, e)
            else:
                if isinstance(yielded, Waiter):
                    yielded.subscribe(step)
                else:
                    done_cb(None, TypeError(f"coroutine yielded {type(yielded).__name__}, expected Waiter"))

        step(None, None)

    # -- external API ----------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            if self._thread is not None:
                return
            self._stopped = False
            self._thread = threading.Thread(target=self._loop, name="vwsn-engine", daemon=True)
            self._thread.start()

    def stop(self) -> None:
        with self._cv:
            self._stopped = True
            self._cv.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def call(self, fn: Callable[[], Any], timeout: float | None = 30.0) -> Any:
        """Run ``fn`` at the current virtual instant; if it returns a
        generator, drive it (advancing virtual time as needed) and return
        its final value."""
        future = _Future()
        job = _Job(fn, future)
        with self._cv:
            if self._thread is None:
                self._run_job(job)
                self._pump_ops()
                return future.wait(0)
            self._jobs.append(job)
            self._cv.notify_all()
        return future.wait(timeout)

    def advance(self, dt_ms: int) -> list[FiredEvent]:
        """Fire every event with deadline <= now+dt in order; set now=now+dt."""
        if dt_ms <= 0:
            raise ValueError("dt_ms must be positive")
        with self._cv:
            adv = _Advance(self._now + int(dt_ms), _Future())
            if self._thread is None:
                self._advances.append(adv)
                self._pump_advances()
                return adv.future.wait(0)
            self._advances.append(adv)
            self._cv.notify_all()
        return adv.future.wait(None)

    def run_until_idle(self, limit: int = 100_000) -> list[FiredEvent]:
        """Drain every pending event regardless of deadline (test helper)."""
        fired = []
        with self._lock:
            for _ in range(limit):
                if not self._fire_next(None, fired):
                    break
        return fired

    # -- internals ---------------------------------------------------------------

    def _run_job(self, job: _Job) -> None:
        try:
            result = job.fn()
        except BaseException as e:  # noqa: BLE001
            job.future.set(None, e)
            return
        if inspect.isgenerator(result):
            self._pending_ops += 1

            def done(value, exc):
                self._pending_ops -= 1
                job.future.set(value, exc)

            self._drive(result, done)
        else:
            job.future.set(result, None)

    def _peek(self) -> _Event | None:
        while self._heap:
            _, ev = self._heap[0]
            if ev.cancelled:
                heapq.heappop(self._heap)
                continue
            return ev
        return None

    def _fire_next(self, limit_ms: int | None, record: list[FiredEvent] | None = None) -> bool:
        ev = self._peek()
        if ev is None or (limit_ms is not None and ev.at > limit_ms):
            return False
        heapq.heappop(self._heap)
        self._now = ev.at
        fired = FiredEvent(ev.at, ev.rank, ev.key, ev.label)
        self.trace.append(fired)
        if record is not None:
            record.append(fired)
        try:
            ev.fn()
        except BaseException:  # noqa: BLE001 - event handlers must not kill the loop
            log.exception("event %s at t=%d raised", ev.label, ev.at)
        return True

    def _pump_ops(self) -> None:
        while self._pending_ops > 0:
            if not self._fire_next(None):
                raise SimDeadlock(
                    f"{self._pending_ops} operation(s) waiting with an empty event queue"
                )

    def _pump_advances(self) -> None:
        while self._advances:
            adv = self._advances[0]
            while self._fire_next(adv.target, adv.fired):
                pass
            self._now = max(self._now, adv.target)
            self._advances.pop(0)
            adv.future.set(adv.fired, None)

    def _loop(self) -> None:
        with self._cv:
            while not self._stopped:
                if self._jobs:
                    self._run_job(self._jobs.popleft())
                    continue
                if self._pending_ops > 0:
                    if self._fire_next(None):
                        continue
                    # Nothing queued can resolve the waiting operation; park
                    # until another caller submits work (the caller-side
                    # timeout catches true deadlocks).
                    self._cv.wait()
                    continue
                if self._advances:
                    adv = self._advances[0]
                    nxt = self._peek()
                    if nxt is not None and nxt.at <= adv.target:
                        if self._realtime:
                            self._pace(nxt.at)
                            continue
                        self._fire_next(adv.target, adv.fired)
                        continue
                    self._now = max(self._now, adv.target)
                    self._advances.pop(0)
                    adv.future.set(adv.fired, None)
                    continue
                if self._realtime and self._peek() is not None:
                    nxt = self._peek()
                    if self._pace(nxt.at):
                        self._fire_next(None)
                    continue
                self._cv.wait()

    def _pace(self, deadline_ms: int) -> bool:
        """Wall-clock pacing for --realtime mode: wait out the gap to the
        next deadline, bailing early if new work arrives."""
        gap_s = max(0.0, (deadline_ms - self._now) / 1000.0)
        if gap_s == 0.0:
            return True
        start = time.monotonic()
        self._cv.wait(timeout=gap_s)
        if self._jobs or self._stopped:
            return False
        return (time.monotonic() - start) >= gap_s * 0.999
