"""Clock and timer abstraction.

Every component above the transport reads time and schedules work through
these interfaces only. Live nodes run on WallRuntime (real time, one worker
thread); simulated nodes run on the simulator's event queue. Nothing else in
the package may call time.time() or start timers directly, which is what
makes simulation runs bit-reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable, Optional, Protocol


class Clock(Protocol):
    def now_ms(self) -> int:
        """Current time in milliseconds (simulated or wall)."""


class TimerHandle:
    __slots__ = ("when_ms", "_fn", "_cancelled")

    def __init__(self, when_ms: int, fn: Callable[[], None]):
        self.when_ms = when_ms
        self._fn = fn
        self._cancelled = False

    def cancel(self) -> None:
        self._cancelled = True

    @property
    def cancelled(self) -> bool:
        return self._cancelled

    def fire(self) -> None:
        if not self._cancelled:
            self._fn()


class Scheduler(Protocol):
    def call_at(self, when_ms: int, fn: Callable[[], None]) -> TimerHandle: ...

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle: ...


class WallClock:
    """Wall time relative to process start, in whole milliseconds."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)


class WallRuntime:
    """Single-threaded event loop over wall time.

    All protocol state of one live node is mutated from this loop's thread.
    Transport receive callbacks (which may run on socket threads) hand off
    into the loop via post().
    """

    def __init__(self) -> None:
        self.clock = WallClock()
        self._heap: list[tuple[int, int, TimerHandle]] = []
        self._seq = itertools.count()
        self._inbox: list[Callable[[], None]] = []
        self._cond = threading.Condition()
        self._running = False
        self._thread: Optional[threading.Thread] = None

    def now_ms(self) -> int:
        return self.clock.now_ms()

    def call_at(self, when_ms: int, fn: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle(when_ms, fn)
        with self._cond:
            heapq.heappush(self._heap, (when_ms, next(self._seq), handle))
            self._cond.notify()
        return handle

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self.now_ms() + max(0, delay_ms), fn)

    def post(self, fn: Callable[[], None]) -> None:
        """Enqueue fn to run on the loop thread as soon as possible."""
        with self._cond:
            self._inbox.append(fn)
            self._cond.notify()

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._running = False
            self._cond.notify()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _run(self) -> None:
        while True:
            with self._cond:
                if not self._running:
                    return
                now = self.now_ms()
                work: list[Callable[[], None]] = self._inbox
                self._inbox = []
                due: list[TimerHandle] = []
                while self._heap and self._heap[0][0] <= now:
                    _, _, handle = heapq.heappop(self._heap)
                    due.append(handle)
                if not work and not due:
                    timeout = None
                    if self._heap:
                        timeout = max(0.0, (self._heap[0][0] - now) / 1000.0)
                    self._cond.wait(timeout=timeout if timeout is None else min(timeout, 0.5))
                    continue
            for fn in work:
                fn()
            for handle in due:
                handle.fire()
