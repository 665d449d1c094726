"""Deterministic discrete-event core.

Simulated time is integer microseconds. Events with equal timestamps fire in
insertion order, so a run is fully determined by the topology and the seed.
Long-running activities are written as generators that yield `sleep(...)`,
a `Trigger`, or another `Process`; the engine resumes them when the awaited
thing happens.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
from typing import Any, Callable, Generator, Iterator

import numpy as np

US_PER_MS = 1_000
US_PER_S = 1_000_000


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def s_to_us(s: float) -> int:
    return int(round(s * US_PER_S))


class Timeout:
    """Sentinel returned by a timed wait that expired."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "TIMEOUT"


TIMEOUT = Timeout()


class _Sleep:
    __slots__ = ("delay_us",)

    def __init__(self, delay_us: int):
        if delay_us < 0:
            raise ValueError("negative sleep")
        self.delay_us = int(delay_us)


def sleep(delay_us: int) -> _Sleep:
    return _Sleep(delay_us)


class Trigger:
    """One-shot completion event processes can wait on."""

    __slots__ = ("_sim", "fired", "value", "_waiters")

    def __init__(self, sim: "Simulator"):
        self._sim = sim
        self.fired = False
        self.value: Any = None
        self._waiters: list[_WaitSlot] = []

    def fire(self, value: Any = None) -> None:
        if self.fired:
            return
        self.fired = True
        self.value = value
        waiters, self._waiters = self._waiters, []
        for slot in waiters:
            slot.resolve(value)


class _WaitFor:
    __slots__ = ("trigger", "timeout_us")

    def __init__(self, trigger: Trigger, timeout_us: int | None):
        self.trigger = trigger
        self.timeout_us = timeout_us


def wait_for(trigger: Trigger, timeout_us: int | None = None) -> _WaitFor:
    return wait(trigger, timeout_us)


def wait(trigger: Trigger, timeout_us: int | None = None) -> _WaitFor:
    return _WaitFor(trigger, timeout_us)


class _WaitSlot:
    """Arbitrates between a trigger firing and its timeout; first wins."""

    __slots__ = ("process", "claimed", "timeout_handle")

    def __init__(self, process: "Process"):
        self.process = process
        self.claimed = False
        self.timeout_handle: _EventHandle | None = None

    def resolve(self, value: Any) -> None:
        if self.claimed:
            return
        self.claimed = True
        if self.timeout_handle is not None:
            self.timeout_handle.cancel()
        self.process._sim._resume(self.process, value)

    def expire(self) -> None:
        if self.claimed:
            return
        self.claimed = True
        self.process._sim._resume(self.process, TIMEOUT)


class Process:
    """A spawned generator activity."""

    __slots__ = ("_sim", "gen", "name", "done", "result", "error")

    def __init__(self, sim: "Simulator", gen: Generator, name: str = ""):
        self._sim = sim
        self.gen = gen
        self.name = name or getattr(gen, "__name__", "proc")
        self.done = Trigger(sim)
        self.result: Any = None
        self.error: BaseException | None = None

    @property
    def finished(self) -> bool:
        return self.done.fired


class _EventHandle:
    __slots__ = ("cancelled", "fn", "args")

    def __init__(self, fn: Callable, args: tuple):
        self.cancelled = False
        self.fn = fn
        self.args = args

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-clock event queue with generator-based processes."""

    def __init__(self, seed: int = 0, trace: bool = False):
        self.now_us = 0
        self.seed = seed
        self._heap: list[tuple[int, int, _EventHandle]] = []
        self._tie = itertools.count()
        self.trace: list[tuple[int, str, dict]] | None = [] if trace else None

    # -- randomness -----------------------------------------------------

    def rng(self, label: str) -> np.random.Generator:
        """Named child stream; independent of creation order."""
        digest = hashlib.blake2b(label.encode(), digest_size=8).digest()
        key = int.from_bytes(digest, "little")
        return np.random.default_rng(np.random.SeedSequence(entropy=(self.seed, key)))

    # -- scheduling -----------------------------------------------------

    def schedule(self, delay_us: int, fn: Callable, *args) -> _EventHandle:
        if delay_us < 0:
            raise ValueError("cannot schedule in the past")
        handle = _EventHandle(fn, args)
        heapq.heappush(self._heap, (self.now_us + int(delay_us), next(self._tie), handle))
        return handle

    def spawn(self, gen: Generator, name: str = "") -> Process:
        proc = Process(self, gen, name)
        self.schedule(0, self._step, proc, None, False)
        return proc

    def record(self, kind: str, **fields) -> None:
        if self.trace is not None:
            self.trace.append((self.now_us, kind, fields))

    def trace_lines(self) -> list[str]:
        if self.trace is None:
            return []
        return [
            json.dumps({"t_us": t, "kind": k, **f}, sort_keys=True)
            for t, k, f in self.trace
        ]

    # -- the loop -------------------------------------------------------

    def advance(self, until_us: int) -> list[tuple[int, str]]:
        """Fire every event with timestamp <= until_us, then set the clock.
        Returns (timestamp, label) for each event fired, in firing order."""
        if until_us < self.now_us:
            raise ValueError("clock cannot move backwards")
        fired: list[tuple[int, str]] = []
        while self._heap and self._heap[0][0] <= until_us:
            t, _, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self.now_us = t
            fired.append((t, getattr(handle.fn, "__qualname__", repr(handle.fn))))
            handle.fn(*handle.args)
        self.now_us = until_us
        return fired

    def run(self, until_us: int | None = None, max_events: int = 50_000_000) -> None:
        """Drain the queue (optionally up to a time bound)."""
        fired = 0
        while self._heap:
            t = self._heap[0][0]
            if until_us is not None and t > until_us:
                break
            t, _, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self.now_us = t
            handle.fn(*handle.args)
            fired += 1
            if fired > max_events:
                raise RuntimeError("event budget exhausted; runaway simulation?")
        if until_us is not None and until_us > self.now_us:
            self.now_us = until_us

    # -- process stepping -----------------------------------------------

    def _resume(self, proc: Process, value: Any) -> None:
        self.schedule(0, self._step, proc, value, False)

    def _step(self, proc: Process, value: Any, throwing: bool) -> None:
        try:
            if throwing:
                yielded = proc.gen.throw(value)
            else:
                yielded = proc.gen.send(value)
        except StopIteration as stop:
            proc.result = stop.value
            proc.done.fire(stop.value)
            return
        except BaseException as exc:  # noqa: BLE001 - propagated to joiner or re-raised
            proc.error = exc
            if proc.done._waiters:
                for slot in list(proc.done._waiters):
                    slot.claimed = True
                    if slot.timeout_handle is not None:
                        slot.timeout_handle.cancel()
                    self.schedule(0, self._step, slot.process, exc, True)
                proc.done._waiters.clear()
                proc.done.fired = True
                return
            raise

        if isinstance(yielded, _Sleep):
            self.schedule(yielded.delay_us, self._step, proc, None, False)
        elif isinstance(yielded, Trigger):
            self._wait_on(proc, yielded, None)
        elif isinstance(yielded, _WaitFor):
            self._wait_on(proc, yielded.trigger, yielded.timeout_us)
        elif isinstance(yielded, Process):
            child = yielded
            if child.error is not None:
                self.schedule(0, self._step, proc, child.error, True)
            elif child.finished:
                self.schedule(0, self._step, proc, child.result, False)
            else:
                self._wait_on(proc, child.done, None)
        else:
            raise TypeError(f"process yielded unsupported value: {yielded!r}")

    def _wait_on(self, proc: Process, trigger: Trigger, timeout_us: int | None) -> None:
        if trigger.fired:
            self.schedule(0, self._step, proc, trigger.value, False)
            return
        slot = _WaitSlot(proc)
        trigger._waiters.append(slot)
        if timeout_us is not None:
            slot.timeout_handle = self.schedule(timeout_us, slot.expire)


def run_to_completion(sim: Simulator, gen: Generator, until_us: int | None = None) -> Any:
    """Spawn `gen`, drain the simulator, and return the process result."""
    proc = sim.spawn(gen)
    sim.run(until_us=until_us)
    if proc.error is not None:
        raise proc.error
    if not proc.finished:
        raise RuntimeError(f"process {proc.name} did not finish by the time bound")
    return proc.result


def iter_processes(sim: Simulator, gens: Iterator[Generator]) -> list[Process]:
    return [sim.spawn(g) for g in gens]
