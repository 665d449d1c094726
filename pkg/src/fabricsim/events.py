"""Handler engine: functions bound to logs, fired once per appended entry.

Handlers never wait on other handlers; there is no wait primitive at all.
All handler effects are expressed as appends whose message ids derive
deterministically from (handler, source log, trigger seq, effect index), so
re-firing after a crash is absorbed by dedup and the observable log state
converges to the fault-free outcome. Progress is tracked per binding in a
small cursor log so a restarted node resumes where it left off.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Generator

from .errors import SimulatedCrash, UnknownHandler
from .logstore import LogEntry

CURSOR_CAPACITY = 64


def effect_message_id(handler_id: str, log_name: str, seq: int, index: int) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(handler_id.encode())
    h.update(b"\x00")
    h.update(log_name.encode())
    h.update(struct.pack("<QI", seq, index))
    return h.digest()


@dataclass(frozen=True)
class AppendEffect:
    """A follow-on append. Either a ready payload, or an activity generator
    that occupies simulated time and returns the payload (embedded tasks).

    message_id defaults to a hash of (handler, source log, trigger seq,
    effect index); effects whose identity is logical rather than positional
    (dataflow operands) override it."""

    target_node: str
    log_name: str
    payload: bytes | None = None
    activity: Callable[[], Generator] | None = None
    message_id: bytes | None = None


@dataclass(frozen=True)
class HandlerBinding:
    log_name: str
    handler_id: str

    @property
    def binding_id(self) -> str:
        return f"{self.log_name}__{self.handler_id}"

    @property
    def cursor_log(self) -> str:
        return f"__cursor__{self.binding_id}"


@dataclass
class HandlerContext:
    """Read access to local logs for the duration of one invocation."""

    node_name: str
    now_us: int
    _registry: object

    def read(self, log_name: str, seq: int) -> LogEntry:
        return self._registry.get(log_name).read(seq)

    def scan(self, log_name: str, lo: int, hi: int):
        return self._registry.get(log_name).scan(lo, hi)

    def head(self, log_name: str) -> int:
        """Highest assigned seq (0 if the log is empty)."""
        return self._registry.get(log_name).next_seq - 1


@dataclass(frozen=True)
class InvocationFailure:
    binding_id: str
    seq: int
    error: str


class HandlerEngine:
    """Per-node dispatcher from log appends to handler invocations."""

    def __init__(self, node):
        self.node = node
        self.handlers: dict[str, Callable] = {}
        self.bindings: list[HandlerBinding] = []
        self._by_log: dict[str, list[HandlerBinding]] = {}
        self._cursors: dict[str, int] = {}
        self._pumping: set[str] = set()
        self.failures: list[InvocationFailure] = []
        self.firing_log: list[tuple[str, int]] = []
        self._invocations = 0
        self._crash_at: tuple[int, str] | None = None

    # -- setup -------------------------------------------------------------

    def register_handler(self, handler_id: str, fn: Callable) -> None:
        self.handlers[handler_id] = fn

    def bind(self, log_name: str, handler_id: str) -> HandlerBinding:
        if handler_id not in self.handlers:
            raise UnknownHandler(f"handler {handler_id!r} not registered on "
                                 f"{self.node.name}")
        binding = HandlerBinding(log_name, handler_id)
        self.bindings.append(binding)
        self._by_log.setdefault(log_name, []).append(binding)
        self._cursors[binding.binding_id] = self._restore_cursor(binding)
        self._ensure_pump(binding)
        return binding

    def set_crash_plan(self, invocation_index: int, phase: str) -> None:
        """Fault injection: raise SimulatedCrash at the given boundary.

        phase 'after_effects' models a crash between applying effects and
        committing the progress cursor; 'after_cursor' models the boundary
        between two invocations.
        """
        if phase not in ("after_effects", "after_cursor"):
            raise ValueError(f"unknown crash phase {phase!r}")
        self._crash_at = (invocation_index, phase)

    # -- progress cursor ----------------------------------------------------

    def _cursor_store(self, binding: HandlerBinding):
        registry = self.node.registry
        if not registry.exists(binding.cursor_log):
            return registry.create(binding.cursor_log, 8, CURSOR_CAPACITY)
        return registry.get(binding.cursor_log)

    def _restore_cursor(self, binding: HandlerBinding) -> int:
        store = self._cursor_store(binding)
        if store.next_seq == 1:
            return 0
        entry = store.read(store.next_seq - 1)
        return struct.unpack("<Q", entry.payload)[0]

    def _commit_cursor(self, binding: HandlerBinding, seq: int) -> None:
        store = self._cursor_store(binding)
        mid = effect_message_id("__cursor", binding.binding_id, seq, 0)
        store.append(struct.pack("<Q", seq), mid, self.node.sim.now_us)
        self._cursors[binding.binding_id] = seq

    # -- dispatch -------------------------------------------------------------

    def notify_append(self, log_name: str, seq: int | None = None) -> None:
        for binding in self._by_log.get(log_name, ()):
            self._ensure_pump(binding)

    def resume(self) -> None:
        """After recovery: pick up every binding from its persisted cursor."""
        for binding in self.bindings:
            self._ensure_pump(binding)

    def _ensure_pump(self, binding: HandlerBinding) -> None:
        if binding.binding_id in self._pumping:
            return
        self._pumping.add(binding.binding_id)
        self.node.sim.spawn(self._pump(binding), name=f"pump:{binding.binding_id}")

    def _pump(self, binding: HandlerBinding):
        """Serial, in-order invocation loop for one binding."""
        try:
            log = self.node.registry.get(binding.log_name)
            while True:
                cursor = self._cursors[binding.binding_id]
                if cursor >= log.next_seq - 1:
                    return
                seq = cursor + 1
                if seq < log.earliest_seq:
                    # entry evicted before it could fire; bound logs should be
                    # sized so this cannot happen, but never wedge the binding
                    self._cursors[binding.binding_id] = seq
                    continue
                entry = log.read(seq)
                self._invocations += 1
                index = self._invocations
                effects = yield from self.fire(binding, entry)
                del effects
                self._maybe_crash(index, "after_effects")
                self._commit_cursor(binding, entry.seq)
                self._maybe_crash(index, "after_cursor")
        finally:
            self._pumping.discard(binding.binding_id)

    def fire(self, binding: HandlerBinding, entry: LogEntry):
        """Invoke the handler for one durable entry and apply its effects.

        A handler exception marks the invocation failed and the engine moves
        on; it never takes the node down.
        """
        fn = self.handlers[binding.handler_id]
        ctx = HandlerContext(self.node.name, self.node.sim.now_us, self.node.registry)
        try:
            effects = list(fn(entry, ctx) or ())
        except SimulatedCrash:
            raise
        except Exception as exc:  # noqa: BLE001 - handler panic is contained
            self.failures.append(InvocationFailure(binding.binding_id, entry.seq,
                                                   f"{type(exc).__name__}: {exc}"))
            effects = []
        self.firing_log.append((binding.binding_id, entry.seq))
        yield from self.apply_effects(binding.handler_id, binding.log_name,
                                      entry.seq, effects)
        return effects

    def apply_effects(self, handler_id: str, source_log: str, trigger_seq: int,
                      effects: list[AppendEffect]):
        for index, effect in enumerate(effects):
            mid = effect.message_id
            if mid is None:
                mid = effect_message_id(handler_id, source_log, trigger_seq, index)
            payload = effect.payload
            if effect.activity is not None:
                payload = yield from effect.activity()
            if effect.target_node == self.node.name:
                self.node.append_local(effect.log_name, payload, mid)
            else:
                yield from self.node.client.remote_append(
                    effect.target_node, effect.log_name, payload, mid)

    def _maybe_crash(self, invocation_index: int, phase: str) -> None:
        if self._crash_at == (invocation_index, phase):
            raise SimulatedCrash(f"injected crash at invocation {invocation_index} "
                                 f"({phase}) on {self.node.name}")
