"""Execution of one location plan by one location instance.

Operators are push-based: each receives elements and end-of-stream on
numbered input ports and forwards results to its consumers. The worker
loop interleaves pulling from local sources with draining the inbox of
network events, and finishes once every source and every inbound channel
has reached end-of-stream.
"""

from __future__ import annotations

import queue
import time
from dataclasses import dataclass, field

from ..compiler import LocationPlan, PlanNode
from ..ir import OpKind, PatternTypeError, SendPattern
from ..prelude import ClusterId, InstanceContext, enter_instance, exit_instance
from ..staging import materialize
from .errors import HandshakeTimeout
from .manifest import Manifest, instance_key


SOURCE_BATCH = 256
DEFAULT_HANDSHAKE_TIMEOUT = 10.0


class Op:
    def __init__(self, node: PlanNode):
        self.node = node
        self.outputs: list[tuple[Op, int]] = []

    def emit(self, value) -> None:
        for op, port in self.outputs:
            op.push(port, value)

    def emit_eos(self) -> None:
        for op, port in self.outputs:
            op.eos(port)

    def push(self, port: int, value) -> None:
        raise NotImplementedError

    def eos(self, port: int) -> None:
        self.emit_eos()


class MapOp(Op):
    def __init__(self, node, fn):
        super().__init__(node)
        self.fn = fn

    def push(self, port, value):
        self.emit(self.fn(value))


class FilterOp(Op):
    def __init__(self, node, pred):
        super().__init__(node)
        self.pred = pred

    def push(self, port, value):
        if self.pred(value):
            self.emit(value)


class FoldOp(Op):
    def __init__(self, node, init, combine):
        super().__init__(node)
        self.acc = init()
        self.combine = combine

    def push(self, port, value):
        self.acc = self.combine(self.acc, value)

    def eos(self, port):
        self.emit(self.acc)
        self.emit_eos()


class ForEachOp(Op):
    def __init__(self, node, action):
        super().__init__(node)
        self.action = action

    def push(self, port, value):
        self.action(value)


class BinaryOp(Op):
    def __init__(self, node):
        super().__init__(node)
        self.open_ports = 2

    def eos(self, port):
        self.open_ports -= 1
        if self.open_ports == 0:
            self.finish()
            self.emit_eos()

    def finish(self) -> None:
        pass


class CrossProductOp(BinaryOp):
    def __init__(self, node):
        super().__init__(node)
        self.seen = ([], [])

    def push(self, port, value):
        left, right = self.seen
        if port == 0:
            for y in right:
                self.emit((value, y))
            left.append(value)
        else:
            for x in left:
                self.emit((x, value))
            right.append(value)


def _as_pair(value, what: str):
    if not isinstance(value, tuple) or len(value) != 2:
        raise PatternTypeError(f"{what} expects (key, value) pairs, got {value!r}")
    return value


class JoinOp(BinaryOp):
    """Hash equi-join on the first component, emitted once both sides end."""

    def __init__(self, node):
        super().__init__(node)
        self.left: list = []
        self.index: dict = {}

    def push(self, port, value):
        k, v = _as_pair(value, "join")
        if port == 0:
            self.left.append((k, v))
        else:
            self.index.setdefault(k, []).append(v)

    def finish(self):
        for k, va in self.left:
            for vb in self.index.get(k, ()):
                self.emit((k, (va, vb)))


class DifferenceOp(BinaryOp):
    """Distinct elements of the left input absent from the right input."""

    def __init__(self, node):
        super().__init__(node)
        self.left: list = []
        self.right: list = []

    def push(self, port, value):
        (self.left if port == 0 else self.right).append(value)

    def finish(self):
        try:
            exclude = set(self.right)
            emitted: set | list = set()
        except TypeError:
            exclude = self.right
            emitted = []
        for v in self.left:
            if v in exclude or v in emitted:
                continue
            if isinstance(emitted, set):
                emitted.add(v)
            else:
                emitted.append(v)
            self.emit(v)


class UnionOp(BinaryOp):
    def push(self, port, value):
        self.emit(value)


class SendOp(Op):
    def __init__(self, node, member: int, connections: list):
        super().__init__(node)
        self.member = ClusterId(member)
        self.connections = connections
        self.pattern = node.pattern

    def push(self, port, value):
        pattern = self.pattern
        if pattern is SendPattern.ONE_TO_ONE:
            self.connections[0].send(value)
        elif pattern is SendPattern.MANY_TO_ONE:
            self.connections[0].send((self.member, value))
        else:
            if not (isinstance(value, tuple) and len(value) == 2 and isinstance(value[0], ClusterId)):
                raise PatternTypeError(f"{pattern.value} send needs (ClusterId, T) elements, got {value!r}")
            target, payload = value
            if target >= len(self.connections):
                raise PatternTypeError(f"no cluster member {int(target)} (size {len(self.connections)})")
            if pattern is SendPattern.MANY_TO_MANY:
                payload = (self.member, payload)
            self.connections[target].send(payload)

    def eos(self, port):
        for conn in self.connections:
            conn.close()


class RecvOp(Op):
    def __init__(self, node, expected_senders: int):
        super().__init__(node)
        self.expected = expected_senders
        self.opened = 0
        self.finished = 0
        self.delivered = 0

    def deliver(self, values) -> None:
        self.delivered += len(values)
        for v in values:
            self.emit(v)

    def sender_done(self) -> None:
        self.finished += 1
        if self.finished == self.expected:
            self.emit_eos()

    @property
    def done(self) -> bool:
        return self.finished >= self.expected


class SourceOp(Op):
    def __init__(self, node, thunk):
        super().__init__(node)
        self.thunk = thunk
        self.it = None
        self.done = False

    def step(self, n: int) -> None:
        if self.it is None:
            self.it = iter(self.thunk())
        emit = self.emit
        for _ in range(n):
            try:
                value = next(self.it)
            except StopIteration:
                self.done = True
                self.emit_eos()
                return
            emit(value)


@dataclass
class WorkerResult:
    key: str
    log: list[str]
    sent: dict[int, int] = field(default_factory=dict)
    delivered: dict[int, int] = field(default_factory=dict)


class Worker:
    """Runs ``plan`` as member ``member`` of its location."""

    def __init__(self, plan: LocationPlan, manifest: Manifest, member: int, transport,
                 handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT):
        self.plan = plan
        self.manifest = manifest
        self.member = member
        self.transport = transport
        self.handshake_timeout = handshake_timeout
        self.location = plan.location
        self.key = instance_key(plan.location, member)
        if member >= manifest.size(plan.location):
            raise ValueError(f"{self.key} is not in the manifest")

    def _build(self, connections: dict[int, list]) -> tuple[list[SourceOp], dict[int, RecvOp]]:
        ops: dict[int, Op] = {}
        sources, recvs = [], {}
        for n in self.plan.nodes:
            fns = [materialize(text)[0] for text in n.payloads]
            kind = n.kind
            if kind is OpKind.SOURCE_ITER:
                op = SourceOp(n, fns[0])
                sources.append(op)
            elif kind is OpKind.MAP:
                op = MapOp(n, fns[0])
            elif kind is OpKind.FILTER:
                op = FilterOp(n, fns[0])
            elif kind is OpKind.FOLD:
                op = FoldOp(n, fns[0], fns[1])
            elif kind is OpKind.FOR_EACH:
                op = ForEachOp(n, fns[0])
            elif kind is OpKind.CROSS_PRODUCT:
                op = CrossProductOp(n)
            elif kind is OpKind.JOIN:
                op = JoinOp(n)
            elif kind is OpKind.DIFFERENCE:
                op = DifferenceOp(n)
            elif kind is OpKind.UNION:
                op = UnionOp(n)
            elif kind is OpKind.NETWORK_SEND:
                op = SendOp(n, self.member, connections[n.channel])
            elif kind is OpKind.NETWORK_RECV:
                op = RecvOp(n, self.manifest.size(n.peer))
                recvs[n.channel] = op
            else:
                raise ValueError(f"unknown operator {kind}")
            ops[n.node_id] = op
            for port, src in enumerate(n.inputs):
                ops[src].outputs.append((op, port))
        return sources, recvs

    def _connect(self, deadline: float) -> dict[int, list]:
        connections: dict[int, list] = {}
        for ch in self.plan.sends():
            conns = []
            for m in range(self.manifest.size(ch.peer)):
                entry = self.manifest.lookup(ch.peer, m)
                conns.append(self.transport.connect(ch.channel, entry.key, entry.addr, entry.port, deadline))
            connections[ch.channel] = conns
        return connections

    def run(self) -> WorkerResult:
        ctx = InstanceContext(str(self.location), self.member, dict(self.manifest.cluster_sizes))
        token = enter_instance(ctx)
        listener = None
        connections: dict[int, list] = {}
        ok = False
        try:
            deadline = time.monotonic() + self.handshake_timeout
            if self.plan.recvs():
                entry = self.manifest.lookup(self.location, self.member)
                listener = self.transport.listen(self.key, entry.addr, entry.port)
            connections = self._connect(deadline)
            sources, recvs = self._build(connections)
            flat = [c for conns in connections.values() for c in conns]
            self._loop(sources, recvs, listener, flat, deadline)
            ok = True
            return WorkerResult(
                self.key, ctx.log,
                sent={ch: sum(c.sent for c in conns) for ch, conns in connections.items()},
                delivered={ch: op.delivered for ch, op in recvs.items()},
            )
        finally:
            if not ok:
                for conns in connections.values():
                    for c in conns:
                        try:
                            c.abort()
                        except OSError:
                            pass
            if listener is not None:
                listener.close()
            exit_instance(token)

    def _loop(self, sources, recvs: dict[int, RecvOp], listener, all_conns: list, deadline: float) -> None:
        inbox = listener.inbox if listener is not None else None
        active = list(sources)

        def handle(event) -> None:
            kind, channel, payload = event
            op = recvs.get(channel)
            if kind == "error":
                raise payload
            if op is None:
                raise HandshakeTimeout(f"{self.key} got a connection for unknown channel {channel}")
            if kind == "data":
                op.deliver(payload)
            elif kind == "eos":
                op.sender_done()
            elif kind == "open":
                op.opened += 1

        while True:
            for src in active:
                src.step(SOURCE_BATCH)
            active = [s for s in active if not s.done]
            if inbox is not None:
                for _ in range(64):
                    try:
                        event = inbox.get_nowait()
                    except queue.Empty:
                        break
                    handle(event)
            if not active and all(op.done for op in recvs.values()):
                return
            if not active:
                for c in all_conns:
                    c.flush()
                try:
                    handle(inbox.get(timeout=0.05))
                except queue.Empty:
                    pass
                if time.monotonic() > deadline:
                    missing = [ch for ch, op in recvs.items() if op.opened < op.expected]
                    if missing:
                        raise HandshakeTimeout(f"{self.key}: senders never connected on channels {missing}")


def run_worker(plan: LocationPlan, manifest: Manifest, member: int, transport,
               handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT) -> WorkerResult:
    return Worker(plan, manifest, member, transport, handshake_timeout).run()

