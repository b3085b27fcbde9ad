"""Stage-one builder API and the global dataflow graph.

Everything here runs at stage one: calling an operator appends a node to
the :class:`FlowGraph` and returns a handle to the resulting stream. No
user code executes except for inferring the element type of literal
sources.
"""

from __future__ import annotations

import itertools
import typing
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .prelude import ClusterId
from .specs import ClusterSpec, ProcessSpec
from .staging import Quoted, runtime_quote

CODEC_ID = "tlv-le-v1"


class FlowError(Exception):
    pass


class LocationMismatch(FlowError):
    pass


class SelfSend(FlowError):
    pass


class PatternTypeError(FlowError):
    pass


class LinearityError(FlowError):
    pass


class ValidationError(FlowError):
    def __init__(self, rule: str, node_id: int | None, detail: str = ""):
        self.rule = rule
        self.node_id = node_id
        msg = f"{rule} violated at node {node_id}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class LocationKind(str, Enum):
    PROCESS = "process"
    CLUSTER = "cluster"


class OpKind(str, Enum):
    SOURCE_ITER = "SourceIter"
    MAP = "Map"
    FILTER = "Filter"
    FOLD = "Fold"
    FOR_EACH = "ForEach"
    CROSS_PRODUCT = "CrossProduct"
    JOIN = "Join"
    DIFFERENCE = "Difference"
    UNION = "Union"
    NETWORK_SEND = "NetworkSend"
    NETWORK_RECV = "NetworkRecv"


NETWORK_KINDS = frozenset({OpKind.NETWORK_SEND, OpKind.NETWORK_RECV})
BINARY_KINDS = frozenset({OpKind.CROSS_PRODUCT, OpKind.JOIN, OpKind.DIFFERENCE, OpKind.UNION})


class SendPattern(str, Enum):
    ONE_TO_ONE = "OneToOne"
    ONE_TO_MANY = "OneToMany"
    MANY_TO_ONE = "ManyToOne"
    MANY_TO_MANY = "ManyToMany"

    @property
    def addressed(self) -> bool:
        """Destination is a cluster, so elements carry a target member id."""
        return self in (SendPattern.ONE_TO_MANY, SendPattern.MANY_TO_MANY)

    @property
    def tagged(self) -> bool:
        """Source is a cluster, so delivered elements carry the sender's id."""
        return self in (SendPattern.MANY_TO_ONE, SendPattern.MANY_TO_MANY)


def infer_pattern(src: "LocationId", dst: "LocationId") -> SendPattern:
    return {
        (LocationKind.PROCESS, LocationKind.PROCESS): SendPattern.ONE_TO_ONE,
        (LocationKind.PROCESS, LocationKind.CLUSTER): SendPattern.ONE_TO_MANY,
        (LocationKind.CLUSTER, LocationKind.PROCESS): SendPattern.MANY_TO_ONE,
        (LocationKind.CLUSTER, LocationKind.CLUSTER): SendPattern.MANY_TO_MANY,
    }[(src.kind, dst.kind)]


@dataclass(frozen=True, order=True)
class LocationId:
    kind: LocationKind
    index: int

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "LocationId":
        kind, _, index = text.partition(":")
        try:
            return cls(LocationKind(kind), int(index))
        except ValueError:
            raise ValueError(f"bad location {text!r}, expected process:N or cluster:N") from None


@dataclass(frozen=True)
class OperatorNode:
    node_id: int
    kind: OpKind
    location: LocationId
    inputs: tuple[int, ...] = ()
    payloads: tuple[Quoted, ...] = ()
    pattern: SendPattern | None = None
    codec: str | None = None
    channel: int | None = None
    peer: LocationId | None = None


# -- element type tags --------------------------------------------------------
# Types are plain Python annotations: int, str, ClusterId, tuple[A, B] or Any.


def _type_of(value: Any) -> Any:
    if isinstance(value, ClusterId):
        return ClusterId
    if isinstance(value, tuple):
        return tuple[tuple(_type_of(v) for v in value)] if value else tuple
    return type(value)


def common_type(values) -> Any:
    types = {_type_of(v) for v in values}
    return types.pop() if len(types) == 1 else Any


def pair_shape(t: Any) -> tuple[Any, Any] | None:
    """``(A, B)`` if ``t`` is known to be a 2-tuple type, else None."""
    if typing.get_origin(t) is tuple:
        args = typing.get_args(t)
        if len(args) == 2:
            return args
    return None


def type_name(t: Any) -> str:
    if t is Any:
        return "Any"
    if typing.get_origin(t) is tuple:
        return "(" + ", ".join(type_name(a) for a in typing.get_args(t)) + ")"
    return getattr(t, "__name__", str(t))


# -- locations ------------------------------------------------------------------


class Location:
    def __init__(self, flow: "FlowGraph", loc_id: LocationId, spec):
        self.flow = flow
        self.id = loc_id
        self.spec = spec

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.id}>"


class Process(Location):
    """Exactly one instance of the computation placed on it."""


class Cluster(Location):
    """``size`` identical members, each running the same dataflow."""

    def ids(self) -> Quoted:
        """Staged iterable of this cluster's member ids, resolved at runtime."""
        return runtime_quote(f"cluster_ids({self.id.index})", element_type=ClusterId)


# -- streams --------------------------------------------------------------------


def _require_quoted(value, what: str) -> Quoted:
    if not isinstance(value, Quoted):
        raise TypeError(f"{what} must be wrapped in q(...), got {type(value).__name__}")
    return value


class Stream:
    """Handle to an unbounded sequence of elements at one location.

    Handles are linear: each may feed exactly one downstream operator.
    """

    def __init__(self, flow: "FlowGraph", node_id: int, location: LocationId, element_type: Any = Any):
        self.flow = flow
        self.node_id = node_id
        self.location = location
        self.element_type = element_type
        self._consumed = False

    def __repr__(self) -> str:
        return f"<Stream n{self.node_id} @{self.location} : {type_name(self.element_type)}>"

    def _consume(self) -> None:
        if self._consumed:
            raise LinearityError(f"stream n{self.node_id} was already consumed")
        self._consumed = True

    def _unary(self, kind: OpKind, payloads, element_type) -> "Stream":
        self._consume()
        node_id = self.flow._add(kind, self.location, (self.node_id,), payloads)
        return Stream(self.flow, node_id, self.location, element_type)

    def _binary(self, other: "Stream", kind: OpKind, element_type) -> "Stream":
        if not isinstance(other, Stream) or other.flow is not self.flow:
            raise FlowError("both inputs must be streams of the same flow")
        if other.location != self.location:
            raise LocationMismatch(
                f"{kind.value} inputs live at {self.location} and {other.location}; send one of them explicitly"
            )
        if other is self:
            raise LinearityError(f"stream n{self.node_id} cannot feed both inputs of {kind.value}")
        if other._consumed:
            raise LinearityError(f"stream n{other.node_id} was already consumed")
        self._consume()
        other._consume()
        node_id = self.flow._add(kind, self.location, (self.node_id, other.node_id), ())
        return Stream(self.flow, node_id, self.location, element_type)

    def map(self, f: Quoted, out_type: Any = Any) -> "Stream":
        _require_quoted(f, "map function")
        return self._unary(OpKind.MAP, (f,), out_type)

    def filter(self, pred: Quoted) -> "Stream":
        _require_quoted(pred, "filter predicate")
        return self._unary(OpKind.FILTER, (pred,), self.element_type)

    def fold(self, init: Quoted, combine: Quoted, out_type: Any = Any) -> "Stream":
        _require_quoted(init, "fold initial value")
        _require_quoted(combine, "fold combine function")
        if init.is_function:
            raise TypeError("fold initial value must be an expression, not a function")
        return self._unary(OpKind.FOLD, (init, combine), out_type)

    def for_each(self, action: Quoted) -> int:
        _require_quoted(action, "for_each action")
        self._consume()
        return self.flow._add(OpKind.FOR_EACH, self.location, (self.node_id,), (action,))

    def cross_product(self, other: "Stream") -> "Stream":
        t = Any
        if self.element_type is not Any and other.element_type is not Any:
            t = tuple[self.element_type, other.element_type]
        return self._binary(other, OpKind.CROSS_PRODUCT, t)

    def join(self, other: "Stream") -> "Stream":
        a, b = pair_shape(self.element_type), pair_shape(other.element_type)
        for side, t, shape in (("left", self.element_type, a), ("right", other.element_type, b)):
            if t is not Any and shape is None:
                raise PatternTypeError(f"join {side} input must hold (key, value) pairs, not {type_name(t)}")
        t = Any
        if a and b:
            if a[0] is not Any and b[0] is not Any and a[0] != b[0]:
                raise PatternTypeError(f"join key types differ: {type_name(a[0])} vs {type_name(b[0])}")
            t = tuple[a[0], tuple[a[1], b[1]]]
        return self._binary(other, OpKind.JOIN, t)

    def difference(self, other: "Stream") -> "Stream":
        a, b = self.element_type, other.element_type
        if a is not Any and b is not Any and a != b:
            raise PatternTypeError(f"difference of {type_name(a)} and {type_name(b)}")
        return self._binary(other, OpKind.DIFFERENCE, a)

    def union(self, other: "Stream") -> "Stream":
        t = self.element_type if self.element_type == other.element_type else Any
        return self._binary(other, OpKind.UNION, t)

    def send_serialized(self, dest: Location) -> "Stream":
        """Move this stream to ``dest`` over a network channel.

        Sending to a cluster requires ``(ClusterId, T)`` elements; the id
        picks the receiving member and is stripped on delivery. Receiving
        from a cluster yields ``(ClusterId, T)`` tagged with the sender.
        """
        if not isinstance(dest, Location) or dest.flow is not self.flow:
            raise FlowError("destination must be a location of the same flow")
        src = self.location
        if dest.id == src and dest.id.kind is LocationKind.PROCESS:
            raise SelfSend(f"stream is already at {src}")
        pattern = infer_pattern(src, dest.id)
        payload_t = self.element_type
        if pattern.addressed:
            shape = pair_shape(payload_t)
            if payload_t is not Any and (shape is None or shape[0] not in (ClusterId, Any)):
                raise PatternTypeError(
                    f"{pattern.value} send needs (ClusterId, T) elements, got {type_name(payload_t)}"
                )
            payload_t = shape[1] if shape else Any
        delivered_t = tuple[ClusterId, payload_t] if pattern.tagged else payload_t

        self._consume()
        flow = self.flow
        channel = flow._next_channel
        flow._next_channel += 1
        send = flow._add(
            OpKind.NETWORK_SEND, src, (self.node_id,), (),
            pattern=pattern, codec=CODEC_ID, channel=channel, peer=dest.id,
        )
        recv = flow._add(
            OpKind.NETWORK_RECV, dest.id, (send,), (),
            pattern=pattern, codec=CODEC_ID, channel=channel, peer=src,
        )
        return Stream(flow, recv, dest.id, delivered_t)



# -- the graph ------------------------------------------------------------------


@dataclass
class FlowGraph:
    """The global dataflow graph, built incrementally through its methods."""

    nodes: list[OperatorNode] = field(default_factory=list)
    locations: list[tuple[LocationId, Any]] = field(default_factory=list)
    _next_channel: int = 0
    _next_index: dict = field(default_factory=lambda: {LocationKind.PROCESS: 0, LocationKind.CLUSTER: 0})
    _handles: dict = field(default_factory=dict, repr=False)

    @property
    def edges(self) -> list[tuple[int, int, int]]:
        """``(producer, consumer, port)`` triples, channel edges included."""
        return [(src, n.node_id, port) for n in self.nodes for port, src in enumerate(n.inputs)]

    def node(self, node_id: int) -> OperatorNode:
        return self.nodes[node_id]

    def location(self, loc_id: LocationId) -> Location:
        return self._handles[loc_id]

    def spec_of(self, loc_id: LocationId):
        for lid, spec in self.locations:
            if lid == loc_id:
                return spec
        raise KeyError(str(loc_id))

    def _register(self, kind: LocationKind, spec, cls) -> Location:
        loc_id = LocationId(kind, self._next_index[kind])
        self._next_index[kind] += 1
        self.locations.append((loc_id, spec))
        handle = cls(self, loc_id, spec)
        self._handles[loc_id] = handle
        return handle

    def _add(self, kind: OpKind, location: LocationId, inputs, payloads, **network) -> int:
        node_id = len(self.nodes)
        self.nodes.append(OperatorNode(node_id, kind, location, tuple(inputs), tuple(payloads), **network))
        return node_id

    def process(self, spec: ProcessSpec | None) -> Process:
        if spec is not None and not isinstance(spec, ProcessSpec):
            raise TypeError(f"process() needs a ProcessSpec, got {type(spec).__name__}")
        return self._register(LocationKind.PROCESS, spec, Process)

    def cluster(self, spec: ClusterSpec | None) -> Cluster:
        if spec is not None and not isinstance(spec, ClusterSpec):
            raise TypeError(f"cluster() needs a ClusterSpec, got {type(spec).__name__}")
        return self._register(LocationKind.CLUSTER, spec, Cluster)

    def source_iter(self, location: Location, iterable: Quoted, element_type: Any = None) -> Stream:
        _require_quoted(iterable, "source iterable")
        if not isinstance(location, Location) or location.flow is not self:
            raise FlowError("source location must belong to this flow")
        if iterable.is_function:
            raise TypeError("source_iter needs an iterable expression, not a function")
        if element_type is None:
            element_type = iterable.element_type
        if element_type is None:
            element_type = Any
            if not iterable.runtime_only:
                try:
                    element_type = common_type(itertools.islice(iter(iterable.eval()), 256))
                except Exception:
                    element_type = Any
        node_id = self._add(OpKind.SOURCE_ITER, location.id, (), (iterable,))
        return Stream(self, node_id, location.id, element_type)

    def self_id_source(self, cluster: Cluster) -> Stream:
        """One-element stream at each member holding that member's own id."""
        if not isinstance(cluster, Cluster) or cluster.flow is not self:
            raise FlowError("self_id_source needs a cluster of this flow")
        return self.source_iter(cluster, runtime_quote("(self_id(),)", element_type=ClusterId))

    def validate(self) -> None:
        validate(self)


def new_flow() -> FlowGraph:
    return FlowGraph()


def topological_order(nodes: list[OperatorNode]) -> list[int]:
    """Kahn's algorithm with ties broken by node id; raises on cycles."""
    import heapq

    present = {n.node_id for n in nodes}
    indegree = {n.node_id: sum(1 for i in n.inputs if i in present) for n in nodes}
    consumers: dict[int, list[int]] = {n.node_id: [] for n in nodes}
    for n in nodes:
        for i in n.inputs:
            if i in present:
                consumers[i].append(n.node_id)
    ready = [nid for nid, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for c in consumers[nid]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(nodes):
        stuck = min(nid for nid, d in indegree.items() if d > 0)
        raise ValidationError("acyclicity", stuck, "graph contains a cycle")
    return order


_ARITY = {
    OpKind.SOURCE_ITER: (0, 1), OpKind.MAP: (1, 1), OpKind.FILTER: (1, 1), OpKind.FOLD: (1, 2),
    OpKind.FOR_EACH: (1, 1), OpKind.CROSS_PRODUCT: (2, 0), OpKind.JOIN: (2, 0),
    OpKind.DIFFERENCE: (2, 0), OpKind.UNION: (2, 0), OpKind.NETWORK_SEND: (1, 0),
    OpKind.NETWORK_RECV: (1, 0),
}


def validate(flow: FlowGraph) -> None:
    """Check the structural rules every compiled graph must satisfy."""
    registered = {lid for lid, _ in flow.locations}
    ids = {n.node_id for n in flow.nodes}
    consumed: dict[int, int] = {}
    channels: dict[int, list[OperatorNode]] = {}

    for n in flow.nodes:
        if n.location not in registered:
            raise ValidationError("registered-location", n.node_id, f"{n.location} is not a location of this flow")
        n_inputs, n_payloads = _ARITY[n.kind]
        if len(n.inputs) != n_inputs or len(n.payloads) != n_payloads:
            raise ValidationError("arity", n.node_id, f"{n.kind.value} has wrong input/payload count")
        for src in n.inputs:
            if src not in ids:
                raise ValidationError("dangling-input", n.node_id, f"input n{src} does not exist")
            consumed[src] = consumed.get(src, 0) + 1
            producer = flow.nodes[src]
            if n.kind is OpKind.NETWORK_RECV:
                if producer.kind is not OpKind.NETWORK_SEND or producer.channel != n.channel:
                    raise ValidationError("channel-pairing", n.node_id, "receiver is not fed by its channel's sender")
            elif producer.location != n.location:
                raise ValidationError(
                    "placement", n.node_id, f"edge n{src}->n{n.node_id} crosses {producer.location}->{n.location}"
                )
            elif producer.kind is OpKind.NETWORK_SEND:
                raise ValidationError("channel-pairing", n.node_id, "only a receiver may consume a sender")
        if n.kind in NETWORK_KINDS:
            if n.channel is None or n.pattern is None or n.peer is None:
                raise ValidationError("channel-pairing", n.node_id, "network node lacks channel metadata")
            channels.setdefault(n.channel, []).append(n)

    for src, count in consumed.items():
        if count > 1:
            raise ValidationError("linear-use", src, f"stream consumed {count} times")

    for channel, ends in channels.items():
        kinds = sorted(e.kind.value for e in ends)
        if kinds != [OpKind.NETWORK_RECV.value, OpKind.NETWORK_SEND.value]:
            raise ValidationError("channel-pairing", ends[0].node_id, f"channel {channel} has ends {kinds}")
        send = next(e for e in ends if e.kind is OpKind.NETWORK_SEND)
        recv = next(e for e in ends if e.kind is OpKind.NETWORK_RECV)
        if send.peer != recv.location or recv.peer != send.location:
            raise ValidationError("channel-pairing", send.node_id, f"channel {channel} peers disagree")
        if infer_pattern(send.location, recv.location) is not send.pattern or recv.pattern is not send.pattern:
            raise ValidationError("pattern", send.node_id, f"channel {channel} pattern does not match its locations")
        if send.location == recv.location and send.location.kind is LocationKind.PROCESS:
            raise ValidationError("self-send", send.node_id, "process channel loops back to itself")

    topological_order(flow.nodes)
