"""Slicing the global graph into per-location plans.

A plan holds the nodes one location executes, in topological order, with
quoted payloads spliced to self-contained source text, plus the location's
half of every network channel. Plans serialize to a line-oriented text
format that the runtime parses back; DOT output is for inspection.

Plan text format::

    # choreoflow location plan v1
    location<TAB>process:0
    nodes<TAB>4
    channels<TAB>1
    channel<TAB><id><TAB>send|recv<TAB><pattern><TAB><peer>
    node<TAB><id><TAB><kind><TAB><inputs or -><TAB><payloads JSON>[<TAB>ch=<id> pattern=<p> peer=<loc> codec=<c>]

Inputs are comma-separated node ids in port order; receivers list ``-``
since their producer lives in another plan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .ir import FlowGraph, LocationId, OpKind, SendPattern, topological_order, validate

PLAN_HEADER = "# choreoflow location plan v1"


@dataclass(frozen=True)
class ChannelEntry:
    channel: int
    direction: str
    pattern: SendPattern
    peer: LocationId


@dataclass(frozen=True)
class PlanNode:
    node_id: int
    kind: OpKind
    inputs: tuple[int, ...] = ()
    payloads: tuple[str, ...] = ()
    channel: int | None = None
    pattern: SendPattern | None = None
    peer: LocationId | None = None
    codec: str | None = None


@dataclass(frozen=True)
class LocationPlan:
    location: LocationId
    nodes: tuple[PlanNode, ...]
    channels: tuple[ChannelEntry, ...]

    def sends(self) -> list[ChannelEntry]:
        return [c for c in self.channels if c.direction == "send"]

    def recvs(self) -> list[ChannelEntry]:
        return [c for c in self.channels if c.direction == "recv"]


def compile_flow(flow: FlowGraph) -> dict[LocationId, LocationPlan]:
    """Validate ``flow`` and slice it into one plan per registered location."""
    validate(flow)
    order = topological_order(flow.nodes)
    plans = {}
    for loc_id, _spec in flow.locations:
        nodes = []
        channels = []
        for nid in order:
            n = flow.nodes[nid]
            if n.location != loc_id:
                continue
            inputs = () if n.kind is OpKind.NETWORK_RECV else n.inputs
            nodes.append(PlanNode(
                n.node_id, n.kind, inputs, tuple(p.spliced_text for p in n.payloads),
                n.channel, n.pattern, n.peer, n.codec,
            ))
            if n.kind is OpKind.NETWORK_SEND:
                channels.append(ChannelEntry(n.channel, "send", n.pattern, n.peer))
            elif n.kind is OpKind.NETWORK_RECV:
                channels.append(ChannelEntry(n.channel, "recv", n.pattern, n.peer))
        channels.sort(key=lambda c: (c.channel, c.direction))
        plans[loc_id] = LocationPlan(loc_id, tuple(nodes), tuple(channels))
    return plans


def emit_plan_text(plan: LocationPlan) -> str:
    lines = [
        PLAN_HEADER,
        f"location\t{plan.location}",
        f"nodes\t{len(plan.nodes)}",
        f"channels\t{len(plan.channels)}",
    ]
    for c in plan.channels:
        lines.append(f"channel\t{c.channel}\t{c.direction}\t{c.pattern.value}\t{c.peer}")
    for n in plan.nodes:
        inputs = ",".join(str(i) for i in n.inputs) or "-"
        fields = ["node", str(n.node_id), n.kind.value, inputs, json.dumps(list(n.payloads))]
        if n.channel is not None:
            fields.append(f"ch={n.channel} pattern={n.pattern.value} peer={n.peer} codec={n.codec}")
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


class PlanFormatError(ValueError):
    pass


def parse_plan_text(text: str) -> LocationPlan:
    lines = text.splitlines()
    if not lines or lines[0] != PLAN_HEADER:
        raise PlanFormatError("missing plan header")
    location = None
    n_nodes = n_channels = None
    nodes: list[PlanNode] = []
    channels: list[ChannelEntry] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        tag = fields[0]
        try:
            if tag == "location":
                location = LocationId.parse(fields[1])
            elif tag == "nodes":
                n_nodes = int(fields[1])
            elif tag == "channels":
                n_channels = int(fields[1])
            elif tag == "channel":
                channels.append(ChannelEntry(
                    int(fields[1]), fields[2], SendPattern(fields[3]), LocationId.parse(fields[4])
                ))
            elif tag == "node":
                inputs = () if fields[3] == "-" else tuple(int(i) for i in fields[3].split(","))
                payloads = tuple(json.loads(fields[4]))
                net: dict = {}
                if len(fields) > 5:
                    kv = dict(item.split("=", 1) for item in fields[5].split(" "))
                    net = dict(
                        channel=int(kv["ch"]),
                        pattern=SendPattern(kv["pattern"]),
                        peer=LocationId.parse(kv["peer"]),
                        codec=kv["codec"],
                    )
                nodes.append(PlanNode(int(fields[1]), OpKind(fields[2]), inputs, payloads, **net))
            else:
                raise PlanFormatError(f"line {lineno}: unknown record {tag!r}")
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, PlanFormatError):
                raise
            raise PlanFormatError(f"line {lineno}: {exc}") from exc
    if location is None:
        raise PlanFormatError("plan has no location record")
    if n_nodes != len(nodes) or n_channels != len(channels):
        raise PlanFormatError("record counts do not match the header")
    return LocationPlan(location, tuple(nodes), tuple(channels))


def _dot_escape(text: str, limit: int = 60) -> str:
    if len(text) > limit:
        text = text[: limit - 3] + "..."
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def emit_dot(flow: FlowGraph) -> str:
    """Graphviz rendering with one subgraph cluster per location."""
    lines = ["digraph flow {", "  rankdir=LR;", "  node [shape=box];"]
    for loc_id, _spec in flow.locations:
        name = str(loc_id).replace(":", "_")
        lines.append(f"  subgraph cluster_{name} {{")
        lines.append(f'    label="{loc_id}";')
        for n in flow.nodes:
            if n.location != loc_id:
                continue
            label = f"n{n.node_id} {n.kind.value}"
            for p in n.payloads:
                label += "\\n" + _dot_escape(p.spliced_text)
            lines.append(f'    n{n.node_id} [label="{label}"];')
        lines.append("  }")
    for src, dst, port in flow.edges:
        consumer = flow.nodes[dst]
        if consumer.kind is OpKind.NETWORK_RECV:
            lines.append(
                f'  n{src} -> n{dst} [style=dashed, color=blue, label="{consumer.pattern.value} ch{consumer.channel}"];'
            )
        elif len(consumer.inputs) > 1:
            lines.append(f'  n{src} -> n{dst} [label="{port}"];')
        else:
            lines.append(f"  n{src} -> n{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
