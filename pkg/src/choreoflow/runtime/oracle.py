"""Reference semantics: evaluate the whole graph inside one process.

The oracle does not use plans or the streaming operators. It walks the
global graph in topological order and computes each node's complete
output list for every location instance, calling the quoted callables
directly. Network receivers merge their senders' lists with a seeded
interleaving that keeps each sender's order, standing in for arbitrary
arrival order across senders.
"""

from __future__ import annotations

import functools
import random

from ..ir import FlowGraph, LocationId, LocationKind, OpKind, PatternTypeError, SendPattern, validate
from ..prelude import ClusterId, InstanceContext, enter_instance, exit_instance
from .manifest import instance_key, size_of
from .result import RunResult


def _interleave(streams: list[list], rng: random.Random) -> list:
    cursors = [0] * len(streams)
    remaining = [i for i, s in enumerate(streams) if s]
    out = []
    while remaining:
        i = rng.choice(remaining)
        out.append(streams[i][cursors[i]])
        cursors[i] += 1
        if cursors[i] == len(streams[i]):
            remaining.remove(i)
    return out


def _addressed(value, pattern: SendPattern, size: int):
    if not (isinstance(value, tuple) and len(value) == 2 and isinstance(value[0], ClusterId)):
        raise PatternTypeError(f"{pattern.value} send needs (ClusterId, T) elements, got {value!r}")
    if value[0] >= size:
        raise PatternTypeError(f"no cluster member {int(value[0])} (size {size})")
    return value


def resolve_sizes(flow: FlowGraph, cluster_sizes=None) -> dict[int, int]:
    sizes: dict[int, int] = {}
    given = dict(cluster_sizes or {})
    for loc, spec in flow.locations:
        if loc.kind is not LocationKind.CLUSTER:
            continue
        if loc.index in given:
            sizes[loc.index] = int(given[loc.index])
        elif loc in given:
            sizes[loc.index] = int(given[loc])
        elif spec is not None:
            sizes[loc.index] = len(spec.hosts())
        else:
            raise KeyError(f"no size given for {loc}")
        if sizes[loc.index] < 1:
            raise ValueError(f"{loc} must have at least one member")
    return sizes


def run_oracle(flow: FlowGraph, cluster_sizes=None, seed: int = 0) -> RunResult:
    """Run every location instance of ``flow`` in this process.

    ``cluster_sizes`` maps cluster index (or LocationId) to member count;
    clusters left out take their size from their spec binding.
    """
    validate(flow)
    sizes = resolve_sizes(flow, cluster_sizes)
    rng = random.Random(seed)
    contexts: dict[tuple[LocationId, int], InstanceContext] = {}
    for loc, _spec in flow.locations:
        for m in range(size_of(loc, sizes)):
            contexts[(loc, m)] = InstanceContext(str(loc), m, dict(sizes))

    out: dict[tuple[int, int], list] = {}
    sent: dict[int, int] = {}
    delivered: dict[int, int] = {}
    order = sorted(n.node_id for n in flow.nodes)  # ids are assigned after inputs

    for nid in order:
        n = flow.nodes[nid]
        for m in range(size_of(n.location, sizes)):
            token = enter_instance(contexts[(n.location, m)])
            try:
                out[(nid, m)] = _eval_node(flow, n, m, out, sizes, rng, sent, delivered)
            finally:
                exit_instance(token)

    result = RunResult()
    for (loc, m), ctx in contexts.items():
        key = instance_key(loc, m)
        result.logs[key] = ctx.log
        result.status[key] = 0
    for ch in sorted(set(sent) | set(delivered)):
        result.channel_stats[ch] = {"sent": sent.get(ch, 0), "delivered": delivered.get(ch, 0)}
    return result


def _eval_node(flow, n, m, out, sizes, rng, sent, delivered) -> list:
    kind = n.kind
    ins = [out[(i, m)] for i in n.inputs] if kind is not OpKind.NETWORK_RECV else []
    if kind is OpKind.SOURCE_ITER:
        return list(n.payloads[0].eval())
    if kind is OpKind.MAP:
        f = n.payloads[0].eval
        return [f(v) for v in ins[0]]
    if kind is OpKind.FILTER:
        p = n.payloads[0].eval
        return [v for v in ins[0] if p(v)]
    if kind is OpKind.FOLD:
        return [functools.reduce(n.payloads[1].eval, ins[0], n.payloads[0].eval())]
    if kind is OpKind.FOR_EACH:
        act = n.payloads[0].eval
        for v in ins[0]:
            act(v)
        return []
    if kind is OpKind.CROSS_PRODUCT:
        return [(x, y) for x in ins[0] for y in ins[1]]
    if kind is OpKind.JOIN:
        pairs = []
        for a in ins[0]:
            for b in ins[1]:
                for side in (a, b):
                    if not (isinstance(side, tuple) and len(side) == 2):
                        raise PatternTypeError(f"join expects (key, value) pairs, got {side!r}")
                if a[0] == b[0]:
                    pairs.append((a[0], (a[1], b[1])))
        return pairs
    if kind is OpKind.DIFFERENCE:
        result = []
        for v in ins[0]:
            if v not in ins[1] and v not in result:
                result.append(v)
        return result
    if kind is OpKind.UNION:
        return ins[0] + ins[1]
    if kind is OpKind.NETWORK_SEND:
        sent[n.channel] = sent.get(n.channel, 0) + len(ins[0])
        return ins[0]
    if kind is OpKind.NETWORK_RECV:
        send = flow.nodes[n.inputs[0]]
        n_senders = size_of(send.location, sizes)
        size = size_of(n.location, sizes)
        per_sender = []
        for s in range(n_senders):
            items = []
            for v in out[(send.node_id, s)]:
                if n.pattern.addressed:
                    target, v = _addressed(v, n.pattern, size)
                    if target != m:
                        continue
                if n.pattern.tagged:
                    v = (ClusterId(s), v)
                items.append(v)
            per_sender.append(items)
        merged = _interleave(per_sender, rng)
        delivered[n.channel] = delivered.get(n.channel, 0) + len(merged)
        return merged
    raise ValueError(f"unknown operator {kind}")
