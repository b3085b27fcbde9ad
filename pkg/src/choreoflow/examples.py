"""Example choreographies, each written as one function over its locations."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from .ir import FlowGraph
from .prelude import fnv1a64, gossip_sample
from .specs import CloudMachine, ClusterSpec, ProcessSpec
from .staging import q

GCP_MICRO = ("e2-micro", "debian-cloud/debian-11", "us-west1-a")


def pipeline(flow: FlowGraph, process_spec: ProcessSpec) -> None:
    """Filter and double 0..4 on one process, print the result on another."""
    my_process = flow.process(process_spec)
    numbers = flow.source_iter(my_process, q("range(0, 5)"))
    transformed = numbers.filter(q(lambda v: v > 2)).map(q(lambda v: v * 2), out_type=int)
    my_second_process = flow.process(process_spec)
    on_second = transformed.send_serialized(my_second_process)
    on_second.for_each(q(lambda v: print(v)))


def broadcast(flow: FlowGraph, process_spec: ProcessSpec, cluster_spec: ClusterSpec) -> None:
    my_process = flow.process(process_spec)
    my_cluster = flow.cluster(cluster_spec)
    data_to_broadcast = flow.source_iter(my_process, q("range(0, 5)"))
    stream_of_cluster_ids = flow.source_iter(my_process, my_cluster.ids())
    (
        stream_of_cluster_ids
        .cross_product(data_to_broadcast)
        .send_serialized(my_cluster)
        .for_each(q(lambda v: print(v)))
    )


def _collect_ids(flow: FlowGraph, at, cluster):
    """Singleton stream holding the sorted tuple of ``cluster``'s member ids."""
    return flow.source_iter(at, cluster.ids()).fold(q("()"), q(lambda acc, i: tuple(sorted(acc + (i,)))))


def partition(flow: FlowGraph, process_spec: ProcessSpec, cluster_spec: ClusterSpec, words=None) -> None:
    """Word count with words routed to members by FNV-1a hash of the word."""
    words = tuple(default_corpus() if words is None else words)
    leader = flow.process(process_spec)
    workers = flow.cluster(cluster_spec)
    member_ids = _collect_ids(flow, leader, workers)
    corpus = flow.source_iter(leader, q("words", words=words))
    routed = member_ids.cross_product(corpus).map(q(lambda p: (p[0][fnv1a64(p[1]) % len(p[0])], p[1])))
    counts = routed.send_serialized(workers).fold(q("{}"), q(lambda acc, w: {**acc, w: acc.get(w, 0) + 1}))
    counts.for_each(q(lambda c: [print(w, n) for w, n in sorted(c.items())]))


def heartbeat(flow: FlowGraph, process_spec: ProcessSpec, cluster_spec: ClusterSpec, ticks: int = 3) -> None:
    """Leader broadcasts ``ticks`` pings; every member echoes each one with its own id."""
    leader = flow.process(process_spec)
    members = flow.cluster(cluster_spec)
    ids = flow.source_iter(leader, members.ids())
    pings = ids.cross_product(flow.source_iter(leader, q("range(k)", k=ticks))).send_serialized(members)
    echoes = flow.self_id_source(members).cross_product(pings).send_serialized(leader)
    echoes.for_each(q(lambda e: print(e)))


def gossip(flow: FlowGraph, process_spec: ProcessSpec, cluster_spec: ClusterSpec,
           rounds: int = 4, fanout: int = 1, seed: int = 42) -> None:
    """Each round's rumor goes to ``fanout`` members drawn by a seeded sampler."""
    origin = flow.process(process_spec)
    peers = flow.cluster(cluster_spec)
    member_ids = _collect_ids(flow, origin, peers)
    rumors = flow.source_iter(origin, q("range(r)", r=rounds)).map(q(lambda r: ("rumor", r)))
    per_round = member_ids.cross_product(rumors)
    candidates = flow.source_iter(origin, peers.ids()).cross_product(per_round)
    chosen = candidates.filter(q(lambda c: c[0] in gossip_sample(c[1][0], fanout, seed, c[1][1][1])))
    chosen.map(q(lambda c: (c[0], c[1][1]))).send_serialized(peers).for_each(q(lambda v: print(v)))


def default_corpus(n: int = 2000, seed: int = 7) -> list[str]:
    vocab = [
        "choreography", "dataflow", "stream", "location", "cluster", "process", "quote", "splice",
        "channel", "broadcast", "partition", "gossip", "heartbeat", "fold", "join", "map", "filter",
        "deploy", "manifest", "worker", "network", "paxos", "crdt", "a", "b",
    ]
    rng = random.Random(seed)
    return [rng.choice(vocab) for _ in range(n)]


@dataclass(frozen=True)
class ExampleProgram:
    name: str
    builder: Callable
    uses_cluster: bool
    description: str

    def build(self, process_spec: ProcessSpec, cluster_spec: ClusterSpec | None = None, **params) -> FlowGraph:
        flow = FlowGraph()
        if self.uses_cluster:
            self.builder(flow, process_spec, cluster_spec, **params)
        else:
            self.builder(flow, process_spec, **params)
        return flow


EXAMPLES: dict[str, ExampleProgram] = {
    "pipeline": ExampleProgram("pipeline", pipeline, False, "filter/map on one process, print on a second"),
    "broadcast": ExampleProgram("broadcast", broadcast, True, "cross product of member ids and data, sent to a cluster"),
    "partition": ExampleProgram("partition", partition, True, "hash-partitioned word count"),
    "heartbeat": ExampleProgram("heartbeat", heartbeat, True, "leader pings, members echo with their id"),
    "gossip": ExampleProgram("gossip", gossip, True, "seeded random fan-out of rumors"),
}


def specs_for(cloud: bool, cluster_size: int) -> tuple[ProcessSpec, ClusterSpec]:
    if cloud:
        return (
            ProcessSpec(lambda: CloudMachine(*GCP_MICRO)),
            ClusterSpec(lambda: [CloudMachine(*GCP_MICRO) for _ in range(cluster_size)]),
        )
    return ProcessSpec.localhost(), ClusterSpec.localhost(cluster_size)


def build_example(name: str, cloud: bool = False, cluster_size: int = 2, **params) -> FlowGraph:
    try:
        example = EXAMPLES[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}") from None
    process_spec, cluster_spec = specs_for(cloud, cluster_size)
    return example.build(process_spec, cluster_spec, **params)
