"""OneToOne channel throughput over TCP on localhost."""

from __future__ import annotations

import time

from ..compiler import compile_flow
from ..ir import FlowGraph
from ..specs import ProcessSpec
from ..staging import q
from .distributed import run_local_distributed
from .manifest import DEFAULT_BASE_PORT


def channel_flow(messages: int) -> FlowGraph:
    flow = FlowGraph()
    sender = flow.process(ProcessSpec.localhost())
    receiver = flow.process(ProcessSpec.localhost())
    (
        flow.source_iter(sender, q("range(n)", n=messages))
        .send_serialized(receiver)
        .fold(q("0"), q("lambda count, v: count + 1"))
        .for_each(q("lambda n: print(n)"))
    )
    return flow


def bench_channel(messages: int = 500_000, base_port: int = DEFAULT_BASE_PORT, transport: str = "tcp") -> dict:
    """Stream ``messages`` 64-bit integers through one channel and time it."""
    from ..deploy import bind

    flow = channel_flow(messages)
    _config, manifest = bind(flow, base_port=base_port)
    plans = compile_flow(flow)
    start = time.perf_counter()
    result = run_local_distributed(plans, manifest, transport=transport)
    elapsed = time.perf_counter() - start
    received = int(result.logs["process:1"][0])
    if received != messages:
        raise RuntimeError(f"receiver counted {received} of {messages} messages")
    return {
        "messages": messages,
        "seconds": round(elapsed, 4),
        "messages_per_sec": round(messages / elapsed, 1),
        "transport": transport,
    }
