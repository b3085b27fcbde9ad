"""Choreographed streaming dataflow.

Programs are written once against locations and streams; the global
graph they build is sliced into per-location plans that run either in a
single-process oracle or as one worker per location instance.

    flow = new_flow()
    first = flow.process(ProcessSpec.localhost())
    second = flow.process(ProcessSpec.localhost())
    (flow.source_iter(first, q("range(0, 5)"))
        .filter(q(lambda v: v > 2))
        .send_serialized(second)
        .for_each(q(lambda v: print(v))))
    run_oracle(flow).logs["process:1"]   # ['3', '4']
"""

from .compiler import LocationPlan, compile_flow, emit_dot, emit_plan_text, parse_plan_text
from .deploy import DeployError, DeploymentConfig, bind, emit_config_text
from .ir import (
    Cluster,
    FlowError,
    FlowGraph,
    LinearityError,
    LocationId,
    LocationKind,
    LocationMismatch,
    OpKind,
    PatternTypeError,
    Process,
    SelfSend,
    SendPattern,
    Stream,
    ValidationError,
    new_flow,
)
from .prelude import ClusterId
from .runtime import Manifest, RunResult, run_local_distributed, run_oracle, self_id_source
from .specs import CloudMachine, ClusterSpec, Localhost, ProcessSpec
from .staging import NestedQuoteError, Quoted, StagingError, UnquotableCapture, q, quote

__all__ = [
    "CloudMachine", "Cluster", "ClusterId", "ClusterSpec", "DeployError", "DeploymentConfig", "FlowError",
    "FlowGraph", "LinearityError", "Localhost", "LocationId", "LocationKind", "LocationMismatch", "LocationPlan",
    "Manifest", "NestedQuoteError", "OpKind", "PatternTypeError", "Process", "ProcessSpec", "Quoted",
    "RunResult", "SelfSend", "SendPattern", "StagingError", "Stream", "UnquotableCapture", "ValidationError",
    "bind", "compile_flow", "emit_config_text", "emit_dot", "emit_plan_text", "new_flow", "parse_plan_text",
    "q", "quote", "run_local_distributed", "run_oracle", "self_id_source",
]
