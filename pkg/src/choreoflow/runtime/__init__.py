"""Executing compiled plans: the in-process oracle and local distributed runs."""

from ..ir import Cluster, FlowGraph, Stream
from .codec import FrameDecoder, decode, encode, encode_frame, frame, unframe
from .distributed import run_local_distributed
from .errors import BindError, ChannelClosed, DecodeError, EncodeError, HandshakeTimeout, RuntimeFailure, WorkerFailed
from .manifest import DEFAULT_BASE_PORT, Manifest, ManifestEntry, instance_key
from .oracle import run_oracle
from .result import RunResult
from .worker import Worker, run_worker


def self_id_source(flow: FlowGraph, cluster: Cluster) -> Stream:
    """Stream at ``cluster`` where each member emits its own id exactly once."""
    return flow.self_id_source(cluster)


__all__ = [
    "BindError", "ChannelClosed", "DecodeError", "EncodeError", "FrameDecoder", "HandshakeTimeout",
    "DEFAULT_BASE_PORT", "Manifest", "ManifestEntry", "RunResult", "RuntimeFailure", "Worker", "WorkerFailed",
    "decode", "encode", "encode_frame", "frame", "instance_key", "run_local_distributed", "run_oracle",
    "run_worker", "self_id_source", "unframe",
]
