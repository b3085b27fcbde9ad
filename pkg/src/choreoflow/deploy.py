"""Binding locations to hosts: the deployment config and runtime manifest.

The config is derived from the graph alone. It declares one machine per
location instance and opens exactly the ports the graph's channels use,
plus one control port per instance. Nothing here provisions anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .compiler import compile_flow
from .ir import FlowGraph, LocationId, LocationKind
from .runtime.manifest import DEFAULT_BASE_PORT, Manifest, ManifestEntry
from .specs import CloudMachine, ClusterSpec, HostSpec, Localhost, ProcessSpec

CONTROL_PORT_OFFSET = 10000


class DeployError(Exception):
    MISSING_BINDING = "MissingBinding"
    EMPTY_CLUSTER = "EmptyCluster"

    def __init__(self, reason: str, location: LocationId):
        self.reason = reason
        self.location = location
        super().__init__(f"{reason}: {location}")


def resource_name(location: LocationId, member: int) -> str:
    return f"loc-{location.kind.value}{location.index}-m{member}"


@dataclass(frozen=True)
class Resource:
    name: str
    location: LocationId
    member: int
    host: HostSpec
    port: int

    @property
    def control_port(self) -> int:
        return self.port + CONTROL_PORT_OFFSET


@dataclass(frozen=True)
class NetworkRule:
    src: str
    dst: str
    port: int
    channels: tuple[int, ...]


@dataclass
class DeploymentConfig:
    resources: list[Resource]
    rules: list[NetworkRule]

    def resource(self, name: str) -> Resource:
        for r in self.resources:
            if r.name == name:
                return r
        raise KeyError(name)


def _hosts_for(location: LocationId, spec) -> list[HostSpec]:
    if spec is None:
        raise DeployError(DeployError.MISSING_BINDING, location)
    if location.kind is LocationKind.PROCESS:
        if not isinstance(spec, ProcessSpec):
            raise TypeError(f"{location} needs a ProcessSpec, got {type(spec).__name__}")
        return [spec.host()]
    if not isinstance(spec, ClusterSpec):
        raise TypeError(f"{location} needs a ClusterSpec, got {type(spec).__name__}")
    hosts = spec.hosts()
    if not hosts:
        raise DeployError(DeployError.EMPTY_CLUSTER, location)
    return hosts


def bind(flow: FlowGraph, bindings: dict | None = None, base_port: int = DEFAULT_BASE_PORT,
         addr: str = "127.0.0.1") -> tuple[DeploymentConfig, Manifest]:
    """Instantiate every location's spec and derive config plus manifest.

    ``bindings`` optionally overrides the spec recorded for a LocationId.
    Localhost instances get ``addr``; cloud instances are addressed by
    resource name, to be resolved by the provisioned network.
    """
    overrides = dict(bindings or {})
    hosts: dict[LocationId, list[HostSpec]] = {}
    for loc, spec in flow.locations:
        hosts[loc] = _hosts_for(loc, overrides.get(loc, spec))

    resources: list[Resource] = []
    entries: list[ManifestEntry] = []
    port = base_port
    for loc, _spec in flow.locations:
        for member, host in enumerate(hosts[loc]):
            name = resource_name(loc, member)
            resources.append(Resource(name, loc, member, host, port))
            entries.append(ManifestEntry(loc, member, addr if isinstance(host, Localhost) else name, port))
            port += 1
    sizes = {loc.index: len(h) for loc, h in hosts.items() if loc.kind is LocationKind.CLUSTER}
    manifest = Manifest(entries, sizes)
    return DeploymentConfig(resources, channel_rules(flow, resources, sizes)), manifest


def channel_rules(flow: FlowGraph, resources: list[Resource], sizes: dict[int, int]) -> list[NetworkRule]:
    """One rule per (sender instance, receiver instance) pair that shares a channel."""
    by_instance = {(r.location, r.member): r for r in resources}

    def size(loc: LocationId) -> int:
        return 1 if loc.kind is LocationKind.PROCESS else sizes[loc.index]

    grouped: dict[tuple[str, str, int], list[int]] = {}
    for loc, plan in compile_flow(flow).items():
        for ch in plan.sends():
            for s in range(size(loc)):
                for r in range(size(ch.peer)):
                    dst = by_instance[(ch.peer, r)]
                    key = (by_instance[(loc, s)].name, dst.name, dst.port)
                    grouped.setdefault(key, []).append(ch.channel)
    return [NetworkRule(src, dst, port, tuple(sorted(chs))) for (src, dst, port), chs in sorted(grouped.items())]


def config_json(config: DeploymentConfig) -> dict:
    resource = {}
    for r in config.resources:
        if isinstance(r.host, CloudMachine):
            body = {
                "machine_type": r.host.machine_type,
                "image": r.host.image,
                "region": r.host.region,
                "zone": r.host.region,
            }
        else:
            body = {"localhost": True}
        body.update({
            "location": str(r.location),
            "member": r.member,
            "port": r.port,
            "control_port": r.control_port,
        })
        resource[r.name] = body
    rules = [
        {"src": rule.src, "dst": rule.dst, "port": rule.port, "channels": list(rule.channels)}
        for rule in config.rules
    ]
    return {"resource": resource, "network_rules": rules}


def emit_config_text(config: DeploymentConfig) -> str:
    return json.dumps(config_json(config), indent=2) + "\n"


def check_no_dangling(config: DeploymentConfig, manifest: Manifest) -> None:
    """Resources and manifest instances must correspond one to one."""
    res = [(r.location, r.member) for r in config.resources]
    inst = manifest.instances()
    if len(set(res)) != len(res) or set(res) != set(inst) or len(res) != len(inst):
        raise DeployError("DanglingMachine", next(iter(set(res) ^ set(inst)), (None, None))[0])
