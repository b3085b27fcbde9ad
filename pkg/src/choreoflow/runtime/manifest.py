"""Service-discovery manifest: where every location instance listens."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..ir import LocationId, LocationKind

DEFAULT_BASE_PORT = 35000


def instance_key(location: LocationId, member: int = 0) -> str:
    if location.kind is LocationKind.PROCESS:
        return str(location)
    return f"{location}:m{member}"


@dataclass(frozen=True)
class ManifestEntry:
    location: LocationId
    member: int
    addr: str
    port: int

    @property
    def key(self) -> str:
        return instance_key(self.location, self.member)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    cluster_sizes: dict[int, int]

    @classmethod
    def local(cls, locations, cluster_sizes: dict[int, int], base_port: int = DEFAULT_BASE_PORT,
              addr: str = "127.0.0.1") -> "Manifest":
        """Sequential ports from ``base_port`` in location order, members ascending."""
        entries = []
        port = base_port
        for loc in locations:
            for member in range(size_of(loc, cluster_sizes)):
                entries.append(ManifestEntry(loc, member, addr, port))
                port += 1
        return cls(entries, dict(cluster_sizes))

    def size(self, location: LocationId) -> int:
        return size_of(location, self.cluster_sizes)

    def lookup(self, location: LocationId, member: int = 0) -> ManifestEntry:
        for e in self.entries:
            if e.location == location and e.member == member:
                return e
        raise KeyError(instance_key(location, member))

    def instances(self) -> list[tuple[LocationId, int]]:
        return [(e.location, e.member) for e in self.entries]

    def validate(self) -> None:
        seen = {}
        for e in self.entries:
            if (e.location, e.member) in seen:
                raise ValueError(f"duplicate manifest entry for {e.key}")
            seen[(e.location, e.member)] = e
        for loc in {e.location for e in self.entries}:
            members = sorted(m for (l, m) in seen if l == loc)
            if members != list(range(self.size(loc))):
                raise ValueError(f"{loc} has members {members}, expected 0..{self.size(loc) - 1}")
        endpoints = [(e.addr, e.port) for e in self.entries]
        if len(set(endpoints)) != len(endpoints):
            raise ValueError("manifest reuses an address/port pair")

    def to_json(self) -> dict:
        return {
            "locations": [
                {"kind": e.location.kind.value, "index": e.location.index, "member": e.member,
                 "addr": e.addr, "port": e.port}
                for e in self.entries
            ],
            "cluster_sizes": {str(k): v for k, v in sorted(self.cluster_sizes.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> "Manifest":
        entries = [
            ManifestEntry(LocationId(LocationKind(d["kind"]), int(d["index"])), int(d["member"]),
                          d["addr"], int(d["port"]))
            for d in data["locations"]
        ]
        return cls(entries, {int(k): int(v) for k, v in data.get("cluster_sizes", {}).items()})

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_json(json.loads(Path(path).read_text()))


def size_of(location: LocationId, cluster_sizes: dict[int, int]) -> int:
    if location.kind is LocationKind.PROCESS:
        return 1
    try:
        return cluster_sizes[location.index]
    except KeyError:
        raise KeyError(f"no size given for {location}") from None
