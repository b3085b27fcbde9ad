"""Host specifications and the process/cluster specs that carry them.

A spec is what a program asks for to obtain a location. Specs are
reusable: each time one is turned into a location its factory is invoked
again, so every location gets its own hosts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union


@dataclass(frozen=True)
class Localhost:
    pass


@dataclass(frozen=True)
class CloudMachine:
    machine_type: str
    image: str
    region: str

    def __post_init__(self):
        for name in ("machine_type", "image", "region"):
            if not getattr(self, name):
                raise ValueError(f"CloudMachine.{name} must be non-empty")


HostSpec = Union[Localhost, CloudMachine]


class ProcessSpec:
    """Binds a process to exactly one host, produced by ``factory``."""

    def __init__(self, factory: Callable[[], HostSpec]):
        self.factory = factory

    @classmethod
    def localhost(cls) -> "ProcessSpec":
        return cls(Localhost)

    def host(self) -> HostSpec:
        host = self.factory()
        if not isinstance(host, (Localhost, CloudMachine)):
            raise TypeError(f"process factory returned {type(host).__name__}, expected a host spec")
        return host

    def __repr__(self):
        return f"ProcessSpec({self.factory!r})"


class ClusterSpec:
    """Binds a cluster to an ordered list of hosts, one per member."""

    def __init__(self, factory: Callable[[], list[HostSpec]]):
        self.factory = factory

    @classmethod
    def localhost(cls, size: int) -> "ClusterSpec":
        return cls(lambda: [Localhost() for _ in range(size)])

    def hosts(self) -> list[HostSpec]:
        hosts = list(self.factory())
        for h in hosts:
            if not isinstance(h, (Localhost, CloudMachine)):
                raise TypeError(f"cluster factory returned {type(h).__name__}, expected a host spec")
        return hosts

    def __repr__(self):
        return f"ClusterSpec({self.factory!r})"
