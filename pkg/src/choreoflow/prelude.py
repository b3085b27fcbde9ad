"""Names available inside quoted code at every location.

Quoted expressions run in a restricted namespace: a whitelist of pure
builtins plus the helpers defined here. ``print`` is redirected to the
output log of the location instance currently executing, and the two
runtime-only helpers (``cluster_ids`` and ``self_id``) read the instance
context installed by the runtime.
"""

from __future__ import annotations

import builtins
import contextvars
import random
from dataclasses import dataclass, field


class ClusterId(int):
    """Runtime identifier of one cluster member (``0..size-1``).

    Subclasses ``int`` so ids compare, hash and print like their index,
    while the codec can still tell them apart from plain integers.
    """

    __slots__ = ()

    def __new__(cls, member_index: int) -> "ClusterId":
        if member_index < 0:
            raise ValueError(f"cluster member index must be non-negative, got {member_index}")
        return super().__new__(cls, member_index)


class RuntimeOnlyError(RuntimeError):
    """A runtime-only helper was called outside of a running location instance."""


@dataclass
class InstanceContext:
    location: str
    member: int
    cluster_sizes: dict[int, int]
    log: list[str] = field(default_factory=list)


_current: contextvars.ContextVar[InstanceContext | None] = contextvars.ContextVar(
    "choreoflow_instance", default=None
)


def current_instance() -> InstanceContext | None:
    return _current.get()


def enter_instance(ctx: InstanceContext) -> contextvars.Token:
    return _current.set(ctx)


def exit_instance(token: contextvars.Token) -> None:
    _current.reset(token)


def _print(*args, sep: str = " ", end: str = "\n", **kwargs) -> None:
    ctx = _current.get()
    if ctx is None:
        builtins.print(*args, sep=sep, end=end, **kwargs)
        return
    ctx.log.append(sep.join(str(a) for a in args))


def cluster_ids(cluster_index: int) -> tuple[ClusterId, ...]:
    ctx = _current.get()
    if ctx is None:
        raise RuntimeOnlyError("cluster ids are only known at runtime")
    try:
        size = ctx.cluster_sizes[cluster_index]
    except KeyError:
        raise RuntimeOnlyError(f"no size known for cluster:{cluster_index}") from None
    return tuple(ClusterId(i) for i in range(size))


def self_id() -> ClusterId:
    ctx = _current.get()
    if ctx is None:
        raise RuntimeOnlyError("a member's own id is only known at runtime")
    return ClusterId(ctx.member)


FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(key) -> int:
    """64-bit FNV-1a of ``key`` (str is hashed as UTF-8, ints as decimal text)."""
    if isinstance(key, str):
        data = key.encode("utf-8")
    elif isinstance(key, bytes):
        data = key
    else:
        data = str(key).encode("utf-8")
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def gossip_sample(ids, fanout: int, seed: int, round_no: int) -> tuple:
    """Seeded choice of ``fanout`` gossip targets for one round."""
    pool = sorted(ids)
    rng = random.Random(seed * 1_000_003 + round_no)
    return tuple(sorted(rng.sample(pool, min(fanout, len(pool)))))


_SAFE_BUILTIN_NAMES = (
    "abs", "all", "any", "bool", "dict", "divmod", "enumerate", "filter",
    "float", "frozenset", "int", "isinstance", "len", "list", "map", "max",
    "min", "pow", "range", "reversed", "round", "set", "sorted", "str", "sum",
    "tuple", "zip", "True", "False", "None",
)

SAFE_BUILTINS: dict[str, object] = {name: getattr(builtins, name) for name in _SAFE_BUILTIN_NAMES}
SAFE_BUILTINS["print"] = _print

# str hash() is salted per process, so it is deliberately absent.
HELPERS: dict[str, object] = {
    "ClusterId": ClusterId,
    "fnv1a64": fnv1a64,
    "gossip_sample": gossip_sample,
}

RUNTIME_ONLY: dict[str, object] = {
    "cluster_ids": cluster_ids,
    "self_id": self_id,
}


def namespace(extra: dict | None = None) -> dict:
    ns: dict = {"__builtins__": SAFE_BUILTINS}
    ns.update(HELPERS)
    ns.update(RUNTIME_ONLY)
    if extra:
        ns.update(extra)
    return ns


def is_prelude_value(name: str, value) -> bool:
    for table in (SAFE_BUILTINS, HELPERS, RUNTIME_ONLY):
        if name in table and table[name] is value:
            return True
    if name == "print" and value is builtins.print:
        return True
    return False
