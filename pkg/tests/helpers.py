"""Shared test utilities: free ports and a seeded random program generator."""

from __future__ import annotations

import random
import socket

from choreoflow import ClusterSpec, ProcessSpec, bind, compile_flow, new_flow, q, run_local_distributed

_next_base = [random.Random().randrange(20000, 50000)]


def free_port_block(n: int) -> int:
    """First port of ``n`` consecutive ports that are currently bindable."""
    for _ in range(200):
        base = _next_base[0]
        _next_base[0] = base + n + 1 if base + n + 1 < 60000 else 20000
        socks = []
        try:
            for p in range(base, base + n):
                s = socket.socket()
                socks.append(s)
                s.bind(("127.0.0.1", p))
            return base
        except OSError:
            continue
        finally:
            for s in socks:
                s.close()
    raise RuntimeError("no free port block")


def run_distributed(flow, transport="tcp", isolation="thread", **kw):
    _config, manifest = bind(flow, base_port=free_port_block(64))
    return run_local_distributed(compile_flow(flow), manifest, transport=transport, isolation=isolation, **kw)


def sorted_logs(result):
    return {k: sorted(v) for k, v in result.logs.items()}


class _Builder:
    """Grows a random valid program over int streams, one operator at a time."""

    def __init__(self, seed: int, max_ops: int = 12):
        self.rng = rng = random.Random(seed)
        self.flow = new_flow()
        self.sizes = {}
        self.locs = [self.flow.process(ProcessSpec.localhost()) for _ in range(rng.randint(1, 2))]
        for i in range(rng.randint(0, 2)):
            size = rng.randint(1, 3)
            self.sizes[i] = size
            self.locs.append(self.flow.cluster(ClusterSpec.localhost(size)))
        self.budget = rng.randint(2, max_ops)
        self.ops = 0
        self.pool = []  # (stream, estimated max length per instance)

    def size(self, loc) -> int:
        return self.sizes[loc.id.index] if loc.id.kind.value == "cluster" else 1

    def left(self) -> int:
        # keep room for one sink per live stream
        return self.budget - self.ops - len(self.pool)

    def take(self, i):
        return self.pool.pop(i)

    def source(self, loc):
        rng = self.rng
        n = rng.choice([0, 1, 3, 5, 8, rng.randint(0, 50)])
        values = tuple(rng.randint(-20, 20) for _ in range(n))
        self.ops += 1
        return self.flow.source_iter(loc, q("vals", vals=values), element_type=int), n

    def step(self):
        rng = self.rng
        if not self.pool or (self.left() >= 2 and rng.random() < 0.2):
            loc = rng.choice(self.locs)
            self.pool.append(self.source(loc))
            return
        i = rng.randrange(len(self.pool))
        s, est = self.pool[i]
        choice = rng.choice(["map", "filter", "fold", "send", "send", "binary", "binary"])
        if choice == "map":
            self.take(i)
            a, b = rng.randint(-3, 3), rng.randint(-5, 5)
            self.ops += 1
            self.pool.append((s.map(q("lambda v: v * a + b", a=a, b=b), out_type=int), est))
        elif choice == "filter":
            self.take(i)
            m, r = rng.randint(2, 4), rng.randint(0, 1)
            self.ops += 1
            self.pool.append((s.filter(q("lambda v: v % m != r", m=m, r=r)), est))
        elif choice == "fold":
            self.take(i)
            combine = rng.choice(["lambda acc, v: acc + v", "lambda acc, v: acc + 1", "lambda acc, v: max(acc, v)"])
            self.ops += 1
            self.pool.append((s.fold(q("0"), q(combine), out_type=int), 1))
        elif choice == "send":
            self.send(i)
        else:
            self.binary(i)

    def send(self, i):
        rng = self.rng
        s, est = self.pool[i]
        src = next(loc for loc in self.locs if loc.id == s.location)
        targets = [loc for loc in self.locs if not (loc.id == s.location and loc.id.kind.value == "process")]
        if not targets:
            return
        dst = rng.choice(targets)
        to_cluster = dst.id.kind.value == "cluster"
        from_cluster = src.id.kind.value == "cluster"
        needed = 1 + int(to_cluster) + int(from_cluster)
        if self.left() < needed:
            return
        self.take(i)
        if to_cluster:
            s = s.map(q("lambda v: (ClusterId(v % n), v)", n=self.size(dst)))
            self.ops += 1
        out = s.send_serialized(dst)
        self.ops += 1
        est *= self.size(src)
        if from_cluster:
            out = out.map(q("lambda t: t[1] * 10 + t[0]"), out_type=int)
            self.ops += 1
        self.pool.append((out, est))

    def binary(self, i):
        rng = self.rng
        s, est = self.pool[i]
        partners = [j for j, (o, _e) in enumerate(self.pool) if j != i and o.location == s.location]
        kind = rng.choice(["union", "difference", "cross", "join"])
        cost = {"union": 1, "difference": 1, "cross": 2, "join": 4}[kind]
        if not partners:
            if self.left() < cost + 1:
                return
            loc = next(loc for loc in self.locs if loc.id == s.location)
            self.pool.append(self.source(loc))
            j = len(self.pool) - 1
        else:
            j = rng.choice(partners)
            if self.left() < cost - 1:
                return
        other, oest = self.pool[j]
        if kind in ("cross", "join", "difference") and est * oest > 2500:
            return
        for k in sorted((i, j), reverse=True):
            self.take(k)
        if kind == "union":
            out, n = s.union(other), est + oest
        elif kind == "difference":
            out, n = s.difference(other), est
        elif kind == "cross":
            out = s.cross_product(other).map(q("lambda p: p[0] * 100 + p[1]"), out_type=int)
            n = est * oest
        else:
            key = q("lambda v: (v % 3, v)")
            left = s.map(key)
            right = other.map(q("lambda v: (v % 3, v)"))
            out = left.join(right).map(q("lambda r: r[0] + r[1][0] * r[1][1]"), out_type=int)
            n = est * oest
        self.ops += cost
        self.pool.append((out, n))

    def build(self):
        guard = 0
        while self.left() > 0 and guard < 200:
            self.step()
            guard += 1
        for s, _est in self.pool:
            s.for_each(q("lambda v: print(v)"))
            self.ops += 1
        return self.flow, self.sizes


def random_program(seed: int, max_ops: int = 12):
    """A valid random program: ``(flow, cluster_sizes)``; at most ``max_ops`` operators."""
    return _Builder(seed, max_ops).build()


def operator_count(flow) -> int:
    # a send/recv pair is one send_serialized operator
    return sum(1 for n in flow.nodes if n.kind.value != "NetworkRecv")
