import json
import random
import subprocess
import sys
from collections import Counter

import pytest

from choreoflow import OpKind, run_oracle
from choreoflow.cli import main
from choreoflow.examples import EXAMPLES, build_example, default_corpus
from choreoflow.prelude import fnv1a64, gossip_sample
from tests.helpers import free_port_block, run_distributed, sorted_logs


def fnv(word: str) -> int:
    h = 0xCBF29CE484222325
    for byte in word.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) % 2**64
    return h


def cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fnv_vectors():
    # published FNV-1a 64 test vectors
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a64("foobar") == 0x85944171F73967E8
    for w in ("choreography", "gossip", "é"):
        assert fnv1a64(w) == fnv(w)


def merged_counts(logs):
    total = Counter()
    for key, lines in logs.items():
        if key.startswith("cluster:"):
            for line in lines:
                word, n = line.split(" ")
                total[word] += int(n)
    return total


def test_partition_small():
    flow = build_example("partition", cluster_size=2, words=["a", "b", "a"])
    logs = run_oracle(flow).logs
    assert merged_counts(logs) == {"a": 2, "b": 1}
    owner = f"cluster:0:m{fnv('a') % 2}"
    assert "a 2" in logs[owner]
    other = f"cluster:0:m{1 - fnv('a') % 2}"
    assert not any(line.startswith("a ") for line in logs[other])


@pytest.mark.parametrize("size", [1, 2, 3])
def test_partition_routes_by_hash(size):
    words = default_corpus(300, seed=size)
    logs = run_oracle(build_example("partition", cluster_size=size, words=words)).logs
    assert merged_counts(logs) == Counter(words)
    for m in range(size):
        for line in logs[f"cluster:0:m{m}"]:
            assert fnv(line.split(" ")[0]) % size == m


def test_heartbeat_echoes():
    logs = run_oracle(build_example("heartbeat", cluster_size=2, ticks=3)).logs
    echoes = logs["process:0"]
    assert len(echoes) == 6
    parsed = [eval(e) for e in echoes]  # noqa: S307 - our own tuple reprs
    assert {tag for tag, _ in parsed} == {0, 1}
    assert sorted(parsed) == sorted((m, (m, k)) for m in range(2) for k in range(3))


def test_gossip_matches_reseeded_sampler():
    logs = run_oracle(build_example("gossip", cluster_size=3, rounds=4, fanout=1, seed=42)).logs
    for r in range(4):
        receivers = [m for m in range(3) if f"('rumor', {r})" in logs[f"cluster:0:m{m}"]]
        expected = random.Random(42 * 1_000_003 + r).sample([0, 1, 2], 1)
        assert receivers == expected
        assert tuple(expected) == gossip_sample(range(3), 1, 42, r)


def normalized(flow):
    return [
        (n.kind, n.location, n.inputs, tuple(p.spliced_text for p in n.payloads), n.channel, n.pattern, n.peer)
        for n in flow.nodes
    ]


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_examples_isomorphic(name):
    assert normalized(build_example(name)) == normalized(build_example(name))


@pytest.mark.parametrize("name", sorted(EXAMPLES))
@pytest.mark.parametrize("size", [1, 2, 3])
def test_oracle_and_run_local_agree(name, size):
    flow = build_example(name, cluster_size=size)
    assert sorted_logs(run_distributed(flow, transport="mem")) == sorted_logs(run_oracle(flow))


def test_examples_use_expected_operators():
    kinds = {name: {n.kind for n in build_example(name).nodes} for name in EXAMPLES}
    assert OpKind.FOLD in kinds["partition"] and OpKind.CROSS_PRODUCT in kinds["heartbeat"]
    assert OpKind.FILTER in kinds["gossip"]


# -- CLI ---------------------------------------------------------------------------


def test_cli_graph(capsys):
    code, out, _ = cli(capsys, "graph", "pipeline")
    assert code == 0 and out.startswith("digraph flow {")


def test_cli_plans(capsys, tmp_path):
    code, out, _ = cli(capsys, "plans", "broadcast")
    assert code == 0 and out.count("# choreoflow location plan v1") == 2
    code, out, _ = cli(capsys, "plans", "broadcast", "--out", str(tmp_path))
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cluster-0.plan", "process-0.plan"]


def test_cli_deploy_config(capsys):
    code, out, _ = cli(capsys, "deploy-config", "broadcast", "--cloud", "--cluster-size", "2")
    assert code == 0 and '"e2-micro"' in out
    assert len(json.loads(out)["resource"]) == 3
    code, out, _ = cli(capsys, "deploy-config", "broadcast", "--localhost")
    assert code == 0 and '"localhost": true' in out


def test_cli_deploy_config_empty_cluster(capsys):
    code, _, err = cli(capsys, "deploy-config", "broadcast", "--cluster-size", "0")
    assert code == 1 and "EmptyCluster" in err


def test_cli_oracle(capsys):
    code, out, _ = cli(capsys, "oracle", "pipeline")
    assert code == 0
    assert json.loads(out) == {"instances": {"process:0": [], "process:1": ["6", "8"]}}


def test_cli_run_local_pipeline(capsys):
    code, out, _ = cli(capsys, "run-local", "pipeline", "--transport", "tcp", "--base-port", str(free_port_block(8)))
    assert code == 0
    assert json.loads(out)["instances"]["process:1"] == ["6", "8"]


def test_cli_run_local_broadcast_mem(capsys):
    code, out, _ = cli(capsys, "run-local", "broadcast", "--transport", "mem", "--cluster-size", "2")
    assert code == 0
    inst = json.loads(out)["instances"]
    assert sorted(inst["cluster:0:m0"]) == sorted(inst["cluster:0:m1"]) == ["0", "1", "2", "3", "4"]


def test_cli_bench_channel(capsys):
    port = str(free_port_block(4))
    code, out, _ = cli(capsys, "bench-channel", "--messages", "2000", "--base-port", port, "--min-rate", "0")
    report = json.loads(out)
    assert code == 0 and report["messages"] == 2000 and report["pass"]
    code, out, _ = cli(capsys, "bench-channel", "--messages", "2000", "--base-port", port, "--min-rate", "1e15")
    assert code == 1 and not json.loads(out)["pass"]


def test_cli_usage_errors(capsys):
    for argv in (["graph", "paxos"], ["frobnicate"], [], ["run-local", "pipeline", "--cluster-size", "0"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "choreoflow", "oracle", "broadcast"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert set(json.loads(proc.stdout)["instances"]) == {"process:0", "cluster:0:m0", "cluster:0:m1"}


def test_cli_deterministic(capsys):
    outputs = []
    for _ in range(2):
        chunk = []
        for verb in ("graph", "plans", "deploy-config", "oracle"):
            code, out, _ = cli(capsys, verb, "gossip", "--cluster-size", "3")
            assert code == 0
            chunk.append(out)
        outputs.append(chunk)
    assert outputs[0] == outputs[1]
