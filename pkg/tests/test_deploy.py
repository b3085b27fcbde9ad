import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choreoflow import (
    CloudMachine,
    ClusterSpec,
    DeployError,
    Localhost,
    ProcessSpec,
    bind,
    compile_flow,
    emit_config_text,
    new_flow,
    q,
)
from choreoflow.deploy import check_no_dangling, config_json
from choreoflow.examples import EXAMPLES, build_example
from tests.helpers import random_program

FIXTURES = Path(__file__).parent / "fixtures"
MICRO = ("e2-micro", "debian-cloud/debian-11", "us-west1-a")


def cloud_broadcast():
    return build_example("broadcast", cloud=True, cluster_size=2)


def test_broadcast_cloud_resources():
    config, manifest = bind(cloud_broadcast())
    assert len(config.resources) == 3
    for r in config.resources:
        assert r.host == CloudMachine(*MICRO)
    doc = config_json(config)
    assert sorted(doc["resource"]) == ["loc-cluster0-m0", "loc-cluster0-m1", "loc-process0-m0"]
    assert all(body["region"] == "us-west1-a" for body in doc["resource"].values())
    assert [e.addr for e in manifest.entries] == ["loc-process0-m0", "loc-cluster0-m0", "loc-cluster0-m1"]


def test_broadcast_cloud_golden():
    config, _ = bind(cloud_broadcast())
    text = emit_config_text(config)
    assert text == (FIXTURES / "broadcast_cloud_config.json").read_text()
    for literal in MICRO:
        assert f'"{literal}"' in text


def test_localhost_defaults():
    config, manifest = bind(build_example("broadcast", cluster_size=2))
    doc = config_json(config)
    assert all(body["localhost"] is True for body in doc["resource"].values())
    assert [e.port for e in manifest.entries] == [35000, 35001, 35002]
    assert {e.addr for e in manifest.entries} == {"127.0.0.1"}
    assert [r.control_port for r in config.resources] == [45000, 45001, 45002]


def test_cluster_of_two_has_two_members():
    _, manifest = bind(build_example("broadcast", cluster_size=2))
    assert [m for loc, m in manifest.instances() if loc.kind.value == "cluster"] == [0, 1]


def test_empty_cluster():
    flow = new_flow()
    flow.cluster(ClusterSpec(lambda: []))
    with pytest.raises(DeployError) as exc:
        bind(flow)
    assert exc.value.reason == "EmptyCluster"


def test_missing_binding():
    flow = new_flow()
    p = flow.process(None)
    flow.source_iter(p, q("range(3)"))
    with pytest.raises(DeployError) as exc:
        bind(flow)
    assert exc.value.reason == "MissingBinding"
    config, _ = bind(flow, bindings={p.id: ProcessSpec.localhost()})
    assert len(config.resources) == 1


def test_bad_cloud_machine():
    with pytest.raises(ValueError):
        CloudMachine("", "img", "us-west1-a")


def test_empty_graph_config():
    config, manifest = bind(new_flow())
    assert config_json(config) == {"resource": {}, "network_rules": []}
    assert manifest.entries == []


def test_region_fidelity():
    flow = new_flow()
    eu = ProcessSpec(lambda: CloudMachine("e2-micro", "debian-cloud/debian-11", "europe-west3-a"))
    us = ClusterSpec(lambda: [CloudMachine("e2-small", "debian-cloud/debian-12", "us-east1-b") for _ in range(2)])
    p = flow.process(eu)
    c = flow.cluster(us)
    flow.source_iter(p, c.ids()).cross_product(flow.source_iter(p, q("range(3)"))).send_serialized(c)
    doc = config_json(bind(flow)[0])
    assert doc["resource"]["loc-process0-m0"]["region"] == "europe-west3-a"
    assert doc["resource"]["loc-process0-m0"]["zone"] == "europe-west3-a"
    for m in (0, 1):
        body = doc["resource"][f"loc-cluster0-m{m}"]
        assert (body["machine_type"], body["image"], body["region"]) == ("e2-small", "debian-cloud/debian-12",
                                                                        "us-east1-b")


@pytest.mark.parametrize("name", sorted(EXAMPLES))
@pytest.mark.parametrize("cloud", [False, True])
def test_config_determinism(name, cloud):
    a = emit_config_text(bind(build_example(name, cloud=cloud))[0])
    b = emit_config_text(bind(build_example(name, cloud=cloud))[0])
    assert a == b
    json.loads(a)


def expected_rules(flow, config):
    """(src, dst, port) for every sender/receiver instance pair of every channel."""
    names = {(r.location, r.member): r for r in config.resources}
    members = {}
    for r in config.resources:
        members.setdefault(r.location, []).append(r.member)
    rules = set()
    for plan in compile_flow(flow).values():
        for ch in plan.sends():
            for s in members[plan.location]:
                for d in members[ch.peer]:
                    dst = names[(ch.peer, d)]
                    rules.add((names[(plan.location, s)].name, dst.name, dst.port))
    return rules


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32))
def test_rules_and_resources_mirror_graph(seed):
    flow, sizes = random_program(seed)
    config, manifest = bind(flow)
    check_no_dangling(config, manifest)
    res = [(r.location, r.member) for r in config.resources]
    assert res == manifest.instances() and len(set(res)) == len(res)
    expected_count = sum(sizes.get(loc.index, 1) if loc.kind.value == "cluster" else 1 for loc, _ in flow.locations)
    assert len(res) == expected_count
    got = [(r.src, r.dst, r.port) for r in config.rules]
    assert len(got) == len(set(got))
    assert set(got) == expected_rules(flow, config)
    ports = [(e.addr, e.port) for e in manifest.entries]
    assert len(ports) == len(set(ports))


def test_localhost_host_marker():
    assert ProcessSpec.localhost().host() == Localhost()
    assert ClusterSpec.localhost(3).hosts() == [Localhost()] * 3
