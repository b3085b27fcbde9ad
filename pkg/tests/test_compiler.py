from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choreoflow import OpKind, ProcessSpec, SendPattern, compile_flow, emit_dot, emit_plan_text, new_flow, q
from choreoflow.compiler import PlanFormatError, parse_plan_text
from choreoflow.examples import EXAMPLES, build_example
from tests.helpers import random_program

FIXTURES = Path(__file__).parent / "fixtures"


def kinds(plan):
    return [n.kind for n in plan.nodes]


def test_pipeline_slices():
    plans = compile_flow(build_example("pipeline"))
    assert len(plans) == 2
    p0, p1 = plans.values()
    assert kinds(p0) == [OpKind.SOURCE_ITER, OpKind.FILTER, OpKind.MAP, OpKind.NETWORK_SEND]
    assert kinds(p1) == [OpKind.NETWORK_RECV, OpKind.FOR_EACH]
    assert [(c.channel, c.direction, c.pattern) for c in p0.channels] == [(0, "send", SendPattern.ONE_TO_ONE)]
    assert [(c.channel, c.direction) for c in p1.channels] == [(0, "recv")]
    assert p0.nodes[1].payloads == ("lambda v: v > 2",)


def test_broadcast_slices():
    plans = compile_flow(build_example("broadcast"))
    proc, cluster = plans.values()
    assert Counter(kinds(proc)) == Counter(
        [OpKind.SOURCE_ITER, OpKind.SOURCE_ITER, OpKind.CROSS_PRODUCT, OpKind.NETWORK_SEND]
    )
    assert "cluster_ids(0)" in [p for n in proc.nodes for p in n.payloads]
    assert kinds(cluster) == [OpKind.NETWORK_RECV, OpKind.FOR_EACH]
    assert proc.channels[0].pattern is SendPattern.ONE_TO_MANY


def test_single_location_has_no_channels():
    flow = new_flow()
    p = flow.process(ProcessSpec.localhost())
    flow.source_iter(p, q("range(3)")).for_each(q(lambda v: print(v)))
    plans = compile_flow(flow)
    assert len(plans) == 1
    (plan,) = plans.values()
    assert plan.channels == ()


def test_empty_location_plan():
    flow = new_flow()
    flow.process(ProcessSpec.localhost())
    (plan,) = compile_flow(flow).values()
    text = emit_plan_text(plan)
    assert text == "# choreoflow location plan v1\nlocation\tprocess:0\nnodes\t0\nchannels\t0\n"
    assert parse_plan_text(text) == plan


def test_captures_are_spliced_into_plans():
    flow = new_flow()
    p = flow.process(ProcessSpec.localhost())
    k = 7
    flow.source_iter(p, q("range(n)", n=3)).map(q(lambda v: v + k)).for_each(q(lambda v: print(v)))
    text = emit_plan_text(compile_flow(flow)[p.id])
    assert '["range(3)"]' in text and '["lambda v: v + 7"]' in text


@pytest.mark.parametrize("loc", ["process-0", "cluster-0"])
def test_broadcast_plan_golden(loc):
    plans = {f"{lid.kind.value}-{lid.index}": p for lid, p in compile_flow(build_example("broadcast")).items()}
    assert emit_plan_text(plans[loc]) == (FIXTURES / f"broadcast_{loc}.plan").read_text()


def test_empty_graph_dot_golden():
    dot = emit_dot(new_flow())
    assert dot == (FIXTURES / "empty.dot").read_text()
    assert "->" not in dot and "subgraph" not in dot


def test_broadcast_dot_golden():
    assert emit_dot(build_example("broadcast")) == (FIXTURES / "broadcast.dot").read_text()


@pytest.mark.parametrize("name,pattern", [("pipeline", "OneToOne"), ("broadcast", "OneToMany")])
def test_dot_counts(name, pattern):
    dot = emit_dot(build_example(name))
    assert dot.count("subgraph cluster_") == 2
    network = [ln for ln in dot.splitlines() if "style=dashed" in ln]
    assert len(network) == 1 and pattern in network[0]


def test_dot_truncates_long_payloads():
    flow = new_flow()
    p = flow.process(ProcessSpec.localhost())
    flow.source_iter(p, q("list(range(1000))[0:999:1] + [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]"))
    dot = emit_dot(flow)
    label = next(ln for ln in dot.splitlines() if "n0 [" in ln)
    assert "..." in label


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_plan_text_roundtrip_and_determinism(name):
    a = compile_flow(build_example(name, cluster_size=3))
    b = compile_flow(build_example(name, cluster_size=3))
    for loc in a:
        text = emit_plan_text(a[loc])
        assert text == emit_plan_text(b[loc])
        assert parse_plan_text(text) == a[loc]
    assert emit_dot(build_example(name)) == emit_dot(build_example(name))


def test_parse_rejects_garbage():
    with pytest.raises(PlanFormatError):
        parse_plan_text("hello\n")
    with pytest.raises(PlanFormatError):
        parse_plan_text("# choreoflow location plan v1\nlocation\tprocess:0\nnodes\t1\nchannels\t0\n")
    with pytest.raises(PlanFormatError):
        parse_plan_text("# choreoflow location plan v1\nlocation\tprocess:0\nbogus\t1\n")


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32))
def test_slicing_properties(seed):
    flow, _ = random_program(seed)
    plans = compile_flow(flow)
    # completeness: each node lands in exactly one plan, at its own location
    placed = Counter(n.node_id for p in plans.values() for n in p.nodes)
    assert placed == Counter(n.node_id for n in flow.nodes)
    for loc, plan in plans.items():
        assert all(flow.nodes[n.node_id].location == loc for n in plan.nodes)
        # plan order is a topological order of the local subgraph
        seen = set()
        for n in plan.nodes:
            assert all(i in seen for i in n.inputs)
            seen.add(n.node_id)
    # channel pairing
    sends = Counter(c.channel for p in plans.values() for c in p.sends())
    recvs = Counter(c.channel for p in plans.values() for c in p.recvs())
    assert sends == recvs and all(v == 1 for v in sends.values())
    for plan in plans.values():
        assert parse_plan_text(emit_plan_text(plan)) == plan
