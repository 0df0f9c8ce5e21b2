import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bugsmc import bundles
from bugsmc.compiler import compile_model
from bugsmc.data import DataTable
from bugsmc.graph import Graph, Node, STOCHASTIC
from bugsmc.ordering import (arrange, export_dot, group_nodes,
                             topological_sort_prioritized)
from bugsmc.parser import parse_source


def names(graph, ids):
    return [graph.nodes[i].name for i in ids]


def test_prioritized_order_matches_reference(fig_graph):
    order = topological_sort_prioritized(fig_graph)
    assert names(fig_graph, order) == ["X1", "Y1", "Y3", "X3", "X2", "Y4", "Y2"]


def test_grouping_matches_reference(fig_graph):
    arrangement = group_nodes(topological_sort_prioritized(fig_graph), fig_graph)
    assert arrangement.n == 2
    s1, s2 = arrangement.steps
    assert names(fig_graph, s1.latent) == ["X1"]
    assert names(fig_graph, s1.observed) == ["Y1", "Y3"]
    assert names(fig_graph, s2.latent) == ["X3", "X2"]
    assert names(fig_graph, s2.observed) == ["Y4", "Y2"]


def test_export_dot_counts(fig_graph):
    text = export_dot(fig_graph, arrange(fig_graph))
    assert text.count("label=") == 7
    assert text.count("->") == 7
    assert "step 1" in text and "step 2" in text


def test_chain_order_forced_by_edges():
    nodes = []
    for k, (name, observed) in enumerate([("X1", False), ("Y1", True),
                                          ("X2", False), ("Y2", True)]):
        nodes.append(Node(k, STOCHASTIC, name, (), parents=[k - 1] if k else [],
                          observed=observed, dist="dnorm",
                          value=np.float64(0.0) if observed else None))
    graph = Graph(nodes, {}, None)
    order = topological_sort_prioritized(graph)
    assert names(graph, order) == ["X1", "Y1", "X2", "Y2"]
    arrangement = group_nodes(order, graph)
    assert arrangement.n == 2


def test_no_observed_nodes_uses_declaration_order():
    nodes = [Node(k, STOCHASTIC, f"X{k}", (), parents=[], dist="dnorm")
             for k in range(4)]
    graph = Graph(nodes, {}, None)
    order = topological_sort_prioritized(graph)
    assert order == [0, 1, 2, 3]
    arrangement = group_nodes(order, graph)
    assert arrangement.n == 1
    assert arrangement.steps[0].observed == []


def test_leading_observed_run_forms_empty_latent_step():
    # an observed node with no latent ancestor starts step 1 on its own
    nodes = [
        Node(0, STOCHASTIC, "Y0", (), parents=[], observed=True, dist="dnorm",
             value=np.float64(0.0)),
        Node(1, STOCHASTIC, "X1", (), parents=[0], dist="dnorm"),
        Node(2, STOCHASTIC, "Y1", (), parents=[1], observed=True, dist="dnorm",
             value=np.float64(0.0)),
    ]
    graph = Graph(nodes, {}, None)
    arrangement = arrange(graph)
    assert arrangement.n == 2
    assert arrangement.steps[0].latent == []
    assert names(graph, arrangement.steps[0].observed) == ["Y0"]
    assert names(graph, arrangement.steps[1].latent) == ["X1"]
    # concatenated groups remain a topological order
    flat = [nid for s in arrangement.steps for nid in s.latent + s.observed]
    position = {nid: k for k, nid in enumerate(flat)}
    for node in graph.nodes:
        for pid in node.parents:
            assert position[pid] < position[node.id]


def test_volatility_grouping_is_per_time_step():
    data = {"t_max": 6, "sigma": 0.4, "alpha": [-2.5, -1.0], "phi": 0.5,
            "pi": [[0.9, 0.1], [0.1, 0.9]], "c0": 1, "x0": 0.0,
            "y": np.zeros(6)}
    graph = compile_model(parse_source(
        bundles.model_source("volatility_switching")),
        DataTable.from_dict(data))
    arrangement = arrange(graph)
    assert arrangement.n == 6
    for t, step in enumerate(arrangement.steps, start=1):
        assert sorted(names(graph, step.latent)) == [f"c[{t}]", f"x[{t}]"]
        assert names(graph, step.observed) == [f"y[{t}]"]


def test_priority_property_replay(fig_graph):
    _assert_priority_property(fig_graph)


def _assert_priority_property(graph):
    """Replay Kahn's algorithm: while an observed node is ready, the emitted
    node is observed or logical."""
    order = topological_sort_prioritized(graph)
    indegree = [len(n.parents) for n in graph.nodes]
    ready = {n.id for n in graph.nodes if indegree[n.id] == 0}
    for nid in order:
        node = graph.nodes[nid]
        ready_observed = any(graph.nodes[r].kind == STOCHASTIC
                             and graph.nodes[r].observed for r in ready)
        if ready_observed:
            assert node.kind != STOCHASTIC or node.observed, \
                f"unobserved {node.name} emitted while observed ready"
        assert nid in ready
        ready.remove(nid)
        for child in graph.children[nid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.add(child)


def test_grouping_is_a_partition(fig_graph):
    arrangement = arrange(fig_graph)
    seen = []
    for step in arrangement.steps:
        seen.extend(step.latent)
        seen.extend(step.observed)
    stochastic = [n.id for n in fig_graph.nodes if n.kind == STOCHASTIC]
    assert sorted(seen) == sorted(stochastic)
    assert len(seen) == len(set(seen))


def test_determinism(fig_graph):
    a = arrange(fig_graph)
    b = arrange(fig_graph)
    assert a.full_order == b.full_order
    assert [(s.latent, s.observed) for s in a.steps] == \
        [(s.latent, s.observed) for s in b.steps]


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_random_dags_keep_invariants(data):
    n = data.draw(st.integers(2, 12))
    nodes = []
    for k in range(n):
        parents = sorted(data.draw(st.sets(st.integers(0, k - 1), max_size=3))) \
            if k else []
        observed = data.draw(st.booleans())
        nodes.append(Node(k, STOCHASTIC, f"n{k}", (), parents=list(parents),
                          observed=observed, dist="dnorm",
                          value=np.float64(0.0) if observed else None))
    graph = Graph(nodes, {}, None)
    order = topological_sort_prioritized(graph)
    position = {nid: i for i, nid in enumerate(order)}
    for node in graph.nodes:
        for pid in node.parents:
            assert position[pid] < position[node.id]
    _assert_priority_property(graph)
    arrangement = group_nodes(order, graph)
    seen = [nid for s in arrangement.steps for nid in s.latent + s.observed]
    assert sorted(seen) == list(range(n))
    # alternation: every step pairs a latent group with the observed run after it
    for step in arrangement.steps:
        assert step.latent or step.observed


def test_single_node_dot():
    graph = Graph([Node(0, STOCHASTIC, "x", (), dist="dnorm")], {}, None)
    text = export_dot(graph)
    assert text.count("label=") == 1
    assert "->" not in text
